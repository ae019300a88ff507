"""Penalized QML for panels with multiple network channels and interactive fixed effects."""

__version__ = "0.1.0"
