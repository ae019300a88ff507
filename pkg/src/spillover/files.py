"""CSV/JSON ingestion and export of panels and weights matrices.

Panels use a long layout with columns ``unit_id, time_id, y`` followed by
one column per primitive covariate.  The earliest period supplies only the
initial lagged outcome; its covariates may be ``NA``.  Weights matrices are
headerless ``n x n`` numeric CSV files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError, SpilloverError
from .model import ModelLayout, PanelData
from .network import WeightsMatrix, WeightsSet

PANEL_KEYS = ("unit_id", "time_id", "y")


def _num(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else "NA"


def write_panel_csv(path, panel: PanelData, unit_ids=None, X_initial=None) -> None:
    """Long-format export; period 0 carries ``Y_lag[:, 0]`` and ``X_initial`` (or ``NA``)."""
    n, T = panel.n, panel.T
    units = list(unit_ids) if unit_ids is not None else list(range(1, n + 1))
    K = panel.layout.K_primitive
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(PANEL_KEYS) + list(panel.layout.exog_names))
        for i in range(n):
            x0 = ["NA"] * K if X_initial is None else [_num(X_initial[k, i]) for k in range(K)]
            w.writerow([units[i], 0, _num(panel.Y_lag[i, 0])] + x0)
            for t in range(T):
                w.writerow([units[i], t + 1, _num(panel.Y[i, t])] + [_num(panel.X_star[k, i, t]) for k in range(K)])


def _parse_float(text, path, line, column, allow_na=False):
    if allow_na and text.strip() in ("NA", ""):
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise IngestionError(f"{path}: line {line}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"{path}: line {line}: column {column!r} is not finite")
    return v


def read_panel_csv(path):
    """Parse a long-format panel.

    Returns
    -------
    units : list of str
    exog_names : list of str
    Y : ndarray (n, T+1)
    X : ndarray (K, n, T+1)
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != list(PANEL_KEYS):
            raise IngestionError(f"{path}: line 1: header must start with unit_id,time_id,y")
        exog = [h.strip() for h in header[3:]]
        cells = {}
        units, times = {}, set()
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            unit = row[0].strip()
            try:
                t = int(row[1])
            except ValueError:
                raise IngestionError(f"{path}: line {line}: time_id is not an integer: {row[1]!r}") from None
            if (unit, t) in cells:
                raise IngestionError(f"{path}: line {line}: duplicate (unit_id, time_id) = ({unit}, {t})")
            y = _parse_float(row[2], path, line, "y")
            xs = [_parse_float(v, path, line, exog[k], allow_na=True) for k, v in enumerate(row[3:])]
            cells[(unit, t)] = (line, y, xs)
            units.setdefault(unit, len(units))
            times.add(t)
    if not cells:
        raise IngestionError(f"{path}: no data rows")
    times = sorted(times)
    if len(times) < 2:
        raise IngestionError(f"{path}: at least two periods are required")
    n, T1, K = len(units), len(times), len(exog)
    if len(cells) != n * T1:
        raise IngestionError(f"{path}: unbalanced panel ({len(cells)} rows for {n} units x {T1} periods)")
    tpos = {t: j for j, t in enumerate(times)}
    Y = np.empty((n, T1))
    X = np.empty((K, n, T1))
    for (unit, t), (line, y, xs) in cells.items():
        i, j = units[unit], tpos[t]
        if j > 0 and any(math.isnan(v) for v in xs):
            raise IngestionError(f"{path}: line {line}: covariates may be NA only in the first period")
        Y[i, j] = y
        X[:, i, j] = xs
    return list(units), exog, Y, X


def write_weights_csv(path, W) -> None:
    W = np.asarray(W.values if isinstance(W, WeightsMatrix) else W, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in W:
            w.writerow([_num(v) for v in row])


def read_weights_csv(path, label=None) -> WeightsMatrix:
    path = Path(path)
    rows = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row:
                continue
            rows.append([_parse_float(v, path, reader.line_num, f"col{j + 1}") for j, v in enumerate(row)])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise IngestionError(f"{path}: weights matrix must be square and nonempty")
    diag = np.flatnonzero(np.diag(np.array(rows)))
    if diag.size:
        raise IngestionError(f"{path}: line {diag[0] + 1}: nonzero diagonal entry")
    try:
        return WeightsMatrix(np.array(rows), label or path.stem)
    except SpilloverError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def load_panel_data(panel_path, weights_paths: Sequence, layout: ModelLayout | dict | None = None):
    """Assemble :class:`PanelData` from files; returns ``(data, unit_ids)``.

    Without a layout the model uses every primitive covariate, the own lag
    and all network lags, and no interactions.
    """
    units, exog, Yfull, Xfull = read_panel_csv(panel_path)
    mats = [read_weights_csv(p) for p in weights_paths]
    n = len(units)
    for p, m in zip(weights_paths, mats):
        if m.n != n:
            raise IngestionError(f"{p}: weights matrix is {m.n} x {m.n} but the panel has {n} units")
    wset = WeightsSet(tuple(mats)) if mats else WeightsSet.empty(n)
    if layout is None:
        layout = ModelLayout(len(mats), tuple(exog), (), True, tuple(range(len(mats))))
    elif isinstance(layout, dict):
        layout = ModelLayout.from_dict(layout)
    if list(layout.exog_names) != exog:
        raise IngestionError(f"{panel_path}: covariate columns {exog} do not match the model {list(layout.exog_names)}")
    if layout.Q != len(mats):
        raise IngestionError(f"model declares {layout.Q} channels but {len(mats)} weights files were given")
    try:
        data = PanelData(Yfull[:, 1:], Yfull[:, :-1], Xfull[:, :, 1:], layout, wset)
    except SpilloverError as exc:
        raise IngestionError(f"{panel_path}: {exc}") from exc
    return data, units


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from exc


def write_rows_csv(path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return _num(v)
    return v
