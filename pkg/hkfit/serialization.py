"""
File formats for hkfit
----------------------
CSV in:   header x1..xd[,y]
CSV out:  predictions x1..xd,yhat; anchors z1..zd; risk n,r_n,stderr,...;
          figure surfaces x1..xd,truth,y,<fit labels>
JSON:     model {d, kind, V, anchors, coefficients, grid_dims, diagnostics}
          and slope / summary dicts

Floats are written in shortest round-trip form and read back with the
round-trip parser, so fit -> predict pipelines are bit-stable.
"""

import json
import logging
import os
import re
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from hkfit.errors import HKFitError, InputFormatError
from hkfit.estimators import EstimatorKind, FittedModel
from hkfit.sim import FigureResult, RiskReport
from hkfit.variation import RectPiecewiseFn

logger = logging.getLogger(__name__)

COORDINATE_COLUMN = re.compile(r"^x(\d+)$")
MODEL_KEYS = ("d", "kind", "anchors", "coefficients")


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def read_design_csv(path: str, require_y: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Read design points (and responses) from a CSV with header x1..xd[,y]

    Returns:
        (xs, y); y is None when the file has no y column
    """
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise InputFormatError(f"input file not found: {path}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise InputFormatError(f"cannot parse {path}: {e}")

    columns = [str(c).strip() for c in df.columns]
    df.columns = columns
    coordinates = sorted((int(m.group(1)), c) for c in columns for m in [COORDINATE_COLUMN.match(c)] if m)
    d = len(coordinates)
    if d == 0 or [k for k, _ in coordinates] != list(range(1, d + 1)):
        raise InputFormatError(f"{path}: header must name coordinate columns x1..xd, got {columns}")
    extra = [c for c in columns if c not in {name for _, name in coordinates} | {"y"}]
    if extra:
        raise InputFormatError(f"{path}: unexpected columns {extra}")
    if require_y and "y" not in columns:
        raise InputFormatError(f"{path}: missing response column y")
    if df.empty:
        raise InputFormatError(f"{path}: no data rows")

    numeric = df.apply(pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        bad_row = int(numeric.isna().any(axis=1).to_numpy().argmax())
        raise InputFormatError(f"{path}: non-numeric or missing value in data row {bad_row + 1}")
    xs = numeric[[name for _, name in coordinates]].to_numpy(dtype=float)
    if not np.all(np.isfinite(xs)):
        raise InputFormatError(f"{path}: non-finite coordinates")
    if np.any(xs < 0.0) or np.any(xs > 1.0):
        raise InputFormatError(f"{path}: coordinates must lie in [0, 1]")
    y = numeric["y"].to_numpy(dtype=float) if "y" in columns else None
    if y is not None and not np.all(np.isfinite(y)):
        raise InputFormatError(f"{path}: non-finite responses")
    logger.info(f"Read {xs.shape[0]} points in d={d} from {path}")
    return xs, y


def _coordinate_frame(points: np.ndarray, prefix: str) -> pd.DataFrame:
    points = np.asarray(points, dtype=float)
    return pd.DataFrame(points, columns=[f"{prefix}{j + 1}" for j in range(points.shape[1])])


def predictions_frame(xs: np.ndarray, yhat: np.ndarray) -> pd.DataFrame:
    df = _coordinate_frame(xs, "x")
    df["yhat"] = np.asarray(yhat, dtype=float)
    return df


def write_predictions_csv(path: str, xs: np.ndarray, yhat: np.ndarray):
    _ensure_parent(path)
    predictions_frame(xs, yhat).to_csv(path, index=False)


def write_anchors_csv(path: str, anchors: np.ndarray):
    _ensure_parent(path)
    _coordinate_frame(anchors, "z").to_csv(path, index=False)


def model_to_dict(model: FittedModel) -> Dict[str, Any]:
    return {
        "d": model.fn.d,
        "kind": model.kind.value,
        "V": model.V,
        "anchors": model.fn.anchors.tolist(),
        "coefficients": model.fn.coefficients.tolist(),
        "grid_dims": list(model.grid_dims) if model.grid_dims else None,
        "diagnostics": model.diagnostics,
    }


def model_from_dict(data: Dict[str, Any]) -> FittedModel:
    """
    Rebuild a model from its JSON form

    The fitted values are not stored, so the returned model has an empty
    fitted vector; predict() works from the anchored form alone.
    """
    if not isinstance(data, dict):
        raise InputFormatError("model JSON must be an object")
    missing = [key for key in MODEL_KEYS if key not in data]
    if missing:
        raise InputFormatError(f"model JSON is missing {missing}")
    try:
        fn = RectPiecewiseFn(np.asarray(data["anchors"], dtype=float), np.asarray(data["coefficients"], dtype=float))
        kind = EstimatorKind(data["kind"])
    except (TypeError, ValueError) as e:
        raise InputFormatError(f"invalid model: {e}")
    if fn.d != int(data["d"]):
        raise InputFormatError(f"model declares d={data['d']} but anchors have {fn.d} coordinates")
    V = data.get("V")
    grid_dims = data.get("grid_dims")
    return FittedModel(
        fn=fn,
        fitted=np.empty(0),
        kind=kind,
        V=float(V) if V is not None else None,
        diagnostics=dict(data.get("diagnostics") or {}),
        grid_dims=tuple(int(n) for n in grid_dims) if grid_dims else None,
    )


def write_json(path: str, payload: Dict[str, Any]):
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise InputFormatError(f"input file not found: {path}")
    except json.JSONDecodeError as e:
        raise InputFormatError(f"cannot parse {path}: {e}")


def save_model(path: str, model: FittedModel):
    write_json(path, model_to_dict(model))
    logger.info(f"Saved {model.kind.value} model with {model.fn.p} anchors to {path}")


def load_model(path: str) -> FittedModel:
    try:
        return model_from_dict(read_json(path))
    except HKFitError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise InputFormatError(f"invalid model file {path}: {e}")


def risk_frame(report: RiskReport) -> pd.DataFrame:
    rows: List[Dict[str, Any]] = [g.to_dict() for g in report.grids]
    return pd.DataFrame(rows)


def write_risk_csv(path: str, report: RiskReport):
    _ensure_parent(path)
    risk_frame(report).to_csv(path, index=False)


def write_slopes_json(path: str, report: RiskReport):
    write_json(path, report.slopes_dict())


def figure_frame(result: FigureResult) -> pd.DataFrame:
    df = _coordinate_frame(result.points, "x")
    df["truth"] = result.truth
    df["y"] = result.y
    for label, model in result.fits.items():
        df[label] = model.fitted
    return df


def write_surface_csv(path: str, result: FigureResult):
    _ensure_parent(path)
    figure_frame(result).to_csv(path, index=False)
