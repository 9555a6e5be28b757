"""PLCC, SRCC and the unique-score ratio used as a diversity diagnostic.

PLCC is computed on raw predictions; no logistic remapping is applied.
"""

from __future__ import annotations

import csv
import json
from decimal import ROUND_HALF_UP, Decimal
from typing import List, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ZeroVariance


def _paired(predictions, targets):
    x = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("predictions and targets must be 1-D and equally long")
    if len(x) < 2:
        raise ValueError("need at least two pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("series must be finite")
    return x, y


def plcc(predictions: Sequence[float], targets: Sequence[float]) -> float:
    x, y = _paired(predictions, targets)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("a series is constant")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; ties share their average rank."""
    return rankdata(np.asarray(values, dtype=np.float64), method="average")


def srcc(predictions: Sequence[float], targets: Sequence[float]) -> float:
    x, y = _paired(predictions, targets)
    return plcc(ranks(x), ranks(y))


def round_half_away(x: float, decimals: int) -> Decimal:
    # go through repr so 2.675 rounds as written, not as its binary neighbour
    q = Decimal(1).scaleb(-decimals)
    d = Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)
    return d


def unique_score_ratio(scores: Sequence[float], decimals: int = 2) -> float:
    """Distinct values after rounding, divided by the number of scores."""
    scores = list(scores)
    if not scores:
        raise ValueError("scores must be non-empty")
    return len({round_half_away(s, decimals) for s in scores}) / len(scores)


def read_mos_values(path) -> List[float]:
    """MOS values from a text file: one number per line, CSV with a ``mos``
    column, or JSONL objects carrying ``mos``."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"{path}: no MOS values")
    if lines[0].lstrip().startswith("{"):
        return [float(json.loads(line)["mos"]) for line in lines]
    rows = list(csv.reader(lines))
    header = [c.strip().lower() for c in rows[0]]
    if "mos" in header:
        col = header.index("mos")
        return [float(row[col]) for row in rows[1:]]
    return [float(row[-1]) for row in rows]
