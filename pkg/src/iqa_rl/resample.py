"""Progressive re-sampling over a long-tailed MOS distribution.

Stage ``s`` of ``S`` weights bin ``b`` by ``count_b ** (1 - gamma * s / S)``:
stage 0 reproduces the empirical distribution and, with ``gamma = 1``, the
last stage draws every occupied bin equally often.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateStages, OutOfRange


def default_edges(k: int = 10, lo: float = 1.0, hi: float = 5.0) -> np.ndarray:
    return np.linspace(lo, hi, k + 1)


@dataclass(frozen=True)
class ScoreBins:
    edges: np.ndarray
    counts: np.ndarray
    assignment: np.ndarray  # bin index of every input record, in input order

    @property
    def k(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class StagePlan:
    stage: int
    total_stages: int
    gamma: float
    weights: np.ndarray

    def report(self, bins: ScoreBins) -> dict:
        return {
            "stage": self.stage,
            "total_stages": self.total_stages,
            "gamma": self.gamma,
            "edges": [float(e) for e in bins.edges],
            "counts": [int(c) for c in bins.counts],
            "weights": [float(w) for w in self.weights],
        }


def bin_scores(records: Sequence[Tuple[str, float]], edges) -> ScoreBins:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly ascending with at least two entries")
    mos = np.array([m for _, m in records], dtype=np.float64)
    bad = (mos < edges[0]) | (mos > edges[-1]) | ~np.isfinite(mos)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise OutOfRange(f"record {records[first][0]!r} has mos {mos[first]} outside [{edges[0]}, {edges[-1]}]")
    k = len(edges) - 1
    idx = np.searchsorted(edges, mos, side="right") - 1
    idx = np.minimum(idx, k - 1)  # closed last bin
    return ScoreBins(edges=edges, counts=np.bincount(idx, minlength=k), assignment=idx)


def stage_weights(bins: ScoreBins, s: int, S: int, gamma: float = 1.0) -> StagePlan:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if S == 0:
        if s > 0:
            raise DegenerateStages("stage > 0 requested with zero stages")
        frac = 0.0
    else:
        if not 0 <= s <= S:
            raise ValueError(f"stage {s} outside [0, {S}]")
        frac = s / S
    counts = bins.counts.astype(np.float64)
    occupied = counts > 0
    if not occupied.any():
        raise ValueError("all bins are empty")
    raw = np.zeros_like(counts)
    raw[occupied] = counts[occupied] ** (1.0 - gamma * frac)
    return StagePlan(stage=s, total_stages=S, gamma=gamma, weights=raw / raw.sum())


def epoch_rng(seed: int, stage: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stage, epoch]))


def sample_epoch(records: Sequence[Tuple[str, float]], bins: ScoreBins, plan: StagePlan,
                 epoch_size: int, seed: int, epoch: int = 0) -> List[str]:
    """Draw bins by ``plan.weights``, then a uniform record within the bin (with replacement)."""
    if epoch_size < 1:
        raise ValueError("epoch_size must be >= 1")
    rng = epoch_rng(seed, plan.stage, epoch)
    members = [np.flatnonzero(bins.assignment == b) for b in range(bins.k)]
    drawn_bins = rng.choice(bins.k, size=epoch_size, p=plan.weights)
    ids = []
    for b in drawn_bins:
        pool = members[b]
        ids.append(records[pool[rng.integers(len(pool))]][0])
    return ids
