"""Concordance index, fixed-horizon AUC, k-fold splits and fold summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from himt.errors import ContractError, MetricError
from himt.layers import stream


@dataclass(frozen=True)
class RiskTable:
    ids: tuple[str, ...]
    risks: np.ndarray
    times: np.ndarray
    events: np.ndarray   # 1 = event observed (uncensored)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("patient ids must be unique")
        n = len(self.ids)
        if not (len(self.risks) == len(self.times) == len(self.events) == n):
            raise ContractError("risk table columns differ in length")
        if (np.asarray(self.times) <= 0).any():
            raise ContractError("times must be positive")

    @classmethod
    def build(cls, ids, risks, times, events) -> "RiskTable":
        return cls(tuple(ids), np.asarray(risks, float), np.asarray(times, float), np.asarray(events, int))


@dataclass(frozen=True)
class FoldReport:
    fold: int
    c_index: float
    auc: float
    n_pairs: int


def c_index(table: RiskTable) -> tuple[float, int]:
    """Harrell's C over pairs anchored on an observed event with a strictly later time.

    Tied risks earn half credit; tied times are not comparable.
    """
    r, t, e = table.risks, table.times, table.events.astype(bool)
    comparable = e[:, None] & (t[None, :] > t[:, None])
    n = int(comparable.sum())
    if n == 0:
        raise MetricError("no comparable pairs")
    diff = r[:, None] - r[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float(score[comparable].sum() / n), n


def auc(table: RiskTable, horizon: float) -> float:
    """Binary AUC for "event by ``horizon``", patients censored earlier excluded."""
    t, e = table.times, table.events.astype(bool)
    pos = e & (t <= horizon)
    neg = t > horizon
    keep = pos | neg
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"horizon {horizon}: {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(table.risks[keep])
    rank_pos = ranks[pos[keep]].sum()
    return float((rank_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def kfold_split(ids: Sequence[str], k: int, seed: int) -> list[tuple[list[str], list[str]]]:
    if k < 2:
        raise ContractError(f"k must be >= 2, got {k}")
    if len(ids) < k:
        raise ContractError(f"{len(ids)} ids cannot fill {k} folds")
    order = stream(seed, "folds").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    tests = [list(chunk) for chunk in np.array_split(np.array(shuffled, dtype=object), k)]
    out = []
    for test in tests:
        held = set(test)
        out.append(([i for i in ids if i not in held], test))
    return out


def summarize(reports: Sequence[FoldReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (ddof=1) of each metric.

    Folds where a metric is undefined (NaN) are left out of that metric.
    """
    out = {}
    for metric in ("c_index", "auc"):
        vals = np.array([getattr(r, metric) for r in reports], dtype=float)
        vals = vals[~np.isnan(vals)]
        if not len(vals):
            out[metric] = (float("nan"), float("nan"))
            continue
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[metric] = (float(vals.mean()), std)
    return out


def write_folds_csv(path: str | Path, reports: Sequence[FoldReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "c_index", "auc", "n_pairs"])
        for r in reports:
            w.writerow([r.fold, repr(r.c_index), repr(r.auc), r.n_pairs])


def write_summary_csv(path: str | Path, reports: Sequence[FoldReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std"])
        for metric, (mean, std) in summarize(reports).items():
            w.writerow([metric, repr(mean), repr(std)])
