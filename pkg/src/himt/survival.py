"""Discrete-time survival: quantile bins, hazard/survival curves, censored NLL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from himt.autodiff import (Node, add, clamp_min, const, cumprod_cols, log, scale,
                           sigmoid, sub, sum as node_sum, take)
from himt.errors import ContractError, FitError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeBins:
    """Interval edges ``0 = t_0 < t_1 < ... < t_n = inf``."""

    cuts: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.cuts)
        if c[0] != 0.0 or not np.isinf(c[-1]) or not (np.diff(c) > 0).all():
            raise FitError(f"bin edges must be 0 < ... < inf and strictly increasing: {self.cuts}")

    @property
    def n_bins(self) -> int:
        return len(self.cuts) - 1

    @property
    def interior(self) -> np.ndarray:
        return np.asarray(self.cuts[1:-1])


@dataclass(frozen=True)
class DiscreteLabel:
    Y: int
    c: int   # 1 = censored


@dataclass
class HazardCurve:
    hazards: Node   # 1 x n_bins
    survs: Node     # 1 x n_bins
    risk: Node      # 1 x 1


def fit_bins(event_times, n_bins: int = 4) -> TimeBins:
    """Cut points at the empirical quantiles of (uncensored) event times."""
    t = np.asarray(event_times, dtype=np.float64)
    n_distinct = len(np.unique(t))
    if n_distinct < n_bins:
        raise FitError(f"need at least {n_bins} distinct event times, got {n_distinct}")
    qs = np.quantile(t, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    cuts = (0.0, *map(float, qs), float("inf"))
    if not (np.diff(cuts) > 0).all():
        raise FitError(f"quantile cuts are not strictly increasing: {cuts}")
    return TimeBins(cuts)


def discretize(t: float, bins: TimeBins) -> int:
    if not t > 0:
        raise ContractError(f"survival time must be positive, got {t}")
    return int(np.searchsorted(bins.interior, t, side="right"))


def hazards_from_logits(logits) -> HazardCurve:
    h = sigmoid(logits)
    s = cumprod_cols(sub(1.0, h))
    return HazardCurve(h, s, scale(node_sum(s), -1.0))


def _neg_log(x: Node) -> Node:
    return scale(log(clamp_min(x, LOG_FLOOR)), -1.0)


def uncensored_loss(curve: HazardCurve, label: DiscreteLabel) -> Node:
    """-(1-c) [log S(Y-1) + log h(Y)], with S(-1) = 1."""
    if label.c == 1:
        return const(0.0)
    term = _neg_log(take(curve.hazards, 0, label.Y))
    if label.Y > 0:
        term = add(term, _neg_log(take(curve.survs, 0, label.Y - 1)))
    return term


def nll_loss(curve: HazardCurve, label: DiscreteLabel, event_term_survival: bool = False) -> Node:
    """Censored negative log-likelihood.

    Censored patients contribute -log S(Y). Uncensored patients contribute
    -log S(Y-1) - log h(Y). With ``event_term_survival`` the last term uses S(Y)
    instead of h(Y).
    """
    n = curve.hazards.shape[1]
    if not 0 <= label.Y < n:
        raise ContractError(f"label bin {label.Y} outside [0, {n})")
    if label.c == 1:
        return _neg_log(take(curve.survs, 0, label.Y))
    if not event_term_survival:
        return uncensored_loss(curve, label)
    term = _neg_log(take(curve.survs, 0, label.Y))
    if label.Y > 0:
        term = add(term, _neg_log(take(curve.survs, 0, label.Y - 1)))
    return term


def combined_loss(curve: HazardCurve, label: DiscreteLabel, beta: float = 0.0,
                  event_term_survival: bool = False) -> Node:
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    if beta == 0.0:
        return nll_loss(curve, label, event_term_survival)
    if beta == 1.0:
        return uncensored_loss(curve, label)
    return add(scale(nll_loss(curve, label, event_term_survival), 1.0 - beta),
               scale(uncensored_loss(curve, label), beta))
