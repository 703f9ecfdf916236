"""Ergodic transform estimates and martingale residuals from simulated paths."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .levy_models import DownProcessSpec, UpProcessSpec, eta_eval, phi_eval
from .storage_sim import PathSample, occupancy_fraction

__all__ = [
    "LstEstimate",
    "ResidualStat",
    "EstimationError",
    "batch_se",
    "jackknife_se",
    "sample_lst",
    "time_avg_lst",
    "down_conditional_lst",
    "embedded_lst",
    "embedded_mean",
    "martingale_residual",
    "delta_terms",
    "delta_residual",
    "BURN_IN",
]

BURN_IN = 0.1
NUM_BATCHES = 20
DELTA_SKIP = 5

BASES = ("time-average", "down-conditional", "embedded-S", "embedded-T")


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class LstEstimate:
    alphas: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    sample_basis: str

    def __post_init__(self):
        if self.sample_basis not in BASES:
            raise ValueError(f"unknown basis {self.sample_basis!r}")

    def at(self, alpha: float) -> tuple[float, float]:
        i = int(np.flatnonzero(np.isclose(self.alphas, alpha, rtol=0, atol=1e-15))[0])
        return float(self.values[i]), float(self.std_errors[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "value", "std_error", "basis"])
            for a, v, s in zip(self.alphas, self.values, self.std_errors):
                w.writerow([format(a, ".12g"), format(v, ".12g"), format(s, ".12g"), self.sample_basis])


@dataclass(frozen=True)
class ResidualStat:
    alpha: float
    value: float
    horizon_or_n: float
    std_error: float


# ----------------------------------------------------------------------
# error bars
# ----------------------------------------------------------------------


def batch_se(series, num_batches: int = NUM_BATCHES) -> float:
    """Non-overlapping batch-means standard error of the mean of ``series``.

    ``series`` is split into ``num_batches`` equal consecutive blocks; pass
    one value per batch to use precomputed batch means.
    """
    x = np.asarray(series, dtype=float)
    if num_batches < 10:
        raise EstimationError("batch means need at least 10 batches")
    if x.size == 0 or x.size % num_batches:
        raise EstimationError(f"series of length {x.size} does not split into {num_batches} batches")
    means = x.reshape(num_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(num_batches))


def jackknife_se(leave_one_out) -> np.ndarray:
    """Jackknife standard error from leave-one-out estimates (first axis = units)."""
    loo = np.asarray(leave_one_out, dtype=float)
    g = loo.shape[0]
    if g < 2:
        raise EstimationError("jackknife needs at least two units")
    return np.sqrt((g - 1) / g * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))


def _block_sums(x, blocks):
    """Sum ``x`` (units on axis 0) into ``blocks`` contiguous groups."""
    x = np.asarray(x, dtype=float)
    g = min(blocks, x.shape[0])
    edges = np.linspace(0, x.shape[0], g + 1).astype(int)
    return np.add.reduceat(x, edges[:-1], axis=0)


def _ratio_jackknife(num, den, blocks=NUM_BATCHES):
    """Delete-a-block jackknife SE of ``sum(num)/sum(den)`` over contiguous units."""
    bn, bd = _block_sums(num, blocks), _block_sums(den, blocks)
    loo = (bn.sum(axis=0) - bn) / (bd.sum(axis=0) - bd)[..., None] if bn.ndim > 1 else (bn.sum() - bn) / (bd.sum() - bd)
    return jackknife_se(loo)


# ----------------------------------------------------------------------
# transforms
# ----------------------------------------------------------------------


def _alphas(alphas) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise EstimationError("alphas must be finite and >= 0")
    return a


def _window(path: PathSample, burn_in: float):
    if path.n_pieces == 0 or not path.horizon > 0:
        raise EstimationError("empty path")
    if not 0 <= burn_in < 1:
        raise EstimationError("burn_in must lie in [0, 1)")
    return burn_in * path.horizon, path.horizon


def sample_lst(values, alphas) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean of ``exp(-alpha V)`` and its i.i.d. standard error."""
    v = np.asarray(values, dtype=float)
    a = _alphas(alphas)
    e = np.exp(-np.outer(a, v))
    se = e.std(axis=1, ddof=1) / math.sqrt(v.size) if v.size > 1 else np.zeros(a.size)
    return e.mean(axis=1), se


def time_avg_lst(path: PathSample, alphas, burn_in: float = BURN_IN, num_batches: int = NUM_BATCHES) -> LstEstimate:
    """``(1/t) int exp(-alpha W(s)) ds`` over the post burn-in window, with batch-means SE."""
    a = _alphas(alphas)
    t0, t1 = _window(path, burn_in)
    edges = np.linspace(t0, t1, num_batches + 1)
    vals, ses = np.empty(a.size), np.empty(a.size)
    for i, alpha in enumerate(a):
        if alpha == 0.0:
            vals[i], ses[i] = 1.0, 0.0
            continue
        G = path.cumulative_integral(alpha, edges)
        vals[i] = (G[-1] - G[0]) / (t1 - t0)
        ses[i] = batch_se(np.diff(G) / np.diff(edges), num_batches)
    return LstEstimate(a, vals, ses, "time-average")


def _down_pieces(path: PathSample, t0: float, t1: float):
    """Clipped ``(start, end)`` of down periods meeting the window, in order."""
    lo = np.maximum(path.T_prev, t0)
    hi = np.minimum(path.S, t1)
    keep = hi > lo
    return lo[keep], hi[keep]


def down_conditional_lst(path: PathSample, alphas, burn_in: float = BURN_IN, num_blocks: int = NUM_BATCHES):
    """Ratio estimator of ``E exp(-alpha W_d)`` and the down-time fraction.

    Standard errors come from a delete-a-block jackknife over contiguous
    groups of down periods.
    """
    a = _alphas(alphas)
    t0, t1 = _window(path, burn_in)
    lo, hi = _down_pieces(path, t0, t1)
    if lo.size == 0:
        raise EstimationError("no down time in the observation window")
    p_d = occupancy_fraction(path, burn_in)
    lengths = hi - lo
    num = np.empty((lo.size, a.size))
    for i, alpha in enumerate(a):
        num[:, i] = lengths if alpha == 0.0 else path.cumulative_integral(alpha, hi) - path.cumulative_integral(alpha, lo)
    vals = num.sum(axis=0) / lengths.sum()
    vals[a == 0.0] = 1.0
    ses = _ratio_jackknife(num, lengths, num_blocks) if lo.size > 1 else np.zeros(a.size)
    ses[a == 0.0] = 0.0
    return LstEstimate(a, vals, ses, "down-conditional"), p_d


def _embedded_mask(path: PathSample, t0: float):
    return path.completed & (path.T_prev >= t0)


def embedded_lst(
    path: PathSample,
    alphas,
    basis: str,
    burn_in: float = BURN_IN,
    min_periods: int = 5,
    num_blocks: int = NUM_BATCHES,
) -> LstEstimate:
    """Mean of ``exp(-alpha W)`` at period ends: ``at_S`` (W+) or ``at_T`` (W-)."""
    a = _alphas(alphas)
    t0, _ = _window(path, burn_in)
    mask = _embedded_mask(path, t0)
    if basis == "at_S":
        w, label = path.W_at_S[mask], "embedded-S"
    elif basis == "at_T":
        w, label = path.W_at_T_prev[mask], "embedded-T"
    else:
        raise EstimationError(f"basis must be 'at_S' or 'at_T', got {basis!r}")
    if w.size < min_periods:
        raise EstimationError(f"need at least {min_periods} completed periods, have {w.size}")
    e = np.exp(-np.outer(w, a))
    vals = e.mean(axis=0)
    ses = _ratio_jackknife(e, np.ones(w.size), num_blocks)
    vals[a == 0.0], ses[a == 0.0] = 1.0, 0.0
    return LstEstimate(a, vals, ses, label)


def embedded_mean(path: PathSample, basis: str, burn_in: float = BURN_IN, num_blocks: int = NUM_BATCHES):
    """Mean embedded workload (``EW+`` or ``EW-``) with block-jackknife SE."""
    t0, _ = _window(path, burn_in)
    mask = _embedded_mask(path, t0)
    w = path.W_at_S[mask] if basis == "at_S" else path.W_at_T_prev[mask]
    if w.size < 2:
        raise EstimationError("too few completed periods")
    return float(w.mean()), float(_ratio_jackknife(w, np.ones(w.size), num_blocks))


# ----------------------------------------------------------------------
# martingale residuals
# ----------------------------------------------------------------------


def _check_specs(path: PathSample, up=None, down=None):
    sc = path.scenario
    if sc is None:
        return
    if up is not None and up != sc.up:
        raise EstimationError("up spec does not match the scenario that produced the path")
    if down is not None and down != sc.down:
        raise EstimationError("down spec does not match the scenario that produced the path")


def martingale_residual(
    path: PathSample,
    alpha: float,
    up: UpProcessSpec,
    down: DownProcessSpec,
    burn_in: float = BURN_IN,
    until: float | None = None,
    num_batches: int = NUM_BATCHES,
) -> ResidualStat:
    """Time-normalised increment of the exponential martingale over the window.

    With the regime indicator as integrand, ``M(t)`` reduces to
    ``int (phi(a)(1-J) - eta(a)J) e^{-aW} ds + e^{-aW(0)} - e^{-aW(t)} - a L(t)``.
    The value returned is ``(M(t1) - M(t0)) / (t1 - t0)``.
    """
    if not alpha > 0:
        raise EstimationError("alpha must be > 0")
    _check_specs(path, up, down)
    t0, t1 = _window(path, burn_in)
    if until is not None:
        if not t0 < until <= path.horizon:
            raise EstimationError("until must lie in (burn-in time, horizon]")
        t1 = float(until)
    ph, et = phi_eval(up, alpha), eta_eval(down, alpha)
    edges = np.linspace(t0, t1, num_batches + 1)
    G = path.cumulative_integral(alpha, edges)
    GJ = path.cumulative_integral(alpha, edges, down_only=True)
    W, L = path.state_at(edges)
    dM = ph * np.diff(G) - (ph + et) * np.diff(GJ) + (np.exp(-alpha * W[:-1]) - np.exp(-alpha * W[1:])) - alpha * np.diff(L)
    value = float(dM.sum() / (t1 - t0))
    return ResidualStat(float(alpha), value, t1 - t0, batch_se(dM / np.diff(edges), num_batches))


def delta_terms(path: PathSample, alpha: float, down: DownProcessSpec | None = None) -> np.ndarray:
    """``exp(-alpha W(T_(k-1))) * Delta_k`` for every completed down period."""
    if not alpha > 0:
        raise EstimationError("alpha must be > 0")
    if down is None:
        if path.scenario is None:
            raise EstimationError("down spec required")
        down = path.scenario.down
    _check_specs(path, down=down)
    m = path.completed
    T, S = path.T_prev[m], path.S[m]
    if T.size == 0:
        return np.empty(0)
    area = path.cumulative_integral(alpha, S) - path.cumulative_integral(alpha, T)
    return -eta_eval(down, alpha) * area + np.exp(-alpha * path.W_at_T_prev[m]) - np.exp(-alpha * path.W_at_S[m])


def delta_residual(
    path: PathSample,
    alpha: float,
    down: DownProcessSpec,
    skip: int = DELTA_SKIP,
    min_periods: int = 5,
) -> ResidualStat:
    """Average of the per-period optional-stopping terms after discarding ``skip`` periods."""
    terms = delta_terms(path, alpha, down)[skip:]
    n = terms.size
    if n < min_periods:
        raise EstimationError(f"need at least {min_periods} periods after the first {skip}, have {n}")
    se = float(terms.std(ddof=1) / math.sqrt(n))
    return ResidualStat(float(alpha), float(terms.mean()), float(n), se)
