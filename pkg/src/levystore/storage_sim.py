"""Regime-switched netput, Skorokhod reflection and workload paths.

A path is stored as a sequence of pieces ``[t_i, t_{i+1})``. Each breakpoint
may carry an upward jump; each piece carries a continuous increment. In exact
mode the workload is linear inside a piece (and clamped at zero, with the
hitting time resolved analytically). In grid mode a piece holds its left
value and the whole continuous increment lands on the next breakpoint, which
is the left-endpoint Euler scheme with reflection applied per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .levy_models import (
    DownProcessSpec,
    JumpDistribution,
    UpProcessSpec,
    phi_prime0,
    poisson_epochs,
)

__all__ = [
    "RenewalAlternation",
    "ExhaustiveUp",
    "ScheduleTable",
    "RegimePolicy",
    "Scenario",
    "PathSample",
    "SimulationError",
    "reflect",
    "simulate",
    "first_passage_empty",
    "occupancy_fraction",
    "rng_streams",
]

MAX_PASSAGE_EVENTS = 10**9


class SimulationError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# policies
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RenewalAlternation:
    """i.i.d. down and up durations, independent of the workload."""

    down_dist: JumpDistribution
    up_dist: JumpDistribution


@dataclass(frozen=True)
class ExhaustiveUp:
    """Up periods last until the workload first hits zero (no reflection).

    If the workload is still zero when a down period would end, the down
    period is extended to the next arrival of the down process.
    """

    down_dist: JumpDistribution


@dataclass(frozen=True)
class ScheduleTable:
    """Explicit ``(S_n, T_n)`` epochs; ``T_n = inf`` means the up period never ends.

    With ``cycle`` set, the table is repeated with that period.
    """

    epochs: tuple[tuple[float, float], ...]
    cycle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple((float(s), float(t)) for s, t in self.epochs))
        prev_s, prev_t = 0.0, 0.0
        for n, (s, t) in enumerate(self.epochs, start=1):
            if not (math.isfinite(s) and s >= prev_t and t >= s):
                raise ValueError(f"epoch {n}: need T_(n-1) <= S_n <= T_n, got S={s}, T={t}")
            if n > 1 and not t > prev_t:
                raise ValueError(f"epoch {n}: T_n must exceed T_(n-1)")
            if not math.isfinite(t) and n != len(self.epochs):
                raise ValueError("only the last T_n may be infinite")
            prev_s, prev_t = s, t
        if self.cycle is not None:
            if not self.epochs:
                raise ValueError("cycle needs at least one epoch")
            last_t = self.epochs[-1][1]
            if not (self.cycle > 0 and math.isfinite(last_t) and last_t <= self.cycle):
                raise ValueError("cycle must be finite, positive and >= the last T_n")
            if self.epochs[0][1] + self.cycle <= last_t:
                raise ValueError("repeated table must keep T_n strictly increasing")


RegimePolicy = Union[RenewalAlternation, ExhaustiveUp, ScheduleTable]


@dataclass(frozen=True)
class Scenario:
    up: UpProcessSpec
    down: DownProcessSpec
    policy: RegimePolicy
    w0: float = 0.0
    horizon: float = 1.0
    seed: int = 0
    grid_step: float = 1e-3
    mode: str = "auto"
    replica: int = 0

    def __post_init__(self):
        if not (self.w0 >= 0 and math.isfinite(self.w0)):
            raise ValueError("w0 must be a finite value >= 0")
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be a finite value >= 0")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be > 0")
        if self.mode not in ("auto", "exact", "grid"):
            raise ValueError("mode must be one of auto, exact, grid")
        if self.mode == "exact" and self.up.brownian_var > 0:
            raise ValueError("exact mode requires brownian_var = 0")
        if isinstance(self.policy, ExhaustiveUp):
            if self.up.brownian_var > 0:
                raise ValueError("exhaustive policy needs the exact (brownian_var = 0) mode")
            if not phi_prime0(self.up) > 0:
                raise ValueError("exhaustive policy needs a stable up process (phi'(0) > 0)")

    @property
    def grid(self) -> bool:
        if self.mode == "auto":
            return self.up.brownian_var > 0
        return self.mode == "grid"


def rng_streams(seed: int, replica: int = 0) -> dict[str, np.random.Generator]:
    """Independent generators per role; replicas use disjoint spawn keys."""
    root = np.random.SeedSequence(int(seed), spawn_key=(int(replica),))
    names = ("policy", "up", "down", "brownian")
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, root.spawn(len(names)))}


# ----------------------------------------------------------------------
# reflection
# ----------------------------------------------------------------------


def reflect(increments, w0: float = 0.0, timestamps=None):
    """Discrete Skorokhod map of a netput given by its increments.

    Returns post-step ``(W, L)`` arrays with ``W_k = max(W_(k-1) + dX_k, 0)``.
    ``timestamps`` is accepted for bookkeeping only; for exact reflection of
    linear pieces use :func:`simulate`, which resolves hitting times.
    """
    inc = np.asarray(increments, dtype=float)
    if not np.all(np.isfinite(inc)):
        raise SimulationError("non-finite netput increment")
    if timestamps is not None and len(timestamps) != inc.size:
        raise ValueError("timestamps and increments differ in length")
    level = w0 + np.cumsum(inc)
    L = np.maximum(-np.minimum.accumulate(level), 0.0)
    W = np.maximum(level + L, 0.0)
    return W, L


# ----------------------------------------------------------------------
# path container
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathSample:
    """Piecewise description of (W, L, J) on ``[0, horizon]``.

    Arrays indexed by breakpoint (length ``n + 1``): ``t``, ``jump``,
    ``netput_left``, ``L``, ``W_left``, ``W_right``. Arrays indexed by piece
    (length ``n``): ``cinc``, ``J``. ``L`` is continuous in exact mode, so
    ``L[i]`` is both its left and right value at ``t[i]``.
    """

    t: np.ndarray
    jump: np.ndarray
    cinc: np.ndarray
    J: np.ndarray
    netput_left: np.ndarray
    L: np.ndarray
    W_left: np.ndarray
    W_right: np.ndarray
    w0: float
    horizon: float
    grid: bool
    T_prev: np.ndarray
    S: np.ndarray
    W_at_T_prev: np.ndarray
    W_at_S: np.ndarray
    grid_step: float = 1e-3
    scenario: Scenario | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_pieces(self) -> int:
        return self.cinc.size

    @property
    def netput_right(self) -> np.ndarray:
        return self.netput_left + self.jump

    @property
    def hold(self) -> np.ndarray:
        """Pieces integrated by the left-endpoint rule (up pieces in grid mode)."""
        return (self.J == 0) & self.grid

    @property
    def completed(self) -> np.ndarray:
        """Mask of periods whose down part ended by the horizon."""
        return self.S <= self.horizon

    # -- pointwise evaluation -------------------------------------------------

    def _locate(self, times):
        times = np.asarray(times, dtype=float)
        if self.n_pieces == 0:
            raise ValueError("path has no pieces")
        if np.any(times < 0) or np.any(times > self.horizon):
            raise ValueError("time outside [0, horizon]")
        idx = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, self.n_pieces - 1)
        return times, idx, times - self.t[idx]

    def state_at(self, times):
        """Right-continuous ``(W, L)`` at arbitrary times in ``[0, horizon]``."""
        times, idx, u = self._locate(times)
        a = self.W_right[idx]
        d = np.diff(self.t)[idx]
        frac = np.divide(u, d, out=np.zeros_like(u), where=d > 0)
        level = np.where(self.hold[idx], a, a + self.cinc[idx] * frac)
        return np.maximum(level, 0.0), self.L[idx] + np.maximum(-level, 0.0)

    # -- skeleton ---------------------------------------------------------------

    def skeleton(self) -> dict[str, np.ndarray]:
        """Points ``(t, W, L, J, X)`` including exact zero-hitting epochs."""
        if "skeleton" in self._cache:
            return self._cache["skeleton"]
        n = self.n_pieces
        if n == 0:
            empty = np.empty(0)
            sk = {"t": empty, "W": empty, "L": empty, "J": np.empty(0, dtype=np.int8), "X": empty}
            self._cache["skeleton"] = sk
            return sk
        t, W, L = self.t[:-1], self.W_right[:-1], self.L[:-1]
        J, X = self.J, self.netput_right[:-1]
        cols = [t, W, L, J, X]
        if not self.grid:
            d = np.diff(self.t)
            hit = (W > 0) & (W + self.cinc < 0) & ~self.hold
            if hit.any():
                tau = d[hit] * W[hit] / -self.cinc[hit]
                extra = [t[hit] + tau, np.zeros(hit.sum()), L[hit], J[hit], X[hit] - W[hit]]
                pos = np.flatnonzero(hit) + 1
                cols = [np.insert(c, pos, e) for c, e in zip(cols, extra)]
        ends = [self.t[-1:], self.W_left[-1:], self.L[-1:], self.J[-1:], self.netput_left[-1:]]
        cols = [np.concatenate([c, e]) for c, e in zip(cols, ends)]
        sk = dict(zip(("t", "W", "L", "J", "X"), cols))
        sk["J"] = sk["J"].astype(np.int8)
        self._cache["skeleton"] = sk
        return sk

    # -- integrals --------------------------------------------------------------

    def _piece_integrals(self, alpha: float) -> np.ndarray:
        key = ("pieces", alpha)
        if key not in self._cache:
            d = np.diff(self.t)
            self._cache[key] = _partial_integral(self.W_right[:-1], self.cinc, d, d, alpha, self.hold)
        return self._cache[key]

    def cumulative_integral(self, alpha: float, times, down_only: bool = False) -> np.ndarray:
        """``int_0^t exp(-alpha W(s)) [J(s)] ds`` evaluated at each of ``times``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if alpha == 0.0 and not down_only:
            return times.copy()
        full = self._piece_integrals(float(alpha))
        weight = self.J.astype(float) if down_only else None
        if weight is not None:
            full = full * weight
        cum = np.concatenate([[0.0], np.cumsum(full)])
        times, idx, u = self._locate(times)
        d = np.diff(self.t)[idx]
        part = _partial_integral(self.W_right[idx], self.cinc[idx], d, u, float(alpha), self.hold[idx])
        if weight is not None:
            part = part * weight[idx]
        return cum[idx] + part

    # -- export -----------------------------------------------------------------

    def to_csv(self, path) -> None:
        sk = self.skeleton()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "W", "L", "J"])
            for row in zip(sk["t"], sk["W"], sk["L"], sk["J"]):
                w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2]), int(row[3])])

    def boundaries_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "T_prev", "S_k", "W_at_T_prev", "W_at_S_k"])
            for k in range(self.S.size):
                w.writerow(
                    [k + 1, _fmt(self.T_prev[k]), _fmt(self.S[k]), _fmt(self.W_at_T_prev[k]), _fmt(self.W_at_S[k])]
                )


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _lin_mean(a, b, alpha):
    """Mean of exp(-alpha w) for w running linearly from a to b (both >= 0)."""
    x = alpha * (b - a)
    ea = np.exp(-alpha * a)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, ea * (1.0 - 0.5 * x), (ea - np.exp(-alpha * b)) / safe)


def _partial_integral(a, cinc, d, u, alpha, hold):
    """``int_0^u exp(-alpha W)`` over a piece starting at level ``a``."""
    a, cinc, d, u = (np.asarray(v, dtype=float) for v in (a, cinc, d, u))
    cinc = np.where(hold, 0.0, cinc)
    slope = np.divide(cinc, d, out=np.zeros_like(cinc), where=d > 0)
    hits = slope < 0
    tau = np.where(hits, a / np.where(hits, -slope, 1.0), np.inf)
    lin = np.minimum(u, tau)
    end = np.maximum(a + slope * lin, 0.0)
    return lin * _lin_mean(a, end, alpha) + (u - lin)


# ----------------------------------------------------------------------
# first passage
# ----------------------------------------------------------------------


def _passage_events(spec: UpProcessSpec, w: float, rng, max_events: int = MAX_PASSAGE_EVENTS):
    r = spec.drift
    elapsed, level = 0.0, float(w)
    offsets, sizes = [], []
    if spec.jump_rate <= 0:
        return level / r, offsets, sizes
    scale = 1.0 / spec.jump_rate
    while True:
        gap = float(rng.exponential(scale))
        if level - r * gap <= 0.0:
            return elapsed + level / r, offsets, sizes
        elapsed += gap
        level -= r * gap
        size = float(spec.jump_dist.sample(rng))
        level += size
        offsets.append(elapsed)
        sizes.append(size)
        if len(offsets) >= max_events:
            raise SimulationError(f"first passage exceeded {max_events} events")


def first_passage_empty(spec: UpProcessSpec, w: float, rng, max_events: int = MAX_PASSAGE_EVENTS) -> float:
    """Exact time for the up netput started at ``w`` to bring the workload to 0."""
    if spec.brownian_var > 0:
        raise ValueError("exact first passage needs brownian_var = 0")
    if not phi_prime0(spec) > 0:
        raise ValueError("first passage needs a stable up process")
    if not w > 0:
        raise ValueError("starting level must be > 0")
    return _passage_events(spec, w, rng, max_events)[0]


# ----------------------------------------------------------------------
# layout of regimes and events
# ----------------------------------------------------------------------


def _draw(dist, rng, n):
    return np.asarray(dist.sample(rng, n), dtype=float)


def _renewal_epochs(policy: RenewalAlternation, horizon: float, rng):
    downs, ups, total = [], [], 0.0
    mean_cycle = policy.down_dist.first_moment() + policy.up_dist.first_moment()
    while total < horizon or not downs:
        n = int(1.2 * (horizon - total) / mean_cycle) + 16
        d = _draw(policy.down_dist, rng, n)
        u = _draw(policy.up_dist, rng, n)
        downs.append(d)
        ups.append(u)
        total += d.sum() + u.sum()
    cycle = np.column_stack([np.concatenate(downs), np.concatenate(ups)]).ravel()
    ends = np.cumsum(cycle)
    S, T = ends[0::2], ends[1::2]
    T_prev = np.concatenate([[0.0], T[:-1]])
    keep = T_prev < horizon
    if not keep.any():
        keep[0] = True
    return T_prev[keep], S[keep]


def _schedule_epochs(policy: ScheduleTable, horizon: float):
    table = np.array(policy.epochs, dtype=float).reshape(-1, 2)
    if policy.cycle is not None:
        reps = int(math.ceil(horizon / policy.cycle)) + 1
        shift = np.repeat(np.arange(reps) * policy.cycle, len(table))
        table = np.tile(table, (reps, 1)) + shift[:, None]
    S, T = table[:, 0], table[:, 1]
    # a finite table ends with a down period that never finishes
    if T.size == 0 or math.isfinite(T[-1]):
        S = np.append(S, np.inf)
        T = np.append(T, np.inf)
    T_prev = np.concatenate([[0.0], T[:-1]])
    keep = T_prev < horizon
    if not keep.any():
        keep[0] = True
    return T_prev[keep], S[keep]


def _regimes(T_prev, S, T_next, horizon):
    """Chronological regime starts and labels (1 = down), clipped to the horizon."""
    starts = np.column_stack([T_prev, np.minimum(S, horizon)]).ravel()
    labels = np.tile(np.array([1, 0], dtype=np.int8), T_prev.size)
    ends = np.column_stack([np.minimum(S, horizon), np.minimum(T_next, horizon)]).ravel()
    return starts, ends, labels


def _operational_events(starts, ends, mask, rate, dist, rng):
    """Poisson events on the concatenation of the masked intervals, mapped to real time."""
    lo, hi = starts[mask], ends[mask]
    lengths = np.maximum(hi - lo, 0.0)
    op = poisson_epochs(rate, float(lengths.sum()), rng)
    if op.size == 0:
        return np.empty(0), np.empty(0)
    sizes = _draw(dist, rng, op.size)
    cend = np.cumsum(lengths)
    k = np.minimum(np.searchsorted(cend, op, side="right"), lengths.size - 1)
    real = lo[k] + (op - (cend[k] - lengths[k]))
    return np.minimum(real, hi[k]), sizes


def _exhaustive_layout(sc: Scenario, streams):
    policy, up, down = sc.policy, sc.up, sc.down
    if down.drift == 0 and down.jump_rate == 0:
        raise SimulationError("exhaustive policy with an identically zero down process never leaves the down regime")
    rpol, rup, rdown = streams["policy"], streams["up"], streams["down"]
    T_prev, S, T_next = [], [], []
    up_t, up_s, dn_t, dn_s = [], [], [], []
    t, w = 0.0, sc.w0
    while t < sc.horizon:
        d = float(policy.down_dist.sample(rpol))
        times = poisson_epochs(down.jump_rate, d, rdown)
        sizes = _draw(down.jump_dist, rdown, times.size) if times.size else np.empty(0)
        w += down.drift * d + float(sizes.sum())
        if w <= 0.0:
            gap = float(rdown.exponential(1.0 / down.jump_rate))
            size = float(down.jump_dist.sample(rdown))
            d += gap
            times = np.append(times, d)
            sizes = np.append(sizes, size)
            w += size
        if not math.isfinite(d):
            raise SimulationError(f"policy produced a non-finite down period at t={t}")
        dn_t.append(t + times)
        dn_s.append(sizes)
        T_prev.append(t)
        S.append(t + d)
        if t + d >= sc.horizon:
            T_next.append(np.inf)
            break
        tau, offsets, jsz = _passage_events(up, w, rup)
        up_t.append(t + d + np.asarray(offsets))
        up_s.append(np.asarray(jsz))
        t = t + d + tau
        T_next.append(t)
        w = 0.0
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)
    return np.array(T_prev), np.array(S), np.array(T_next), cat(up_t), cat(up_s), cat(dn_t), cat(dn_s)


# ----------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------


def simulate(sc: Scenario) -> PathSample:
    """Simulate one workload path; deterministic given ``(seed, replica)``."""
    h = float(sc.horizon)
    streams = rng_streams(sc.seed, sc.replica)
    up, down = sc.up, sc.down

    if isinstance(sc.policy, ExhaustiveUp):
        T_prev, S, T_next, up_t, up_s, dn_t, dn_s = _exhaustive_layout(sc, streams)
        starts, ends, labels = _regimes(T_prev, S, T_next, h)
    else:
        if isinstance(sc.policy, RenewalAlternation):
            T_prev, S = _renewal_epochs(sc.policy, h, streams["policy"])
        elif isinstance(sc.policy, ScheduleTable):
            T_prev, S = _schedule_epochs(sc.policy, h)
        else:
            raise TypeError(f"unknown policy {sc.policy!r}")
        # the up period after the last kept S_k always reaches the horizon
        T_next = np.append(T_prev[1:], np.inf)
        starts, ends, labels = _regimes(T_prev, S, T_next, h)
        up_t, up_s = _operational_events(starts, ends, labels == 0, up.jump_rate, up.jump_dist, streams["up"])
        dn_t, dn_s = _operational_events(starts, ends, labels == 1, down.jump_rate, down.jump_dist, streams["down"])

    for arr in (S, T_prev):
        if np.isnan(arr).any():
            raise SimulationError("policy produced an undefined epoch")

    if h == 0.0:
        z = np.zeros(1)
        e = np.empty(0)
        return PathSample(
            np.zeros(1), z, e, np.empty(0, dtype=np.int8), z, z, np.full(1, sc.w0), np.full(1, sc.w0),
            sc.w0, 0.0, sc.grid, e, e, e, e, sc.grid_step, sc,
        )

    grid_pts = _grid_points(starts, ends, labels, sc.grid_step) if sc.grid else np.empty(0)
    t = np.unique(np.concatenate([[0.0, h], starts[starts < h], up_t[up_t < h], dn_t[dn_t < h], grid_pts]))
    n = t.size - 1

    jump = np.zeros(t.size)
    jump_down = np.zeros(t.size)
    if up_t.size:
        sel = up_t < h
        np.add.at(jump, np.searchsorted(t, up_t[sel]), up_s[sel])
    if dn_t.size:
        sel = dn_t < h
        idx = np.searchsorted(t, dn_t[sel])
        np.add.at(jump, idx, dn_s[sel])
        np.add.at(jump_down, idx, dn_s[sel])

    J = labels[np.searchsorted(starts, t[:-1], side="right") - 1].astype(np.int8)
    d = np.diff(t)
    slope = np.where(J == 1, down.drift, -up.drift)
    cinc = slope * d
    if sc.grid and up.brownian_var > 0:
        z = streams["brownian"].standard_normal(n)
        cinc = cinc + np.where(J == 0, math.sqrt(up.brownian_var) * np.sqrt(d) * z, 0.0)
    if not np.all(np.isfinite(cinc)):
        raise SimulationError("non-finite netput increment")

    # netput left limits: X(t_0-) = 0, then jump at t_i and continuous increment over piece i
    steps = np.empty(t.size)
    steps[0] = 0.0
    steps[1:] = jump[:-1] + cinc
    netput_left = np.cumsum(steps)
    W_left, L = reflect(steps, sc.w0)
    W_right = W_left + jump

    # embedded workload values (down input arriving exactly at S_k belongs to the down period)
    W_at_T, W_at_S = np.full(S.size, np.nan), np.full(S.size, np.nan)
    okT = T_prev <= h
    iT = np.searchsorted(t, T_prev[okT])
    W_at_T[okT] = W_left[iT]
    okS = S <= h
    iS = np.searchsorted(t, S[okS])
    W_at_S[okS] = W_left[iS] + jump_down[iS]

    return PathSample(
        t=t, jump=jump, cinc=cinc, J=J, netput_left=netput_left, L=L, W_left=W_left, W_right=W_right,
        w0=sc.w0, horizon=h, grid=sc.grid, T_prev=T_prev, S=S, W_at_T_prev=W_at_T, W_at_S=W_at_S,
        grid_step=sc.grid_step, scenario=sc,
    )


def _grid_points(starts, ends, labels, step):
    up = labels == 0
    lo, hi = starts[up], ends[up]
    counts = np.maximum(np.ceil((hi - lo) / step).astype(np.int64) - 1, 0)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0)
    base = np.repeat(lo, counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    return base + offs * step


def occupancy_fraction(path: PathSample, burn_in: float = 0.0) -> float:
    """Fraction of ``[burn_in*horizon, horizon]`` spent in down periods, from the epochs."""
    t0, t1 = burn_in * path.horizon, path.horizon
    if not t1 > t0:
        raise ValueError("empty observation window")
    lo = np.maximum(path.T_prev, t0)
    hi = np.minimum(path.S, t1)
    return float(np.maximum(hi - lo, 0.0).sum() / (t1 - t0))
