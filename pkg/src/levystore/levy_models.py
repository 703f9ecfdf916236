"""Parametric Lévy inputs for up and down periods.

Processes are given in natural form: linear drift, an optional Brownian
part, and compound Poisson jumps drawn from a small closed family of jump
laws. For the up (netput) process the drift ``r`` is the output rate, so

    phi(a) = r*a + s2*a**2/2 + lam*(lst_B(a) - 1),    E exp(-a X_u(1)) = exp(phi(a))

and for the down subordinator

    eta(a) = c*a + lam*(1 - lst_B(a)),                 E exp(-a X_d(1)) = exp(-eta(a)).

Conversion to the truncated triplet ``(c, s2, nu)`` used for general Lévy
exponents: ``nu = lam * law(B)`` and the truncated drift is
``c_u = -r + lam * E[B; B <= 1]`` for the up process and ``c_d`` unchanged
for the subordinator (its exponent carries no compensator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Union

import numpy as np

__all__ = [
    "Exponential",
    "Deterministic",
    "Erlang",
    "Uniform",
    "JumpDistribution",
    "UpProcessSpec",
    "DownProcessSpec",
    "SegmentSample",
    "phi_eval",
    "phi_prime0",
    "eta_eval",
    "eta_prime0",
    "psi_two",
    "pk_lst",
    "excess_lst",
    "sample_segment",
    "jump_dist_from_dict",
    "spec_from_dict",
    "spec_to_dict",
]

# below this, removable singularities are evaluated by first-order Taylor
_TAYLOR_CUTOFF = 1e-8


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha >= 0.0:
        raise ValueError(f"transform argument must be >= 0, got {alpha}")
    return alpha


# ----------------------------------------------------------------------
# jump laws
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    mean: float

    family = "exponential"

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ValueError("exponential mean must be > 0")

    def first_moment(self) -> float:
        return self.mean

    def second_moment(self) -> float:
        return 2.0 * self.mean**2

    def lst(self, alpha: float) -> float:
        return 1.0 / (1.0 + alpha * self.mean)

    def one_minus_lst(self, alpha: float) -> float:
        x = alpha * self.mean
        return x / (1.0 + x)

    def sample(self, rng, size=None):
        return rng.exponential(self.mean, size)

    def to_dict(self) -> dict:
        return {"family": self.family, "mean": self.mean}


@dataclass(frozen=True)
class Deterministic:
    value: float

    family = "deterministic"

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ValueError("deterministic value must be > 0")

    def first_moment(self) -> float:
        return self.value

    def second_moment(self) -> float:
        return self.value**2

    def lst(self, alpha: float) -> float:
        return math.exp(-alpha * self.value)

    def one_minus_lst(self, alpha: float) -> float:
        return -math.expm1(-alpha * self.value)

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def to_dict(self) -> dict:
        return {"family": self.family, "value": self.value}


@dataclass(frozen=True)
class Erlang:
    shape: int
    mean: float

    family = "erlang"

    def __post_init__(self):
        if isinstance(self.shape, bool) or int(self.shape) != self.shape or self.shape < 1:
            raise ValueError("erlang shape must be a positive integer")
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ValueError("erlang mean must be > 0")

    def first_moment(self) -> float:
        return self.mean

    def second_moment(self) -> float:
        return self.mean**2 * (self.shape + 1) / self.shape

    def lst(self, alpha: float) -> float:
        return (1.0 + alpha * self.mean / self.shape) ** (-self.shape)

    def one_minus_lst(self, alpha: float) -> float:
        return -math.expm1(-self.shape * math.log1p(alpha * self.mean / self.shape))

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.mean / self.shape, size)

    def to_dict(self) -> dict:
        return {"family": self.family, "shape": int(self.shape), "mean": self.mean}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    family = "uniform"

    def __post_init__(self):
        if not (0 <= self.lo < self.hi and math.isfinite(self.hi)):
            raise ValueError("uniform bounds must satisfy 0 <= lo < hi")

    def first_moment(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def second_moment(self) -> float:
        return (self.lo**2 + self.lo * self.hi + self.hi**2) / 3.0

    def lst(self, alpha: float) -> float:
        width = self.hi - self.lo
        x = alpha * width
        if x < _TAYLOR_CUTOFF:
            return math.exp(-alpha * self.first_moment())
        return math.exp(-alpha * self.lo) * -math.expm1(-x) / x

    def one_minus_lst(self, alpha: float) -> float:
        # 1 - e^{-a lo} g = (1 - g) + g (1 - e^{-a lo}), g the transform of U(0, width)
        x = alpha * (self.hi - self.lo)
        if x < 1e-3:
            one_minus_g = x / 2 - x**2 / 6 + x**3 / 24 - x**4 / 120
        else:
            one_minus_g = (math.expm1(-x) + x) / x
        return one_minus_g + (1.0 - one_minus_g) * -math.expm1(-alpha * self.lo)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def to_dict(self) -> dict:
        return {"family": self.family, "lo": self.lo, "hi": self.hi}


JumpDistribution = Union[Exponential, Deterministic, Erlang, Uniform]

_FAMILIES = {
    "exponential": (Exponential, ("mean",)),
    "deterministic": (Deterministic, ("value",)),
    "erlang": (Erlang, ("shape", "mean")),
    "uniform": (Uniform, ("lo", "hi")),
}


def jump_dist_from_dict(obj: dict) -> JumpDistribution:
    """Build a jump law from ``{"family": ..., <params>}``; unknown keys are an error."""
    if not isinstance(obj, dict):
        raise ValueError("jump law must be an object")
    family = obj.get("family")
    if family not in _FAMILIES:
        raise ValueError(f"unknown jump family {family!r}")
    cls, fields = _FAMILIES[family]
    extra = set(obj) - set(fields) - {"family"}
    if extra:
        raise ValueError(f"unknown field(s) for {family}: {sorted(extra)}")
    missing = [f for f in fields if f not in obj]
    if missing:
        raise ValueError(f"missing field(s) for {family}: {missing}")
    return cls(**{f: obj[f] for f in fields})


# ----------------------------------------------------------------------
# process specs
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class UpProcessSpec:
    """Spectrally positive netput used during up periods (drift -r per unit time)."""

    drift: float
    brownian_var: float = 0.0
    jump_rate: float = 0.0
    jump_dist: JumpDistribution | None = None

    def __post_init__(self):
        for name in ("drift", "brownian_var", "jump_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.brownian_var < 0:
            raise ValueError("brownian_var must be >= 0")
        if self.jump_rate < 0:
            raise ValueError("jump_rate must be >= 0")
        if self.jump_rate > 0 and self.jump_dist is None:
            raise ValueError("jump_dist is required when jump_rate > 0")
        if not (self.drift > 0 or self.brownian_var > 0):
            raise ValueError("up process must not be a subordinator: need drift > 0 or brownian_var > 0")

    @property
    def mean_jump(self) -> float:
        return self.jump_dist.first_moment() if self.jump_rate > 0 else 0.0

    @property
    def stable(self) -> bool:
        return phi_prime0(self) > 0


@dataclass(frozen=True)
class DownProcessSpec:
    """Subordinator driving work accumulation during down periods."""

    drift: float = 0.0
    jump_rate: float = 0.0
    jump_dist: JumpDistribution | None = None

    def __post_init__(self):
        for name in ("drift", "jump_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.drift < 0:
            raise ValueError("drift must be >= 0")
        if self.jump_rate < 0:
            raise ValueError("jump_rate must be >= 0")
        if self.jump_rate > 0 and self.jump_dist is None:
            raise ValueError("jump_dist is required when jump_rate > 0")

    @property
    def mean_jump(self) -> float:
        return self.jump_dist.first_moment() if self.jump_rate > 0 else 0.0

    @property
    def degenerate(self) -> bool:
        return eta_prime0(self) == 0.0


def _jump_oml(spec, alpha: float) -> float:
    """``1 - lst_B(alpha)`` without cancellation at small alpha."""
    return spec.jump_dist.one_minus_lst(alpha) if spec.jump_rate > 0 else 0.0


def _jump_m2(spec) -> float:
    return spec.jump_dist.second_moment() if spec.jump_rate > 0 else 0.0


def phi_eval(spec: UpProcessSpec, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    if alpha == 0.0:
        return 0.0
    return (
        spec.drift * alpha
        + 0.5 * spec.brownian_var * alpha**2
        - spec.jump_rate * _jump_oml(spec, alpha)
    )


def phi_prime0(spec: UpProcessSpec) -> float:
    """Right derivative of phi at 0, i.e. ``-E X_u(1)``."""
    return spec.drift - spec.jump_rate * spec.mean_jump


def eta_eval(spec: DownProcessSpec, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    if alpha == 0.0:
        return 0.0
    return spec.drift * alpha + spec.jump_rate * _jump_oml(spec, alpha)


def eta_prime0(spec: DownProcessSpec) -> float:
    return spec.drift + spec.jump_rate * spec.mean_jump


def psi_two(up: UpProcessSpec, down: DownProcessSpec, gamma1: float, gamma2: float) -> float:
    """Joint exponent of the independent pair (X_u, X_d)."""
    return phi_eval(up, gamma1) - eta_eval(down, gamma2)


def pk_lst(spec: UpProcessSpec, alpha: float) -> float:
    """Transform ``a*phi'(0)/phi(a)`` of the all-time supremum of the up netput."""
    alpha = _check_alpha(alpha)
    d1 = phi_prime0(spec)
    if not d1 > 0:
        raise ValueError(f"up process is not stable: phi'(0) = {d1} <= 0")
    if alpha == 0.0:
        return 1.0
    if alpha < _TAYLOR_CUTOFF:
        d2 = spec.brownian_var + spec.jump_rate * _jump_m2(spec)
        return 1.0 - 0.5 * d2 * alpha / d1
    return alpha * d1 / phi_eval(spec, alpha)


def excess_lst(spec: DownProcessSpec, alpha: float) -> float:
    """Transform ``eta(a)/(a*eta'(0))`` of the generalized stationary excess law."""
    alpha = _check_alpha(alpha)
    d1 = eta_prime0(spec)
    if not d1 > 0:
        raise ValueError("down process is degenerate: eta'(0) = 0")
    if alpha == 0.0:
        return 1.0
    if alpha < _TAYLOR_CUTOFF:
        return 1.0 - 0.5 * spec.jump_rate * _jump_m2(spec) * alpha / d1
    return eta_eval(spec, alpha) / (alpha * d1)


# ----------------------------------------------------------------------
# path realisation
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentSample:
    """One regime interval of a process realisation.

    ``continuous_increment_rate`` is the linear part of the increment
    (``-r`` for the up netput, ``c_d`` for the subordinator). When the
    process has a Brownian part, ``brownian_increments`` holds ``(time,
    increment)`` rows, each increment covering the stretch that ends at
    ``time``; jump epochs are part of that grid and never rounded.
    """

    duration: float
    event_times: np.ndarray
    jump_sizes: np.ndarray
    continuous_increment_rate: float
    brownian_increments: np.ndarray | None = None

    @property
    def events(self) -> list[tuple[float, float]]:
        return list(zip(self.event_times.tolist(), self.jump_sizes.tolist()))

    @property
    def total_increment(self) -> float:
        total = self.continuous_increment_rate * self.duration + float(self.jump_sizes.sum())
        if self.brownian_increments is not None:
            total += float(self.brownian_increments[:, 1].sum())
        return total


def _rate_and_sigma(spec) -> tuple[float, float]:
    if isinstance(spec, UpProcessSpec):
        return -spec.drift, math.sqrt(spec.brownian_var)
    return spec.drift, 0.0


def poisson_epochs(rate: float, duration: float, rng) -> np.ndarray:
    """Sorted epochs of a rate-``rate`` Poisson process on ``[0, duration]``."""
    if rate <= 0 or duration <= 0:
        return np.empty(0)
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, n))


def sample_segment(spec, duration: float, rng, grid_step: float = 1e-3) -> SegmentSample:
    """Draw one realisation of ``spec`` over ``[0, duration]``."""
    duration = float(duration)
    if not duration >= 0:
        raise ValueError("duration must be >= 0")
    slope, sigma = _rate_and_sigma(spec)
    times = poisson_epochs(spec.jump_rate, duration, rng)
    sizes = spec.jump_dist.sample(rng, times.size) if times.size else np.empty(0)
    sizes = np.asarray(sizes, dtype=float)
    brownian = None
    if sigma > 0 and duration > 0:
        n_grid = int(math.ceil(duration / grid_step))
        grid = np.minimum(np.arange(1, n_grid + 1) * grid_step, duration)
        knots = np.union1d(grid, times)
        dt = np.diff(knots, prepend=0.0)
        brownian = np.column_stack([knots, sigma * np.sqrt(dt) * rng.standard_normal(knots.size)])
    return SegmentSample(duration, times, sizes, slope, brownian)


# ----------------------------------------------------------------------
# JSON form
# ----------------------------------------------------------------------

_UP_FIELDS = ("drift", "brownian_var", "jump_rate", "jump_dist")
_DOWN_FIELDS = ("drift", "jump_rate", "jump_dist")


def spec_to_dict(spec) -> dict[str, Any]:
    out: dict[str, Any] = {"drift": spec.drift}
    if isinstance(spec, UpProcessSpec):
        out["brownian_var"] = spec.brownian_var
    out["jump_rate"] = spec.jump_rate
    if spec.jump_dist is not None:
        out["jump_dist"] = spec.jump_dist.to_dict()
    return out


def spec_from_dict(obj: dict, kind: str = "up"):
    """Parse an up (``kind="up"``) or down spec; unknown fields raise ``ValueError``."""
    if not isinstance(obj, dict):
        raise ValueError("process spec must be an object")
    fields = _UP_FIELDS if kind == "up" else _DOWN_FIELDS
    extra = set(obj) - set(fields)
    if extra:
        raise ValueError(f"unknown field(s): {sorted(extra)}")
    if "drift" not in obj:
        raise ValueError("missing field 'drift'")
    kwargs = {k: obj[k] for k in fields if k in obj and k != "jump_dist"}
    if obj.get("jump_dist") is not None:
        kwargs["jump_dist"] = jump_dist_from_dict(obj["jump_dist"])
    cls = UpProcessSpec if kind == "up" else DownProcessSpec
    return cls(**kwargs)
