"""Closed-form workload decomposition and its residual checks.

The stationary workload transform factorises as

    E e^{-aW} = pi_l * pk(a) + (1 - pi_l) * (1 - pi + pi * excess(a) * pk(a)) * E e^{-aW_d}

with ``pk(a) = a phi'(0)/phi(a)``, ``excess(a) = eta(a)/(a eta'(0))``,
``pi_l = 1 - (1 + eta'(0)/phi'(0)) p_d`` and ``pi = eta'(0)/(eta'(0) + phi'(0))``.
Multiplying through by ``phi(a)`` gives the linear identity checked by
:func:`identity_residual`; hence ``identity_residual == phi(a) * rv_form_check``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .levy_models import (
    DownProcessSpec,
    UpProcessSpec,
    eta_eval,
    eta_prime0,
    excess_lst,
    phi_eval,
    phi_prime0,
    pk_lst,
)

__all__ = [
    "DecompositionError",
    "DecompositionInputs",
    "DecompositionReport",
    "pi_ell",
    "pi_ratio",
    "occupancy_bound",
    "decomp_rhs",
    "identity_residual",
    "corollary_identity",
    "corollary_rhs",
    "pm_residual",
    "rv_form_check",
]


class DecompositionError(ValueError):
    pass


def pi_ell(p_d: float, phi_d: float, eta_d: float) -> float:
    """Weight of the pure Pollaczek-Khinchin component."""
    if not phi_d > 0:
        raise DecompositionError("phi'(0) must be > 0")
    return 1.0 - (1.0 + eta_d / phi_d) * p_d


def pi_ratio(phi_d: float, eta_d: float) -> float:
    denom = eta_d + phi_d
    if not denom > 0:
        raise DecompositionError("eta'(0) + phi'(0) must be > 0")
    return eta_d / denom


def occupancy_bound(phi_d: float, eta_d: float) -> float:
    """Largest down-time fraction compatible with a stable workload."""
    return phi_d / (eta_d + phi_d)


@dataclass(frozen=True)
class DecompositionInputs:
    """Model plus the empirical down-period quantities.

    ``lst_wd`` maps grid values of alpha to ``(value, se)`` of the empirical
    ``E exp(-alpha W_d)``; it is only ever read at grid points.
    """

    up: UpProcessSpec
    down: DownProcessSpec
    p_d: float
    lst_wd: Mapping[float, tuple[float, float]] | Callable[[float], float]
    p_d_se: float = 0.0
    se_slack: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.p_d <= 1.0:
            raise DecompositionError(f"p_d = {self.p_d} outside [0, 1]")
        phi_d, eta_d = phi_prime0(self.up), eta_prime0(self.down)
        if not phi_d > 0:
            raise DecompositionError(f"up process is not stable: phi'(0) = {phi_d}")
        bound = occupancy_bound(phi_d, eta_d)
        if self.p_d > bound + self.se_slack * self.p_d_se:
            raise DecompositionError(
                f"p_d = {self.p_d:.6g} exceeds the stability bound phi'(0)/(eta'(0)+phi'(0)) = {bound:.6g}"
            )

    @property
    def phi_d(self) -> float:
        return phi_prime0(self.up)

    @property
    def eta_d(self) -> float:
        return eta_prime0(self.down)

    @property
    def pi_ell(self) -> float:
        return pi_ell(self.p_d, self.phi_d, self.eta_d)

    @property
    def pi(self) -> float:
        return pi_ratio(self.phi_d, self.eta_d)

    def wd(self, alpha: float) -> float:
        if callable(self.lst_wd):
            return float(self.lst_wd(alpha))
        if alpha == 0.0 and 0.0 not in self.lst_wd:
            return 1.0
        value = self.lst_wd[alpha]
        return float(value[0] if isinstance(value, tuple) else value)

    def excess(self, alpha: float) -> float:
        # a degenerate down process contributes nothing (pi = 0)
        return excess_lst(self.down, alpha) if self.eta_d > 0 else 1.0


def decomp_rhs(alpha: float, inputs: DecompositionInputs) -> float:
    """Predicted ``E exp(-alpha W(inf))``."""
    pk = pk_lst(inputs.up, alpha)
    pl, pi = inputs.pi_ell, inputs.pi
    return pl * pk + (1.0 - pl) * (1.0 - pi + pi * inputs.excess(alpha) * pk) * inputs.wd(alpha)


def identity_residual(alpha: float, inputs: DecompositionInputs, lst_w_empirical: float) -> float:
    """``phi E e^{-aW} - (phi + eta) p_d E e^{-aW_d} - a((1-p_d)phi'(0) - p_d eta'(0))``."""
    if alpha == 0.0:
        return 0.0
    ph, et = phi_eval(inputs.up, alpha), eta_eval(inputs.down, alpha)
    p = inputs.p_d
    drift = (1.0 - p) * inputs.phi_d - p * inputs.eta_d
    return ph * lst_w_empirical - (ph + et) * p * inputs.wd(alpha) - alpha * drift


def rv_form_check(alpha: float, inputs: DecompositionInputs, lst_w_empirical: float) -> float:
    """Residual against the law of ``I_l W_u + (1 - I_l)(I (W_u + Y_e) + W_d)``.

    Each factor is the transform of one independent ingredient; mixtures
    over the Bernoulli indicators are averages of transforms.
    """
    w_u = pk_lst(inputs.up, alpha)
    y_e = inputs.excess(alpha)
    w_d = inputs.wd(alpha)
    p_il, p_i = inputs.pi_ell, inputs.pi
    inner = p_i * (w_u * y_e) + (1.0 - p_i) * 1.0
    mixture = p_il * w_u + (1.0 - p_il) * (inner * w_d)
    return lst_w_empirical - mixture


def corollary_rhs(alpha: float, inputs: DecompositionInputs) -> float:
    """``pk(a) (pi_l + (1 - pi_l) E e^{-aW_d})``: the law of ``W_u + (1 - I_l) W_d``."""
    pl = inputs.pi_ell
    return pk_lst(inputs.up, alpha) * (pl + (1.0 - pl) * inputs.wd(alpha))


def corollary_identity(alpha: float, down: DownProcessSpec, r: float) -> tuple[float, float]:
    """Both sides of ``1 - pi + pi*excess*pk = pk`` when ``phi(a) = a r - eta(a)``."""
    eta_d = eta_prime0(down)
    if not r > eta_d:
        raise DecompositionError(f"need r > eta'(0) = {eta_d}")
    if not alpha > 0:
        raise DecompositionError("alpha must be > 0")
    phi_d = r - eta_d
    phi_a = alpha * r - eta_eval(down, alpha)
    pk = alpha * phi_d / phi_a
    pi = pi_ratio(phi_d, eta_d)
    excess = eta_eval(down, alpha) / (eta_d * alpha) if eta_d > 0 else 1.0
    return 1.0 - pi + pi * excess * pk, pk


def pm_residual(
    alpha: float,
    down: DownProcessSpec,
    lst_w_minus: float,
    lst_w_plus: float,
    ew_minus: float,
    ew_plus: float,
    lst_wd: float,
) -> float:
    """Embedded-epoch relation between ``W-``, ``W+`` and ``W_d``."""
    if not alpha > 0:
        raise DecompositionError("alpha must be > 0")
    gap = ew_plus - ew_minus
    if gap == 0:
        raise DecompositionError("EW+ equals EW-: relation undefined")
    lhs = (lst_w_minus - lst_w_plus) / (alpha * gap)
    return lhs - excess_lst(down, alpha) * lst_wd


@dataclass
class DecompositionReport:
    alphas: np.ndarray
    empirical_lst_w: np.ndarray
    predicted_lst_w: np.ndarray
    identity_residuals: np.ndarray
    pm_residuals: np.ndarray
    se: np.ndarray
    pass_flags: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.alphas)
        for name in ("empirical_lst_w", "predicted_lst_w", "identity_residuals", "pm_residuals", "se", "pass_flags"):
            if len(getattr(self, name)) != n:
                raise DecompositionError(f"{name} is not aligned with the alpha grid")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "empirical", "predicted", "identity_residual", "pm_residual", "se", "pass"])
            for row in zip(
                self.alphas, self.empirical_lst_w, self.predicted_lst_w,
                self.identity_residuals, self.pm_residuals, self.se, self.pass_flags,
            ):
                *nums, ok = row
                w.writerow([_fmt(x) for x in nums] + [int(bool(ok))])


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".12g")
