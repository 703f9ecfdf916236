"""Simulation and verification of reflected Lévy storage processes with up/down regimes."""

from .levy_models import (
    Deterministic,
    DownProcessSpec,
    Erlang,
    Exponential,
    Uniform,
    UpProcessSpec,
    eta_eval,
    eta_prime0,
    excess_lst,
    phi_eval,
    phi_prime0,
    pk_lst,
    psi_two,
)
from .storage_sim import (
    ExhaustiveUp,
    PathSample,
    RenewalAlternation,
    Scenario,
    ScheduleTable,
    occupancy_fraction,
    simulate,
)

__version__ = "0.1.0"
