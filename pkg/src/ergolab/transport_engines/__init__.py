"""Wasserstein engines: exact in one dimension, entropic on the 2-torus, plus closed-form bounds."""

from .bounds import LipschitzError, TA1Bound, lb101_bound, mean_mp, ta1_upper_bound, w1_dual_lower
from .measures import (
    DensityMeasure,
    DensityOnGrid,
    DistanceReport,
    TransportError,
    invariant_measure,
    quasi_stationary_measure,
)
from .one_d import circle_cost, wp_circle, wp_line
from .sinkhorn import SinkhornError, entropic_ot, grid_masses, sinkhorn_torus

__all__ = [
    "DensityMeasure",
    "DensityOnGrid",
    "DistanceReport",
    "TransportError",
    "invariant_measure",
    "quasi_stationary_measure",
    "wp_line",
    "wp_circle",
    "circle_cost",
    "sinkhorn_torus",
    "entropic_ot",
    "grid_masses",
    "SinkhornError",
    "ta1_upper_bound",
    "TA1Bound",
    "mean_mp",
    "lb101_bound",
    "w1_dual_lower",
    "LipschitzError",
    "wasserstein",
]


def wasserstein(mu1, mu2, p: float = 2.0, **kw) -> DistanceReport:
    """Dispatch to the engine matching the common space of ``mu1`` and ``mu2``."""
    from ..model_spaces import Circle, Torus
    from .measures import same_space

    space = same_space(mu1, mu2)
    if isinstance(space, Circle):
        return wp_circle(mu1, mu2, p)
    if isinstance(space, Torus):
        return sinkhorn_torus(mu1, mu2, p, **kw)
    return wp_line(mu1, mu2, p)
