"""Numerics for rescaled mean curvature flow near the round shrinkers S^1(√2) and S^2(2)."""

from .doubling import (
    DoublingAudit,
    default_A,
    doubling_constant,
    infinite_order_classifier,
    prop31_scan,
    prop31_window_check,
    scale_series,
    theorem11_certificate,
)
from .errors import *  # noqa: F401,F403
from .flow import (
    FlowSettings,
    FlowState,
    Trajectory,
    decay_order,
    dissipation,
    distance,
    linear_trajectory,
    monotonicity_audit,
    q_remainder,
    rescaled_velocity,
    run,
    semicontinuity_audit,
    step,
)
from .geometry import (
    CircleGrid,
    RadialGraph,
    Shrinker,
    SphereGrid,
    excess,
    gaussian_area,
    graph_geometry,
    make_grid,
)
from .linear import (
    GapChoice,
    ModeSeries,
    choose_gap_L,
    duhamel_inverse,
    evolve_linear,
    l2_profile,
    quantitative_three_annulus,
    three_annulus_check,
    zero_mode_dichotomy,
)
from .report import AuditReport
from .spectral import ModeVector, Spectrum, apply_L, build_spectrum, project, synthesize, weyl_count

__version__ = "0.1.0"
