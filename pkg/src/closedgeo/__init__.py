"""Closed geodesics by Birkhoff curve shortening, min-max over sweepouts, and
singular-stratum reduction on developable orbifolds."""

from .affine import AffineIsometry
from .errors import (
    ClosedGeoError,
    ConfigError,
    ConnectivityError,
    DomainError,
    ExpressionError,
    GroupOverflowError,
    NumericError,
    RenormalizationError,
    ResolutionError,
)
from .geodesic import GeodesicSegment, connect, distance, evaluate, exp_map, midpoint
from .loops import (
    GeodesicLoop,
    Sweepout,
    build_sweepout,
    energy,
    length,
    loop_distance,
    resample,
    sweepout_kappa,
)
from .manifold import MetricChart, christoffel_at, conformal, custom, euclidean, flat, metric_at, sphere_chart
from .expression import parse_expression
from .orbifold import (
    DevelopableOrbifold,
    find_closed_geodesic_via_reduction,
    is_twisted_closed_geodesic,
    maximal_stratum_point,
    reduce_once,
    reduction_chain,
)
from .shortening import (
    GeodesicResult,
    ShorteningConfig,
    birkhoff_step,
    choose_m,
    half_step,
    minmax,
    shorten_to_limit,
)
from .symmetry import (
    IsometryGroup,
    enumerate_group,
    fixed_set,
    isotropy,
    normalizer,
    orientation_subgroup,
    renormalize,
    verify_isometry,
)

__version__ = "0.1.0"
