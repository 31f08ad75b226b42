"""Robust rotation search and point-cloud registration by invariant-constrained sampling."""

from .baseline import RansacParams, ransac_registration, ransac_rotation
from .estimators import IcosRegistration, IcosRotationSearch, RansacRegistration, RansacRotation
from .exceptions import DegenerateConfiguration, DivisionByZero, EmptyInput, IcosError, InvalidParameter, UnsupportedFormat
from .geometry import (
    Correspondence,
    CorrespondenceKind,
    CorrespondenceSet,
    SimilarityTransform,
    geodesic_distance,
    horn_pair_rotation,
    horn_triple_rotation,
    kabsch_rotation,
    solve_rotation_nonminimal,
    solve_transform_nonminimal,
)
from .invariants import NoiseBounds
from .samplers import (
    IcosParams,
    SolveReport,
    Status,
    check_sampling,
    icos_registration,
    icos_registration_known_scale,
    icos_registration_unknown_scale,
    icos_rotation_search,
    max_iterations,
)
from .synthio import (
    BenchRecord,
    GroundTruth,
    dump_instance,
    gen_registration_instance,
    gen_rotation_instance,
    load_instance,
    load_ply,
    metrics,
    save_ply,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
