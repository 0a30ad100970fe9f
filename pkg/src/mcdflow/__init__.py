"""Meshfree staggered solver on mesh-constrained discrete points.

Strong-form discretization on one movable node per background cell:
radial-component MLS fits over local primal-dual stencils give discrete
gradient and divergence operators that are algebraically consistent, so
a pressure projection drives the velocity divergence down to the Poisson
residual exactly.  Includes a collocated baseline, a linear-acoustics
mode with an FDTD oracle, and the standard verification cases.
"""

from .geometry import (
    KIND_BOUNDARY,
    KIND_EXCLUDED,
    KIND_FLUID,
    BackgroundMesh,
    NodeSet,
    StencilTable,
    build_background_mesh,
    build_local_stencils,
    generate_nodes,
    place_obstacle_nodes,
)
from .mls import (
    BasisSpec,
    WeightSpec,
    default_specs,
    evaluate_at_points,
    fit_nodal_mls,
    fit_radial_mls,
    radial_component,
)
from .linalg import SolveReport, bicgstab, solve_zero_mean
from .operators import (
    Operators,
    PoissonSystem,
    StaggeredField,
    assemble_poisson,
    build_operators,
    projection_correct,
    radial_targets,
    staggered_divergence,
    staggered_from_nodal,
    staggered_to_nodal_velocity,
)
from .ns import (
    FlowState,
    FluidParams,
    FrameForcing,
    StepReport,
    assemble_poisson_collocated,
    build_surface_probe,
    damping_drag,
    drag_coefficient,
    make_flow_state,
    ns_step_collocated,
    ns_step_staggered,
)
from .acoustics import (
    AcousticsState,
    DampingSpec,
    acoustics_step_collocated,
    acoustics_step_staggered,
    checkerboard_metric,
    cosine_pulse,
    fdtd_reference,
    make_acoustics_state,
)
from .benchmarks import (
    DeviationStats,
    ErrorReport,
    FieldNorms,
    bundled_reference,
    convergence_study,
    error_norms,
    load_reference_table,
    reference_comparison,
    sample_profile,
    taylor_green_exact,
)
from .cases import (
    CaseConfig,
    RunResult,
    build_case,
    initial_state,
    preset,
    preset_acoustics,
    preset_cavity,
    preset_channel_cylinder,
    preset_oscillating_cylinder,
    preset_tgv,
    run_case,
    taylor_green_error_norms,
)
from .output import snapshot_fields, write_probe_lines, write_snapshot

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
