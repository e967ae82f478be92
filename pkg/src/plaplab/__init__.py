"""Numerical laboratory for the singular quasilinear Dirichlet problem

    -div(|grad u|^(p-2) grad u) = lam * u^(-alpha) + a*u^r1 + b*|grad u|^r2

on boxes in one and two dimensions: tensor-grid discretization, damped
Newton solves of the regularized operator, eps-continuation for the
singular reaction, amplitude-window constants, an invariant-slab
fixed-point driver, and structural verification checks.
"""

from .checks import (
    CheckResult,
    check_comparison,
    check_distance_bounds,
    check_residual,
    check_scaling,
    check_supersolution,
    summary_table,
    write_checks_json,
)
from .constants import (
    ConstantsInput,
    ConstantsReport,
    WindowCheck,
    build_constants_report,
    calibrate_gradient_constant,
    check_window_conditions,
    envelope_constant,
    kappa_factor,
    lambda_bound,
    lambda_bound_with_gradient,
    m_window,
)
from .continuation import (
    ContinuationReport,
    ConvectionSpec,
    DivergenceError,
    EpsSchedule,
    ProblemSpec,
    StageRecord,
    solve_regularized,
    solve_singular_torsion,
    solve_sublinear,
    write_stage_csv,
)
from .core import (
    CoreConfig,
    Eigenpair,
    SolveReport,
    apply_p_laplacian,
    discrete_energy,
    rayleigh_quotient,
    solve_dirichlet,
    solve_eigenpair,
)
from .driver import (
    AdmissibleSet,
    IterateEscapeError,
    IterationReport,
    SweepRow,
    check_membership,
    iterate_to_fixed_point,
    lambda_sweep,
    select_amplitude,
    solution_map,
    write_sweep_csv,
)
from .grids import (
    Field,
    GradientField,
    Grid,
    build_grid,
    constant_field,
    field_from_function,
    gradient,
    lorentz_norm,
    lp_norm,
    nodal_gradient,
    norm,
    read_field_csv,
    sup_norm,
    w1p_seminorm,
    write_field_csv,
    zero_field,
)

__version__ = "0.1.0"
