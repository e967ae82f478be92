"""Continuation solves for the singular reaction problem.

Target equation (zero boundary data):

    -div(|grad u|^(p-2) grad u) = lam * u^(-alpha) + a*u^r1 + b*|grad u|^r2.

The reaction blows up where u vanishes, so each solve replaces u^(-alpha)
by (|u| + eps)^(-alpha) and iterates Picard style at fixed eps: freeze the
right-hand side at the current iterate, solve the Dirichlet problem, damp,
repeat.  A geometric eps schedule with warm starts drives eps to a small
floor, and one final unregularized pass (its singular term floor-guarded
only along the iteration path, never in reported residuals) removes the
floor-level bias from the returned solution.  That last pass also runs the
Picard stop test at a small fraction of the configured tolerance, since
downstream identity checks compare two such solves against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import CoreConfig, SolveReport, discrete_energy, solve_dirichlet
from .grids import Field, Grid, gradient, nodal_gradient_magnitude, sup_norm, zero_field

__all__ = [
    "ConvectionSpec",
    "ProblemSpec",
    "EpsSchedule",
    "StageRecord",
    "ContinuationReport",
    "DivergenceError",
    "solve_regularized",
    "solve_singular_torsion",
    "solve_sublinear",
    "write_stage_csv",
]

_DIVERGENCE_FACTOR = 1e6
# Extra tightening of the Picard stop test on the final unregularized pass.
# Much below 0.25 the inner solves for p < 2 are asked for residuals under
# the double-precision evaluation floor and can never certify convergence.
_FINAL_PASS_TIGHTEN = 0.25
# Path guard for the unregularized pass, relative to the incoming iterate's
# distance-profile floor.
_GUARD_FRACTION = 1e-3


class DivergenceError(RuntimeError):
    """Iterates blew up; the problem is outside the regime this solver handles."""


@dataclass(frozen=True)
class ConvectionSpec:
    """Lower-order reaction a*max(t,0)^r1 + b*|xi|^r2."""

    a: float = 0.0
    b: float = 0.0
    r1: float = 0.5
    r2: float = 0.5

    def __post_init__(self):
        if self.a < 0.0 or self.b < 0.0:
            raise ValueError("convection coefficients a, b must be nonnegative")
        if self.r1 <= 0.0 or self.r2 <= 0.0:
            raise ValueError("convection exponents r1, r2 must be positive")

    @property
    def is_zero(self) -> bool:
        return self.a == 0.0 and self.b == 0.0

    def evaluate(self, t: np.ndarray, grad_mag: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(t)
        return self.a * np.maximum(t, 0.0) ** self.r1 + self.b * grad_mag**self.r2


@dataclass(frozen=True)
class ProblemSpec:
    """Exponents and coefficients of the full problem."""

    p: float
    alpha: float
    lam: float
    convection: ConvectionSpec

    def __post_init__(self):
        if not (self.p > 1.0):
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if not (self.lam > 0.0):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        crit = self.p - 1.0
        if self.convection.r1 == crit or self.convection.r2 == crit:
            raise ValueError(
                f"convection exponents must avoid the borderline value p-1 = {crit}"
            )


@dataclass(frozen=True)
class EpsSchedule:
    """Geometric regularization schedule eps0, eps0*factor, ..., floor."""

    eps0: float = 1.0
    factor: float = 0.1
    floor: float = 1e-8
    transfer: bool = True

    def __post_init__(self):
        if not (self.eps0 > self.floor > 0.0):
            raise ValueError("schedule needs eps0 > floor > 0")
        if not (0.0 < self.factor < 1.0):
            raise ValueError(f"schedule factor must lie in (0,1), got {self.factor}")

    def stages(self) -> list[float]:
        out = []
        e = self.eps0
        while e > self.floor * (1.0 + 1e-9):
            out.append(e)
            e *= self.factor
        out.append(self.floor)
        return out


@dataclass(frozen=True)
class StageRecord:
    eps: float
    iterations: int
    residual_sup: float
    sup_norm: float
    grad_sup_norm: float


@dataclass
class ContinuationReport:
    """Outcome of a full eps-schedule run.

    final_residual_sup is the confirmed fixed-point residual of the last
    pass: the sup distance between the returned field and one further
    Picard image of it.  cauchy_increment is the sup distance between the
    last two stage solutions; k1 the best constant with u >= k1 * dist.
    """

    iterations: int
    final_residual_sup: float
    energy: float
    sup_norm: float
    grad_sup_norm: float
    converged: bool
    stages: list
    stage_increments: list
    cauchy_increment: float
    k1: float

    def to_json_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_residual_sup": float(self.final_residual_sup),
            "energy": float(self.energy),
            "sup_norm": float(self.sup_norm),
            "grad_sup_norm": float(self.grad_sup_norm),
            "converged": bool(self.converged),
            "cauchy_increment": float(self.cauchy_increment),
            "k1": float(self.k1),
            "stage_increments": [float(v) for v in self.stage_increments],
            "stages": [
                {
                    "eps": float(s.eps),
                    "iterations": int(s.iterations),
                    "residual_sup": float(s.residual_sup),
                    "sup_norm": float(s.sup_norm),
                    "grad_sup_norm": float(s.grad_sup_norm),
                }
                for s in self.stages
            ],
        }


def _reaction_rhs(
    grid: Grid,
    values: np.ndarray,
    p: float,
    alpha: float,
    lam: float,
    conv: ConvectionSpec | None,
    eps: float,
    guard_coef: float,
) -> Field:
    """Frozen right-hand side at the current iterate, zero on boundary rows."""
    if eps > 0.0:
        arg = np.abs(values) + eps
    else:
        arg = np.maximum(values, guard_coef * grid.dist)
    with np.errstate(divide="ignore"):
        sing = lam * arg ** (-alpha)
    if conv is not None and not conv.is_zero:
        grad_mag = nodal_gradient_magnitude(Field(grid, values))
        rhs = sing + conv.evaluate(values, grad_mag)
    else:
        rhs = sing
    rhs = np.where(grid.boundary_mask, 0.0, rhs)
    if not np.all(np.isfinite(rhs)):
        raise DivergenceError("singular right-hand side lost finiteness in the interior")
    return Field(grid, rhs)


def _picard_stage(
    grid: Grid,
    p: float,
    alpha: float,
    lam: float,
    conv: ConvectionSpec | None,
    eps: float,
    init: Field,
    cfg: CoreConfig,
    guard_coef: float,
) -> tuple[Field, SolveReport]:
    """Damped Picard iteration at fixed eps; returns the confirmed iterate.

    Stops when one Picard image moves by at most cfg.tol*(1 + sup) and a
    confirmation solve at the new point stays within the same bound; that
    confirmed distance is the reported residual.  Budget exhaustion returns
    the current iterate flagged; genuine blow-up raises DivergenceError.
    """
    v = np.where(grid.boundary_mask, 0.0, init.values)
    initial_scale = max(1.0, float(np.abs(v).max()))
    omega = 0.7
    prev_inc = np.inf
    iters = 0
    converged = False
    final_vals = v
    fp_resid = np.inf
    uncertified = 0
    while iters < cfg.max_iter:
        rhs = _reaction_rhs(grid, v, p, alpha, lam, conv, eps, guard_coef)
        inner_init = Field(grid, v) if np.any(v) else None
        u_new, rep = solve_dirichlet(rhs, p, cfg, init=inner_init)
        iters += 1
        new_sup = sup_norm(u_new)
        if new_sup > _DIVERGENCE_FACTOR * initial_scale:
            raise DivergenceError(
                f"iterates reached sup {new_sup:.3e} from initial scale {initial_scale:.3e}"
            )
        inc = float(np.abs(u_new.values - v).max())
        tol_fp = cfg.tol * (1.0 + new_sup)
        if inc <= tol_fp and rep.converged and iters < cfg.max_iter:
            rhs2 = _reaction_rhs(grid, u_new.values, p, alpha, lam, conv, eps, guard_coef)
            u_conf, rep2 = solve_dirichlet(rhs2, p, cfg, init=u_new)
            iters += 1
            fp_resid = float(np.abs(u_conf.values - u_new.values).max())
            if fp_resid <= tol_fp and rep2.converged:
                converged = True
                final_vals = u_new.values
                break
            # Confirmation moved too far; resume the iteration from there.
            v = u_new.values
            prev_inc = fp_resid
            continue
        if inc <= tol_fp and not rep.converged:
            # The Picard map is stationary to within tolerance but the inner
            # solver cannot certify its own stop test (it runs against the
            # double-precision residual floor for p near 1); a few repeats
            # make further iterations pointless.
            final_vals = u_new.values
            prev_inc = inc
            uncertified += 1
            if inc == 0.0 or uncertified >= 5:
                break
            v = u_new.values
            continue
        uncertified = 0
        if inc > prev_inc:
            omega = max(omega * 0.5, 0.05)
        prev_inc = inc
        final_vals = u_new.values
        v = (1.0 - omega) * v + omega * u_new.values
    u = Field(grid, final_vals)
    rhs_at_u = _reaction_rhs(grid, u.values, p, alpha, lam, conv, eps, guard_coef)
    report = SolveReport(
        iterations=iters,
        final_residual_sup=fp_resid if converged else prev_inc,
        energy=discrete_energy(u, rhs_at_u, p, 0.0),
        sup_norm=sup_norm(u),
        grad_sup_norm=gradient(u).sup(),
        converged=converged,
    )
    return u, report


def solve_regularized(
    spec: ProblemSpec,
    eps: float,
    init: Field,
    cfg: CoreConfig | None = None,
    guard_coef: float = 0.0,
) -> tuple[Field, SolveReport]:
    """Solve the eps-regularized problem from the given starting field.

    eps = 0 is accepted only together with a positive guard_coef, which
    floors the singular argument at guard_coef * dist along the iteration
    path (the confirmed residual is measured with the same map, but the
    guard is inactive at any iterate above the floor).
    """
    if cfg is None:
        cfg = CoreConfig()
    if eps < 0.0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0.0 and guard_coef <= 0.0:
        raise ValueError("an unregularized solve needs a positive path guard")
    return _picard_stage(
        init.grid,
        spec.p,
        spec.alpha,
        spec.lam,
        spec.convection,
        eps,
        init,
        cfg,
        guard_coef,
    )


def _run_schedule(
    grid: Grid,
    p: float,
    alpha: float,
    lam: float,
    conv: ConvectionSpec | None,
    sched: EpsSchedule,
    cfg: CoreConfig,
) -> tuple[Field, ContinuationReport]:
    records = []
    increments = []
    carry = zero_field(grid)
    prev_vals = None
    total_iters = 0
    all_converged = True
    for eps in sched.stages():
        init = carry if sched.transfer else zero_field(grid)
        u, rep = _picard_stage(grid, p, alpha, lam, conv, eps, init, cfg, 0.0)
        records.append(
            StageRecord(eps, rep.iterations, rep.final_residual_sup, rep.sup_norm, rep.grad_sup_norm)
        )
        total_iters += rep.iterations
        all_converged = all_converged and rep.converged
        if prev_vals is not None:
            increments.append(float(np.abs(u.values - prev_vals).max()))
        prev_vals = u.values
        carry = u

    interior = grid.interior_mask
    floor_ratio = float(np.min(carry.values[interior] / grid.dist[interior]))
    if floor_ratio <= 0.0:
        raise DivergenceError("continuation lost interior positivity before the final pass")
    polish_cfg = replace(cfg, tol=max(cfg.tol * _FINAL_PASS_TIGHTEN, 1e-14))
    u, rep = _picard_stage(
        grid, p, alpha, lam, conv, 0.0, carry, polish_cfg, _GUARD_FRACTION * floor_ratio
    )
    records.append(
        StageRecord(0.0, rep.iterations, rep.final_residual_sup, rep.sup_norm, rep.grad_sup_norm)
    )
    total_iters += rep.iterations
    all_converged = all_converged and rep.converged
    increments.append(float(np.abs(u.values - prev_vals).max()))

    k1 = float(np.min(u.values[interior] / grid.dist[interior]))
    report = ContinuationReport(
        iterations=total_iters,
        final_residual_sup=rep.final_residual_sup,
        energy=rep.energy,
        sup_norm=rep.sup_norm,
        grad_sup_norm=rep.grad_sup_norm,
        converged=all_converged,
        stages=records,
        stage_increments=increments,
        cauchy_increment=increments[-1] if increments else 0.0,
        k1=k1,
    )
    return u, report


def solve_singular_torsion(
    grid: Grid,
    p: float,
    alpha: float,
    sched: EpsSchedule | None = None,
    cfg: CoreConfig | None = None,
) -> tuple[Field, ContinuationReport]:
    """Reference profile: unit coefficient, no lower-order terms.

    Solves -div(|grad u|^(p-2) grad u) = u^(-alpha) down the schedule.
    Everything scale-related downstream (admissible sets, window constants,
    identity checks) is built on this field.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    if sched is None:
        sched = EpsSchedule()
    if cfg is None:
        cfg = CoreConfig()
    return _run_schedule(grid, p, alpha, 1.0, None, sched, cfg)


def solve_sublinear(
    grid: Grid,
    spec: ProblemSpec,
    sched: EpsSchedule | None = None,
    cfg: CoreConfig | None = None,
) -> tuple[Field, ContinuationReport]:
    """Full problem in the sublinear regime (both growth exponents below p-1)."""
    crit = spec.p - 1.0
    conv = spec.convection
    if conv.r1 >= crit or conv.r2 >= crit:
        raise ValueError(
            f"sublinear continuation needs r1, r2 < p-1 = {crit}; "
            f"got r1={conv.r1}, r2={conv.r2}"
        )
    if sched is None:
        sched = EpsSchedule()
    if cfg is None:
        cfg = CoreConfig()
    return _run_schedule(grid, spec.p, spec.alpha, spec.lam, conv, sched, cfg)


def write_stage_csv(stages: list, path) -> None:
    """One row per stage: eps,iterations,residual_sup,sup_norm,grad_sup_norm."""

    def fmt(x: float) -> str:
        return format(float(x), ".17g")

    with open(path, "w", encoding="ascii") as f:
        f.write("eps,iterations,residual_sup,sup_norm,grad_sup_norm\n")
        for s in stages:
            f.write(
                f"{fmt(s.eps)},{int(s.iterations)},{fmt(s.residual_sup)},"
                f"{fmt(s.sup_norm)},{fmt(s.grad_sup_norm)}\n"
            )
