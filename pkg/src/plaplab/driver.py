"""Fixed-point iteration on an invariant slab around the reference profile.

The solution map freezes the right-hand side at the current iterate and
solves the resulting Dirichlet problem.  Restricted to the slab of fields
between lam * base and cap * base (with gradient sup bounded by cap), the
map stays inside the slab for admissible lam and cap, so plain Picard
iteration converges to a positive solution of the full singular problem;
no regularization is needed because slab members are bounded away from
zero by construction.  A sweep driver repeats this over a descending list
of lambdas, choosing the amplitude cap from the window formulas and warm
starting each run from the previous solution scaled by the homogeneity
ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ConstantsInput, m_window
from .continuation import (
    ConvectionSpec,
    EpsSchedule,
    ProblemSpec,
    _reaction_rhs,
    solve_singular_torsion,
)
from .core import CoreConfig, SolveReport, solve_dirichlet
from .grids import Field, Grid, gradient, sup_norm

__all__ = [
    "AdmissibleSet",
    "IterateEscapeError",
    "IterationReport",
    "SweepRow",
    "check_membership",
    "solution_map",
    "iterate_to_fixed_point",
    "select_amplitude",
    "lambda_sweep",
    "write_sweep_csv",
]

# Absolute slack on membership margins; an iterate further outside than the
# escape fraction of its own scale aborts the run.
_MEMBER_SLACK = 1e-10
_ESCAPE_FRACTION = 1e-8


class IterateEscapeError(RuntimeError):
    """An iterate left the slab by more than the escape tolerance."""


@dataclass(frozen=True)
class AdmissibleSet:
    """Slab lam*base <= v <= cap*base with gradients capped by cap."""

    base: Field
    lam: float
    cap: float

    def __post_init__(self):
        if not self.base.is_dirichlet:
            raise ValueError("slab base must vanish on the boundary")
        interior = self.base.grid.interior_mask
        if self.base.values[interior].min() <= 0.0:
            raise ValueError("slab base must be positive on interior nodes")
        if not (self.lam > 0.0):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not (self.cap >= self.lam):
            raise ValueError(
                f"amplitude cap {self.cap} must dominate lambda {self.lam}"
            )


def check_membership(v: Field, aset: AdmissibleSet) -> tuple[bool, dict]:
    """Worst margins of the three slab conditions; nonnegative means inside."""
    grid = aset.base.grid
    if not grid.compatible(v.grid):
        raise ValueError("field and slab base live on different grids")
    interior = grid.interior_mask
    base = aset.base.values[interior]
    vals = v.values[interior]
    margins = {
        "lower": float(np.min(vals - aset.lam * base)),
        "upper": float(np.min(aset.cap * base - vals)),
        "gradient": float(aset.cap - gradient(v).sup()),
    }
    member = all(m >= -_MEMBER_SLACK for m in margins.values())
    return member, margins


def solution_map(
    spec: ProblemSpec,
    v: Field,
    aset: AdmissibleSet,
    cfg: CoreConfig | None = None,
) -> tuple[Field, SolveReport]:
    """One application of the frozen-right-hand-side map.

    Requires the input to sit above the slab floor (up to 1e-12), which
    keeps the singular term finite without any regularization.
    """
    if cfg is None:
        cfg = CoreConfig()
    grid = aset.base.grid
    if not grid.compatible(v.grid):
        raise ValueError("field and slab base live on different grids")
    interior = grid.interior_mask
    floor_gap = float(np.min(v.values[interior] - spec.lam * aset.base.values[interior]))
    if floor_gap < -1e-12:
        raise ValueError(
            f"input dips {-floor_gap:.3e} below the slab floor; the map is only "
            "defined above lam * base"
        )
    rhs = _reaction_rhs(
        grid, v.values, spec.p, spec.alpha, spec.lam, spec.convection, 0.0, 0.0
    )
    return solve_dirichlet(rhs, spec.p, cfg, init=v)


@dataclass
class IterationReport:
    iterations: int
    final_sup_diff: float
    converged: bool
    in_set: bool

    def to_json_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_sup_diff": float(self.final_sup_diff),
            "converged": bool(self.converged),
            "in_set": bool(self.in_set),
        }


def iterate_to_fixed_point(
    spec: ProblemSpec,
    aset: AdmissibleSet,
    cfg: CoreConfig | None = None,
    v_init: Field | None = None,
) -> tuple[Field, IterationReport, list]:
    """Picard iteration of the solution map from inside the slab.

    Stops when one application moves the iterate by at most
    cfg.tol * sup(iterate).  The default start scales the base by the
    homogeneity amplitude clamped into the slab.  Each step's slab margins
    are recorded in the trace; an iterate escaping by more than 1e-8 of
    its scale raises IterateEscapeError, and budget exhaustion returns the
    last iterate flagged.
    """
    if cfg is None:
        cfg = CoreConfig()
    grid = aset.base.grid
    if v_init is None:
        c0 = spec.lam ** (1.0 / (spec.p - 1.0 + spec.alpha))
        c0 = min(max(c0, spec.lam), aset.cap)
        v = c0 * aset.base.values
    else:
        if not grid.compatible(v_init.grid):
            raise ValueError("v_init lives on a different grid")
        v = np.where(grid.boundary_mask, 0.0, v_init.values)
    trace = []
    omega = 1.0
    prev_diff = np.inf
    u = Field(grid, v)
    member = False
    diff = np.inf
    converged = False
    iters = 0
    for k in range(1, cfg.max_iter + 1):
        u, _ = solution_map(spec, Field(grid, v), aset, cfg)
        iters = k
        diff = float(np.abs(u.values - v).max())
        member, margins = check_membership(u, aset)
        worst = min(margins.values())
        scale = max(1.0, sup_norm(u))
        if worst < -_ESCAPE_FRACTION * scale:
            raise IterateEscapeError(
                f"iterate {k} left the slab (worst margin {worst:.3e}); "
                "lambda or the amplitude cap is outside the admissible regime"
            )
        trace.append(
            {
                "iteration": k,
                "sup_diff": diff,
                "margin_lower": margins["lower"],
                "margin_upper": margins["upper"],
                "margin_gradient": margins["gradient"],
                "in_set": member,
            }
        )
        if diff <= cfg.tol * float(np.abs(v).max()):
            converged = True
            break
        if diff > prev_diff:
            omega = max(0.5 * omega, 0.25)
        prev_diff = diff
        v = (1.0 - omega) * v + omega * u.values
    report = IterationReport(
        iterations=iters,
        final_sup_diff=diff,
        converged=converged,
        in_set=member,
    )
    return u, report, trace


def select_amplitude(
    lam: float, inp: ConstantsInput, envelope: float | None = None
) -> float:
    """Midpoint of the feasible amplitude range, with the window floor raised
    by the gradient envelope constant when one is supplied."""
    m_lo, m_hi = m_window(lam, inp)
    lo_eff = m_lo if envelope is None else max(m_lo, envelope * m_lo)
    if lo_eff > m_hi:
        raise ValueError(
            f"gradient envelope pushes the amplitude floor {lo_eff:.6g} above "
            f"the window top {m_hi:.6g}; no admissible cap at lambda {lam}"
        )
    return 0.5 * (lo_eff + m_hi)


@dataclass
class SweepRow:
    lam: float
    sup_u: float
    sup_grad: float
    iterations: int
    in_set: bool
    residual_sup: float
    error: str = ""

    def to_json_dict(self) -> dict:
        return {
            "lambda": float(self.lam),
            "sup_u": float(self.sup_u),
            "sup_grad": float(self.sup_grad),
            "iterations": int(self.iterations),
            "in_set": bool(self.in_set),
            "residual_sup": float(self.residual_sup),
            "error": self.error,
        }


def lambda_sweep(
    grid: Grid,
    p: float,
    alpha: float,
    conv: ConvectionSpec,
    lambdas: list,
    cfg: CoreConfig | None = None,
    sched: EpsSchedule | None = None,
    u0: Field | None = None,
    envelope: float | None = None,
    q: float | None = None,
) -> tuple[list, Field | None]:
    """Run the fixed-point driver over a descending list of lambdas.

    Rows are produced for every requested lambda; failures (infeasible
    window, slab escape, solver divergence) are recorded in the row's error
    field with NaN values and the sweep moves on.  Returns the rows and the
    reference profile actually used.
    """
    if cfg is None:
        cfg = CoreConfig()
    if conv is None:
        # inert convection; exponents kept away from the r = p-1 rejection
        conv = ConvectionSpec(a=0.0, b=0.0, r1=0.5 * (p - 1.0), r2=0.5 * (p - 1.0))
    lams = sorted((float(x) for x in lambdas), reverse=True)
    if len(lams) == 0:
        return [], u0
    if u0 is None:
        if sched is None:
            sched = EpsSchedule()
        u0, _ = solve_singular_torsion(grid, p, alpha, sched, cfg)
    inp = ConstantsInput(
        p=p,
        alpha=alpha,
        a=conv.a,
        b=conv.b,
        r1=conv.r1,
        r2=conv.r2,
        u0_sup=sup_norm(u0),
        dim=grid.dim,
        q=q,
        cp_hat=envelope,
    )
    rows = []
    prev_u = None
    prev_lam = None
    homog = 1.0 / (p - 1.0 + alpha)
    for lam in lams:
        try:
            cap = select_amplitude(lam, inp, envelope)
            aset = AdmissibleSet(u0, lam, cap)
            spec = ProblemSpec(p, alpha, lam, conv)
            v_init = None
            if prev_u is not None:
                scaled = prev_u.values * (lam / prev_lam) ** homog
                v_init = Field(grid, np.maximum(scaled, lam * u0.values))
            u, rep, _ = iterate_to_fixed_point(spec, aset, cfg, v_init)
            member, _ = check_membership(u, aset)
            rows.append(
                SweepRow(
                    lam=lam,
                    sup_u=sup_norm(u),
                    sup_grad=gradient(u).sup(),
                    iterations=rep.iterations,
                    in_set=member,
                    residual_sup=rep.final_sup_diff,
                )
            )
            prev_u = u
            prev_lam = lam
        except (ValueError, RuntimeError) as exc:
            rows.append(
                SweepRow(
                    lam=lam,
                    sup_u=np.nan,
                    sup_grad=np.nan,
                    iterations=0,
                    in_set=False,
                    residual_sup=np.nan,
                    error=str(exc),
                )
            )
    return rows, u0


def write_sweep_csv(rows: list, path) -> None:
    """One row per lambda: lambda,sup_u,sup_grad,iterations,in_set,residual_sup."""

    def fmt(x: float) -> str:
        return format(float(x), ".17g")

    with open(path, "w", encoding="ascii") as f:
        f.write("lambda,sup_u,sup_grad,iterations,in_set,residual_sup\n")
        for r in rows:
            f.write(
                f"{fmt(r.lam)},{fmt(r.sup_u)},{fmt(r.sup_grad)},"
                f"{int(r.iterations)},{int(bool(r.in_set))},{fmt(r.residual_sup)}\n"
            )
