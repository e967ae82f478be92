"""Verification checks on computed fields.

Each check packages one structural property of the continuous problem in
discrete form and reports a worst margin (nonnegative means the property
holds), the node where it is attained, and supporting detail.  Residual
checks exclude a boundary layer two cells wide, where the singular
right-hand side is balanced by mesh-scale effects rather than resolved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .continuation import EpsSchedule, ProblemSpec, _run_schedule, solve_singular_torsion
from .core import CoreConfig, apply_p_laplacian
from .grids import Field, Grid, nodal_gradient_magnitude, sup_norm

__all__ = [
    "CheckResult",
    "check_comparison",
    "check_residual",
    "check_distance_bounds",
    "check_scaling",
    "check_supersolution",
    "summary_table",
    "write_checks_json",
]


def _json_safe(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return x if math.isfinite(x) else None
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    return str(v)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_margin: float
    worst_node: tuple | None
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_margin": _json_safe(self.worst_margin),
            "worst_node": _json_safe(self.worst_node),
            "details": _json_safe(self.details),
        }


def _node_coords(grid: Grid, flat_index: int) -> tuple:
    idx = np.unravel_index(int(flat_index), grid.shape)
    return tuple(float(grid.axes[k][idx[k]]) for k in range(grid.dim))


def _masked_argmin(values: np.ndarray, mask: np.ndarray) -> int:
    work = np.where(mask, values, np.inf)
    return int(np.argmin(work))


def check_comparison(
    u: Field, v: Field, fu: Field, fv: Field, tol: float = 1e-8
) -> CheckResult:
    """Order propagation: loads ordered fu >= fv should order the solutions.

    Vacuously passes when the load ordering itself fails; the margin is
    min(u - v) over interior nodes either way.  The discrete operator is
    only monotone in one dimension or on square cells, so callers should
    expect this check to be advisory elsewhere.
    """
    grid = u.grid
    for other in (v, fu, fv):
        if not grid.compatible(other.grid):
            raise ValueError("comparison fields live on different grids")
    interior = grid.interior_mask
    hyp = fu.values - fv.values
    hyp_margin = float(np.min(hyp[interior]))
    concl = u.values - v.values
    concl_margin = float(np.min(concl[interior]))
    vacuous = hyp_margin < -tol
    passed = vacuous or concl_margin >= -tol
    worst = _masked_argmin(concl, interior)
    return CheckResult(
        name="comparison",
        passed=passed,
        worst_margin=concl_margin,
        worst_node=_node_coords(grid, worst),
        details={
            "hypothesis_margin": hyp_margin,
            "conclusion_margin": concl_margin,
            "vacuous": vacuous,
            "tol": tol,
        },
    )


def check_residual(
    spec: ProblemSpec, u: Field, rel_tol: float = 1e-6, q: float | None = None
) -> CheckResult:
    """Pointwise equation residual away from the boundary layer.

    Evaluates the discrete operator against the unregularized right-hand
    side on interior nodes at distance >= 2h from the boundary and compares
    the sup of the residual with rel_tol times the sup of the right-hand
    side there.
    """
    grid = u.grid
    hmax = max(grid.h)
    included = grid.interior_mask & (grid.dist >= 2.0 * hmax * (1.0 - 1e-12))
    if not np.any(included):
        raise ValueError("no interior nodes clear the boundary layer; grid too coarse")
    vals = u.values
    if np.min(vals[included]) <= 0.0:
        worst = _masked_argmin(vals, included)
        return CheckResult(
            name="residual",
            passed=False,
            worst_margin=float(np.min(vals[included])),
            worst_node=_node_coords(grid, worst),
            details={"note": "field is not positive on the checked nodes"},
        )
    if q is None:
        q = max(float(grid.dim), spec.p / (spec.p - 1.0)) + 1.0
    op = apply_p_laplacian(u, spec.p, 0.0)
    # boundary zeros would blow up under the negative power; they are
    # masked out of the residual anyway
    sing = spec.lam * np.where(included, vals, 1.0) ** (-spec.alpha)
    grad_mag = nodal_gradient_magnitude(u)
    rhs = sing + spec.convection.evaluate(vals, grad_mag)
    res = np.where(included, op.values - rhs, 0.0)
    scale = float(np.max(np.abs(rhs[included])))
    res_sup = float(np.max(np.abs(res)))
    res_l2 = float(np.sqrt(np.sum(grid.node_weights * res**2)))
    margin = rel_tol * scale - res_sup
    worst = int(np.argmax(np.abs(res)))
    envelope = float(np.max(sing[included] * grid.dist[included] ** spec.alpha))
    return CheckResult(
        name="residual",
        passed=res_sup <= rel_tol * scale,
        worst_margin=margin,
        worst_node=_node_coords(grid, worst),
        details={
            "residual_sup": res_sup,
            "residual_l2": res_l2,
            "rhs_scale": scale,
            "rel_tol": rel_tol,
            "excluded_layer": 2.0 * hmax,
            "singular_envelope": envelope,
            "q": q,
            "integrability_ok": spec.alpha * q < 1.0,
        },
    )


def check_distance_bounds(u: Field) -> tuple[float, float, CheckResult]:
    """Two-sided distance comparison c*dist <= u <= K*dist on interior nodes."""
    grid = u.grid
    interior = grid.interior_mask
    ratio = u.values[interior] / grid.dist[interior]
    c_best = float(np.min(ratio))
    k_best = float(np.max(ratio))
    full_ratio = np.where(interior, u.values / np.where(interior, grid.dist, 1.0), np.inf)
    worst = _masked_argmin(full_ratio, interior)
    result = CheckResult(
        name="distance_bounds",
        passed=c_best > 0.0 and math.isfinite(k_best),
        worst_margin=c_best,
        worst_node=_node_coords(grid, worst),
        details={"c_best": c_best, "K_best": k_best, "spread": k_best / c_best if c_best > 0 else math.inf},
    )
    return c_best, k_best, result


def check_scaling(
    grid: Grid,
    p: float,
    alpha: float,
    lam: float,
    cfg: CoreConfig | None = None,
    sched: EpsSchedule | None = None,
    u0: Field | None = None,
) -> CheckResult:
    """Homogeneity of the reduced problem: the solution at coefficient lam
    must equal lam^(1/(p-1+alpha)) times the reference profile.

    Solves the lam-problem independently and compares against the scaled
    profile with threshold 10 * cfg.tol * sup(w).  The mismatch under the
    sign-flipped exponent 1/(p-1-alpha) is reported alongside for contrast.

    The threshold is relative to sup(w) but the iteration stop tests are
    absolute-leaning, so both internal solves run tighter than cfg.tol: the
    lam-solve tolerance is scaled by the expected solution size, else small
    lam could never pass its own relative threshold.
    """
    if cfg is None:
        cfg = CoreConfig()
    if sched is None:
        sched = EpsSchedule()
    if not (lam > 0.0):
        raise ValueError(f"lambda must be positive, got {lam}")
    inner_cfg = replace(cfg, tol=max(0.1 * cfg.tol, 1e-14))
    if u0 is None:
        u0, _ = solve_singular_torsion(grid, p, alpha, sched, inner_cfg)
    if not grid.compatible(u0.grid):
        raise ValueError("reference profile lives on a different grid")
    expo_scale = lam ** (1.0 / (p - 1.0 + alpha)) * sup_norm(u0)
    w_cfg = replace(cfg, tol=min(max(cfg.tol * expo_scale, 1e-14), cfg.tol))
    w, _ = _run_schedule(grid, p, alpha, lam, None, sched, w_cfg)
    expo = 1.0 / (p - 1.0 + alpha)
    target = lam**expo * u0.values
    diff = np.abs(w.values - target)
    mismatch = float(diff.max())
    threshold = 10.0 * cfg.tol * sup_norm(w)
    denom = p - 1.0 - alpha
    if abs(denom) < 1e-12:
        alt_mismatch = math.inf
        alt_expo = None
    else:
        alt_expo = 1.0 / denom
        alt_mismatch = float(np.max(np.abs(w.values - lam**alt_expo * u0.values)))
    worst = int(np.argmax(diff))
    return CheckResult(
        name="scaling",
        passed=mismatch <= threshold,
        worst_margin=threshold - mismatch,
        worst_node=_node_coords(grid, worst),
        details={
            "exponent": expo,
            "mismatch": mismatch,
            "threshold": threshold,
            "sup_w": sup_norm(w),
            "alt_exponent": alt_expo,
            "alt_mismatch": alt_mismatch,
        },
    )


def check_supersolution(
    u_eps: Field,
    eps: float,
    eps_prime: float,
    p: float,
    alpha: float,
    lam: float = 1.0,
    tol: float = 1e-8,
) -> CheckResult:
    """Shift mirror for the regularized family without lower-order terms.

    If u solves the eps-problem, then u + (eps - eps') dominates the
    eps'-problem: the operator is shift invariant, the shifted singular
    term matches exactly, and the boundary trace is nonnegative.  Checks
    the discrete supersolution inequality on interior nodes.
    """
    if not (eps > eps_prime >= 0.0):
        raise ValueError("need eps > eps_prime >= 0")
    grid = u_eps.grid
    shift = eps - eps_prime
    v = Field(grid, u_eps.values + shift)
    op = apply_p_laplacian(v, p, 0.0)
    arg = v.values + eps_prime
    if np.min(arg[grid.interior_mask]) <= 0.0:
        raise ValueError("shifted field is not positive on interior nodes")
    rhs = lam * arg ** (-alpha)
    margin_field = np.where(grid.interior_mask, op.values - rhs, np.inf)
    worst = int(np.argmin(margin_field))
    worst_margin = float(margin_field[worst])
    scale = float(np.max(rhs[grid.interior_mask]))
    passed = worst_margin >= -tol * max(1.0, scale)
    return CheckResult(
        name="supersolution",
        passed=passed,
        worst_margin=worst_margin,
        worst_node=_node_coords(grid, worst),
        details={
            "eps": eps,
            "eps_prime": eps_prime,
            "shift": shift,
            "rhs_scale": scale,
            "tol": tol,
        },
    )


def summary_table(results: list) -> str:
    """Fixed-width text table, one check per line."""
    lines = []
    name_w = max([len(r.name) for r in results] + [5])
    header = f"{'check':<{name_w}}  {'status':<6}  {'worst_margin':>13}  worst_node"
    lines.append(header)
    lines.append("-" * len(header))
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        margin = f"{r.worst_margin: .4e}" if math.isfinite(r.worst_margin) else "inf"
        node = "-" if r.worst_node is None else ",".join(f"{x:.6g}" for x in r.worst_node)
        lines.append(f"{r.name:<{name_w}}  {status:<6}  {margin:>13}  {node}")
    return "\n".join(lines)


def write_checks_json(results: list, path) -> None:
    payload = [r.to_json_dict() for r in results]
    with open(path, "w", encoding="ascii") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
