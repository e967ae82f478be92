"""Admissibility thresholds, amplitude windows, and gradient calibration.

The invariant-set argument needs an amplitude M for the reference profile
such that the solution map sends the slab between lam * profile and
M * profile (with gradients capped by M) into itself.  Three mechanisms
compete:

* the map output must dominate lam * profile from below, which forces
  M >= G0 * lam^((1-alpha)/(p-1)) with G0 = 2^(1/(p-1)) the amplification
  a doubled load produces;
* the lower-order growth terms evaluated on the slab must stay inside half
  of the reaction budget lam^(1-alpha), which caps M from above through
  each growth exponent; and
* the singular reaction evaluated at the top of the slab must still beat
  the amplitude, which caps M by lam^((2-p)/alpha).

Each cap converts into a threshold on lam below which the window
[M_lo, M_hi] is nonempty; the admissible threshold A is the minimum of
those thresholds capped at one.  The gradient-aware variant A* repeats the
caps with G0 inflated by a calibrated envelope constant, so A* <= A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CoreConfig, solve_dirichlet
from .grids import Field, Grid, constant_field, gradient, lp_norm

__all__ = [
    "ConstantsInput",
    "ConstantsReport",
    "WindowCheck",
    "kappa_factor",
    "lambda_bound",
    "lambda_bound_with_gradient",
    "m_window",
    "check_window_conditions",
    "calibrate_gradient_constant",
    "envelope_constant",
    "build_constants_report",
]


def kappa_factor(p: float) -> float:
    """Prefactor of the gradient envelope: 2^(p/(p-1)) below p=2, p^(5/2) from it on."""
    if not (p > 1.0):
        raise ValueError(f"p must exceed 1, got {p}")
    if p < 2.0:
        return 2.0 ** (p / (p - 1.0))
    return p**2.5


def _doubling_gain(p: float) -> float:
    return 2.0 ** (1.0 / (p - 1.0))


def _pow_or_inf(base: float, expo: float) -> float:
    # float ** raises OverflowError instead of returning inf; a huge bound
    # means the constraint is vacuous, which inf expresses directly
    try:
        return base**expo
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class ConstantsInput:
    """Problem data the threshold formulas consume.

    Growth exponents are validated against p-1 only when the matching
    coefficient is active; q, when provided, must be an admissible
    integrability exponent for the singular term (q > max(dim, p/(p-1))
    and alpha*q < 1).  cp_hat is a calibrated gradient-envelope constant;
    theta is carried through to reports unused.
    """

    p: float
    alpha: float
    a: float
    b: float
    r1: float
    r2: float
    u0_sup: float
    dim: int = 1
    q: float | None = None
    cp_hat: float | None = None
    theta: float | None = None

    def __post_init__(self):
        if not (self.p > 1.0):
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.a < 0.0 or self.b < 0.0:
            raise ValueError("growth coefficients a, b must be nonnegative")
        if self.r1 <= 0.0 or self.r2 <= 0.0:
            raise ValueError("growth exponents r1, r2 must be positive")
        crit = self.p - 1.0
        if self.a > 0.0 and self.r1 <= crit:
            raise ValueError(f"active growth exponent r1 must exceed p-1 = {crit}")
        if self.b > 0.0 and self.r2 <= crit:
            raise ValueError(f"active growth exponent r2 must exceed p-1 = {crit}")
        if not (self.u0_sup > 0.0):
            raise ValueError("u0_sup must be positive")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.q is not None:
            q_floor = max(float(self.dim), self.p / (self.p - 1.0))
            if not (self.q > q_floor):
                raise ValueError(f"q must exceed max(dim, p/(p-1)) = {q_floor}")
            if not (self.alpha * self.q < 1.0):
                raise ValueError("alpha*q must stay below 1")
        if self.cp_hat is not None and not (self.cp_hat > 0.0):
            raise ValueError("cp_hat must be positive")
        if self.theta is not None and not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0,1)")


def _threshold_terms(inp: ConstantsInput, gain: float) -> tuple[float, float, float]:
    """Thresholds on lam from the three window caps, for a given lower gain."""
    p, alpha = inp.p, inp.alpha
    if inp.a > 0.0:
        base = gain**inp.r1 * 2.0 * inp.a * inp.u0_sup ** (inp.r1 + alpha)
        expo = -(p - 1.0) / ((1.0 - alpha) * (inp.r1 + 1.0 - p))
        t1 = _pow_or_inf(base, expo)
    else:
        t1 = math.inf
    if inp.b > 0.0:
        base = gain**inp.r2 * 2.0 * inp.b * inp.u0_sup**alpha
        expo = -(p - 1.0) / ((1.0 - alpha) * (inp.r2 + 1.0 - p))
        t2 = _pow_or_inf(base, expo)
    else:
        t2 = math.inf
    d = alpha * (1.0 - alpha) + (p - 1.0) * (p - 2.0)
    if d > 0.0:
        t3 = gain ** (-alpha * (p - 1.0) / d)
    else:
        # The exponent cap cannot hold for any lam below one.
        t3 = 0.0
    return t1, t2, t3


def lambda_bound(inp: ConstantsInput) -> tuple[float, dict]:
    """Threshold A below which the amplitude window is nonempty."""
    t1, t2, t3 = _threshold_terms(inp, _doubling_gain(inp.p))
    terms = {
        "growth_u_bound": t1,
        "growth_grad_bound": t2,
        "exponent_compat": t3,
        "unit_cap": 1.0,
    }
    return min(terms.values()), terms


def lambda_bound_with_gradient(inp: ConstantsInput) -> tuple[float, dict]:
    """Threshold A* that additionally keeps the calibrated gradient cap inside
    the window; coincides with A when no envelope constant is supplied."""
    g0 = _doubling_gain(inp.p)
    t1, t2, t3 = _threshold_terms(inp, g0)
    cp_hat = 1.0 if inp.cp_hat is None else inp.cp_hat
    s1, s2, s3 = _threshold_terms(inp, cp_hat * g0)
    terms = {
        "growth_u_bound": t1,
        "growth_grad_bound": t2,
        "exponent_compat": t3,
        "gradient_u_bound": s1,
        "gradient_grad_bound": s2,
        "gradient_exponent_compat": s3,
        "unit_cap": 1.0,
    }
    return min(terms.values()), terms


def _window_literal(lam: float, inp: ConstantsInput) -> tuple[float, float]:
    p, alpha = inp.p, inp.alpha
    m_lo = _doubling_gain(p) * lam ** ((1.0 - alpha) / (p - 1.0))
    if inp.a > 0.0:
        base = 2.0 * inp.a * _pow_or_inf(inp.u0_sup, inp.r1 + alpha)
        b1 = lam ** ((1.0 - alpha) / inp.r1) / _pow_or_inf(base, 1.0 / inp.r1)
    else:
        b1 = math.inf
    if inp.b > 0.0:
        base = 2.0 * inp.b * _pow_or_inf(inp.u0_sup, alpha)
        b2 = lam ** ((1.0 - alpha) / inp.r2) / _pow_or_inf(base, 1.0 / inp.r2)
    else:
        b2 = math.inf
    b3 = _pow_or_inf(lam, (2.0 - p) / alpha)
    return m_lo, min(b1, b2, b3)


def m_window(lam: float, inp: ConstantsInput) -> tuple[float, float]:
    """Amplitude window [M_lo, M_hi]; requires lam strictly below A."""
    if not (lam > 0.0):
        raise ValueError(f"lambda must be positive, got {lam}")
    a_thresh, _ = lambda_bound(inp)
    if not (lam < a_thresh):
        raise ValueError(
            f"lambda {lam} is not below the admissible threshold {a_thresh}"
        )
    return _window_literal(lam, inp)


@dataclass(frozen=True)
class WindowCheck:
    """Margins of the three amplitude conditions (nonnegative means satisfied).

    growth: combined lower-order terms on the slab fit inside the reaction
    budget lam^(1-alpha).  lower: M dominates the doubling floor.  exponent:
    M stays below lam^((2-p)/alpha).  Flags use a relative slack of 1e-9 so
    that window endpoints evaluated through different power expressions do
    not fail on roundoff.
    """

    growth_ok: bool
    lower_ok: bool
    exponent_ok: bool
    margin_growth: float
    margin_lower: float
    margin_exponent: float

    @property
    def all_ok(self) -> bool:
        return self.growth_ok and self.lower_ok and self.exponent_ok


def check_window_conditions(lam: float, m: float, inp: ConstantsInput) -> WindowCheck:
    if not (lam > 0.0 and m >= 0.0):
        raise ValueError("lambda must be positive and M nonnegative")
    p, alpha = inp.p, inp.alpha
    budget = lam ** (1.0 - alpha)
    used = 0.0
    if inp.a > 0.0:
        used += inp.a * _pow_or_inf(m, inp.r1) * _pow_or_inf(inp.u0_sup, inp.r1 + alpha)
    if inp.b > 0.0:
        used += inp.b * _pow_or_inf(m, inp.r2) * _pow_or_inf(inp.u0_sup, alpha)
    margin_growth = budget - used
    floor = _doubling_gain(p) * _pow_or_inf(lam, (1.0 - alpha) / (p - 1.0))
    margin_lower = m - floor
    cap = _pow_or_inf(lam, (2.0 - p) / alpha)
    margin_exponent = cap - m
    slack_g = 1e-9 * max(1.0, budget)
    slack_m = 1e-9 * max(1.0, m)
    return WindowCheck(
        growth_ok=margin_growth >= -slack_g,
        lower_ok=margin_lower >= -slack_m,
        exponent_ok=margin_exponent >= -slack_m,
        margin_growth=margin_growth,
        margin_lower=margin_lower,
        margin_exponent=margin_exponent,
    )


def calibrate_gradient_constant(
    grid: Grid,
    p: float,
    q: float,
    probe_count: int = 3,
    cfg: CoreConfig | None = None,
    seed: int = 42,
) -> float:
    """Empirical constant cp_raw with ||grad u||^(p-1) <= cp_raw*kappa*||g||_q.

    Probes the solver with a constant load, a solution-shaped load, and
    seeded random positive loads, takes the worst observed ratio, and
    doubles it as safety.  Deterministic for a fixed seed.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be at least 1")
    if cfg is None:
        cfg = CoreConfig()
    kappa = kappa_factor(p)
    probes = [constant_field(grid, 1.0)]
    u_first, _ = solve_dirichlet(probes[0], p, cfg)
    ratios = [gradient(u_first).sup() ** (p - 1.0) / (kappa * lp_norm(probes[0], q))]
    if probe_count >= 2:
        shaped = u_first.values / np.abs(u_first.values).max()
        probes.append(Field(grid, np.where(grid.boundary_mask, 0.0, shaped)))
    rng = np.random.default_rng(seed)
    for _ in range(max(0, probe_count - 2)):
        vals = rng.uniform(0.5, 1.5, size=grid.shape)
        probes.append(Field(grid, np.where(grid.boundary_mask, 0.0, vals)))
    for g in probes[1:]:
        u, _ = solve_dirichlet(g, p, cfg)
        ratios.append(gradient(u).sup() ** (p - 1.0) / (kappa * lp_norm(g, q)))
    return 2.0 * max(ratios)


def envelope_constant(
    cp_raw: float, u0: Field, p: float, alpha: float, q: float
) -> float:
    """Gradient envelope for the reference profile's singular load.

    Combines the calibrated ratio, the kappa prefactor, and the q-norm of
    u0^(-alpha) over interior nodes into a single constant C with
    ||grad w|| <= C * lam^((1-alpha)/(p-1)) for the scaled solves.
    """
    if not (cp_raw > 0.0):
        raise ValueError("cp_raw must be positive")
    grid = u0.grid
    interior = grid.interior_mask
    vals = u0.values[interior]
    if np.any(vals <= 0.0):
        raise ValueError("reference profile must be positive on interior nodes")
    w = np.zeros(grid.shape)
    w[interior] = vals ** (-alpha)
    load_norm = lp_norm(Field(grid, w), q)
    return (cp_raw * kappa_factor(p) * load_norm) ** (1.0 / (p - 1.0))


def _json_float(x: float | None):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class ConstantsReport:
    """All thresholds plus, when a lambda is supplied, its window and
    feasibility (lam < A* and the window nonempty)."""

    inp: ConstantsInput
    A: float
    A_star: float
    terms: dict
    star_terms: dict
    lam: float | None = None
    M_lo: float | None = None
    M_hi: float | None = None
    feasible: bool | None = None

    def to_json_dict(self) -> dict:
        inp = self.inp
        return {
            "inputs": {
                "p": inp.p,
                "alpha": inp.alpha,
                "a": inp.a,
                "b": inp.b,
                "r1": inp.r1,
                "r2": inp.r2,
                "u0_sup": inp.u0_sup,
                "dim": inp.dim,
                "q": inp.q,
                "cp_hat": inp.cp_hat,
                "theta": inp.theta,
            },
            "A": _json_float(self.A),
            "A_star": _json_float(self.A_star),
            "terms": {k: _json_float(v) for k, v in self.terms.items()},
            "star_terms": {k: _json_float(v) for k, v in self.star_terms.items()},
            "lambda": _json_float(self.lam),
            "M_lo": _json_float(self.M_lo),
            "M_hi": _json_float(self.M_hi),
            "feasible": self.feasible,
        }


def build_constants_report(
    inp: ConstantsInput, lam: float | None = None
) -> ConstantsReport:
    a_thresh, terms = lambda_bound(inp)
    a_star, star_terms = lambda_bound_with_gradient(inp)
    report = ConstantsReport(inp, a_thresh, a_star, terms, star_terms)
    if lam is not None:
        if not (lam > 0.0):
            raise ValueError(f"lambda must be positive, got {lam}")
        m_lo, m_hi = _window_literal(lam, inp)
        report.lam = lam
        report.M_lo = m_lo
        report.M_hi = m_hi
        report.feasible = bool(lam < a_star and m_lo <= m_hi)
    return report
