"""Admissibility threshold, amplitude window, and gradient-envelope calibration."""

import math

import numpy as np
import pytest

from plaplab.constants import (
    ConstantsInput,
    build_constants_report,
    calibrate_gradient_constant,
    check_window_conditions,
    envelope_constant,
    kappa_factor,
    lambda_bound,
    lambda_bound_with_gradient,
    m_window,
)
from plaplab.core import CoreConfig, solve_dirichlet
from plaplab.grids import build_grid, constant_field, gradient, lp_norm


def _worked():
    return ConstantsInput(p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=1.0)


def _pure(p=2.0, alpha=0.5):
    return ConstantsInput(p=p, alpha=alpha, a=0.0, b=0.0, r1=0.5, r2=0.5, u0_sup=1.0)


def test_input_validation():
    with pytest.raises(ValueError):
        ConstantsInput(p=1.0, alpha=0.5, a=0.0, b=0.0, r1=1.0, r2=1.0, u0_sup=1.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=1.5, a=0.0, b=0.0, r1=1.0, r2=1.0, u0_sup=1.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.5, a=1.0, b=0.0, r1=0.5, r2=1.5, u0_sup=1.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.5, a=0.0, b=0.0, r1=1.5, r2=1.5, u0_sup=0.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.5, a=0.0, b=0.0, r1=1.5, r2=1.5, u0_sup=1.0, q=3.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.25, a=0.0, b=0.0, r1=1.5, r2=1.5, u0_sup=1.0, q=1.5)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.5, a=0.0, b=0.0, r1=1.5, r2=1.5, u0_sup=1.0, cp_hat=0.0)
    with pytest.raises(ValueError):
        ConstantsInput(p=2.0, alpha=0.5, a=0.0, b=0.0, r1=1.5, r2=1.5, u0_sup=1.0, theta=1.0)
    # inactive coefficients leave their exponents unconstrained
    assert _pure().q is None


def test_threshold_worked_values():
    threshold, terms = lambda_bound(_worked())
    assert threshold == 0.0625
    assert terms == {
        "growth_u_bound": 0.0625,
        "growth_grad_bound": 0.0625,
        "exponent_compat": 0.25,
        "unit_cap": 1.0,
    }


def test_threshold_term_symmetry():
    rng = np.random.default_rng(42)
    for _ in range(10):
        p = rng.uniform(1.5, 3.0)
        alpha = rng.uniform(0.1, 0.9)
        coef = rng.uniform(0.1, 2.0)
        r = p - 1.0 + rng.uniform(0.1, 2.0)
        inp = ConstantsInput(p=p, alpha=alpha, a=coef, b=coef, r1=r, r2=r, u0_sup=1.0)
        _, terms = lambda_bound(inp)
        assert terms["growth_u_bound"] == terms["growth_grad_bound"]


def test_threshold_decreasing_in_reference_sup():
    vals = []
    for s in (1.0, 10.0, 100.0):
        inp = ConstantsInput(p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=s)
        vals.append(lambda_bound(inp)[0])
    assert vals[0] > vals[1] > vals[2]


def test_threshold_nonincreasing_in_coefficients():
    for key in ("a", "b"):
        prev = math.inf
        prev_star = math.inf
        for coef in (0.5, 1.0, 2.0, 4.0):
            kw = dict(p=2.0, alpha=0.5, a=0.5, b=0.5, r1=3.0, r2=3.0, u0_sup=1.0)
            kw[key] = coef
            threshold, _ = lambda_bound(ConstantsInput(**kw))
            star, _ = lambda_bound_with_gradient(ConstantsInput(cp_hat=1.5, **kw))
            assert threshold <= prev
            assert star <= prev_star
            prev = threshold
            prev_star = star


def test_window_worked_values():
    lam = 1.0 / 32.0
    m_lo, m_hi = m_window(lam, _worked())
    assert math.isclose(m_lo, 2.0 * lam**0.5, rel_tol=1e-15)
    assert math.isclose(m_hi, lam ** (1.0 / 6.0) / 2.0 ** (1.0 / 3.0), rel_tol=1e-15)
    assert m_lo < m_hi


def test_window_needs_admissible_lambda():
    with pytest.raises(ValueError):
        m_window(0.0625, _worked())
    with pytest.raises(ValueError):
        m_window(0.0, _worked())


def test_window_upper_edge_flat_at_p_two():
    # with a = b = 0 and p = 2 the exponent cap is lam^0 = 1 for every lam
    inp = _pure()
    for lam in (0.2, 0.01, 1e-6):
        _, m_hi = m_window(lam, inp)
        assert m_hi == 1.0


def test_window_shrinks_near_threshold():
    threshold, _ = lambda_bound(_worked())
    lo_mid, hi_mid = m_window(0.5 * threshold, _worked())
    lo_edge, hi_edge = m_window(0.99 * threshold, _worked())
    assert (hi_edge - lo_edge) < (hi_mid - lo_mid)


def test_window_conditions_degenerate_amplitude():
    chk = check_window_conditions(0.5, 0.0, _worked())
    assert chk.growth_ok
    assert chk.exponent_ok
    assert not chk.lower_ok
    assert not chk.all_ok


def test_window_conditions_exponent_cap():
    chk = check_window_conditions(1.0, 1.5, _worked())
    assert not chk.exponent_ok
    assert chk.margin_exponent == -0.5


def test_window_conditions_hold_across_window():
    lam = 1.0 / 32.0
    m_lo, m_hi = m_window(lam, _worked())
    for m in (m_lo, 0.5 * (m_lo + m_hi), m_hi):
        assert check_window_conditions(lam, m, _worked()).all_ok


def test_window_membership_random_draws():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        p = rng.uniform(1.2, 4.0)
        alpha = rng.uniform(0.05, 0.95)
        a = rng.uniform(0.0, 2.0)
        b = rng.uniform(0.0, 2.0)
        r1 = p - 1.0 + rng.uniform(0.1, 3.0)
        r2 = p - 1.0 + rng.uniform(0.1, 3.0)
        u0_sup = rng.uniform(0.2, 5.0)
        inp = ConstantsInput(p=p, alpha=alpha, a=a, b=b, r1=r1, r2=r2, u0_sup=u0_sup)
        threshold, _ = lambda_bound(inp)
        lam = rng.uniform(0.0, threshold) if math.isfinite(threshold) else rng.uniform(0.0, 1.0)
        if threshold <= 0.0 or not (0.0 < lam < threshold):
            continue
        m_lo, m_hi = m_window(lam, inp)
        assert m_lo <= m_hi * (1.0 + 1e-9)
        for theta in (0.0, 0.5, 1.0):
            m = (1.0 - theta) * m_lo + theta * m_hi
            assert check_window_conditions(lam, min(m, m_hi), inp).all_ok
        checked += 1


def test_kappa_branches():
    assert kappa_factor(1.5) == 8.0
    assert kappa_factor(2.0) == 2.0**2.5
    assert kappa_factor(3.0) == 3.0**2.5


def test_calibration_dominates_constant_load():
    g = build_grid(1, [0.0, 1.0], 255)
    cp = calibrate_gradient_constant(g, 2.0, 3.0)
    # the unit constant load is one of the probes and its ratio is about
    # 1/(2 kappa); the doubled maximum must sit above the raw ratio
    assert cp >= 0.5 / kappa_factor(2.0)


def test_calibration_ratio_is_scale_invariant():
    g = build_grid(1, [0.0, 1.0], 255)
    cfg = CoreConfig()
    ratios = []
    for scale in (1.0, 10.0):
        load = constant_field(g, scale)
        u, _ = solve_dirichlet(load, 2.0, cfg)
        ratios.append(gradient(u).sup() / (kappa_factor(2.0) * lp_norm(load, 3.0)))
    assert abs(ratios[0] - ratios[1]) <= 1e-10 * ratios[0]


def test_calibration_monotone_in_probe_count():
    g = build_grid(1, [0.0, 1.0], 127)
    c3 = calibrate_gradient_constant(g, 2.0, 3.0, probe_count=3)
    c6 = calibrate_gradient_constant(g, 2.0, 3.0, probe_count=6)
    assert c6 >= c3
    with pytest.raises(ValueError):
        calibrate_gradient_constant(g, 2.0, 3.0, probe_count=0)


def test_envelope_constant_validation(torsion_ref):
    u0, _ = torsion_ref(n=255)
    cp = calibrate_gradient_constant(u0.grid, 2.0, 3.0)
    env = envelope_constant(cp, u0, 2.0, 0.25, 3.0)
    assert env > 0.0
    with pytest.raises(ValueError):
        envelope_constant(0.0, u0, 2.0, 0.25, 3.0)


def test_gradient_threshold_reduces_to_base():
    inp = ConstantsInput(
        p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=1.0, cp_hat=1.0
    )
    threshold, terms = lambda_bound(inp)
    star, star_terms = lambda_bound_with_gradient(inp)
    assert star == threshold
    assert star_terms["gradient_u_bound"] == terms["growth_u_bound"]
    assert star_terms["gradient_grad_bound"] == terms["growth_grad_bound"]


def test_gradient_threshold_tightens():
    inp = ConstantsInput(
        p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=1.0, cp_hat=2.0
    )
    threshold, _ = lambda_bound(inp)
    star, star_terms = lambda_bound_with_gradient(inp)
    assert star == 0.0078125
    assert star < threshold
    assert star_terms["gradient_u_bound"] < star_terms["growth_u_bound"]


def test_gradient_threshold_capped_by_one():
    rng = np.random.default_rng(42)
    for _ in range(20):
        p = rng.uniform(1.5, 3.5)
        alpha = rng.uniform(0.1, 0.9)
        inp = ConstantsInput(
            p=p,
            alpha=alpha,
            a=rng.uniform(0.0, 0.1),
            b=rng.uniform(0.0, 0.1),
            r1=p - 1.0 + rng.uniform(0.5, 2.0),
            r2=p - 1.0 + rng.uniform(0.5, 2.0),
            u0_sup=rng.uniform(0.1, 0.5),
            cp_hat=rng.uniform(0.1, 0.5),
        )
        star, _ = lambda_bound_with_gradient(inp)
        assert star <= 1.0


def test_constants_report_roundtrip():
    report = build_constants_report(_worked(), 1.0 / 32.0)
    d = report.to_json_dict()
    assert d["A"] == 0.0625
    assert d["feasible"] is True
    assert d["M_lo"] < d["M_hi"]
    # inactive growth terms serialize the infinite bound as null
    d0 = build_constants_report(_pure()).to_json_dict()
    assert d0["terms"]["growth_u_bound"] is None
    assert d0["lambda"] is None
