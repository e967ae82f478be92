"""Slab membership, the frozen-right-hand-side map, and the lambda sweep."""

import numpy as np
import pytest

from plaplab.constants import (
    ConstantsInput,
    calibrate_gradient_constant,
    envelope_constant,
    lambda_bound_with_gradient,
    m_window,
)
from plaplab.continuation import ConvectionSpec, EpsSchedule, ProblemSpec
from plaplab.core import CoreConfig
from plaplab.driver import (
    AdmissibleSet,
    check_membership,
    iterate_to_fixed_point,
    lambda_sweep,
    select_amplitude,
    solution_map,
    write_sweep_csv,
)
from plaplab.grids import Field, build_grid, gradient, sup_norm


def _inert(p):
    return ConvectionSpec(0.0, 0.0, 0.5 * (p - 1.0), 0.5 * (p - 1.0))


def _worked_set(torsion_ref, lam=1.0 / 32.0):
    u0, _ = torsion_ref(n=255)
    inp = ConstantsInput(
        p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=sup_norm(u0)
    )
    cap = select_amplitude(lam, inp)
    return u0, AdmissibleSet(u0, lam, cap)


def test_admissible_set_validation(torsion_ref):
    u0, _ = torsion_ref(n=255)
    with pytest.raises(ValueError):
        AdmissibleSet(u0, 1.0, 0.5)
    g = u0.grid
    with pytest.raises(ValueError):
        AdmissibleSet(Field(g, np.ones(g.shape)), 0.1, 1.0)
    flat = np.zeros(g.shape)
    with pytest.raises(ValueError):
        AdmissibleSet(Field(g, flat), 0.1, 1.0)


def test_membership_envelope_margins(torsion_ref):
    u0, aset = _worked_set(torsion_ref)
    lam, cap = aset.lam, aset.cap
    member, margins = check_membership(Field(u0.grid, lam * u0.values), aset)
    assert member
    assert margins["lower"] == 0.0
    assert not check_membership(Field(u0.grid, 2.0 * cap * u0.values), aset)[0]
    mid = Field(u0.grid, 0.5 * (lam + cap) * u0.values)
    assert check_membership(mid, aset)[0]


def test_solution_map_fixed_point(torsion_ref):
    # with a = b = 0 the scaled reference profile is the exact discrete
    # fixed point up to solver tolerance
    u0, _ = torsion_ref(n=255)
    g = u0.grid
    cfg = CoreConfig()
    lam = 0.25
    spec = ProblemSpec(2.0, 0.5, lam, _inert(2.0))
    aset = AdmissibleSet(u0, lam, 1.0)
    vstar = Field(g, lam ** (2.0 / 3.0) * u0.values)
    image, rep = solution_map(spec, vstar, aset, cfg)
    assert rep.converged
    assert np.max(np.abs(image.values - vstar.values)) <= 10.0 * cfg.tol * sup_norm(vstar)


def test_solution_map_respects_envelopes(torsion_ref):
    u0, aset = _worked_set(torsion_ref)
    g = u0.grid
    lam, cap = aset.lam, aset.cap
    spec = ProblemSpec(2.0, 0.5, lam, ConvectionSpec(1.0, 1.0, 3.0, 3.0))
    interior = g.interior_mask
    hi_img, _ = solution_map(spec, Field(g, cap * u0.values), aset)
    lo_img, _ = solution_map(spec, Field(g, lam * u0.values), aset)
    tol = 1e-8
    assert np.min(hi_img.values[interior] - lam * u0.values[interior]) >= -tol
    assert np.min(cap * u0.values[interior] - lo_img.values[interior]) >= -tol
    assert check_membership(hi_img, aset)[0]
    assert check_membership(lo_img, aset)[0]


def test_solution_map_rejects_input_below_floor(torsion_ref):
    u0, _ = torsion_ref(n=255)
    lam = 0.25
    spec = ProblemSpec(2.0, 0.5, lam, _inert(2.0))
    aset = AdmissibleSet(u0, lam, 1.0)
    with pytest.raises(ValueError):
        solution_map(spec, Field(u0.grid, 0.5 * lam * u0.values), aset)


def test_iterate_pure_reaction_is_immediate(torsion_ref):
    u0, _ = torsion_ref(n=255)
    lam = 0.25
    spec = ProblemSpec(2.0, 0.5, lam, _inert(2.0))
    aset = AdmissibleSet(u0, lam, 1.0)
    u, rep, trace = iterate_to_fixed_point(spec, aset)
    assert rep.converged
    assert rep.in_set
    assert rep.iterations <= 2
    assert len(trace) == rep.iterations


def test_iterate_limit_is_init_independent(torsion_ref):
    u0, _ = torsion_ref(n=255)
    g = u0.grid
    cfg = CoreConfig()
    lam = 0.25
    spec = ProblemSpec(2.0, 0.5, lam, _inert(2.0))
    aset = AdmissibleSet(u0, lam, 1.0)
    limits = []
    for c in (lam, 1.0, 0.5 * (lam + 1.0)):
        u, rep, _ = iterate_to_fixed_point(spec, aset, cfg, v_init=Field(g, c * u0.values))
        assert rep.converged
        limits.append(u.values)
    for a in limits:
        for b in limits:
            assert np.max(np.abs(a - b)) <= 10.0 * cfg.tol


def test_iterate_keeps_slab_invariant(torsion_ref):
    # random members (scaled copies clamped under the gradient cap) must
    # map back into the slab with nonnegative margins
    u0, _ = torsion_ref(p=2.0, alpha=0.25, n=255)
    g = u0.grid
    cfg = CoreConfig()
    cp_raw = calibrate_gradient_constant(g, 2.0, 3.0, 3, cfg, 42)
    env = envelope_constant(cp_raw, u0, 2.0, 0.25, 3.0)
    inp = ConstantsInput(
        p=2.0, alpha=0.25, a=0.05, b=0.05, r1=2.0, r2=2.0,
        u0_sup=sup_norm(u0), q=3.0, cp_hat=env,
    )
    star, _ = lambda_bound_with_gradient(inp)
    lam = 0.5 * star
    cap = select_amplitude(lam, inp, env)
    aset = AdmissibleSet(u0, lam, cap)
    spec = ProblemSpec(2.0, 0.25, lam, ConvectionSpec(0.05, 0.05, 2.0, 2.0))
    c_top = min(cap, cap / gradient(u0).sup() * (1.0 - 1e-12))
    rng = np.random.default_rng(42)
    scale = max(1.0, cap * sup_norm(u0))
    for _ in range(50):
        c = min(lam + rng.uniform() * (cap - lam), c_top)
        member, _ = check_membership(Field(g, c * u0.values), aset)
        assert member
        image, _ = solution_map(spec, Field(g, c * u0.values), aset, cfg)
        ok, margins = check_membership(image, aset)
        assert ok
        assert min(margins.values()) >= -1e-8 * scale


def test_select_amplitude_midpoint_and_infeasible(torsion_ref):
    u0, _ = torsion_ref(n=255)
    inp = ConstantsInput(
        p=2.0, alpha=0.5, a=1.0, b=1.0, r1=3.0, r2=3.0, u0_sup=sup_norm(u0)
    )
    lam = 1.0 / 32.0
    m_lo, m_hi = m_window(lam, inp)
    assert select_amplitude(lam, inp) == 0.5 * (m_lo + m_hi)
    with pytest.raises(ValueError):
        select_amplitude(lam, inp, envelope=1e9)


def test_sweep_empty_list():
    g = build_grid(1, [0.0, 1.0], 127)
    rows, u0 = lambda_sweep(g, 2.0, 0.5, None, [], CoreConfig(), EpsSchedule())
    assert rows == []
    assert u0 is None


def test_sweep_rows_and_csv(tmp_path):
    g = build_grid(1, [0.0, 1.0], 127)
    rows, u0 = lambda_sweep(g, 2.0, 0.5, None, [0.1, 0.01], CoreConfig(), EpsSchedule())
    assert u0 is not None
    assert [r.lam for r in rows] == [0.1, 0.01]
    assert all(r.error == "" for r in rows)
    assert rows[0].sup_u > rows[1].sup_u
    assert rows[0].sup_grad > rows[1].sup_grad
    assert all(r.in_set for r in rows)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "lambda,sup_u,sup_grad,iterations,in_set,residual_sup"
    assert len(lines) == 3


def test_sweep_records_per_row_errors():
    # lambda above the admissibility threshold cannot seed a slab; the row
    # carries the error and the others still complete
    g = build_grid(1, [0.0, 1.0], 127)
    rows, _ = lambda_sweep(g, 2.0, 0.5, None, [0.5, 0.01], CoreConfig(), EpsSchedule())
    assert rows[0].error != ""
    assert rows[1].error == ""
    assert rows[1].sup_u > 0.0
