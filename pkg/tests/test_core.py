"""Energy, operator action, Dirichlet solves, and the first eigenpair."""

import math

import numpy as np
import pytest

from plaplab.core import (
    CoreConfig,
    apply_p_laplacian,
    discrete_energy,
    rayleigh_quotient,
    solve_dirichlet,
    solve_eigenpair,
)
from plaplab.grids import (
    Field,
    build_grid,
    constant_field,
    field_from_function,
    sup_norm,
    zero_field,
)


def test_config_validation():
    with pytest.raises(ValueError):
        CoreConfig(tol=1e-15)
    with pytest.raises(ValueError):
        CoreConfig(tol=0.5)
    with pytest.raises(ValueError):
        CoreConfig(max_iter=0)
    with pytest.raises(ValueError):
        CoreConfig(armijo=0.5)
    with pytest.raises(ValueError):
        CoreConfig(delta_reg=-1e-3)


def test_energy_zero_field():
    g = build_grid(1, [0.0, 1.0], 63)
    rng = np.random.default_rng(42)
    load = Field(g, rng.normal(size=g.shape))
    assert discrete_energy(zero_field(g), load, 2.0, 0.0) == 0.0


def test_energy_pure_regularization():
    g = build_grid(1, [0.0, 1.0], 63)
    load = zero_field(g)
    for p in (1.5, 2.0, 3.0):
        delta = 1e-4
        expect = delta ** (p / 2.0) / p
        got = discrete_energy(zero_field(g), load, p, delta)
        assert math.isclose(got, expect, rel_tol=1e-12)


def test_energy_of_linear_torsion_profile():
    g = build_grid(1, [0.0, 1.0], 511)
    u = field_from_function(g, lambda x: x * (1.0 - x) / 2.0)
    e = discrete_energy(u, constant_field(g, 1.0), 2.0, 0.0)
    assert abs(e - (-1.0 / 24.0)) <= 1e-4


def test_apply_zero_field():
    g = build_grid(1, [0.0, 1.0], 31)
    assert sup_norm(apply_p_laplacian(zero_field(g), 3.0)) == 0.0


def test_apply_is_homogeneous():
    rng = np.random.default_rng(42)
    g = build_grid(1, [0.0, 1.0], 63)
    for p in (1.5, 2.0, 3.0, 4.0):
        for c in (0.5, 3.0, 10.0):
            vals = np.where(g.boundary_mask, 0.0, rng.normal(size=g.shape))
            base = apply_p_laplacian(Field(g, vals), p).values
            scaled = apply_p_laplacian(Field(g, c * vals), p).values
            target = c ** (p - 1.0) * base
            assert np.max(np.abs(scaled - target)) <= 1e-12 * np.max(np.abs(target))


def test_apply_recovers_cubic_load():
    # exact load for u = (2/3)(1 - |x|^{3/2}) under the p=3 operator is 1
    g = build_grid(1, [-1.0, 1.0], 1023)
    u = field_from_function(g, lambda x: (2.0 / 3.0) * (1.0 - np.abs(x) ** 1.5))
    out = apply_p_laplacian(u, 3.0)
    x = g.axes[0]
    away = g.interior_mask & (np.abs(x) > 0.1)
    assert np.max(np.abs(out.values[away] - 1.0)) <= 5e-3


def test_operator_is_energy_gradient():
    rng = np.random.default_rng(42)
    g = build_grid(1, [0.0, 1.0], 63)
    delta = 1e-8
    step = 1e-6
    for p in (1.5, 2.0, 3.0, 4.0):
        for _ in range(25):
            vals = np.where(g.boundary_mask, 0.0, rng.normal(size=g.shape))
            direction = np.where(g.boundary_mask, 0.0, rng.normal(size=g.shape))
            load = Field(g, rng.normal(size=g.shape))
            e_plus = discrete_energy(Field(g, vals + step * direction), load, p, delta)
            e_minus = discrete_energy(Field(g, vals - step * direction), load, p, delta)
            fd = (e_plus - e_minus) / (2.0 * step)
            op = apply_p_laplacian(Field(g, vals), p, delta)
            pairing = float(np.sum(g.node_weights * (op.values - load.values) * direction))
            assert abs(fd - pairing) <= 1e-6 * max(1.0, abs(fd))


def test_solve_zero_load():
    g = build_grid(1, [0.0, 1.0], 63)
    u, rep = solve_dirichlet(zero_field(g), 2.5)
    assert rep.converged
    assert sup_norm(u) == 0.0


def test_solve_linear_torsion_midpoint():
    g = build_grid(1, [0.0, 1.0], 1023)
    u, rep = solve_dirichlet(constant_field(g, 1.0), 2.0)
    assert rep.converged
    mid = g.n[0] // 2 + 1
    assert g.axes[0][mid] == 0.5
    assert abs(u.values[mid] - 0.125) <= 1e-5


def test_solve_cubic_center_value():
    g = build_grid(1, [-1.0, 1.0], 1023)
    u, rep = solve_dirichlet(constant_field(g, 1.0), 3.0)
    assert rep.converged
    center = (g.n[0] + 1) // 2
    assert g.axes[0][center] == 0.0
    assert abs(u.values[center] - 2.0 / 3.0) <= 1e-3


def test_solve_monotone_in_load_linear_case():
    rng = np.random.default_rng(42)
    g = build_grid(1, [0.0, 1.0], 127)
    for _ in range(20):
        top = rng.uniform(0.5, 1.5, size=g.shape)
        bottom = top - rng.uniform(0.0, 0.5, size=g.shape)
        u_top, _ = solve_dirichlet(Field(g, top), 2.0)
        u_bottom, _ = solve_dirichlet(Field(g, bottom), 2.0)
        assert np.min(u_top.values - u_bottom.values) >= -1e-10


def test_solve_limit_is_init_independent():
    g = build_grid(1, [0.0, 1.0], 127)
    cfg = CoreConfig()
    load = constant_field(g, 1.0)
    u_a, _ = solve_dirichlet(load, 3.0, cfg)
    u_b, _ = solve_dirichlet(load, 3.0, cfg, init=Field(g, 2.0 * u_a.values))
    assert np.max(np.abs(u_a.values - u_b.values)) <= 10.0 * cfg.tol


def test_solve_positivity():
    rng = np.random.default_rng(42)
    g = build_grid(1, [0.0, 1.0], 127)
    bump = np.zeros(g.shape)
    bump[10] = 1.0
    loads = [Field(g, bump)]
    loads.append(Field(g, np.where(g.boundary_mask, 0.0, rng.uniform(0.0, 1.0, g.shape))))
    for load in loads:
        for p in (2.0, 3.0):
            u, rep = solve_dirichlet(load, p)
            assert rep.converged
            assert np.min(u.values[g.interior_mask]) > 0.0


def test_solve_report_serializes():
    g = build_grid(1, [0.0, 1.0], 63)
    _, rep = solve_dirichlet(constant_field(g, 1.0), 2.0)
    d = rep.to_json_dict()
    assert d["converged"] is True
    assert d["final_residual_sup"] >= 0.0
    assert d["iterations"] >= 1


def test_rayleigh_rejects_zero_field():
    g = build_grid(1, [0.0, 1.0], 31)
    with pytest.raises(ValueError):
        rayleigh_quotient(zero_field(g), 2.0)


def test_eigenpair_interval(eigen_ref):
    pair = eigen_ref(dim=1, n=511, p=2.0)
    assert abs(pair.lambda1 - math.pi**2) <= 0.005 * math.pi**2
    g = pair.phi1.grid
    assert sup_norm(pair.phi1) == 1.0
    assert np.min(pair.phi1.values[g.interior_mask]) > 0.0
    exact = np.sin(math.pi * g.axes[0])
    assert np.max(np.abs(pair.phi1.values - exact)) <= 1e-2
    rq = rayleigh_quotient(pair.phi1, 2.0)
    assert abs(rq - pair.lambda1) <= 1e-6 * pair.lambda1


def test_eigenvalue_domain_scaling(eigen_ref):
    base = eigen_ref(dim=1, n=511, p=2.0)
    wide = eigen_ref(dim=1, n=511, p=2.0, hi=2.0)
    ratio = wide.lambda1 / base.lambda1
    assert abs(ratio - 0.25) <= 0.01 * 0.25
