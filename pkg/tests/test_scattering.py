import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from oscinet.scattering import (
    FourierField,
    Mesh1D,
    MeshError,
    PhysicalValidityError,
    ScatteringProblem,
    assemble_nystrom,
    default_mesh_elements,
    eval_field,
    greens_function,
    nonlinear_map_eval,
    sample_fourier_field,
    slab_analytic,
    solve_scattering,
)


def const(a0):
    return lambda x: np.full_like(np.asarray(x, dtype=float), a0)


class TestFourierField:
    def test_deterministic(self):
        f1 = sample_fourier_field(10, 0.1, np.random.default_rng(4))
        f2 = sample_fourier_field(10, 0.1, np.random.default_rng(4))
        x = np.linspace(-1, 1, 33)
        np.testing.assert_array_equal(f1(x), f2(x))

    def test_coefficient_bounds_and_mean(self):
        rng = np.random.default_rng(0)
        draws = np.concatenate([np.r_[f.b, f.c_coef] for f in (sample_fourier_field(49, 1.0, rng) for _ in range(1011))])
        assert draws.size >= 1e5
        assert draws.min() >= -1 and draws.max() <= 1
        assert abs(draws.mean()) <= 3 * math.sqrt(1 / 3) / math.sqrt(draws.size)

    def test_constant(self):
        f = FourierField(np.array([1.0, 0, 0]), np.zeros(2), 0.5)
        np.testing.assert_array_equal(eval_field(f, np.linspace(-1, 1, 5)), 0.5)

    def test_single_sine(self):
        f = FourierField(np.array([0.0, 1.0]), np.zeros(1), 1.0)
        assert eval_field(f, 0.5) == pytest.approx(1.0)

    def test_value_at_origin(self):
        f = sample_fourier_field(12, 0.3, np.random.default_rng(1))
        assert eval_field(f, 0.0) == pytest.approx(0.3 * (f.b[0] + f.c_coef.sum()), rel=1e-14)


class TestNonlinearMap:
    def test_zero_input(self, rng):
        A, B = rng.uniform(-1, 1, 51), rng.uniform(-1, 1, 51)
        np.testing.assert_allclose(nonlinear_map_eval(50, A, B, np.zeros(7)), B.sum(), rtol=1e-14)

    def test_single_term(self):
        assert nonlinear_map_eval(1, [0, 1], [0, 0], [math.pi / 2])[0] == pytest.approx(1.0)

    def test_extended_precision(self, rng):
        A, B = rng.uniform(-1, 1, 51), rng.uniform(-1, 1, 51)
        a = sample_fourier_field(50, 0.1, rng)(np.linspace(-1, 1, 400))
        got = nonlinear_map_eval(50, A, B, a)
        n = np.arange(51, dtype=np.longdouble)
        arg = np.multiply.outer(a.astype(np.longdouble), n)
        ref = (np.sin(arg) * A.astype(np.longdouble) + np.cos(arg) * B.astype(np.longdouble)).sum(axis=1)
        scale = (np.abs(A) + np.abs(B)).sum()
        assert np.max(np.abs(got - ref.astype(float))) / scale <= 1e-13

    def test_length_check(self):
        with pytest.raises(ValueError):
            nonlinear_map_eval(3, [0, 1], [0, 1], [0.0])


class TestGreens:
    def test_coincident(self):
        assert greens_function(50, 0.3, 0.3) == pytest.approx(0.01j)

    def test_half_period(self):
        assert greens_function(1, 0.0, math.pi) == pytest.approx(-0.5j, abs=1e-15)

    def test_modulus(self, rng):
        for k in rng.uniform(0.5, 100, 20):
            g = greens_function(k, rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20))
            np.testing.assert_allclose(np.abs(g), 1 / (2 * k), rtol=1e-14)


class TestMesh:
    def test_uniform(self):
        m = Mesh1D.uniform(4)
        np.testing.assert_allclose(m.nodes, [-1, -0.5, 0, 0.5, 1])
        assert m.n_elements == 4

    @pytest.mark.parametrize("nodes", [[-1, 0, 0, 1], [-1, 0.5, 0.2, 1], [-0.9, 1], [-1]])
    def test_invalid(self, nodes):
        with pytest.raises(MeshError):
            Mesh1D(np.array(nodes, dtype=float))

    def test_default_resolution(self):
        assert default_mesh_elements(10) == 400
        assert default_mesh_elements(100) == math.ceil(2000 / math.pi)


class TestAssembly:
    def test_zero_medium_exact(self):
        p = ScatteringProblem(20.0, const(0.0), Mesh1D.uniform(50))
        mat, rhs = assemble_nystrom(p)
        assert np.array_equal(mat, np.eye(51))
        assert not rhs.any()
        assert not solve_scattering(p).nodal.any()

    def test_single_element_hand_quadrature(self):
        k, a0 = 3.0, 0.7
        mat, rhs = assemble_nystrom(ScatteringProblem(k, const(a0), Mesh1D.uniform(1)))
        # element [-1, 1]: Jacobian 1, Gauss points +-1/sqrt(3), left hat (1 - xi)/2
        xi = np.array([-1, 1]) / math.sqrt(3)
        G = 0.5j / k * np.exp(1j * k * np.abs(-1 - xi))
        entry = 1 - k ** 2 * a0 * np.sum(G * (1 - xi) / 2)
        assert mat[0, 0] == pytest.approx(entry, rel=1e-14)
        b0 = np.sum(G * k ** 2 * a0 * np.exp(1j * k * xi))
        assert rhs[0] == pytest.approx(b0, rel=1e-14)

    def test_linear_in_medium(self):
        mesh = Mesh1D.uniform(20)
        m1, r1 = assemble_nystrom(ScatteringProblem(7.0, const(0.3), mesh))
        m2, r2 = assemble_nystrom(ScatteringProblem(7.0, const(0.6), mesh))
        off = ~np.eye(21, dtype=bool)
        np.testing.assert_allclose(m2[off], 2 * m1[off], rtol=1e-14)
        np.testing.assert_allclose(r2, 2 * r1, rtol=1e-14)

    def test_medium_ignored_outside_domain(self):
        mesh = Mesh1D.uniform(10)
        inside = ScatteringProblem(5.0, lambda x: np.where(np.abs(x) <= 1, 0.4, 99.0), mesh)
        m1, _ = assemble_nystrom(inside)
        m2, _ = assemble_nystrom(ScatteringProblem(5.0, const(0.4), mesh))
        np.testing.assert_array_equal(m1, m2)


def shooting_slab(k, a0):
    """Integrate u'' = -k^2 (1 + a0) u from x=1 back to x=-1 with a unit transmitted wave."""
    kappa2 = k * k * (1 + a0)

    def rhs(x, y):
        return [y[1], -kappa2 * y[0]]

    y1 = [np.exp(1j * k), 1j * k * np.exp(1j * k)]
    sol = solve_ivp(rhs, (1.0, -1.0), np.array(y1, dtype=complex), method="DOP853", rtol=1e-13, atol=1e-15)
    u, du = sol.y[:, -1]
    # u = I e^{ikx} + R e^{-ikx} at x = -1
    inc = 0.5 * (u + du / (1j * k)) * np.exp(1j * k)
    ref = 0.5 * (u - du / (1j * k)) * np.exp(-1j * k)
    return ref / inc, 1 / inc


class TestSlab:
    def test_homogeneous(self):
        s = slab_analytic(10.0, 0.0)
        assert abs(s.R) < 1e-14 and abs(s.T - 1) < 1e-14
        assert np.max(np.abs(s.scattered(np.linspace(-2, 2, 50)))) < 1e-13

    def test_ode_shooting_oracle(self):
        s = slab_analytic(5.0, 3.0)
        R, T = shooting_slab(5.0, 3.0)
        assert abs(s.R - R) <= 1e-8 and abs(s.T - T) <= 1e-8

    def test_invalid_medium(self):
        with pytest.raises(PhysicalValidityError):
            slab_analytic(5.0, -1.0)

    def test_field_continuity(self):
        s = slab_analytic(8.0, 1.5)
        e = 1e-9
        for x0 in (-1.0, 1.0):
            assert abs(s.total(x0 - e) - s.total(x0 + e)) < 1e-6

    def test_nystrom_against_slab(self):
        p = ScatteringProblem(10.0, const(0.5), Mesh1D.uniform(400))
        sol = solve_scattering(p)
        exact = slab_analytic(10.0, 0.5).scattered(p.mesh.nodes)
        assert np.linalg.norm(sol.nodal - exact) / np.linalg.norm(exact) < 5e-3

    def test_interpolant_reproduces_nodes(self):
        p = ScatteringProblem(10.0, const(0.5), Mesh1D.uniform(200))
        sol = solve_scattering(p)
        np.testing.assert_allclose(sol.at(p.mesh.nodes), sol.nodal, rtol=1e-10, atol=1e-12)
        x = np.linspace(-1, 1, 77)
        exact = slab_analytic(10.0, 0.5).scattered(x)
        assert np.linalg.norm(sol.at(x) - exact) / np.linalg.norm(exact) < 2e-2


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.1, 200), a0=st.floats(-0.95, 20))
def test_slab_energy_conservation(k, a0):
    s = slab_analytic(k, a0)
    assert abs(abs(s.R) ** 2 + abs(s.T) ** 2 - 1) <= 1e-12
