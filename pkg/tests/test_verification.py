"""Manufactured fields, forcing oracle, error norms, energy, divergence."""

import numpy as np
import pytest

from eevflow.fem import AssemblyTables, TaylorHoodSpace, interpolate_velocity
from eevflow.mesh import refine, unit_square_mesh
from eevflow.verification import (
    ManufacturedSolution,
    VectorField,
    divergence_norm,
    error_norm_2_1,
    kinetic_energy,
    manufactured_forcing,
    mean_error_at,
)

rng = np.random.default_rng(31)
MS = ManufacturedSolution


class TestManufacturedSolution:
    def test_divergence_free_pointwise(self):
        x = rng.uniform(0, 1, size=(500, 2))
        for t in (0.0, 0.37, 1.0):
            assert np.abs(MS.divergence(x, t)).max() < 1e-13

    def test_laplacian_identity(self):
        # the chosen trig fields satisfy Delta u = -u
        x = rng.uniform(0, 1, size=(50, 2))
        h = 1e-4
        for t in (0.0, 0.5):
            lap = np.zeros((50, 2))
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                lap += (MS.velocity(x + e, t) - 2 * MS.velocity(x, t) + MS.velocity(x - e, t)) / h**2
            np.testing.assert_allclose(lap, MS.velocity_laplacian(x, t), atol=1e-6)

    def test_gradient_against_fd(self):
        x = rng.uniform(0.1, 0.9, size=(30, 2))
        t = 0.4
        h = 1e-6
        g = MS.velocity_grad(x, t)
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (MS.velocity(x + e, t) - MS.velocity(x - e, t)) / (2 * h)
            np.testing.assert_allclose(g[:, :, d], fd, atol=1e-8)


class TestManufacturedForcing:
    def test_strong_form_residual_fd(self):
        # independent oracle: rebuild f from finite differences of (u, p)
        k, eps, nu = 0.4, 1e-2, 1e-3
        a = 1 + k * eps
        x = rng.uniform(0.2, 0.8, size=(20, 2))
        t = 0.3
        h = 1e-4
        f = manufactured_forcing(k, eps, nu, x, t)

        def u_j(xx, tt):
            return a * MS.velocity(xx, tt)

        dudt = (u_j(x, t + h) - u_j(x, t - h)) / (2 * h)
        grad = np.zeros((20, 2, 2))
        lap = np.zeros((20, 2))
        gradp = np.zeros((20, 2))
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            grad[:, :, d] = (u_j(x + e, t) - u_j(x - e, t)) / (2 * h)
            lap += (u_j(x + e, t) - 2 * u_j(x, t) + u_j(x - e, t)) / h**2
            gradp[:, d] = a * (MS.pressure(x + e, t) - MS.pressure(x - e, t)) / (2 * h)
        conv = np.einsum("mk,mik->mi", u_j(x, t), grad)
        fd = dudt + conv - nu * lap + gradp
        assert np.abs(f - fd).max() <= 1e-5

    def test_unperturbed_when_k_zero(self):
        x = rng.uniform(0, 1, size=(10, 2))
        np.testing.assert_array_equal(
            manufactured_forcing(0.0, 0.5, 1e-4, x, 0.2), manufactured_forcing(0.0, 0.0, 1e-4, x, 0.2)
        )

    def test_scaling_decomposition(self):
        # f = a * (linear-in-u part) + a^2 * (convection part)
        x = rng.uniform(0, 1, size=(25, 2))
        t, nu, eps = 0.6, 1e-3, 1e-2
        u = MS.velocity(x, t)
        lin = MS.velocity_t(x, t) + MS.pressure_grad(x, t) + nu * u
        conv = np.einsum("mk,mik->mi", u, MS.velocity_grad(x, t))
        for k in (0.0, 0.5, -1.5, 2.0):
            a = 1 + k * eps
            expect = a * lin + a * a * conv
            np.testing.assert_allclose(manufactured_forcing(k, eps, nu, x, t), expect, rtol=1e-13)


class TestErrorNorm:
    @pytest.fixture(scope="class")
    def tables(self):
        return AssemblyTables(TaylorHoodSpace(unit_square_mesh(4)))

    def test_exact_trajectory_is_zero(self, tables):
        space = tables.space
        dt = 0.1
        field = VectorField(MS.velocity, MS.velocity_grad)
        means = [interpolate_velocity(space, MS.velocity, n * dt) for n in (1, 2, 3)]
        err = error_norm_2_1(means, field, tables, dt)
        # interpolant only: small but nonzero (spatial interpolation error)
        assert err < 1e-2
        exact_at_nodes = error_norm_2_1(means, field, tables, dt, seminorm=False)
        assert exact_at_nodes == err

    def test_zero_error_for_matching_field(self, tables):
        space = tables.space
        dt = 0.25

        def lin(x, t):
            return np.stack([x[:, 0] + t, -x[:, 1]], axis=-1)

        def lin_grad(x, t):
            g = np.zeros((x.shape[0], 2, 2))
            g[:, 0, 0] = 1.0
            g[:, 1, 1] = -1.0
            return g

        means = [interpolate_velocity(space, lin, n * dt) for n in (1, 2)]
        err = error_norm_2_1(means, VectorField(lin, lin_grad), tables, dt)
        assert err == pytest.approx(0.0, abs=1e-13)

    def test_constant_offset_contribution(self, tables):
        # adding (c, 0) to every step contributes sqrt(dt*M)*c*sqrt(area)
        space = tables.space
        dt, M, c = 0.125, 5, 0.3

        def zero(x, t):
            return np.zeros((x.shape[0], 2))

        def zero_grad(x, t):
            return np.zeros((x.shape[0], 2, 2))

        off = np.zeros(space.n_u)
        off[0::2] = c
        means = [off.copy() for _ in range(M)]
        err = error_norm_2_1(means, VectorField(zero, zero_grad), tables, dt)
        assert err == pytest.approx(np.sqrt(dt * M) * c, rel=1e-12)

    def test_seminorm_flag_drops_l2_part(self, tables):
        space = tables.space
        off = np.zeros(space.n_u)
        off[0::2] = 1.0  # constant field: zero gradient

        def zero(x, t):
            return np.zeros((x.shape[0], 2))

        def zero_grad(x, t):
            return np.zeros((x.shape[0], 2, 2))

        field = VectorField(zero, zero_grad)
        assert error_norm_2_1([off], field, tables, 0.5, seminorm=True) == pytest.approx(0.0, abs=1e-13)
        assert error_norm_2_1([off], field, tables, 0.5, seminorm=False) > 0.5

    def test_triangle_inequality_spot_check(self, tables):
        space = tables.space

        def zero(x, t):
            return np.zeros((x.shape[0], 2))

        def zero_grad(x, t):
            return np.zeros((x.shape[0], 2, 2))

        field = VectorField(zero, zero_grad)
        for seed in range(3):
            r = np.random.default_rng(seed)
            a = [r.standard_normal(space.n_u) for _ in range(3)]
            b = [r.standard_normal(space.n_u) for _ in range(3)]
            ab = [x + y for x, y in zip(a, b)]
            na = error_norm_2_1(a, field, tables, 0.1)
            nb = error_norm_2_1(b, field, tables, 0.1)
            nab = error_norm_2_1(ab, field, tables, 0.1)
            assert nab <= na + nb + 1e-12


class TestEnergyAndDivergence:
    @pytest.fixture(scope="class")
    def tables(self):
        return AssemblyTables(TaylorHoodSpace(unit_square_mesh(4)))

    def test_zero_field(self, tables):
        assert kinetic_energy(tables, np.zeros(tables.space.n_u)) == 0.0

    def test_unit_field(self, tables):
        u = np.zeros(tables.space.n_u)
        u[0::2] = 1.0
        assert kinetic_energy(tables, u) == pytest.approx(0.5, rel=1e-13)

    def test_manufactured_energy_frozen_value(self, tables):
        # 1/2 int (cos x2 + 2 sin x2)^2 + (sin x1 + 2 cos x1)^2 over [0,1]^2
        # = 1 + 3/2 cos(1)^2 + 7/2 sin(1)^2, via symbolic integration
        u = interpolate_velocity(tables.space, MS.velocity, 0.0)
        expected = 1.0 + 1.5 * np.cos(1.0) ** 2 + 3.5 * np.sin(1.0) ** 2
        assert expected == pytest.approx(3.9161468365471426, rel=1e-15)
        assert kinetic_energy(tables, u) == pytest.approx(expected, rel=1e-6)

    def test_divergence_of_constant(self, tables):
        u = np.zeros(tables.space.n_u)
        u[0::2] = 2.0
        u[1::2] = -1.0
        assert divergence_norm(tables, u) == pytest.approx(0.0, abs=1e-13)

    def test_divergence_of_linear_solenoidal(self, tables):
        u = interpolate_velocity(tables.space, lambda x, t: np.stack([x[:, 0], -x[:, 1]], -1))
        assert divergence_norm(tables, u) == pytest.approx(0.0, abs=2e-13)

    def test_manufactured_interpolant_divergence_negligible(self):
        # each component of the reference field depends on a single
        # coordinate, so its tensor-product interpolant is exactly
        # solenoidal; the divergence norm is pure roundoff
        tables = AssemblyTables(TaylorHoodSpace(unit_square_mesh(4)))
        u = interpolate_velocity(tables.space, MS.velocity, 0.0)
        assert divergence_norm(tables, u) < 1e-13

    def test_divergence_of_interpolant_order_h2(self):
        # generic solenoidal field (curl of a stream function): the Q2
        # interpolant's divergence decreases at O(h^2) under refinement
        def curl_field(x, t=0.0):
            return np.stack(
                [
                    np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
                    -np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                ],
                axis=-1,
            )

        errs = []
        mesh = unit_square_mesh(2)
        for _ in range(3):
            tables = AssemblyTables(TaylorHoodSpace(mesh))
            u = interpolate_velocity(tables.space, curl_field)
            errs.append(divergence_norm(tables, u))
            mesh = refine(mesh)
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert errs[0] > 1e-3  # small but clearly nonzero
        assert np.all(rates > 1.7)
