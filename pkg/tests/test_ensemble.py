"""Ensemble statistics: means, fluctuations, mixing length, viscosity draws."""

import numpy as np
import pytest

from eevflow.ensemble import (
    EnsembleState,
    ViscosityEnsemble,
    ensemble_mean,
    fluctuation,
    fluctuations,
    mixing_length,
    sample_uniform_viscosity,
)
from eevflow.fem import AssemblyTables, TaylorHoodSpace
from eevflow.mesh import unit_square_mesh
from eevflow.scheme import BDF2_EEV, BE_EEV

rng = np.random.default_rng(3)


@pytest.fixture(scope="module")
def space():
    return TaylorHoodSpace(unit_square_mesh(2))


@pytest.fixture(scope="module")
def tables(space):
    return AssemblyTables(space)


def state_from(space, blocks):
    """blocks: list of (J, n_u), newest first."""
    return EnsembleState(space, [np.asarray(b, dtype=float) for b in blocks], np.zeros((blocks[0].shape[0], space.n_p)))


class TestMeanAndFluctuation:
    def test_identical_realizations(self, space):
        v = rng.standard_normal(space.n_u)
        st = state_from(space, [np.tile(v, (4, 1))])
        np.testing.assert_allclose(ensemble_mean(st, BE_EEV), v, atol=1e-15)
        np.testing.assert_allclose(fluctuations(st, BE_EEV), 0.0, atol=1e-15)

    def test_opposite_pair(self, space):
        v = rng.standard_normal(space.n_u)
        st = state_from(space, [np.stack([v, -v])])
        np.testing.assert_allclose(ensemble_mean(st, BE_EEV), 0.0, atol=1e-15)

    def test_mean_matches_elementwise_average(self, space):
        u = rng.standard_normal((3, space.n_u))
        st = state_from(space, [u])
        expect = (u[0] + u[1] + u[2]) / 3.0
        np.testing.assert_allclose(ensemble_mean(st, BE_EEV), expect, rtol=1e-14)

    def test_fluctuations_sum_to_zero(self, space):
        for desc, depth in ((BE_EEV, 1), (BDF2_EEV, 2)):
            u = [rng.standard_normal((5, space.n_u)) for _ in range(depth)]
            st = state_from(space, u)
            np.testing.assert_allclose(fluctuations(st, desc).sum(axis=0), 0.0, atol=1e-12)

    def test_bdf2_collapses_to_be_for_constant_history(self, space):
        u = rng.standard_normal((4, space.n_u))
        st2 = state_from(space, [u, u.copy()])
        st1 = state_from(space, [u])
        np.testing.assert_allclose(
            fluctuation(st2, 2, BDF2_EEV), fluctuation(st1, 2, BE_EEV), atol=1e-14
        )

    def test_missing_history_rejected(self, space):
        st = state_from(space, [rng.standard_normal((2, space.n_u))])
        with pytest.raises(RuntimeError):
            ensemble_mean(st, BDF2_EEV)

    def test_empty_ensemble_rejected(self, space):
        st = state_from(space, [np.zeros((0, space.n_u))])
        with pytest.raises(RuntimeError):
            ensemble_mean(st, BE_EEV)


class TestMixingLength:
    def test_zero_fluctuations(self, space, tables):
        v = rng.standard_normal(space.n_u)
        st = state_from(space, [np.tile(v, (6, 1))])
        ml = mixing_length(st, BE_EEV, tables, mu=1.0, dt=0.1)
        np.testing.assert_allclose(ml.l, 0.0, atol=1e-13)
        np.testing.assert_allclose(ml.nu_t, 0.0, atol=1e-13)

    def test_constant_opposite_pair(self, space, tables):
        # fluctuations are exactly +-(1, 0): l = sqrt(2), nu_T = 2 mu dt
        base = np.zeros(space.n_u)
        up = base.copy()
        up[0::2] = 2.0  # realization mean is (1,0); fluctuations +-(1,0)
        st = state_from(space, [np.stack([up, base])])
        mu, dt = 0.7, 0.05
        ml = mixing_length(st, BE_EEV, tables, mu=mu, dt=dt)
        np.testing.assert_allclose(ml.l, np.sqrt(2.0), rtol=1e-14)
        np.testing.assert_allclose(ml.nu_t, 2.0 * mu * dt, rtol=1e-14)

    def test_matches_pointwise_recomputation(self, space, tables):
        u = rng.standard_normal((4, space.n_u))
        st = state_from(space, [u])
        ml = mixing_length(st, BE_EEV, tables, mu=1.3, dt=0.2)
        fl = fluctuations(st, BE_EEV)
        # independent pointwise oracle: evaluate each fluctuation via shape
        # functions one cell and point at a time
        from eevflow.fem import ReferenceElement

        q2 = ReferenceElement("q2_vector")
        vals, _ = q2.eval(tables.rule.points)
        for c in (0, 3):
            for q in (0, 4, 8):
                acc = 0.0
                for j in range(4):
                    coef = fl[j][space.cell_vdofs[c]].reshape(9, 2)
                    pt = vals[q] @ coef
                    acc += pt @ pt
                assert ml.l[c, q] == pytest.approx(np.sqrt(acc), rel=1e-12)
                assert ml.nu_t[c, q] == pytest.approx(1.3 * 0.2 * acc, rel=1e-12)

    def test_permutation_invariance(self, space, tables):
        u = rng.standard_normal((5, space.n_u))
        st = state_from(space, [u])
        ml1 = mixing_length(st, BE_EEV, tables, 1.0, 0.1)
        perm = rng.permutation(5)
        ml2 = mixing_length(state_from(space, [u[perm]]), BE_EEV, tables, 1.0, 0.1)
        np.testing.assert_allclose(ml1.l, ml2.l, rtol=1e-13)

    def test_definitional_identity(self, space, tables):
        u = rng.standard_normal((3, space.n_u))
        st = state_from(space, [u])
        ml = mixing_length(st, BE_EEV, tables, mu=2.0, dt=0.25)
        np.testing.assert_array_equal(ml.nu_t, 2.0 * 0.25 * ml.l**2)


class TestViscosityEnsemble:
    def test_zero_spread_degenerates(self):
        v = sample_uniform_viscosity(1e-3, 0.0, 8, seed=1)
        np.testing.assert_allclose(v.nu_const, 1e-3, rtol=1e-15)
        np.testing.assert_allclose(v.nu_prime_const, 0.0, atol=1e-18)
        np.testing.assert_allclose(v.alpha, 1e-3, rtol=1e-12)

    def test_draws_within_band(self):
        v = sample_uniform_viscosity(1e-4, 0.1, 50, seed=42)
        assert np.all(v.nu_const >= 0.9e-4) and np.all(v.nu_const <= 1.1e-4)

    def test_sample_mean_law_of_large_numbers(self):
        e, spread, J = 1e-3, 0.1, 200
        v = sample_uniform_viscosity(e, spread, J, seed=7)
        tol = 3.0 * spread * e / np.sqrt(3.0 * J)
        assert abs(v.nu_const.mean() - e) <= tol

    def test_fluctuations_sum_to_zero(self):
        v = sample_uniform_viscosity(2e-4, 0.1, 11, seed=3)
        assert abs(v.nu_prime_const.sum()) <= 1e-14 * v.nu_bar_const * 11

    def test_cached_mean_consistent(self):
        v = sample_uniform_viscosity(5e-4, 0.1, 9, seed=5)
        assert v.nu_bar_const == pytest.approx(v.nu_const.mean(), rel=1e-15)
        assert v.nu_bar_min == pytest.approx(v.nu_const.mean(), rel=1e-15)

    def test_alpha_bounded_by_mean(self):
        v = sample_uniform_viscosity(1e-3, 0.2, 12, seed=9)
        assert np.all(v.alpha <= v.nu_bar_min + 1e-18)
        assert np.all(v.alpha_tilde <= v.alpha + 1e-18)

    def test_spread_one_rejected(self):
        with pytest.raises(ValueError):
            sample_uniform_viscosity(1e-3, 1.0, 4, seed=0)

    def test_spatial_fields(self):
        pts = rng.uniform(0, 1, size=(40, 2))
        fields = [lambda x: 1e-3 + 1e-4 * x[:, 0], lambda x: 1e-3 - 1e-4 * x[:, 0]]
        v = ViscosityEnsemble(fields, stat_points=pts)
        assert not v.is_constant
        vals = v.at_points(pts)
        np.testing.assert_allclose(vals.mean(axis=0), 1e-3, rtol=1e-14)
        np.testing.assert_allclose(v.prime_at(pts).sum(axis=0), 0.0, atol=1e-18)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            ViscosityEnsemble(np.array([1e-3, -1e-5]))
