import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenparity.data import ReturnsPanel
from eigenparity.estimators import (
    CorrelationModel,
    EstimationError,
    QModel,
    RIEConfig,
    empirical_correlation,
    materialize_q,
    rie_clean,
    rie_eigenvalues,
    shrink_correlation,
)
from eigenparity.matlib import sym_eigen


def _panel(x):
    dates = np.datetime64("2020-01-01") + np.arange(x.shape[0])
    return ReturnsPanel(dates, [f"A{i}" for i in range(x.shape[1])], x)


def _spiked(n, top):
    """Equicorrelation matrix whose top eigenvalue is ``top``."""
    rho = (top - 1) / (n - 1)
    return (1 - rho) * np.eye(n) + rho * np.ones((n, n))


class TestEmpirical:
    def test_perfect_correlation(self, rng):
        a = rng.standard_normal(50)
        c = empirical_correlation(_panel(np.column_stack([a, a, rng.standard_normal(50)])))
        assert c.matrix[0, 1] == pytest.approx(1.0, abs=1e-14)
        assert c.provenance == "empirical" and c.sample_shape == (50, 3)

    def test_independent_long_sample(self, rng):
        t = 100_000
        c = empirical_correlation(rng.standard_normal((t, 2)))
        assert abs(c.matrix[0, 1]) < 3 / math.sqrt(t)

    def test_rank_bound(self, rng):
        n, t = 20, 10
        c = empirical_correlation(rng.standard_normal((t, n)))
        lam = c.decomposition.eigenvalues
        assert np.sum(np.abs(lam) < 1e-8) >= n - t
        assert c.meta["rank_deficient"]

    def test_constant_column_named(self, rng):
        x = rng.standard_normal((30, 3))
        x[:, 1] = 0.25
        with pytest.raises(EstimationError, match="A1"):
            empirical_correlation(_panel(x))

    def test_scale_invariance(self, rng):
        x = rng.standard_normal((200, 5))
        s = np.array([1e-3, 1.0, 7.0, 250.0, 0.02])
        c1 = empirical_correlation(x).matrix
        c2 = empirical_correlation(x * s).matrix
        assert np.max(np.abs(c1 - c2)) < 1e-12

    def test_unit_diagonal_and_symmetry(self, rng):
        c = empirical_correlation(rng.standard_normal((40, 6))).matrix
        assert np.array_equal(np.diag(c), np.ones(6))
        assert np.array_equal(c, c.T)

    def test_missing_rows_dropped(self, rng):
        x = rng.standard_normal((60, 3))
        full = empirical_correlation(x[10:]).matrix
        x[3, 1] = np.nan
        x[:10, 2] = np.nan
        assert np.allclose(empirical_correlation(_panel(x)).matrix, full, atol=1e-14)


class TestRIE:
    def test_zero_noise_limit(self, rng):
        n, t = 10, 200_000
        b = rng.standard_normal((n, 2))
        x = rng.standard_normal((t, 2)) @ b.T + rng.standard_normal((t, n))
        emp = empirical_correlation(x)
        rie = rie_clean(emp)
        lam = emp.decomposition.eigenvalues
        np.testing.assert_allclose(rie.meta["cleaned_eigenvalues"], lam, rtol=0.01)
        np.testing.assert_allclose(rie.decomposition.eigenvalues, lam, rtol=0.01)

    def test_identity_truth_dispersion_shrinks(self, rng):
        emp = empirical_correlation(rng.standard_normal((400, 100)))
        rie = rie_clean(emp)
        assert np.var(rie.decomposition.eigenvalues) < 0.5 * np.var(emp.decomposition.eigenvalues)

    def test_spiked_model(self, rng):
        n, t = 100, 400
        c = _spiked(n, 10.0)
        x = rng.standard_normal((t, n)) @ np.linalg.cholesky(c).T
        rie = rie_clean(empirical_correlation(x))
        lam = rie.decomposition.eigenvalues
        assert abs(lam[0] / 10.0 - 1) < 0.15
        bulk = lam[1:]
        raw_bulk = empirical_correlation(x).decomposition.eigenvalues[1:]
        assert np.mean((bulk - 0.9091) ** 2) < np.mean((raw_bulk - 0.9091) ** 2)

    def test_eigenvectors_preserved_and_trace(self, rng):
        emp = empirical_correlation(rng.standard_normal((300, 40)))
        xi, u, q = rie_eigenvalues(emp)
        assert u is emp.decomposition.eigenvectors
        assert q == pytest.approx(40 / 300)
        assert abs(np.sum(xi) / 40 - 1) < 0.05
        # cleaning the spectrum commutes with the eigenbasis exactly
        rebuilt = (u * xi) @ u.T
        assert np.max(np.abs(sym_eigen(rebuilt).eigenvalues - np.sort(xi)[::-1])) < 1e-10

    def test_isotonic_order(self, rng):
        emp = empirical_correlation(rng.standard_normal((150, 60)))
        xi, _, _ = rie_eigenvalues(emp)
        assert np.all(np.diff(xi) <= 0)

    def test_q_at_least_one_requires_floor(self, rng):
        emp = empirical_correlation(rng.standard_normal((20, 30)))
        with pytest.raises(EstimationError, match="longer estimation window"):
            rie_clean(emp)
        rie = rie_clean(emp, RIEConfig(floor=1e-8))
        assert rie.is_spd
        assert rie.meta["rank_deficient"]

    def test_unit_diagonal(self, rng):
        rie = rie_clean(empirical_correlation(rng.standard_normal((120, 30))))
        assert np.max(np.abs(np.diag(rie.matrix) - 1)) < 1e-10
        assert rie.provenance == "rie"

    def test_only_empirical_input(self):
        with pytest.raises(EstimationError):
            rie_clean(CorrelationModel.identity(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 25), t=st.integers(3, 80))
    def test_always_spd(self, seed, n, t):
        x = np.random.default_rng(seed).standard_normal((t, n))
        emp = empirical_correlation(x)
        cfg = RIEConfig(floor=1e-8) if n >= t else RIEConfig()
        rie = rie_clean(emp, cfg)
        assert rie.is_spd
        lam = rie.decomposition.eigenvalues
        assert lam[-1] > 0


class TestShrink:
    c = CorrelationModel.from_matrix([[1.0, 0.8], [0.8, 1.0]])

    def test_endpoints(self):
        assert np.array_equal(shrink_correlation(self.c, 0.0).matrix, np.eye(2))
        assert shrink_correlation(self.c, 1.0) is self.c

    def test_half(self):
        np.testing.assert_allclose(shrink_correlation(self.c, 0.5).matrix, [[1, 0.4], [0.4, 1]], atol=1e-15)
        assert shrink_correlation(self.c, 0.5).meta["phi"] == 0.5

    def test_out_of_range(self):
        for phi in (-0.1, 1.5):
            with pytest.raises(EstimationError):
                shrink_correlation(self.c, phi)

    def test_linear_spectral_map(self, rng):
        c = CorrelationModel.from_matrix(np.corrcoef(rng.standard_normal((50, 8)), rowvar=False))
        for phi in (0.1, 0.37, 0.9):
            got = shrink_correlation(c, phi).decomposition.eigenvalues
            want = phi * c.decomposition.eigenvalues + (1 - phi)
            assert np.max(np.abs(got - want)) < 1e-10


class TestQModel:
    c = CorrelationModel.from_matrix([[1.0, 0.3], [0.3, 1.0]])

    def test_identity(self):
        assert np.array_equal(materialize_q(QModel("identity", sigma_p=1.0), self.c), np.eye(2))
        assert np.array_equal(materialize_q(QModel("identity", sigma_p=2.5), self.c), 2.5 * np.eye(2))

    def test_proportional(self):
        assert np.array_equal(materialize_q(QModel("proportional_to_C"), self.c), self.c.matrix)

    def test_shrunk_matches(self):
        q = materialize_q(QModel("shrunk", phi=0.5), self.c)
        assert np.array_equal(q, shrink_correlation(self.c, 0.5).matrix)

    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(phi=1.2), dict(sigma_p=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(EstimationError):
            QModel(**kw)


def test_correlation_model_validation():
    with pytest.raises(EstimationError):
        CorrelationModel.from_matrix([[2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(EstimationError):
        CorrelationModel.from_matrix([[1.0, 0.0, 0.0]])
