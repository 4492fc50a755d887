import math

import numpy as np
import pytest

from eigenparity.data import (
    DataError,
    ReturnsPanel,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    normalize_panel,
    save_csv,
)
from eigenparity.estimators import empirical_correlation


def _write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,0.01,-0.02\n2020-01-02,0.0,0.5\n2020-01-03,1e-3,2\n")
        panel = load_csv(p)
        assert panel.shape == (3, 2)
        assert panel.assets == ("A", "B")
        assert panel.returns[2, 0] == 1e-3

    def test_empty_cell_is_missing(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,,1\n2020-01-02,2,3\n")
        panel = load_csv(p)
        assert math.isnan(panel.returns[0, 0])
        assert not panel.mask[0, 0] and panel.mask[1, 0]

    def test_na_token_error_or_missing(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,0.1,1\n2020-01-02,n/a,3\n")
        with pytest.raises(DataError, match=r"p\.csv:3: column 1 \(A\)"):
            load_csv(p, allow_missing=False)
        assert math.isnan(load_csv(p, allow_missing=True).returns[1, 0])

    def test_malformed_cell_location(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,0.1,1\n2020-01-02,0.2,abc\n")
        with pytest.raises(DataError, match=r":3: column 2 \(B\): malformed"):
            load_csv(p)

    def test_duplicate_dates(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-01,0.1,1\n2020-01-01,0.2,1\n")
        with pytest.raises(DataError, match="duplicate date"):
            load_csv(p)

    def test_unsorted_rows_are_sorted(self, tmp_path):
        p = _write(tmp_path, "date,A,B\n2020-01-02,2,2\n2020-01-01,1,1\n")
        panel = load_csv(p)
        assert panel.returns[0, 0] == 1.0

    def test_one_asset_rejected(self, tmp_path):
        p = _write(tmp_path, "date,A\n2020-01-01,0.1\n")
        with pytest.raises(DataError, match="at least 2 assets"):
            load_csv(p)

    def test_bad_date(self, tmp_path):
        p = _write(tmp_path, "date,A,B\nyesterday,0.1,1\n")
        with pytest.raises(DataError, match="bad ISO-8601 date"):
            load_csv(p)

    def test_quoted_header(self, tmp_path):
        p = _write(tmp_path, 'date,"ES, front",B\n2020-01-01,0.1,1\n')
        assert load_csv(p).assets == ("ES, front", "B")

    def test_round_trip_bit_identical(self, tmp_path, rng):
        x = rng.standard_normal((50, 4)) * 10.0 ** rng.integers(-8, 3, size=(50, 4))
        x[3, 2] = np.nan
        dates = np.datetime64("2001-02-03") + np.arange(50)
        panel = ReturnsPanel(dates, ["a", "b", "c", "d"], x)
        save_csv(panel, tmp_path / "x.csv")
        back = load_csv(tmp_path / "x.csv")
        assert np.array_equal(back.returns, panel.returns, equal_nan=True)
        assert np.array_equal(back.dates, panel.dates)
        # and a second write is byte-identical
        save_csv(back, tmp_path / "y.csv")
        assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()


class TestPanel:
    def test_non_monotone_dates(self):
        with pytest.raises(DataError):
            ReturnsPanel(np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"), ["a", "b"], np.zeros((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            ReturnsPanel(np.array(["2020-01-01"], dtype="datetime64[D]"), ["a", "b"], np.zeros((1, 3)))


class TestNormalize:
    def _panel(self, x):
        return ReturnsPanel(np.datetime64("2000-01-01") + np.arange(len(x)), [f"a{i}" for i in range(x.shape[1])], x)

    def test_iid_unit_variance(self, rng):
        out = normalize_panel(self._panel(rng.standard_normal((3000, 3))), window=100)
        v = np.nanvar(out.returns, axis=0)
        assert np.all((v > 0.9) & (v < 1.1))
        assert out.normalized
        assert np.all(np.isnan(out.returns[:100]))

    def test_scale_invariance(self, rng):
        x = rng.standard_normal((500, 3))
        y = x.copy()
        y[:, 1] *= 100
        a = normalize_panel(self._panel(x), 50).returns
        b = normalize_panel(self._panel(y), 50).returns
        np.testing.assert_allclose(a, b, rtol=1e-8, equal_nan=True)

    def test_causal(self, rng):
        x = rng.standard_normal((400, 2))
        y = x.copy()
        y[300:] = rng.standard_normal((100, 2)) * 50
        a = normalize_panel(self._panel(x), 60).returns
        b = normalize_panel(self._panel(y), 60).returns
        assert np.array_equal(a[:300], b[:300], equal_nan=True)

    def test_uses_strictly_past(self, rng):
        x = rng.standard_normal((30, 2))
        out = normalize_panel(self._panel(x), 10).returns
        assert out[10, 0] == pytest.approx(x[10, 0] / np.std(x[0:10, 0], ddof=1))

    def test_zero_dispersion_floored(self, caplog):
        x = np.ones((30, 2))
        x[:, 1] = np.arange(30.0)
        out = normalize_panel(self._panel(x), 5)
        assert np.all(np.isfinite(out.returns[5:]))
        assert "floored" in caplog.text

    def test_window_too_small(self, rng):
        with pytest.raises(DataError):
            normalize_panel(self._panel(rng.standard_normal((10, 2))), 1)

    def test_full_sample(self, rng):
        out = normalize_panel(self._panel(rng.standard_normal((200, 2)) * 3), full_sample=True)
        np.testing.assert_allclose(np.std(out.returns, axis=0, ddof=1), 1.0)


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(n_assets=5, n_days=300, drift_vol=0.1, drift_ar=0.9, seed=4)
        a, ta = generate_synthetic(spec)
        b, tb = generate_synthetic(spec)
        assert np.array_equal(a.returns, b.returns)
        assert np.array_equal(ta.matrix, tb.matrix)

    def test_no_factors_independent(self):
        t = 20_000
        panel, truth = generate_synthetic(SyntheticSpec(n_assets=4, n_days=t, n_factors=0, seed=1))
        assert np.array_equal(truth.matrix, np.eye(4))
        c = empirical_correlation(panel).matrix
        assert np.max(np.abs(c - np.eye(4))) < 4 / math.sqrt(t)

    def test_one_factor_equal_loadings(self):
        n = 8
        spec = SyntheticSpec(n_assets=n, n_days=100, n_factors=1, loadings=[[0.7]] * n, seed=2)
        _, truth = generate_synthetic(spec)
        rho = 0.49 / 1.49
        np.testing.assert_allclose(truth.matrix, (1 - rho) * np.eye(n) + rho * np.ones((n, n)), atol=1e-14)
        np.testing.assert_allclose(truth.decomposition.eigenvectors[:, 0], np.ones(n) / math.sqrt(n), atol=1e-12)

    def test_sample_converges_to_truth(self):
        t = 40_000
        panel, truth = generate_synthetic(SyntheticSpec(n_assets=6, n_days=t, n_factors=2, seed=9))
        dev = np.max(np.abs(empirical_correlation(panel).matrix - truth.matrix))
        assert dev < 4 / math.sqrt(t)

    def test_business_day_dates(self):
        panel, _ = generate_synthetic(SyntheticSpec(n_assets=2, n_days=10, seed=0))
        assert np.all(np.is_busday(panel.dates))

    def test_planted_drift_persistent(self):
        spec = SyntheticSpec(n_assets=3, n_days=3000, n_factors=0, drift_vol=0.5, drift_ar=0.999, idio_vol=0.01, seed=5)
        panel, _ = generate_synthetic(spec)
        r = panel.returns[:, 0]
        assert np.corrcoef(r[:-1], r[1:])[0, 1] > 0.9

    def test_json_round_trip(self, tmp_path):
        spec = SyntheticSpec(n_assets=3, n_days=50, factor_vol=[1.0], seed=11)
        (tmp_path / "s.json").write_text(spec.to_json())
        assert SyntheticSpec.from_json(tmp_path / "s.json") == spec

    def test_unknown_json_field(self):
        with pytest.raises(DataError, match="unknown"):
            SyntheticSpec.from_json({"n_assets": 3, "bogus": 1})

    def test_regimes(self):
        spec = SyntheticSpec(n_assets=4, n_days=1000, regime_length=300, seed=3)
        _, truth = generate_synthetic(spec)
        assert truth.meta["regimes"] == 4
