import numpy as np
import pytest

from mppfolio.data import (
    RETURN_FEATURES,
    PanelDataset,
    PanelFormatError,
    RawPanel,
    SyntheticTruth,
    compute_features,
    generate_synthetic,
    load_panel,
    load_truth,
    month_index,
    month_label,
    month_range,
    volatility_target,
    write_panel,
    write_truth,
)
from mppfolio.mpp import unconstrained_mpp

HEADER = "month,stock_id,return,f1,membership,risk_free,benchmark\n"
SMALL_CSV = HEADER + (
    "2001-01,A,0.01,0.5,1,0.002,0.015\n"
    "2001-01,B,0.02,-0.5,1,0.002,0.015\n"
    "2001-02,A,-0.03,0.1,1,0.002,-0.01\n"
    "2001-02,B,0.01,,1,0.002,-0.01\n"
    "2001-03,A,0.0,0.2,1,0.001,0.005\n"
    "2001-03,B,,0.3,0,0.001,0.005\n"
)


def write(tmp_path, text, name="panel.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestMonths:
    def test_round_trip(self):
        assert month_label(month_index("1999-12")) == "1999-12"
        assert month_index("2000-01") - month_index("1999-12") == 1
        assert month_range("1999-11", 3) == ("1999-11", "1999-12", "2000-01")

    def test_rejects_bad_labels(self):
        for bad in ("1999-13", "99-01", "1999/01"):
            with pytest.raises(ValueError):
                month_index(bad)


class TestLoadPanel:
    def test_small_file(self, tmp_path):
        panel = load_panel(write(tmp_path, SMALL_CSV))
        assert (panel.T, panel.n, panel.m) == (3, 2, 1)
        assert panel.stock_ids == ("A", "B")
        assert np.isnan(panel.features[1, 1, 0])
        assert not panel.membership[2, 1]
        assert np.allclose(panel.risk_free, [0.002, 0.002, 0.001])
        assert panel.usable().tolist() == [[True, True], [True, False], [True, False]]

    def test_canonical_form_is_a_fixed_point(self, tmp_path):
        src = write(tmp_path, SMALL_CSV)
        out = tmp_path / "again.csv"
        write_panel(load_panel(src), out)
        assert out.read_bytes() == src.read_bytes()

    def test_synthetic_round_trip_is_byte_identical(self, tmp_path):
        panel, _ = generate_synthetic(4, 2, 30, seed=3)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_panel(panel, a)
        back = load_panel(a)
        write_panel(back, b)
        assert a.read_bytes() == b.read_bytes()
        assert np.array_equal(back.returns, panel.returns)
        assert np.array_equal(back.features, panel.features)

    def test_schema_renames_columns(self, tmp_path):
        path = write(tmp_path, SMALL_CSV.replace("return,", "ret,", 1))
        assert load_panel(path, schema={"return": "ret"}).n == 2

    def test_duplicate_names_its_line(self, tmp_path):
        text = SMALL_CSV + "2001-03,A,0.0,0.2,1,0.001,0.005\n"
        with pytest.raises(PanelFormatError) as err:
            load_panel(write(tmp_path, text))
        assert err.value.line == 8
        assert "line 8" in str(err.value) and "line 6" in str(err.value)

    def test_months_going_backwards(self, tmp_path):
        text = SMALL_CSV + "2001-02,A,0.0,0.2,1,0.002,-0.01\n"
        with pytest.raises(PanelFormatError) as err:
            load_panel(write(tmp_path, text))
        assert err.value.line == 8

    @pytest.mark.parametrize(
        "row, fragment",
        [
            ("2001-04,A,0.0,1,0.001\n", "fields"),
            ("2001-4,A,0.0,0.1,1,0.001,0.0\n", "month"),
            ("2001-04,A,abc,0.1,1,0.001,0.0\n", "not a number"),
            ("2001-04,A,0.1,0.1,2,0.001,0.0\n", "membership"),
            ("2001-04,A,,0.1,1,0.001,0.0\n", "no return"),
        ],
    )
    def test_malformed_rows(self, tmp_path, row, fragment):
        with pytest.raises(PanelFormatError, match=fragment) as err:
            load_panel(write(tmp_path, SMALL_CSV + row))
        assert err.value.line == 8

    def test_month_values_must_agree(self, tmp_path):
        text = SMALL_CSV.replace("2001-03,B,,0.3,0,0.001,", "2001-03,B,,0.3,0,0.009,")
        with pytest.raises(PanelFormatError, match="risk_free") as err:
            load_panel(write(tmp_path, text))
        assert err.value.line == 7

    def test_missing_columns(self, tmp_path):
        with pytest.raises(PanelFormatError):
            load_panel(write(tmp_path, "month,stock_id\n2001-01,A\n"))

    def test_dataset_is_read_only(self, tmp_path):
        panel = load_panel(write(tmp_path, SMALL_CSV))
        with pytest.raises(ValueError):
            panel.returns[0, 0] = 1.0

    def test_member_without_return_rejected(self):
        with pytest.raises(ValueError):
            PanelDataset(("2000-01",), ("A",), np.array([[np.nan]]), np.zeros((1, 1, 0)), (),
                         np.array([[True]]), np.zeros(1), np.zeros(1))


def price_panel(prices):
    return RawPanel.from_prices(np.asarray(prices, float).reshape(-1, 1))


def feature(raw, name):
    names, F = compute_features(raw)
    return F[:, 0, names.index(name)]


class TestFeatures:
    def test_names(self):
        names, F = compute_features(price_panel(np.ones(20)), volatility=True)
        assert names == RETURN_FEATURES + ("lagvol",)
        assert len(RETURN_FEATURES) == 14 and F.shape == (20, 1, 15)

    def test_constant_price(self):
        raw = price_panel(np.full(30, 50.0))
        for name in ("mom1m", "mom6m", "mom12m", "chmom", "retvol"):
            vals = feature(raw, name)
            assert np.all(vals[np.isfinite(vals)] == 0.0)
        assert feature(raw, "retvol")[13] == 0.0

    def test_doubling_month(self):
        # price doubles during month 3, so the forecast for month 4 sees mom1m = 1
        raw = price_panel([10, 10, 10, 20, 20, 20])
        mom1m = feature(raw, "mom1m")
        assert mom1m[4] == 1.0
        assert np.isnan(mom1m[0]) and np.isnan(mom1m[1])
        assert mom1m[5] == 0.0

    def test_twelve_month_momentum_hand_path(self):
        r = np.array([0.0, 0.10, -0.05, 0.02, 0.03, -0.01, 0.04, 0.0, -0.02, 0.05, 0.01, 0.03, -0.04, 0.02])
        prices = 100.0 * np.cumprod(1.0 + r)
        raw = price_panel(prices)
        t = 13
        # months t-12 .. t-2 are months 1..11
        expected = np.prod(1.0 + r[1:12]) - 1.0
        assert feature(raw, "mom12m")[t] == pytest.approx(expected, rel=1e-12)
        assert np.isnan(feature(raw, "mom12m")[12])
        expected6 = np.prod(1.0 + r[7:12]) - 1.0
        assert feature(raw, "mom6m")[t] == pytest.approx(expected6, rel=1e-12)
        assert feature(raw, "maxret")[t] == pytest.approx(r[1:13].max())
        assert feature(raw, "retvol")[t] == pytest.approx(np.std(r[1:13], ddof=1), rel=1e-12)

    def test_ratios_lag_one_month(self):
        T = 15
        price = np.full((T, 1), 10.0)
        shares = np.full((T, 1), 2.0)
        book = np.arange(T, dtype=float).reshape(T, 1)
        raw = RawPanel(price, shares, shares, book, book, book, book)
        bm = compute_features(raw)[1][:, 0, RETURN_FEATURES.index("bm")]
        assert bm[5] == pytest.approx(4.0 / 20.0)

    def test_no_feature_reads_current_or_future_data(self):
        rng = np.random.default_rng(0)
        T, n = 40, 3
        cols = [np.abs(rng.normal(10, 2, (T, n))) for _ in range(7)]
        base_names, base = compute_features(RawPanel(*cols), volatility=True)
        for t in (5, 17, 39):
            shocked = [c.copy() for c in cols]
            for c in shocked:
                c[t:] = 0.0
            _, F = compute_features(RawPanel(*shocked), volatility=True)
            assert np.array_equal(F[: t + 1], base[: t + 1], equal_nan=True)

    def test_volatility_target(self):
        assert volatility_target(np.array([-0.1]))[0] == pytest.approx(0.1 * np.sqrt(np.pi / 2))


def ols_predictions(panel):
    X = np.column_stack([np.ones(panel.T), panel.features[:, 0, :]])
    coef = np.linalg.lstsq(X, panel.returns, rcond=None)[0]
    return X @ coef, coef


class TestSynthetic:
    def test_deterministic(self):
        a, _ = generate_synthetic(5, 2, 50, seed=4)
        b, _ = generate_synthetic(5, 2, 50, seed=4)
        assert np.array_equal(a.returns, b.returns)

    def test_noiseless_identification(self):
        panel, truth = generate_synthetic(6, 3, 200, seed=1, noise_scale=0.0)
        X = panel.features[:, 0, :]
        assert np.array_equal(panel.returns, truth.alpha + X @ truth.B.T)
        _, coef = ols_predictions(panel)
        assert np.allclose(coef[1:].T, truth.B, atol=1e-10)
        assert np.allclose(coef[0], truth.alpha, atol=1e-10)

    def test_truth_identities(self, tmp_path):
        _, truth = generate_synthetic(7, 2, 10, seed=2)
        # exact up to one rounding of the sum
        assert np.allclose(truth.sigma0 - truth.sigma_hat0, truth.Gamma, rtol=0, atol=1e-17)
        assert np.linalg.eigvalsh(truth.Gamma).min() > 0
        path = tmp_path / "truth.json"
        write_truth(truth, path)
        back = load_truth(path)
        assert np.array_equal(back.B, truth.B) and np.array_equal(back.sigma0, truth.sigma0)
        assert isinstance(back, SyntheticTruth)

    def test_zero_loadings_have_no_predictability(self):
        _, truth = generate_synthetic(4, 2, 10, seed=0, B=np.zeros((4, 2)))
        assert unconstrained_mpp(truth.sigma_hat0, truth.sigma0).r_squared == pytest.approx(0.0, abs=1e-12)

    def test_exposure_features(self):
        panel, truth = generate_synthetic(3, 2, 20, seed=5, feature_mode="exposures", noise_scale=0.0)
        assert np.allclose(panel.returns, truth.alpha + panel.features.sum(axis=2), atol=1e-15)

    def test_factor_process_is_standardized(self):
        panel, _ = generate_synthetic(1, 2, 20_000, seed=6)
        X = panel.features[:, 0, :]
        assert np.allclose(X.var(axis=0), 1.0, atol=0.1)
        lag1 = np.corrcoef(X[1:, 0], X[:-1, 0])[0, 1]
        assert lag1 == pytest.approx(0.9, abs=0.02)

    def test_long_sample_prediction_covariance(self):
        # the factor-variance sampling error alone is about 6% at T = 5000
        panel, truth = generate_synthetic(5, 3, 5000, seed=2, signal_scale=0.1)
        Q, _ = ols_predictions(panel)
        S = np.cov(Q.T, bias=True)
        rel = np.linalg.norm(S - truth.sigma_hat0) / np.linalg.norm(truth.sigma_hat0)
        assert rel <= 0.05

    def test_prediction_covariance_converges(self):
        def median_error(T):
            errs = []
            for seed in range(10):
                panel, truth = generate_synthetic(5, 3, T, seed=seed, signal_scale=0.1)
                S = np.cov(ols_predictions(panel)[0].T, bias=True)
                errs.append(np.linalg.norm(S - truth.sigma_hat0) / np.linalg.norm(truth.sigma_hat0))
            return np.median(errs)

        assert median_error(5000) < median_error(500)

    def test_sample_mpp_approaches_population_maximum(self):
        best, pops = None, []
        for T in (250, 1000, 5000):
            panel, truth = generate_synthetic(10, 3, T, seed=0)
            Q, _ = ols_predictions(panel)
            w = unconstrained_mpp(np.cov(Q.T, bias=True), np.cov(panel.returns.T, bias=True)).weights
            pops.append(float(w @ truth.sigma_hat0 @ w / (w @ truth.sigma0 @ w)))
            best = unconstrained_mpp(truth.sigma_hat0, truth.sigma0).r_squared
        assert all(b >= a - 0.05 for a, b in zip(pops, pops[1:]))
        assert best - pops[-1] <= 0.05
        assert all(p <= best + 1e-12 for p in pops)

    def test_sample_mean_rate(self):
        errs = {}
        for T in (500, 5000):
            e = []
            for seed in range(8):
                panel, truth = generate_synthetic(3, 2, T, seed=seed)
                e.append(np.abs(panel.returns.mean(0) - truth.alpha).mean())
            errs[T] = np.mean(e)
        # 1/sqrt(T): a tenfold sample shrinks the error by about sqrt(10)
        assert errs[500] / errs[5000] == pytest.approx(np.sqrt(10.0), rel=0.5)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            generate_synthetic(0, 3, 10)
