"""Density-ratio estimators against the closed-form Gaussian oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftagg.errors import (
    AllZeroWeights,
    ConfigInvalid,
    DimensionMismatch,
    EmptyInput,
    NonConvergence,
)
from shiftagg.ratio import (
    RatioFitConfig,
    RatioModel,
    analytic_gaussian_ratio,
    evaluate_ratio,
    fit_logistic_ratio,
    fit_ulsif,
    load_ratio_model,
    save_ratio_model,
    self_normalize,
)


def gaussian_pair(n=2000, shift=0.5, seed=99):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.normal(0.0, 1.0, (n, 1)), rng.normal(shift, 1.0, (n, 1))


GRID = np.linspace(-2.0, 2.0, 81)[:, None]
# Exact ratio of N(0.5, 1) to N(0, 1) densities on the grid.
TRUE_RATIO = np.exp(0.5 * GRID[:, 0] - 0.125)


class TestUlsif:
    def test_identical_samples_mean_one_after_normalization(self):
        rng = np.random.Generator(np.random.Philox(1))
        x = rng.standard_normal((400, 2))
        model = fit_ulsif(x, x, RatioFitConfig(seed=2))
        beta = self_normalize(evaluate_ratio(model, x))
        assert abs(float(np.mean(beta)) - 1.0) < 1e-6

    def test_gaussian_recovery(self):
        xs, xt = gaussian_pair()
        model = fit_ulsif(xs, xt, RatioFitConfig(seed=3))
        beta = evaluate_ratio(model, GRID)
        assert float(np.mean((beta - TRUE_RATIO) ** 2)) < 0.05
        assert np.all(beta >= 0.0) and np.all(beta <= model.bound)

    def test_too_many_centers_rejected(self):
        xs, xt = gaussian_pair(n=50)
        with pytest.raises(ConfigInvalid):
            fit_ulsif(xs, xt, RatioFitConfig(n_centers=51))

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInput):
            fit_ulsif(np.empty((0, 1)), np.ones((5, 1)), RatioFitConfig())
        with pytest.raises(EmptyInput):
            fit_logistic_ratio(
                np.ones((5, 0)), np.ones((5, 0)),
                RatioFitConfig(estimator="logistic"),
            )

    def test_solve_matches_dense_oracle(self):
        # Rebuild the kernel system by brute force and solve it generically;
        # the fitted alpha must match to near machine precision.
        xs, xt = gaussian_pair(n=300, seed=5)
        cfg = RatioFitConfig(
            kernel_widths=(0.7,), ridge_strengths=(0.05,), n_centers=40, seed=11
        )
        model = fit_ulsif(xs, xt, cfg)
        c = model.centers
        K_s = np.exp(
            -((xs[:, None, :] - c[None, :, :]) ** 2).sum(-1) / (2 * 0.7**2)
        )
        K_t = np.exp(
            -((xt[:, None, :] - c[None, :, :]) ** 2).sum(-1) / (2 * 0.7**2)
        )
        H = np.zeros((40, 40))
        for i in range(len(xs)):
            H += np.outer(K_s[i], K_s[i])
        H /= len(xs)
        h = K_t.mean(axis=0)
        alpha_ref = np.linalg.solve(H + 0.05 * np.eye(40), h)
        err = np.linalg.norm(model.alpha - alpha_ref) / np.linalg.norm(alpha_ref)
        assert err < 1e-10

    def test_deterministic_given_seed(self):
        xs, xt = gaussian_pair(n=300)
        cfg = RatioFitConfig(seed=21)
        a = fit_ulsif(xs, xt, cfg)
        b = fit_ulsif(xs, xt, cfg)
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.centers, b.centers)
        assert a.kernel_width == b.kernel_width

    def test_swap_symmetry(self):
        xs, xt = gaussian_pair()
        fwd = evaluate_ratio(fit_ulsif(xs, xt, RatioFitConfig(seed=3)), GRID)
        bwd = evaluate_ratio(fit_ulsif(xt, xs, RatioFitConfig(seed=3)), GRID)
        assert abs(float(np.median(fwd * bwd)) - 1.0) < 0.15


class TestLogistic:
    def test_identical_samples_near_chance(self):
        rng = np.random.Generator(np.random.Philox(8))
        x = rng.standard_normal((2000, 2))
        model = fit_logistic_ratio(x, x, RatioFitConfig(estimator="logistic", seed=4))
        beta = evaluate_ratio(model, x)
        assert abs(float(np.mean(beta)) - 1.0) < 0.05

    def test_gaussian_recovery(self):
        xs, xt = gaussian_pair()
        model = fit_logistic_ratio(
            xs, xt, RatioFitConfig(estimator="logistic", seed=3)
        )
        beta = evaluate_ratio(model, GRID)
        assert float(np.mean((beta - TRUE_RATIO) ** 2)) < 0.05
        assert np.all(beta >= 0.0) and np.all(beta <= model.bound)

    def test_separable_domains_hit_truncation(self):
        rng = np.random.Generator(np.random.Philox(12))
        xs = rng.normal(-10.0, 0.3, (400, 1))
        xt = rng.normal(10.0, 0.3, (400, 1))
        model = fit_logistic_ratio(
            xs, xt, RatioFitConfig(estimator="logistic", seed=5)
        )
        # Target side is forced onto the upper truncation bound; the source
        # side's odds collapse toward the lower bound.
        assert float(np.min(evaluate_ratio(model, xt))) == model.bound
        assert float(np.max(evaluate_ratio(model, xs))) < 0.05

    def test_swap_symmetry(self):
        xs, xt = gaussian_pair()
        cfg = RatioFitConfig(estimator="logistic", seed=3)
        fwd = evaluate_ratio(fit_logistic_ratio(xs, xt, cfg), GRID)
        bwd = evaluate_ratio(fit_logistic_ratio(xt, xs, cfg), GRID)
        assert abs(float(np.median(fwd * bwd)) - 1.0) < 0.15

    def test_iteration_cap_reports_gradient_norm(self):
        from shiftagg.ratio import _logistic_gd

        rng = np.random.Generator(np.random.Philox(31))
        z = rng.standard_normal((100, 2))
        y = (rng.uniform(size=100) < 0.5).astype(float)
        with pytest.raises(NonConvergence, match="gradient norm"):
            _logistic_gd(z, y, ridge=1e-3, tol=1e-15, max_iter=3, strict=True)


class TestEvaluateRatio:
    def test_analytic_identity_when_no_shift(self):
        model = analytic_gaussian_ratio([0.0, 0.0], [0.0, 0.0], 1.0)
        x = np.random.Generator(np.random.Philox(3)).standard_normal((50, 2))
        assert np.array_equal(evaluate_ratio(model, x), np.ones(50))

    def test_negative_raw_scores_clamp_to_zero(self):
        model = RatioModel(
            kind="ulsif",
            bound=5.0,
            centers=np.zeros((1, 1)),
            alpha=np.array([-2.0]),
            kernel_width=1.0,
        )
        assert float(evaluate_ratio(model, np.zeros((1, 1)))[0]) == 0.0

    def test_large_raw_scores_clamp_to_bound(self):
        model = RatioModel(
            kind="ulsif",
            bound=5.0,
            centers=np.zeros((1, 1)),
            alpha=np.array([15.0]),  # raw score 3B at the center
            kernel_width=1.0,
        )
        assert float(evaluate_ratio(model, np.zeros((1, 1)))[0]) == 5.0

    def test_logistic_saturates_both_bounds(self):
        model = RatioModel(
            kind="logistic",
            bound=20.0,
            classifier_weights=np.array([1000.0, 0.0]),
            ns_over_nt=1.0,
        )
        beta = evaluate_ratio(model, np.array([[-1.0], [1.0]]))
        assert float(beta[0]) == 0.0
        assert float(beta[1]) == 20.0

    def test_dimension_mismatch(self):
        model = analytic_gaussian_ratio([0.0], [0.5], 1.0)
        with pytest.raises(DimensionMismatch):
            evaluate_ratio(model, np.zeros((3, 2)))

    def test_range_property_random_models(self):
        rng = np.random.Generator(np.random.Philox(17))
        for _ in range(20):
            model = RatioModel(
                kind="ulsif",
                bound=float(rng.uniform(0.5, 30.0)),
                centers=rng.standard_normal((5, 2)),
                alpha=rng.standard_normal(5) * 10.0,
                kernel_width=float(rng.uniform(0.2, 3.0)),
            )
            beta = evaluate_ratio(model, rng.standard_normal((40, 2)))
            assert np.all(beta >= 0.0) and np.all(beta <= model.bound)


class TestSelfNormalize:
    def test_constant_vector(self):
        np.testing.assert_array_equal(
            self_normalize([2.0, 2.0, 2.0]), np.ones(3)
        )

    def test_mean_forced_to_one(self):
        np.testing.assert_allclose(
            self_normalize([0.0, 1.0, 3.0]), [0.0, 0.75, 2.25], rtol=0, atol=0
        )

    def test_all_zero_rejected(self):
        with pytest.raises(AllZeroWeights):
            self_normalize([0.0, 0.0, 0.0])

    @given(
        st.lists(
            st.one_of(st.just(0.0), st.floats(1e-6, 1e6)),
            min_size=1,
            max_size=50,
        ).filter(lambda v: any(x > 0 for x in v))
    )
    @settings(max_examples=100, deadline=None)
    def test_mean_one_and_proportional(self, values):
        w = np.asarray(values)
        out = self_normalize(w)
        assert abs(float(np.mean(out)) - 1.0) <= 1e-12
        np.testing.assert_allclose(out * float(np.mean(w)), w, rtol=1e-12, atol=0)


class TestModelSerialization:
    def test_ulsif_round_trip(self, tmp_path):
        xs, xt = gaussian_pair(n=200)
        model = fit_ulsif(xs, xt, RatioFitConfig(seed=6, n_centers=20))
        save_ratio_model(model, tmp_path / "ratio.json")
        loaded = load_ratio_model(tmp_path / "ratio.json")
        assert loaded.kind == "ulsif"
        assert np.array_equal(loaded.alpha, model.alpha)
        assert np.array_equal(loaded.centers, model.centers)
        assert loaded.kernel_width == model.kernel_width
        x = xs[:17]
        assert np.array_equal(evaluate_ratio(loaded, x), evaluate_ratio(model, x))

    def test_analytic_round_trip(self, tmp_path):
        model = analytic_gaussian_ratio([0.0, 1.0], [0.5, 1.0], 2.0, bound=7.0)
        save_ratio_model(model, tmp_path / "ratio.json")
        loaded = load_ratio_model(tmp_path / "ratio.json")
        x = np.random.Generator(np.random.Philox(1)).standard_normal((20, 2))
        assert np.array_equal(evaluate_ratio(loaded, x), evaluate_ratio(model, x))
