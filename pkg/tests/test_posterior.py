"""Gaussian posterior construction, sampling, and serialization."""

import numpy as np
import pytest

from d2g import losses, mlp, oracles
from d2g.errors import ConfigError
from d2g.optim import VognState, vogn_step
from d2g.posterior import (
    GaussApprox,
    laplace_ggn,
    load_posterior,
    sample,
    save_posterior,
    vi_posterior,
)


def _suppress_stationarity(recwarn=None):
    import warnings

    warnings.simplefilter("ignore")


class TestLaplace:
    def test_linear_model_is_conjugate_posterior(self):
        """For a model linear in its parameters the construction equals the
        exact conjugate linear-regression posterior."""
        rng = np.random.default_rng(0)
        cfg = mlp.MlpConfig(3, (), 2)
        p = mlp.param_count(cfg)
        n, delta = 14, 1.2
        x = rng.normal(size=(n, 3))
        y = rng.normal(size=(n, 2))
        kind = losses.Squared(0.6)
        _, jacs = mlp.batch_jacobian(cfg, np.zeros(p), x)
        lam = np.eye(2) / kind.sigma2
        w_star, cov_ref = oracles.ridge_posterior(
            [jacs[i] for i in range(n)], [lam] * n, list(y), delta
        )
        approx = laplace_ggn(cfg, kind, x, y, w_star, delta, mode="full")
        assert oracles.max_rel_err(approx.mean, w_star) < 1e-10
        assert oracles.max_rel_err(approx.cov, cov_ref) < 1e-10

    def test_empty_dataset_gives_prior(self):
        cfg = mlp.MlpConfig(2, (), 1)
        p = mlp.param_count(cfg)
        w = np.ones(p)
        approx = laplace_ggn(cfg, losses.Squared(1.0),
                             np.zeros((0, 2)), np.zeros((0, 1)), w, 4.0)
        np.testing.assert_allclose(approx.cov, np.eye(p) / 4.0, rtol=1e-12)
        np.testing.assert_array_equal(approx.mean, w)

    def test_prior_bounds_marginal_variance(self):
        """With delta = 30 every covariance diagonal entry is at most 1/30,
        since the precision dominates delta I."""
        rng = np.random.default_rng(1)
        cfg = mlp.MlpConfig(12, (20, 20), 1, activation="tanh")
        x = rng.normal(size=(40, 12))
        y = rng.normal(size=(40, 1))
        w = mlp.init_params(cfg, 0)
        with pytest.warns(UserWarning):
            approx = laplace_ggn(cfg, losses.Squared(0.64**2), x, y, w, 30.0,
                                 mode="full")
        assert np.all(np.diagonal(approx.cov) <= 1.0 / 30.0 + 1e-12)

    def test_precision_minus_prior_is_psd(self):
        rng = np.random.default_rng(2)
        cfg = mlp.MlpConfig(2, (5,), 2, activation="sigmoid")
        x = rng.normal(size=(9, 2))
        y = rng.integers(0, 2, size=9)
        w = mlp.init_params(cfg, 3)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            approx = laplace_ggn(cfg, losses.Softmax(2), x, y, w, 0.9, mode="full")
        prec = np.linalg.inv(approx.cov)
        eigs = np.linalg.eigvalsh(0.5 * (prec + prec.T) - 0.9 * np.eye(len(w)))
        assert eigs[0] >= -1e-9

    def test_diagonal_equals_diagonal_of_full(self):
        """Both modes share the accumulation, so the diagonal-mode precision
        is exactly the diagonal of the full-mode precision."""
        rng = np.random.default_rng(3)
        cfg = mlp.MlpConfig(2, (4,), 3, activation="tanh")
        x = rng.normal(size=(7, 2))
        y = rng.integers(0, 3, size=7)
        w = mlp.init_params(cfg, 1)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            full = laplace_ggn(cfg, losses.Softmax(3), x, y, w, 1.1, mode="full")
            diag = laplace_ggn(cfg, losses.Softmax(3), x, y, w, 1.1,
                               mode="diagonal")
        prec_full = np.linalg.inv(full.cov)
        np.testing.assert_allclose(1.0 / diag.cov, np.diagonal(prec_full),
                                   rtol=1e-9)

    def test_stationarity_warning(self):
        rng = np.random.default_rng(4)
        cfg = mlp.MlpConfig(1, (3,), 1)
        x = rng.normal(size=(5, 1))
        y = rng.normal(size=(5, 1))
        w = rng.normal(size=mlp.param_count(cfg)) * 3
        with pytest.warns(UserWarning, match="gradient norm"):
            laplace_ggn(cfg, losses.Squared(0.1), x, y, w, 1.0)


class TestViPosterior:
    def test_zero_scale_gives_prior(self):
        state = VognState(mu=np.zeros(4), s=np.zeros(4), delta=2.5, beta=0.5)
        g = vi_posterior(state)
        np.testing.assert_allclose(g.cov, np.full(4, 0.4), rtol=1e-15)

    def test_converges_to_conjugate_posterior(self):
        """Iterated to its fixed point on a linear-Gaussian problem in
        full-matrix mode (draws pinned to the mean, which is exact for a
        linear model), the state matches the conjugate posterior."""
        rng = np.random.default_rng(5)
        cfg = mlp.MlpConfig(2, (), 1)
        p = mlp.param_count(cfg)
        n, delta = 10, 0.8
        x = rng.normal(size=(n, 2))
        y = rng.normal(size=(n, 1))
        kind = losses.Squared(0.5)
        state = VognState(mu=np.zeros(p), s=np.zeros((p, p)), delta=delta,
                          beta=0.5, num_samples=1,
                          rng=np.random.default_rng(0))
        for _ in range(120):
            state = vogn_step(cfg, kind, x, y, state, pin_to_mean=True)
        g = vi_posterior(state)
        _, jacs = mlp.batch_jacobian(cfg, np.zeros(p), x)
        lam = np.eye(1) / kind.sigma2
        mean_ref, cov_ref = oracles.ridge_posterior(
            [jacs[i] for i in range(n)], [lam] * n, list(y), delta
        )
        assert oracles.max_rel_err(g.mean, mean_ref) < 1e-6
        assert oracles.max_rel_err(g.cov, cov_ref) < 1e-6

    def test_zero_delta_rejected(self):
        with pytest.raises(ConfigError):
            VognState(mu=np.zeros(2), s=np.zeros(2), delta=0.0, beta=0.5)


class TestSample:
    def test_tiny_variance_returns_mean(self):
        g = GaussApprox(mean=np.array([1.0, -2.0]), cov=np.full(2, 1e-30),
                        kind="laplace", delta=1.0)
        draws = sample(g, 5, seed=0)
        assert np.max(np.abs(draws - g.mean)) < 1e-14

    def test_clt_mean(self):
        """Sample mean of 1e5 draws lands within 4 standard errors of the
        true mean in every coordinate."""
        mean = np.array([0.3, -1.1, 2.0])
        var = np.array([0.5, 2.0, 0.1])
        g = GaussApprox(mean=mean, cov=var, kind="vi", delta=1.0)
        draws = sample(g, 100_000, seed=1)
        se = np.sqrt(var / 100_000)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)

    def test_full_covariance_structure(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.5 * np.eye(3)
        g = GaussApprox(mean=np.zeros(3), cov=cov, kind="laplace", delta=1.0)
        draws = sample(g, 200_000, seed=2)
        emp = np.cov(draws.T)
        assert np.max(np.abs(emp - cov)) < 0.05

    def test_seed_determinism(self):
        g = GaussApprox(mean=np.zeros(2), cov=np.ones(2), kind="vi", delta=1.0)
        assert np.array_equal(sample(g, 7, seed=3), sample(g, 7, seed=3))


class TestSerialization:
    @pytest.mark.parametrize("diagonal", [False, True])
    def test_roundtrip(self, tmp_path, diagonal):
        rng = np.random.default_rng(7)
        p = 5
        if diagonal:
            cov = rng.uniform(0.1, 1.0, size=p)
        else:
            a = rng.normal(size=(p, p))
            cov = a @ a.T + np.eye(p)
        g = GaussApprox(mean=rng.normal(size=p), cov=cov, kind="vi", delta=0.7)
        path = tmp_path / "posterior.json"
        save_posterior(g, path, config_hash="abc123")
        loaded, chash = load_posterior(path)
        assert chash == "abc123"
        assert loaded.kind == g.kind and loaded.delta == g.delta
        np.testing.assert_array_equal(loaded.mean, g.mean)
        np.testing.assert_array_equal(loaded.cov, g.cov)
