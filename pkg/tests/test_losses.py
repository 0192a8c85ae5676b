"""Loss values, residuals, noise precisions, and the curvature identities."""

import numpy as np
import pytest

from d2g import losses, mlp, oracles
from d2g.errors import DimensionMismatch, InvalidTarget


class TestLossValue:
    def test_squared(self):
        assert losses.loss_value(losses.Squared(1.0), 1.0, 2.0) == 0.5

    def test_logistic_at_zero(self):
        np.testing.assert_allclose(
            losses.loss_value(losses.Logistic(), 1, 0.0), np.log(2.0), rtol=1e-15
        )

    def test_softmax_uniform(self):
        np.testing.assert_allclose(
            losses.loss_value(losses.Softmax(3), 0, np.zeros(3)),
            np.log(3.0), rtol=1e-15,
        )

    def test_invalid_targets(self):
        with pytest.raises(InvalidTarget):
            losses.loss_value(losses.Logistic(), 0.5, 0.0)
        with pytest.raises(InvalidTarget):
            losses.loss_value(losses.Softmax(3), 3, np.zeros(3))
        with pytest.raises(DimensionMismatch):
            losses.loss_value(losses.Squared(), np.zeros(2), np.zeros(3))


class TestResidual:
    def test_squared_scaling(self):
        # (f - y) / sigma^2
        np.testing.assert_array_equal(
            losses.residual(losses.Squared(1.0), 1.0, 2.0), [1.0]
        )
        np.testing.assert_allclose(
            losses.residual(losses.Squared(4.0), 1.0, 2.0), [0.25], rtol=1e-15
        )

    def test_logistic(self):
        np.testing.assert_allclose(
            losses.residual(losses.Logistic(), 1, 0.0), [-0.5], rtol=1e-15
        )

    def test_softmax_two_class(self):
        np.testing.assert_allclose(
            losses.residual(losses.Softmax(2), 0, np.zeros(2)),
            [-0.5, 0.5], rtol=1e-15,
        )

    def test_matches_fd_of_loss(self):
        """Residual equals central differences of the loss in f."""
        rng = np.random.default_rng(0)
        cases = []
        for _ in range(20):
            cases.append((losses.Squared(float(rng.uniform(0.3, 3.0))),
                          rng.normal(size=3), rng.normal(size=3)))
            cases.append((losses.Logistic(), float(rng.integers(0, 2)),
                          rng.normal(size=1)))
            k = int(rng.integers(2, 5))
            cases.append((losses.Softmax(k), int(rng.integers(0, k)),
                          rng.normal(size=k)))
        for kind, y, f in cases:
            r = losses.residual(kind, y, f)
            r_fd = oracles.fd_gradient(
                lambda v: losses.loss_value(kind, y, v), np.atleast_1d(f),
                step=1e-6,
            )
            np.testing.assert_allclose(r, r_fd, atol=1e-6)


class TestNoisePrecision:
    def test_squared_identity_scaled(self):
        np.testing.assert_array_equal(
            losses.noise_precision(losses.Squared(4.0), np.zeros(2)),
            0.25 * np.eye(2),
        )

    def test_logistic_at_zero(self):
        np.testing.assert_allclose(
            losses.noise_precision(losses.Logistic(), [0.0]), [[0.25]], rtol=1e-15
        )

    def test_softmax_two_class(self):
        np.testing.assert_allclose(
            losses.noise_precision(losses.Softmax(2), np.zeros(2)),
            [[0.25, -0.25], [-0.25, 0.25]], rtol=1e-15,
        )

    def test_matches_fd_of_residual(self):
        rng = np.random.default_rng(1)
        for kind, f in [
            (losses.Squared(0.7), rng.normal(size=2)),
            (losses.Logistic(), rng.normal(size=1)),
            (losses.Softmax(4), rng.normal(size=4)),
        ]:
            y = (rng.normal(size=f.shape[0]) if isinstance(kind, losses.Squared)
                 else 0)
            lam = losses.noise_precision(kind, f)
            lam_fd = oracles.fd_jacobian(
                lambda v: losses.residual(kind, y, v), f, step=1e-5
            )
            np.testing.assert_allclose(lam, lam_fd, atol=1e-5)

    def test_definiteness(self):
        """Squared and logistic are strictly PD; the softmax null space is
        exactly the constant direction (rows sum to zero)."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            f = rng.normal(size=3) * 3
            lam = losses.noise_precision(losses.Squared(0.5), f)
            assert np.min(np.linalg.eigvalsh(lam)) > 0
            lam = losses.noise_precision(losses.Logistic(), rng.normal(size=1) * 5)
            assert lam[0, 0] > 0
            lam = losses.noise_precision(losses.Softmax(3), f)
            assert np.max(np.abs(lam.sum(axis=1))) < 1e-12
            eigs = np.linalg.eigvalsh(lam)
            assert eigs[0] > -1e-15 and eigs[1] > 1e-12

    def test_damped_softmax_invertible(self):
        lam = losses.noise_precision_damped(losses.Softmax(3), np.zeros(3))
        assert np.linalg.cond(lam) < 1e9


class TestGradIdentity:
    def test_zero_residual(self):
        cfg = mlp.MlpConfig(2, (3,), 1)
        rng = np.random.default_rng(3)
        w = rng.normal(size=mlp.param_count(cfg))
        x = rng.normal(size=2)
        f = mlp.forward(cfg, w, x)
        jac = mlp.jacobian(cfg, w, x)
        g = losses.grad_via_identity(losses.Squared(1.0), f, jac, f)
        np.testing.assert_array_equal(g, np.zeros_like(w))

    def test_scalar_linear_model(self):
        """f = w x + b with zero bias: the weight coordinate carries
        x (w x - y)."""
        cfg = mlp.MlpConfig(1, (), 1)
        w = np.array([0.7, 0.0])
        x, y = 1.9, 0.4
        f = mlp.forward(cfg, w, np.array([x]))
        jac = mlp.jacobian(cfg, w, np.array([x]))
        g = losses.grad_via_identity(losses.Squared(1.0), np.array([y]), jac, f)
        np.testing.assert_allclose(g[0], x * (0.7 * x - y), rtol=1e-12)
        np.testing.assert_allclose(g[1], 0.7 * x - y, rtol=1e-12)

    def test_fd_agreement_random_mlp(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            cfg = mlp.MlpConfig(2, (5,), 2, activation="tanh")
            w = rng.normal(size=mlp.param_count(cfg)) * 0.6
            x = rng.normal(size=2)
            y = rng.normal(size=2)
            kind = losses.Squared(1.3)
            f = mlp.forward(cfg, w, x)
            g = losses.grad_via_identity(kind, y, mlp.jacobian(cfg, w, x), f)
            g_fd = oracles.fd_gradient(
                lambda v: losses.loss_value(kind, y, mlp.forward(cfg, v, x)), w
            )
            assert np.linalg.norm(g - g_fd) < 1e-5 * max(1.0, np.linalg.norm(g_fd))


class TestGgnTerm:
    def test_identity_case(self):
        jac = np.eye(3)
        np.testing.assert_array_equal(losses.ggn_term(jac, np.eye(3)), np.eye(3))

    def test_linear_model_exact_hessian(self):
        """For f = J w under squared loss the curvature term is the exact
        Hessian of the per-example loss."""
        cfg = mlp.MlpConfig(3, (), 2)
        rng = np.random.default_rng(5)
        w = rng.normal(size=mlp.param_count(cfg))
        x = rng.normal(size=3)
        y = rng.normal(size=2)
        kind = losses.Squared(0.8)
        jac = mlp.jacobian(cfg, w, x)
        ggn = losses.ggn_term(jac, losses.noise_precision(kind, mlp.forward(cfg, w, x)))
        hess = oracles.fd_hessian(
            lambda v: losses.loss_value(kind, y, mlp.forward(cfg, v, x)), w,
            step=1e-3,
        )
        np.testing.assert_allclose(ggn, hess, rtol=1e-6, atol=1e-8)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            k, p = int(rng.integers(1, 5)), int(rng.integers(2, 12))
            jac = rng.normal(size=(k, p))
            kind = losses.Softmax(k) if k >= 2 else losses.Logistic()
            lam = losses.noise_precision(kind, rng.normal(size=k))
            ggn = losses.ggn_term(jac, lam)
            assert np.max(np.abs(ggn - ggn.T)) < 1e-12
            assert np.min(np.linalg.eigvalsh(0.5 * (ggn + ggn.T))) >= -1e-10
