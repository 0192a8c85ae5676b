"""Conversion of a weight-space Gaussian into its linear-model and GP views.

A network with a Gaussian over its weights, anchored at some point, is
equivalent to a Bayesian linear basis-function model whose features are
the rows of the per-example Jacobian, whose per-example noise precision is
the output-space curvature of the loss, and whose pseudo-observations are

    y_tilde_i = J_i @ anchor - lam_i^{-1} r_i.

The posterior of that linear model reproduces the weight-space Gaussian,
and viewed in function space it is a GP with kernel J(x) J(x')^T / delta.
This module builds the transformed dataset, solves the linear model, forms
the kernel matrices, and maps the linear-model predictive back into the
observation space with an aleatoric/epistemic split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from d2g import linalg, losses, mlp
from d2g.errors import ConfigError, DimensionMismatch, SingularNoisePrecision
from d2g.posterior import GaussApprox, sample as posterior_sample


@dataclass(frozen=True)
class TransformedSample:
    """One row of the equivalent linear model.

    ``index`` is the position in the source dataset; accumulations sort on
    it so results do not depend on list order. ``lam`` is the noise
    precision actually used downstream (softmax arrives damped).
    """

    index: int
    x: np.ndarray
    y_tilde: np.ndarray
    lam: np.ndarray
    jac: np.ndarray


@dataclass(frozen=True)
class LinearModelPosterior:
    mean: np.ndarray
    cov: np.ndarray
    prior_mean: np.ndarray
    prior_prec: np.ndarray


@dataclass(frozen=True)
class KernelMatrix:
    """Tangent kernel matrix, either block (NK x NK) or summarized (N x N)."""

    entries: np.ndarray
    delta: float
    summarized: bool
    labels: np.ndarray | None = None  # class label per row, when known


@dataclass(frozen=True)
class PredictiveDist:
    """Per-output predictive mean with additive variance split.

    ``aleatoric`` and ``epistemic`` are the reported diagonals; the full
    K x K matrices are kept alongside for multiclass internals. The total
    variance is their sum by construction.
    """

    mean: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    space: str  # "y" or "y_tilde"
    aleatoric_mat: np.ndarray | None = None
    epistemic_mat: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.aleatoric + self.epistemic


def _solve_lam(lam: np.ndarray, r: np.ndarray) -> np.ndarray:
    if lam.shape[0] > 1 and np.linalg.cond(lam) > 1e12:
        raise SingularNoisePrecision(
            "noise precision is numerically singular; enable damping"
        )
    try:
        return np.linalg.solve(lam, r)
    except np.linalg.LinAlgError as exc:
        raise SingularNoisePrecision(str(exc)) from exc


def transform_dataset(cfg, kind, x, y, anchor: GaussApprox | np.ndarray,
                      damp: float | None = None) -> list[TransformedSample]:
    """Pseudo-observations of the equivalent linear model at the anchor mean.

    ``damp`` overrides the default noise-precision damping (softmax gets
    1e-8 * I so it can be inverted; pass 0 to disable, which raises
    SingularNoisePrecision for softmax).
    """
    w = anchor.mean if isinstance(anchor, GaussApprox) else np.asarray(anchor, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = losses.check_targets(kind, y, cfg.output_dim)
    if damp is None:
        damp = losses.SOFTMAX_DAMP
    f, jacs = mlp.batch_jacobian(cfg, w, x)
    out = []
    for i in range(x.shape[0]):
        lam = losses.noise_precision_damped(kind, f[i], damp=damp)
        r = losses.residual(kind, y[i], f[i])
        y_tilde = jacs[i] @ w - _solve_lam(lam, r)
        out.append(TransformedSample(index=i, x=x[i].copy(), y_tilde=y_tilde,
                                     lam=lam, jac=jacs[i].copy()))
    return out


def transform_dataset_stacked(cfg, kind, x, y, mu, samples: np.ndarray,
                              damp: float | None = None) -> list[TransformedSample]:
    """Multi-draw variant: Jacobians stack over draws, precisions go block
    diagonal, and the pseudo-observations use the state mean as anchor."""
    mu = np.asarray(mu, dtype=np.float64)
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    y = losses.check_targets(kind, y, cfg.output_dim)
    n, s = x.shape[0], samples.shape[0]
    k = cfg.output_dim
    if damp is None:
        damp = losses.SOFTMAX_DAMP

    per_draw = []
    for j in range(s):
        f, jacs = mlp.batch_jacobian(cfg, samples[j], x)
        per_draw.append((f, jacs))

    out = []
    for i in range(n):
        jac = np.vstack([per_draw[j][1][i] for j in range(s)])
        lam = np.zeros((s * k, s * k))
        resid = np.zeros(s * k)
        for j in range(s):
            f_i = per_draw[j][0][i]
            lam_j = losses.noise_precision_damped(kind, f_i, damp=damp)
            lam[j * k:(j + 1) * k, j * k:(j + 1) * k] = lam_j
            resid[j * k:(j + 1) * k] = losses.residual(kind, y[i], f_i)
        y_tilde = jac @ mu - _solve_lam(lam, resid)
        out.append(TransformedSample(index=i, x=x[i].copy(), y_tilde=y_tilde,
                                     lam=lam, jac=jac))
    return out


def _as_prior_prec(prior_prec, p: int) -> np.ndarray:
    prior_prec = np.asarray(prior_prec, dtype=np.float64)
    if prior_prec.ndim == 0:
        return float(prior_prec) * np.eye(p)
    if prior_prec.ndim == 1:
        if prior_prec.shape[0] != p:
            raise DimensionMismatch("diagonal prior precision has wrong length")
        return np.diag(prior_prec)
    if prior_prec.shape != (p, p):
        raise DimensionMismatch("prior precision has wrong shape")
    return prior_prec


def linear_posterior(samples: list[TransformedSample], prior_mean, prior_prec,
                     lam_scale: float = 1.0) -> LinearModelPosterior:
    """Conjugate posterior of the linear model over the pseudo-observations.

    precision = prior_prec + lam_scale * sum_i J_i^T lam_i J_i
    mean      = cov @ (prior_prec @ prior_mean
                       + lam_scale * sum_i J_i^T lam_i y_tilde_i)
    """
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    p = samples[0].jac.shape[1] if samples else prior_mean.shape[0]
    prec = _as_prior_prec(prior_prec, p).copy()
    rhs = prec @ prior_mean
    for ts in sorted(samples, key=lambda t: t.index):
        jl = ts.jac.T @ (lam_scale * ts.lam)
        prec += jl @ ts.jac
        rhs += jl @ ts.y_tilde
    factor = linalg.cholesky(prec)
    cov = linalg.inverse_psd(factor)
    cov = 0.5 * (cov + cov.T)
    mean = linalg.solve_psd(factor, rhs)
    return LinearModelPosterior(mean=mean, cov=cov,
                                prior_mean=prior_mean,
                                prior_prec=_as_prior_prec(prior_prec, p))


def voggn_linear_prior(q_t: GaussApprox, beta: float, delta: float
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Effective prior for the one-step update-as-linear-model view.

    V^{-1} = (1 - beta) Sigma_t^{-1} + beta delta I
    m      = (1 - beta) V Sigma_t^{-1} mu_t

    The matching likelihood precision is beta * lam (pass lam_scale=beta
    to linear_posterior, or beta/S for stacked multi-draw data).
    """
    if not 0.0 < beta <= 1.0:
        raise ConfigError("beta must lie in (0, 1]")
    p = q_t.mean.shape[0]
    if q_t.is_diagonal:
        sig_inv = np.diag(1.0 / q_t.cov)
    else:
        sig_inv = linalg.inverse_psd(linalg.cholesky(q_t.cov))
        sig_inv = 0.5 * (sig_inv + sig_inv.T)
    v_inv = (1.0 - beta) * sig_inv + beta * delta * np.eye(p)
    v = linalg.inverse_psd(linalg.cholesky(v_inv))
    v = 0.5 * (v + v.T)
    m = (1.0 - beta) * (v @ (sig_inv @ q_t.mean))
    return m, v


# ---------------------------------------------------------------------------
# kernels and GP views
# ---------------------------------------------------------------------------


def ntk_kernel(jacs, delta: float, summarized: bool = False,
               labels=None) -> KernelMatrix:
    """Tangent kernel over a set of per-example Jacobians.

    Block mode returns the NK x NK matrix with blocks J_i J_j^T / delta.
    Summarized mode sums the K per-class N x N kernels (the diagonal of
    each block), accumulated class by class so it equals that sum exactly.
    """
    jacs = np.asarray(jacs, dtype=np.float64)
    if jacs.ndim != 3:
        raise DimensionMismatch("expected stacked Jacobians of shape (N, K, P)")
    n, k, p = jacs.shape
    if summarized:
        entries = np.zeros((n, n))
        for c in range(k):
            jc = np.ascontiguousarray(jacs[:, c, :])
            entries += jc @ jc.T / delta
        row_labels = None if labels is None else np.asarray(labels)
    else:
        flat = jacs.reshape(n * k, p)
        entries = flat @ flat.T / delta
        row_labels = (None if labels is None
                      else np.repeat(np.asarray(labels), k))
    return KernelMatrix(entries=entries, delta=delta, summarized=summarized,
                        labels=row_labels)


def gp_posterior_mean(jac: np.ndarray, w_star: np.ndarray) -> np.ndarray:
    """GP-view posterior mean at one input: exactly J @ w_star."""
    jac = np.asarray(jac, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    if jac.shape[1] != w_star.shape[0]:
        raise DimensionMismatch("jacobian columns do not match parameter length")
    return jac @ w_star


def _weight_cov_quadform(jac: np.ndarray, g: GaussApprox) -> np.ndarray:
    """J Sigma J^T for full or diagonal covariance; (K, K)."""
    if g.is_diagonal:
        return np.einsum("kp,p,lp->kl", jac, g.cov, jac)
    return jac @ g.cov @ jac.T


# ---------------------------------------------------------------------------
# observation-space predictives
# ---------------------------------------------------------------------------


def predict_regression(cfg, kind: losses.Squared, anchor: GaussApprox, x_star
                       ) -> PredictiveDist:
    """Squared-loss predictive: mean f(x*), epistemic J Sigma J^T,
    aleatoric sigma^2 I; the variance is the same in y and y_tilde space."""
    if not isinstance(kind, losses.Squared):
        raise ConfigError("predict_regression needs a squared loss")
    x_star = np.asarray(x_star, dtype=np.float64)
    f = mlp.forward(cfg, anchor.mean, x_star)
    jac = mlp.jacobian(cfg, anchor.mean, x_star)
    epi_mat = _weight_cov_quadform(jac, anchor)
    k = f.shape[0]
    ale_mat = kind.sigma2 * np.eye(k)
    return PredictiveDist(mean=f, aleatoric=np.full(k, kind.sigma2),
                          epistemic=np.diagonal(epi_mat).copy(), space="y",
                          aleatoric_mat=ale_mat, epistemic_mat=epi_mat)


def predict_classification(cfg, anchor: GaussApprox, x_star) -> PredictiveDist:
    """Binary predictive through the inverted output map:
    mean sigma(f), aleatoric lam, epistemic lam^2 J Sigma J^T."""
    if cfg.output_dim != 1:
        raise DimensionMismatch("binary classification needs a single logit")
    x_star = np.asarray(x_star, dtype=np.float64)
    f = mlp.forward(cfg, anchor.mean, x_star)
    jac = mlp.jacobian(cfg, anchor.mean, x_star)
    p = 1.0 / (1.0 + np.exp(-f[0]))
    lam = p * (1.0 - p)
    epi = lam**2 * _weight_cov_quadform(jac, anchor)[0, 0]
    return PredictiveDist(mean=np.array([p]), aleatoric=np.array([lam]),
                          epistemic=np.array([epi]), space="y",
                          aleatoric_mat=np.array([[lam]]),
                          epistemic_mat=np.array([[epi]]))


def predict_multiclass(cfg, kind: losses.Softmax, anchor: GaussApprox, x_star
                       ) -> PredictiveDist:
    """Multiclass predictive: mean softmax(f), aleatoric lam(x*),
    epistemic lam J Sigma J^T lam, diagonals reported."""
    if not isinstance(kind, losses.Softmax):
        raise ConfigError("predict_multiclass needs a softmax loss")
    if cfg.output_dim != kind.num_classes:
        raise DimensionMismatch("output width must equal the class count")
    x_star = np.asarray(x_star, dtype=np.float64)
    f = mlp.forward(cfg, anchor.mean, x_star)
    jac = mlp.jacobian(cfg, anchor.mean, x_star)
    probs = softmax(f)
    lam = np.diag(probs) - np.outer(probs, probs)
    epi_mat = lam @ _weight_cov_quadform(jac, anchor) @ lam
    return PredictiveDist(mean=probs, aleatoric=np.diagonal(lam).copy(),
                          epistemic=np.diagonal(epi_mat).copy(), space="y",
                          aleatoric_mat=lam, epistemic_mat=epi_mat)


def predict(cfg, kind, anchor: GaussApprox, x_star) -> PredictiveDist:
    """Dispatch on the loss kind."""
    if isinstance(kind, losses.Squared):
        return predict_regression(cfg, kind, anchor, x_star)
    if isinstance(kind, losses.Logistic):
        return predict_classification(cfg, anchor, x_star)
    return predict_multiclass(cfg, kind, anchor, x_star)


def mc_predict(cfg, kind, anchor: GaussApprox, x_star, n_samples: int,
               seed: int) -> PredictiveDist:
    """Monte-Carlo baseline: empirical mean/variance of the network output
    (regression) or of the link output (classification) over weight draws."""
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    x_star = np.asarray(x_star, dtype=np.float64)
    draws = posterior_sample(anchor, n_samples, seed)
    outs = np.stack([mlp.forward(cfg, draws[i], x_star)
                     for i in range(n_samples)])
    if isinstance(kind, losses.Logistic):
        outs = 1.0 / (1.0 + np.exp(-outs))
    elif isinstance(kind, losses.Softmax):
        outs = softmax(outs, axis=1)
    mean = outs.mean(axis=0)
    var = outs.var(axis=0)
    k = mean.shape[0]
    return PredictiveDist(mean=mean, aleatoric=np.zeros(k), epistemic=var,
                          space="y")
