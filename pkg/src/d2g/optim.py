"""Trainers: Adam, online Gauss-Newton (deterministic), and its sampled
variational counterpart with a diagonal or full curvature state.

The Gauss-Newton pair shares one update core. The deterministic variant
evaluates gradient and curvature at the current iterate; the variational
one averages them over Monte-Carlo draws from the current Gaussian and so
also maintains the state of that Gaussian. Pinning the draws to the mean
makes the two coincide bit for bit, which the tests rely on.

Curvature is diagonal by default (entries sum_k lambda_kk J_kj^2, dropping
the softmax off-diagonal coupling); a full-matrix mode exists for small
networks where the update-as-linear-model equivalences are checked exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from d2g import linalg, losses, mlp
from d2g.errors import ConfigError, NonFiniteUpdate

# below this gradient norm the iterate is treated as an exact fixed point
FIXED_POINT_TOL = 1e-12


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(p: int, alpha: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=np.zeros(p), v=np.zeros(p), t=0,
                     alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, w: np.ndarray, g: np.ndarray
              ) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected moment update; returns (new state, new weights)."""
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    w_new = w - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, m=m, v=v, t=t)
    return new_state, w_new


@dataclass
class OggnState:
    w: np.ndarray
    s: np.ndarray  # (P,) diagonal or (P, P) full curvature accumulator
    delta: float
    beta: float


@dataclass
class VognState:
    mu: np.ndarray
    s: np.ndarray  # (P,) diagonal or (P, P) full
    delta: float
    beta: float
    num_samples: int = 1
    rng: np.random.Generator = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("prior precision delta must be > 0")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("learning rate beta must lie in (0, 1]")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.rng is None:
            self.rng = np.random.default_rng(0)


def _gauss_newton_core(cfg, kind, x, y, mu, s, delta, beta, eval_points):
    """Shared update: curvature EMA first, then the preconditioned step."""
    n_pts = len(eval_points)
    p = mu.shape[0]
    full_mode = s.ndim == 2
    g = np.zeros(p)
    curv = np.zeros((p, p)) if full_mode else np.zeros(p)
    for w_s in eval_points:
        f, jacs = mlp.batch_jacobian(cfg, w_s, x)
        r = losses.batch_residual(kind, y, f)
        g += np.einsum("nkp,nk->p", jacs, r)
        if full_mode:
            for i in range(x.shape[0]):
                lam = losses.noise_precision(kind, f[i])
                curv += jacs[i].T @ (lam @ jacs[i])
        else:
            lam_d = losses.batch_lambda_diag(kind, f)
            curv += np.einsum("nk,nkp->p", lam_d, jacs * jacs)
    if n_pts > 1:
        g = g / n_pts
        curv = curv / n_pts
    g = g + delta * mu

    s_new = (1.0 - beta) * s + beta * curv
    if np.linalg.norm(g) < FIXED_POINT_TOL:
        mu_new = mu
    elif full_mode:
        prec = s_new + delta * np.eye(p)
        mu_new = mu - beta * linalg.solve_psd(linalg.cholesky(prec), g)
    else:
        mu_new = mu - beta * g / (s_new + delta)
    if not (np.all(np.isfinite(mu_new)) and np.all(np.isfinite(s_new))):
        raise NonFiniteUpdate("optimizer state left the finite range")
    return mu_new, s_new


def oggn_step(cfg, kind, x, y, state: OggnState) -> OggnState:
    """Deterministic online Gauss-Newton step evaluated at the iterate."""
    w_new, s_new = _gauss_newton_core(
        cfg, kind, x, y, state.w, state.s, state.delta, state.beta, [state.w]
    )
    return replace(state, w=w_new, s=s_new)


def vogn_step(cfg, kind, x, y, state: VognState, *,
              samples: np.ndarray | None = None,
              pin_to_mean: bool = False) -> VognState:
    """Sampled variational step.

    Draws ``num_samples`` weights from N(mu, (S + delta I)^{-1}) and
    averages gradient and curvature over them. ``samples`` injects the
    draws (used by equivalence tests); ``pin_to_mean`` replaces them with
    the mean, reproducing the deterministic step exactly.
    """
    if pin_to_mean:
        eval_points = [state.mu]
    elif samples is not None:
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        eval_points = [samples[i] for i in range(samples.shape[0])]
    else:
        eval_points = list(_draw_weights(state))
    mu_new, s_new = _gauss_newton_core(
        cfg, kind, x, y, state.mu, state.s, state.delta, state.beta, eval_points
    )
    return replace(state, mu=mu_new, s=s_new)


def _draw_weights(state: VognState) -> np.ndarray:
    z = state.rng.standard_normal((state.num_samples, state.mu.shape[0]))
    if state.s.ndim == 1:
        std = 1.0 / np.sqrt(state.s + state.delta)
        return state.mu + z * std
    prec = state.s + state.delta * np.eye(state.mu.shape[0])
    factor = linalg.cholesky(prec)
    # cov = L^{-T} L^{-1}, so mu + L^{-T} z has the right covariance
    from scipy.linalg import solve_triangular

    draws = solve_triangular(factor.lower.T, z.T, lower=False).T
    return state.mu + draws


@dataclass
class TrainReport:
    final_params: np.ndarray
    loss_trace: list[float]
    grad_norm: float
    final_state: object | None = None


def train(cfg, kind, x, y, *, optimizer: str = "adam", epochs: int,
          seed: int = 0, delta: float = 1.0, alpha: float = 1e-3,
          beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
          beta: float = 0.1, num_samples: int = 1, curvature: str = "diag",
          batch_size: int | None = None, init: np.ndarray | None = None
          ) -> TrainReport:
    """Full-batch training loop reporting the regularized loss per epoch.

    ``batch_size`` switches to seeded shuffled minibatches; the default
    (None) is full-batch, which keeps the equivalence tests noise-free.
    Deterministic given the seed.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if optimizer not in ("adam", "oggn", "vogn"):
        raise ConfigError(f"unknown optimizer {optimizer!r}")
    if curvature not in ("diag", "full"):
        raise ConfigError(f"unknown curvature mode {curvature!r}")

    x = np.asarray(x, dtype=np.float64)
    y = losses.check_targets(kind, y, cfg.output_dim)
    p = mlp.param_count(cfg)
    w = mlp.init_params(cfg, seed) if init is None else np.asarray(init, dtype=np.float64).copy()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD26)))

    def curv_zeros():
        return np.zeros((p, p)) if curvature == "full" else np.zeros(p)

    adam_state = adam_init(p, alpha, beta1, beta2, eps)
    oggn_state = OggnState(w=w, s=curv_zeros(), delta=delta, beta=beta)
    vogn_state = VognState(mu=w, s=curv_zeros(), delta=delta, beta=beta,
                           num_samples=num_samples, rng=rng)

    n = x.shape[0]
    trace = []
    for _ in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
        for sel in batches:
            xb, yb = x[sel], y[sel]
            if optimizer == "adam":
                _, g = losses.data_loss_grad(kind, cfg, w, xb, yb)
                g = g + delta * w
                adam_state, w = adam_step(adam_state, w, g)
            elif optimizer == "oggn":
                oggn_state = oggn_step(cfg, kind, xb, yb, oggn_state)
                w = oggn_state.w
            else:
                vogn_state = vogn_step(cfg, kind, xb, yb, vogn_state)
                w = vogn_state.mu
        trace.append(losses.regularized_loss(kind, cfg, w, x, y, delta))

    _, g = losses.data_loss_grad(kind, cfg, w, x, y)
    g = g + delta * w
    final_state = {"adam": adam_state, "oggn": oggn_state, "vogn": vogn_state}[optimizer]
    return TrainReport(
        final_params=w,
        loss_trace=trace,
        grad_norm=float(np.linalg.norm(g)),
        final_state=final_state,
    )
