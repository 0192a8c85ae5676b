"""Loss functions with their output-space derivatives and curvature blocks.

Three losses are supported, each exposing the same three quantities:

* the loss value itself,
* the residual, i.e. the gradient of the loss in the network outputs,
* the noise precision, i.e. the Hessian of the loss in the outputs.

The squared loss is ||y - f||^2 / (2 sigma^2) with residual (f - y) / sigma^2
and precision I / sigma^2. The logistic loss acts on a single logit with
residual p - y and precision p (1 - p). The softmax cross-entropy has
residual p - onehot(y) and precision diag(p) - p p^T, which is singular
(rank K-1); operations that need its inverse use a damped copy.

From these blocks the parameter-space identities follow: the loss gradient
is J^T r and the Gauss-Newton curvature term is J^T Lambda J.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from d2g import accel, mlp
from d2g.errors import DimensionMismatch, InvalidTarget

SOFTMAX_DAMP = 1e-8


@dataclass(frozen=True)
class Squared:
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidTarget("sigma2 must be > 0")


@dataclass(frozen=True)
class Logistic:
    pass


@dataclass(frozen=True)
class Softmax:
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidTarget("softmax needs at least 2 classes")


LossKind = Squared | Logistic | Softmax


def output_dim(kind: LossKind) -> int | None:
    """Network output dimension the loss requires; None means any."""
    if isinstance(kind, Logistic):
        return 1
    if isinstance(kind, Softmax):
        return kind.num_classes
    return None


def _check_f(kind: LossKind, f: np.ndarray) -> np.ndarray:
    f = np.atleast_1d(np.asarray(f, dtype=np.float64))
    k = output_dim(kind)
    if k is not None and f.shape[0] != k:
        raise DimensionMismatch(f"output has length {f.shape[0]}, loss expects {k}")
    return f


def _check_target(kind: LossKind, y, k: int):
    if isinstance(kind, Squared):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if y.shape[0] != k:
            raise DimensionMismatch(f"target has length {y.shape[0]}, output is {k}")
        return y
    if isinstance(kind, Logistic):
        y = float(y)
        if y not in (0.0, 1.0):
            raise InvalidTarget(f"logistic target must be 0 or 1, got {y}")
        return y
    c = int(y)
    if not 0 <= c < kind.num_classes:
        raise InvalidTarget(f"class index {c} outside [0, {kind.num_classes})")
    return c


def loss_value(kind: LossKind, y, f) -> float:
    f = _check_f(kind, f)
    y = _check_target(kind, y, f.shape[0])
    if isinstance(kind, Squared):
        d = f - y
        return float(0.5 * np.dot(d, d) / kind.sigma2)
    if isinstance(kind, Logistic):
        z = f[0]
        # -log sigma(z) for y=1, -log(1 - sigma(z)) for y=0, stably
        return float(np.logaddexp(0.0, z) - y * z)
    return float(-log_softmax(f)[y])


def residual(kind: LossKind, y, f) -> np.ndarray:
    """Gradient of the loss in the network outputs; shape (K,)."""
    f = _check_f(kind, f)
    y = _check_target(kind, y, f.shape[0])
    if isinstance(kind, Squared):
        return (f - y) / kind.sigma2
    if isinstance(kind, Logistic):
        p = _sigmoid(f[0])
        return np.array([p - y])
    p = softmax(f)
    r = p.copy()
    r[y] -= 1.0
    return r


def noise_precision(kind: LossKind, f) -> np.ndarray:
    """Hessian of the loss in the network outputs; (K, K), target-free."""
    f = _check_f(kind, f)
    k = f.shape[0]
    if isinstance(kind, Squared):
        return np.eye(k) / kind.sigma2
    if isinstance(kind, Logistic):
        p = _sigmoid(f[0])
        return np.array([[p * (1.0 - p)]])
    p = softmax(f)
    return np.diag(p) - np.outer(p, p)


def noise_precision_damped(kind: LossKind, f, damp: float = SOFTMAX_DAMP) -> np.ndarray:
    """Noise precision safe to invert: softmax gets damp * I added."""
    lam = noise_precision(kind, f)
    if isinstance(kind, Softmax) and damp > 0:
        lam = lam + damp * np.eye(lam.shape[0])
    return lam


def grad_via_identity(kind: LossKind, y, jac: np.ndarray, f) -> np.ndarray:
    """Parameter gradient of the loss as J^T r; shape (P,)."""
    jac = np.asarray(jac, dtype=np.float64)
    r = residual(kind, y, f)
    if jac.shape[0] != r.shape[0]:
        raise DimensionMismatch(
            f"jacobian has {jac.shape[0]} rows, residual has {r.shape[0]}"
        )
    return jac.T @ r


def ggn_term(jac: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Gauss-Newton curvature block J^T Lambda J; symmetric PSD (P, P)."""
    jac = np.asarray(jac, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (jac.shape[0], jac.shape[0]):
        raise DimensionMismatch(
            f"noise precision {lam.shape} does not match jacobian rows {jac.shape[0]}"
        )
    return jac.T @ (lam @ jac)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# batched helpers used by trainers and posterior builders
# ---------------------------------------------------------------------------


def check_targets(kind: LossKind, y: np.ndarray, k: int) -> np.ndarray:
    """Validate and normalize a whole target array for the given loss."""
    if isinstance(kind, Squared):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[1] != k:
            raise DimensionMismatch(f"targets have width {y.shape[1]}, output is {k}")
        return y
    y = np.asarray(y)
    yi = y.astype(np.int64)
    if np.any(yi != y):
        raise InvalidTarget("classification targets must be integers")
    if isinstance(kind, Logistic):
        if np.any((yi != 0) & (yi != 1)):
            raise InvalidTarget("logistic targets must be 0 or 1")
    else:
        if np.any((yi < 0) | (yi >= kind.num_classes)):
            raise InvalidTarget(
                f"class indices must lie in [0, {kind.num_classes})"
            )
    return yi


def batch_loss(kind: LossKind, y: np.ndarray, f: np.ndarray) -> float:
    """Sum of per-example losses over the batch."""
    if isinstance(kind, Squared):
        d = f - y
        return float(0.5 * np.sum(d * d) / kind.sigma2)
    if isinstance(kind, Logistic):
        z = f[:, 0]
        return float(np.sum(np.logaddexp(0.0, z) - y * z))
    return float(-np.sum(log_softmax(f, axis=1)[np.arange(f.shape[0]), y]))


def batch_residual(kind: LossKind, y: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Per-example residuals; shape (N, K)."""
    if isinstance(kind, Squared):
        return (f - y) / kind.sigma2
    if isinstance(kind, Logistic):
        p = 1.0 / (1.0 + np.exp(-f[:, 0]))
        return (p - y)[:, None]
    p = softmax(f, axis=1)
    r = p.copy()
    r[np.arange(f.shape[0]), y] -= 1.0
    return r


def batch_lambda_diag(kind: LossKind, f: np.ndarray) -> np.ndarray:
    """Diagonal of the per-example noise precision; shape (N, K).

    Exact for squared and logistic losses; for softmax this drops the
    off-diagonal coupling, which is the approximation the diagonal
    optimizers run on.
    """
    if isinstance(kind, Squared):
        return np.full_like(f, 1.0 / kind.sigma2)
    if isinstance(kind, Logistic):
        p = 1.0 / (1.0 + np.exp(-f[:, 0]))
        return (p * (1.0 - p))[:, None]
    p = softmax(f, axis=1)
    return p * (1.0 - p)


def data_loss(kind: LossKind, cfg: mlp.MlpConfig, w: np.ndarray, x, y) -> float:
    """Sum of per-example losses at w (no regularizer)."""
    f = mlp.batch_forward(cfg, w, x)
    return batch_loss(kind, y, f)


def data_loss_grad(
    kind: LossKind, cfg: mlp.MlpConfig, w: np.ndarray, x, y
) -> tuple[float, np.ndarray]:
    """Loss sum and its parameter gradient sum_i J_i^T r_i in one sweep."""
    f = mlp.batch_forward(cfg, w, x)
    r = batch_residual(kind, y, f)
    g = accel.batch_vjp(w, cfg.dims, cfg.act_id, x, r)
    return batch_loss(kind, y, f), g


def regularized_loss(
    kind: LossKind, cfg: mlp.MlpConfig, w: np.ndarray, x, y, delta: float
) -> float:
    """Total training objective: data loss plus (delta / 2) ||w||^2."""
    return data_loss(kind, cfg, w, x, y) + 0.5 * delta * float(np.dot(w, w))
