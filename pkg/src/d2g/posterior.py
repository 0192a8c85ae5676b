"""Gaussian posterior approximations over the flat parameter vector.

Two constructions: a curvature-based approximation at a trained minimum
(precision = accumulated Gauss-Newton terms plus the prior), and the
Gaussian read off a variational optimizer state. Full and diagonal
covariances share the same accumulation, so the diagonal variant equals
the diagonal of the full precision entry for entry.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from d2g import linalg, losses, mlp
from d2g.errors import ConfigError, DimensionMismatch
from d2g.optim import VognState

STATIONARITY_WARN_TOL = 1e-3


@dataclass(frozen=True)
class GaussApprox:
    """Mean and covariance of N(w | mean, cov).

    ``cov`` is either a full (P, P) SPD matrix or a strictly positive
    (P,) vector of marginal variances.
    """

    mean: np.ndarray
    cov: np.ndarray
    kind: str  # "laplace" or "vi"
    delta: float

    @property
    def is_diagonal(self) -> bool:
        return self.cov.ndim == 1

    def __post_init__(self):
        if self.cov.ndim == 1:
            if self.cov.shape[0] != self.mean.shape[0]:
                raise DimensionMismatch("diagonal covariance length != mean length")
            if np.any(self.cov <= 0):
                raise ConfigError("diagonal covariance must be strictly positive")
        elif self.cov.shape != (self.mean.shape[0],) * 2:
            raise DimensionMismatch("covariance shape does not match mean")


def _ggn_precision(cfg, kind, x, y, w, delta, mode):
    p = mlp.param_count(cfg)
    prec = delta * np.eye(p)
    x = np.asarray(x, dtype=np.float64)
    if x.size:
        y = losses.check_targets(kind, y, cfg.output_dim)
        f, jacs = mlp.batch_jacobian(cfg, w, x)
        for i in range(x.shape[0]):
            lam = losses.noise_precision(kind, f[i])
            prec += jacs[i].T @ (lam @ jacs[i])
    if mode == "diagonal":
        return np.diagonal(prec).copy()
    return prec


def laplace_ggn(cfg, kind, x, y, w_star, delta: float, mode: str = "full"
                ) -> GaussApprox:
    """Curvature approximation at w_star: precision from Gauss-Newton terms.

    w_star should be near-stationary; a gradient norm above 1e-3 only
    warns, since partially trained anchors are legitimate inputs.
    """
    if mode not in ("full", "diagonal"):
        raise ConfigError(f"unknown covariance mode {mode!r}")
    if not delta > 0:
        raise ConfigError("prior precision delta must be > 0")
    w_star = np.asarray(w_star, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.size:
        _, g = losses.data_loss_grad(kind, cfg, w_star, x,
                                     losses.check_targets(kind, y, cfg.output_dim))
        gnorm = float(np.linalg.norm(g + delta * w_star))
        if gnorm > STATIONARITY_WARN_TOL:
            warnings.warn(
                f"anchor gradient norm {gnorm:.2e} > {STATIONARITY_WARN_TOL}; "
                "posterior is anchored away from a stationary point",
                stacklevel=2,
            )
    prec = _ggn_precision(cfg, kind, x, y, w_star, delta, mode)
    if mode == "diagonal":
        cov = 1.0 / prec
    else:
        cov = linalg.inverse_psd(linalg.cholesky(prec))
        cov = 0.5 * (cov + cov.T)
    return GaussApprox(mean=w_star.copy(), cov=cov, kind="laplace", delta=delta)


def vi_posterior(state: VognState) -> GaussApprox:
    """Gaussian of a variational optimizer state: cov = (S + delta I)^{-1}."""
    if not state.delta > 0:
        raise ConfigError("prior precision delta must be > 0")
    if state.s.ndim == 1:
        cov = 1.0 / (state.s + state.delta)
    else:
        prec = state.s + state.delta * np.eye(state.mu.shape[0])
        cov = linalg.inverse_psd(linalg.cholesky(prec))
        cov = 0.5 * (cov + cov.T)
    return GaussApprox(mean=state.mu.copy(), cov=cov, kind="vi", delta=state.delta)


def sample(g: GaussApprox, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the approximation; shape (n, P)."""
    if n < 1:
        raise ConfigError("need at least one sample")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, g.mean.shape[0]))
    if g.is_diagonal:
        return g.mean + z * np.sqrt(g.cov)
    factor = linalg.cholesky(g.cov)
    return g.mean + z @ factor.lower.T


# ---------------------------------------------------------------------------
# serialization: JSON metadata plus a binary sidecar with the arrays
# ---------------------------------------------------------------------------


def save_posterior(g: GaussApprox, json_path, config_hash: str = "") -> None:
    """Write metadata JSON plus an .npz sidecar, both via temp-file rename."""
    import os

    json_path = Path(json_path)
    sidecar = json_path.with_suffix(".npz")
    tmp = sidecar.with_name(sidecar.name + ".tmp.npz")
    np.savez(tmp, mean=g.mean, cov=g.cov)
    os.replace(tmp, sidecar)
    meta = {
        "kind": g.kind,
        "cov_layout": "diagonal" if g.is_diagonal else "full",
        "delta": g.delta,
        "config_hash": config_hash,
        "sidecar": sidecar.name,
    }
    tmp_json = json_path.with_name(json_path.name + ".tmp")
    tmp_json.write_text(json.dumps(meta, indent=2))
    os.replace(tmp_json, json_path)


def load_posterior(json_path) -> tuple[GaussApprox, str]:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    arrays = np.load(json_path.parent / meta["sidecar"])
    g = GaussApprox(
        mean=arrays["mean"],
        cov=arrays["cov"],
        kind=meta["kind"],
        delta=float(meta["delta"]),
    )
    return g, meta.get("config_hash", "")
