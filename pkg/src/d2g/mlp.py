"""Multilayer perceptron: config, flat parameter vector, forward pass, and
exact per-example Jacobians of the outputs with respect to all parameters.

Parameter flattening is fixed across the whole package: for each layer in
forward order, the weight matrix in row-major (out, in) order, then the
bias vector. Every posterior, kernel, and covariance indexes into this
order, so it must never change.

Only smooth activations (tanh, sigmoid) are supported; the curvature
identities used elsewhere require twice-differentiable outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from d2g import accel
from d2g.errors import ConfigError, DimensionMismatch

_ACT_IDS = {"tanh": accel.ACT_TANH, "sigmoid": accel.ACT_SIGMOID}


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be >= 1")
        if self.activation not in _ACT_IDS:
            raise ConfigError(
                f"activation must be one of {sorted(_ACT_IDS)}, got {self.activation!r}"
            )
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def dims(self) -> np.ndarray:
        return np.array(
            [self.input_dim, *self.hidden, self.output_dim], dtype=np.int64
        )

    @property
    def act_id(self) -> int:
        return _ACT_IDS[self.activation]

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_dim": self.input_dim,
                "hidden": list(self.hidden),
                "output_dim": self.output_dim,
                "activation": self.activation,
            }
        )

    @staticmethod
    def from_json(text: str) -> "MlpConfig":
        obj = json.loads(text)
        return MlpConfig(
            input_dim=int(obj["input_dim"]),
            hidden=tuple(int(h) for h in obj["hidden"]),
            output_dim=int(obj["output_dim"]),
            activation=str(obj["activation"]),
        )


def param_count(cfg: MlpConfig) -> int:
    """Total parameters P = sum over layers of (in + 1) * out."""
    dims = cfg.dims
    return int(sum((dims[l] + 1) * dims[l + 1] for l in range(len(dims) - 1)))


def init_params(cfg: MlpConfig, seed: int) -> np.ndarray:
    """Seeded per-layer uniform init in +-sqrt(6 / (fan_in + fan_out)).

    Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    dims = cfg.dims
    chunks = []
    for l in range(len(dims) - 1):
        din, dout = int(dims[l]), int(dims[l + 1])
        bound = np.sqrt(6.0 / (din + dout))
        chunks.append(rng.uniform(-bound, bound, size=din * dout))
        chunks.append(np.zeros(dout))
    return np.concatenate(chunks)


def _check(cfg: MlpConfig, w: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != param_count(cfg):
        raise DimensionMismatch(
            f"parameter vector has length {w.shape}, config needs {param_count(cfg)}"
        )
    if x.shape[-1] != cfg.input_dim:
        raise DimensionMismatch(
            f"input has dimension {x.shape[-1]}, config expects {cfg.input_dim}"
        )
    return w, x


def forward(cfg: MlpConfig, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Network outputs at a single input; shape (K,)."""
    w, x = _check(cfg, w, x)
    return accel.batch_forward(w, cfg.dims, cfg.act_id, x[None, :])[0]


def batch_forward(cfg: MlpConfig, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Network outputs at every row of x; shape (N, K)."""
    w, x = _check(cfg, w, x)
    return accel.batch_forward(w, cfg.dims, cfg.act_id, x)


def jacobian(cfg: MlpConfig, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Jacobian of the outputs with respect to all parameters; shape (K, P).

    Row k is the exact reverse-mode gradient of output k, laid out in the
    package-wide flattening order.
    """
    w, x = _check(cfg, w, x)
    _, jac = accel.batch_forward_jacobian(w, cfg.dims, cfg.act_id, x[None, :])
    return jac[0]


def batch_jacobian(
    cfg: MlpConfig, w: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Outputs (N, K) and stacked per-example Jacobians (N, K, P)."""
    w, x = _check(cfg, w, x)
    return accel.batch_forward_jacobian(w, cfg.dims, cfg.act_id, x)


def params_to_json(w: np.ndarray) -> str:
    return json.dumps([float(v) for v in np.asarray(w, dtype=np.float64)])


def params_from_json(text: str) -> np.ndarray:
    return np.array(json.loads(text), dtype=np.float64)
