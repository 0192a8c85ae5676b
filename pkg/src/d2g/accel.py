"""Hot numeric kernels: batched MLP forward, per-example Jacobians, and
vector-Jacobian products.

Two interchangeable implementations live here. The default one is compiled
with numba (explicit loop nests, fast for the small layer widths this
package targets); the fallback is vectorized numpy. Selection happens once
at import time from the ``D2G_DISABLE_NUMBA`` environment variable, and
``benchmarks/bench_backends.py`` times one against the other.

Conventions shared by every kernel:

* ``params`` is the flat float64 parameter vector: per layer, the weight
  matrix in row-major ``(out, in)`` order followed by the bias vector,
  layers in forward order.
* ``dims`` is the int64 array ``[input, hidden..., output]``.
* ``act_id`` is 0 for tanh, 1 for sigmoid. Hidden layers are activated,
  the output layer is linear.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLE = os.environ.get("D2G_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
}

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLE

ACT_TANH = 0
ACT_SIGMOID = 1


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations (vectorized over the batch)
# ---------------------------------------------------------------------------


def _act_np(z: np.ndarray, act_id: int) -> np.ndarray:
    if act_id == ACT_TANH:
        return np.tanh(z)
    return 1.0 / (1.0 + np.exp(-z))


def _act_prime_from_value(a: np.ndarray, act_id: int) -> np.ndarray:
    # derivative expressed through the activation value itself
    if act_id == ACT_TANH:
        return 1.0 - a * a
    return a * (1.0 - a)


def _layer_params(params, dims, layer):
    pos = 0
    for l in range(layer):
        pos += (dims[l] + 1) * dims[l + 1]
    din, dout = dims[layer], dims[layer + 1]
    w = params[pos : pos + din * dout].reshape(dout, din)
    b = params[pos + din * dout : pos + (din + 1) * dout]
    return w, b, pos


def _forward_np(params, dims, act_id, x):
    nlayers = len(dims) - 1
    a = x
    for l in range(nlayers):
        w, b, _ = _layer_params(params, dims, l)
        z = a @ w.T + b
        a = z if l == nlayers - 1 else _act_np(z, act_id)
    return a


def _forward_jac_np(params, dims, act_id, x):
    n = x.shape[0]
    nlayers = len(dims) - 1
    k = int(dims[-1])
    p = params.shape[0]

    acts = [x]
    for l in range(nlayers):
        w, b, _ = _layer_params(params, dims, l)
        z = acts[-1] @ w.T + b
        acts.append(z if l == nlayers - 1 else _act_np(z, act_id))
    out = acts[-1]

    jac = np.empty((n, k, p))
    w_out, _, pos_out = _layer_params(params, dims, nlayers - 1)
    din = int(dims[nlayers - 1])
    # output-layer weights: row k of the Jacobian only sees its own weights
    block = np.einsum("kj,ni->nkji", np.eye(k), acts[nlayers - 1])
    jac[:, :, pos_out : pos_out + k * din] = block.reshape(n, k, k * din)
    jac[:, :, pos_out + k * din : pos_out + k * din + k] = np.broadcast_to(
        np.eye(k), (n, k, k)
    )
    grad = np.broadcast_to(w_out, (n, k, din)).copy()

    for l in range(nlayers - 1, 0, -1):
        w, _, pos = _layer_params(params, dims, l - 1)
        din, dout = int(dims[l - 1]), int(dims[l])
        delta = grad * _act_prime_from_value(acts[l], act_id)[:, None, :]
        jac[:, :, pos : pos + dout * din] = np.einsum(
            "nko,ni->nkoi", delta, acts[l - 1]
        ).reshape(n, k, dout * din)
        jac[:, :, pos + dout * din : pos + (din + 1) * dout] = delta
        grad = np.einsum("nko,oi->nki", delta, w)
    return out, jac


def _vjp_np(params, dims, act_id, x, cotangent):
    n = x.shape[0]
    nlayers = len(dims) - 1

    acts = [x]
    for l in range(nlayers):
        w, b, _ = _layer_params(params, dims, l)
        z = acts[-1] @ w.T + b
        acts.append(z if l == nlayers - 1 else _act_np(z, act_id))

    g = np.zeros_like(params)
    delta = cotangent
    for l in range(nlayers - 1, -1, -1):
        w, _, pos = _layer_params(params, dims, l)
        din, dout = int(dims[l]), int(dims[l + 1])
        g[pos : pos + dout * din] = (delta.T @ acts[l]).ravel()
        g[pos + dout * din : pos + (din + 1) * dout] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ w) * _act_prime_from_value(acts[l], act_id)
    return g


# ---------------------------------------------------------------------------
# numba implementations (explicit loops; same arithmetic, per-example order)
# ---------------------------------------------------------------------------


def _forward_nb_py(params, dims, act_id, x):
    n = x.shape[0]
    nlayers = dims.shape[0] - 1
    widest = 0
    for l in range(nlayers + 1):
        if dims[l] > widest:
            widest = dims[l]
    cur = np.empty((n, widest))
    nxt = np.empty((n, widest))
    for i in range(n):
        for j in range(dims[0]):
            cur[i, j] = x[i, j]
    pos = 0
    for l in range(nlayers):
        din = dims[l]
        dout = dims[l + 1]
        for i in range(n):
            for o in range(dout):
                s = params[pos + din * dout + o]
                woff = pos + o * din
                for j in range(din):
                    s += params[woff + j] * cur[i, j]
                if l < nlayers - 1:
                    if act_id == 0:
                        s = math.tanh(s)
                    else:
                        s = 1.0 / (1.0 + math.exp(-s))
                nxt[i, o] = s
        pos += (din + 1) * dout
        cur, nxt = nxt, cur
    k = dims[nlayers]
    out = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = cur[i, j]
    return out


def _forward_jac_nb_py(params, dims, act_id, x):
    n = x.shape[0]
    nlayers = dims.shape[0] - 1
    k = dims[nlayers]
    p = params.shape[0]
    widest = 0
    for l in range(nlayers + 1):
        if dims[l] > widest:
            widest = dims[l]

    acts = np.zeros((nlayers + 1, n, widest))
    for i in range(n):
        for j in range(dims[0]):
            acts[0, i, j] = x[i, j]
    wpos = np.zeros(nlayers, np.int64)
    pos = 0
    for l in range(nlayers):
        din = dims[l]
        dout = dims[l + 1]
        wpos[l] = pos
        for i in range(n):
            for o in range(dout):
                s = params[pos + din * dout + o]
                woff = pos + o * din
                for j in range(din):
                    s += params[woff + j] * acts[l, i, j]
                if l < nlayers - 1:
                    if act_id == 0:
                        s = math.tanh(s)
                    else:
                        s = 1.0 / (1.0 + math.exp(-s))
                acts[l + 1, i, o] = s
        pos += (din + 1) * dout

    out = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = acts[nlayers, i, j]

    jac = np.zeros((n, k, p))
    pos_out = wpos[nlayers - 1]
    din = dims[nlayers - 1]
    grad = np.zeros((n, k, widest))
    for i in range(n):
        for c in range(k):
            base = pos_out + c * din
            for j in range(din):
                jac[i, c, base + j] = acts[nlayers - 1, i, j]
                grad[i, c, j] = params[base + j]
            jac[i, c, pos_out + k * din + c] = 1.0

    for l in range(nlayers - 1, 0, -1):
        din = dims[l - 1]
        dout = dims[l]
        pos = wpos[l - 1]
        nxt_grad = np.zeros((n, k, widest))
        for i in range(n):
            for c in range(k):
                for o in range(dout):
                    a = acts[l, i, o]
                    if act_id == 0:
                        ap = 1.0 - a * a
                    else:
                        ap = a * (1.0 - a)
                    d = grad[i, c, o] * ap
                    base = pos + o * din
                    for j in range(din):
                        jac[i, c, base + j] = d * acts[l - 1, i, j]
                        nxt_grad[i, c, j] += d * params[base + j]
                    jac[i, c, pos + dout * din + o] = d
        grad = nxt_grad
    return out, jac


def _vjp_nb_py(params, dims, act_id, x, cotangent):
    n = x.shape[0]
    nlayers = dims.shape[0] - 1
    p = params.shape[0]
    widest = 0
    for l in range(nlayers + 1):
        if dims[l] > widest:
            widest = dims[l]

    acts = np.zeros((nlayers + 1, n, widest))
    for i in range(n):
        for j in range(dims[0]):
            acts[0, i, j] = x[i, j]
    wpos = np.zeros(nlayers, np.int64)
    pos = 0
    for l in range(nlayers):
        din = dims[l]
        dout = dims[l + 1]
        wpos[l] = pos
        for i in range(n):
            for o in range(dout):
                s = params[pos + din * dout + o]
                woff = pos + o * din
                for j in range(din):
                    s += params[woff + j] * acts[l, i, j]
                if l < nlayers - 1:
                    if act_id == 0:
                        s = math.tanh(s)
                    else:
                        s = 1.0 / (1.0 + math.exp(-s))
                acts[l + 1, i, o] = s
        pos += (din + 1) * dout

    g = np.zeros(p)
    delta = np.zeros((n, widest))
    for i in range(n):
        for o in range(dims[nlayers]):
            delta[i, o] = cotangent[i, o]

    for l in range(nlayers - 1, -1, -1):
        din = dims[l]
        dout = dims[l + 1]
        pos = wpos[l]
        for i in range(n):
            for o in range(dout):
                d = delta[i, o]
                base = pos + o * din
                for j in range(din):
                    g[base + j] += d * acts[l, i, j]
                g[pos + dout * din + o] += d
        if l > 0:
            nxt = np.zeros((n, widest))
            for i in range(n):
                for j in range(din):
                    s = 0.0
                    for o in range(dout):
                        s += delta[i, o] * params[pos + o * din + j]
                    a = acts[l, i, j]
                    if act_id == 0:
                        ap = 1.0 - a * a
                    else:
                        ap = a * (1.0 - a)
                    nxt[i, j] = s * ap
            delta = nxt
    return g


if USE_NUMBA:
    _forward_nb = njit(cache=True)(_forward_nb_py)
    _forward_jac_nb = njit(cache=True)(_forward_jac_nb_py)
    _vjp_nb = njit(cache=True)(_vjp_nb_py)


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------


def _prep(params, dims, x):
    params = np.ascontiguousarray(params, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return params, dims, x


def batch_forward(params, dims, act_id, x):
    """Outputs of the network at every row of ``x``; shape (N, K)."""
    params, dims, x = _prep(params, dims, x)
    if USE_NUMBA:
        return _forward_nb(params, dims, act_id, x)
    return _forward_np(params, dims, act_id, x)


def batch_forward_jacobian(params, dims, act_id, x):
    """Outputs (N, K) and per-example Jacobians (N, K, P)."""
    params, dims, x = _prep(params, dims, x)
    if USE_NUMBA:
        return _forward_jac_nb(params, dims, act_id, x)
    return _forward_jac_np(params, dims, act_id, x)


def batch_vjp(params, dims, act_id, x, cotangent):
    """Accumulated vector-Jacobian product sum_n J_n^T c_n; shape (P,).

    One backward sweep for the whole batch; used for loss gradients where
    the per-example Jacobians themselves are not needed.
    """
    params, dims, x = _prep(params, dims, x)
    cotangent = np.ascontiguousarray(cotangent, dtype=np.float64)
    if USE_NUMBA:
        return _vjp_nb(params, dims, act_id, x, cotangent)
    return _vjp_np(params, dims, act_id, x, cotangent)
