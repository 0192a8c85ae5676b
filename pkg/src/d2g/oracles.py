"""Reference implementations used to validate the main code paths.

Everything here is deliberately independent of the module it checks:
conjugate linear-model posteriors are formed by direct normal equations
through numpy.linalg, GP predictives and evidence are computed densely in
function space, derivatives come from central finite differences, and the
MLP forward pass has a straight-line scalar recomputation. The CLI exposes
these through ``d2g verify``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleReport:
    name: str
    max_rel_err: float
    tolerance: float
    passed: bool
    detail: str = ""
    runtime_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "max_rel_err": self.max_rel_err,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "detail": self.detail,
            "runtime_s": round(self.runtime_s, 3),
        }


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float | None = None) -> float:
    """Largest entrywise relative error, with tiny entries compared absolutely.

    Entries where both |a| and |b| fall below the floor (1e-12 times the
    overall scale by default) contribute their absolute difference divided
    by the floor instead of a blown-up ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return float(np.max(np.abs(a - b), initial=0.0))
    if floor is None:
        floor = 1e-12 * scale
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom, initial=0.0))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def fd_gradient(fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    point = np.asarray(point, dtype=np.float64)
    g = np.zeros_like(point)
    for i in range(point.size):
        d = np.zeros_like(point)
        d[i] = step
        g[i] = (fn(point + d) - fn(point - d)) / (2.0 * step)
    return g


def fd_hessian(fn, point: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of a scalar function, symmetrized."""
    point = np.asarray(point, dtype=np.float64)
    p = point.size
    h = np.zeros((p, p))
    f0 = fn(point)
    for i in range(p):
        di = np.zeros(p)
        di[i] = step
        h[i, i] = (fn(point + di) - 2.0 * f0 + fn(point - di)) / step**2
        for j in range(i + 1, p):
            dj = np.zeros(p)
            dj[j] = step
            v = (
                fn(point + di + dj)
                - fn(point + di - dj)
                - fn(point - di + dj)
                + fn(point - di - dj)
            ) / (4.0 * step**2)
            h[i, j] = v
            h[j, i] = v
    return 0.5 * (h + h.T)


def fd_jacobian(fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function; shape (K, P)."""
    point = np.asarray(point, dtype=np.float64)
    cols = []
    for i in range(point.size):
        d = np.zeros_like(point)
        d[i] = step
        cols.append((fn(point + d) - fn(point - d)) / (2.0 * step))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# conjugate linear-model posterior by direct normal equations
# ---------------------------------------------------------------------------


def ridge_posterior(
    jacs,
    lams,
    ys,
    delta: float,
    prior_mean: np.ndarray | None = None,
    prior_prec: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact Gaussian posterior of a heteroscedastic linear model.

    Observations y_i = J_i w + e_i with e_i ~ N(0, lam_i^{-1}) and prior
    N(prior_mean, prior_prec^{-1}) (defaults to N(0, I/delta)). Solved by
    dense normal equations with numpy.linalg only.
    """
    p = np.asarray(jacs[0]).shape[1] if len(jacs) else prior_prec.shape[0]
    a = np.asarray(prior_prec, dtype=np.float64).copy() if prior_prec is not None else delta * np.eye(p)
    m0 = np.zeros(p) if prior_mean is None else np.asarray(prior_mean, dtype=np.float64)
    b = a @ m0
    for jac, lam, y in zip(jacs, lams, ys):
        jac = np.atleast_2d(np.asarray(jac, dtype=np.float64))
        lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        a = a + jac.T @ lam @ jac
        b = b + jac.T @ (lam @ y)
    cov = np.linalg.inv(a)
    cov = 0.5 * (cov + cov.T)
    mean = np.linalg.solve(a, b)
    return mean, cov


def irls_logistic(
    jacs, ys, delta: float, max_iter: int = 200, tol: float = 1e-13
) -> np.ndarray:
    """Newton iteration for the regularized logistic loss of a linear model.

    For a model linear in its parameters the Gauss-Newton matrix is the
    exact Hessian, so this converges quadratically to the stationary point.
    """
    p = np.asarray(jacs[0]).shape[1]
    w = np.zeros(p)
    for _ in range(max_iter):
        g = delta * w
        h = delta * np.eye(p)
        for jac, y in zip(jacs, ys):
            jac = np.atleast_2d(np.asarray(jac, dtype=np.float64))
            z = float(jac[0] @ w)
            prob = 1.0 / (1.0 + math.exp(-z))
            g = g + jac[0] * (prob - y)
            h = h + (prob * (1.0 - prob)) * np.outer(jac[0], jac[0])
        stepv = np.linalg.solve(h, g)
        w = w - stepv
        if np.linalg.norm(g) < tol:
            break
    return w


# ---------------------------------------------------------------------------
# dense function-space GP
# ---------------------------------------------------------------------------


def gp_function_space(
    samples,
    delta: float,
    test_jacs=None,
) -> dict:
    """GP regression done densely in function space.

    Builds the full NK x NK kernel with blocks J_i J_j^T / delta, adds the
    heteroscedastic noise blocks lam_i^{-1}, and returns the latent
    predictive mean/covariance at each test Jacobian plus the log evidence
    of the stacked observations under N(0, kernel + noise).
    """
    jacs = [np.atleast_2d(np.asarray(s.jac, dtype=np.float64)) for s in samples]
    lams = [np.atleast_2d(np.asarray(s.lam, dtype=np.float64)) for s in samples]
    ys = [np.atleast_1d(np.asarray(s.y_tilde, dtype=np.float64)) for s in samples]

    jstack = np.vstack(jacs)  # (NK, P)
    ystack = np.concatenate(ys)
    nk = jstack.shape[0]
    kernel = jstack @ jstack.T / delta
    noise = np.zeros((nk, nk))
    pos = 0
    for lam in lams:
        k = lam.shape[0]
        noise[pos : pos + k, pos : pos + k] = np.linalg.inv(lam)
        pos += k

    gram = kernel + noise
    lower = np.linalg.cholesky(gram)
    alpha = np.linalg.solve(lower.T, np.linalg.solve(lower, ystack))
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(lower))))
    evidence = -0.5 * (
        float(ystack @ alpha) + logdet + nk * math.log(2.0 * math.pi)
    )

    means, covs = [], []
    if test_jacs is not None:
        for jac_star in test_jacs:
            jac_star = np.atleast_2d(np.asarray(jac_star, dtype=np.float64))
            cross = jac_star @ jstack.T / delta  # (K*, NK)
            means.append(cross @ alpha)
            v = np.linalg.solve(lower, cross.T)
            covs.append(jac_star @ jac_star.T / delta - v.T @ v)
    return {"evidence": evidence, "means": means, "covs": covs}


# ---------------------------------------------------------------------------
# straight-line scalar recomputation of the MLP forward pass
# ---------------------------------------------------------------------------


def scalar_forward_reference(cfg, w, x) -> np.ndarray:
    """Forward pass recomputed with plain Python floats, no numpy math."""
    dims = [cfg.input_dim, *cfg.hidden, cfg.output_dim]
    values = [float(v) for v in x]
    wl = [float(v) for v in w]
    pos = 0
    for layer in range(len(dims) - 1):
        din, dout = dims[layer], dims[layer + 1]
        nxt = []
        for o in range(dout):
            s = wl[pos + din * dout + o]
            for i in range(din):
                s += wl[pos + o * din + i] * values[i]
            if layer < len(dims) - 2:
                if cfg.activation == "tanh":
                    s = math.tanh(s)
                else:
                    s = 1.0 / (1.0 + math.exp(-s))
            nxt.append(s)
        values = nxt
        pos += (din + 1) * dout
    return np.array(values)


# ---------------------------------------------------------------------------
# verification suites (criteria 1-6), shared by tests and `d2g verify`
# ---------------------------------------------------------------------------


def _timed(name, tol, fn) -> OracleReport:
    start = time.time()
    err, detail = fn()
    took = time.time() - start
    return OracleReport(
        name=name,
        max_rel_err=float(err),
        tolerance=tol,
        passed=bool(err < tol),
        detail=detail,
        runtime_s=took,
    )


def verify_theorem_laplace(n_instances: int = 50, seed: int = 0) -> OracleReport:
    """Laplace-GGN posterior vs transformed-data linear-model posterior."""
    from d2g import losses, mlp
    from d2g.linearize import linear_posterior, transform_dataset
    from d2g.posterior import laplace_ggn

    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_instances):
        kdim = int(rng.integers(1, 4))
        ddim = int(rng.integers(1, 8))
        n = int(rng.integers(2, 51))
        use_logistic = trial % 2 == 1
        if use_logistic:
            kdim = 1
        cfg = mlp.MlpConfig(input_dim=ddim, hidden=(), output_dim=kdim)
        delta = float(rng.uniform(0.5, 3.0))
        x = rng.normal(size=(n, ddim))
        _, jacs_all = mlp.batch_jacobian(cfg, np.zeros(mlp.param_count(cfg)), x)
        if use_logistic:
            kind = losses.Logistic()
            y = rng.integers(0, 2, size=n).astype(np.float64)
            w_star = irls_logistic([jacs_all[i] for i in range(n)], y, delta)
        else:
            kind = losses.Squared(sigma2=float(rng.uniform(0.3, 2.0)))
            y = rng.normal(size=(n, kdim))
            lam = np.eye(kdim) / kind.sigma2
            w_star, _ = ridge_posterior(
                [jacs_all[i] for i in range(n)], [lam] * n, list(y), delta
            )
        approx = laplace_ggn(cfg, kind, x, y, w_star, delta, mode="full")
        tsamples = transform_dataset(cfg, kind, x, y, approx)
        lin = linear_posterior(
            tsamples, np.zeros(w_star.size), delta * np.eye(w_star.size)
        )
        worst = max(worst, max_rel_err(lin.mean, approx.mean))
        worst = max(worst, max_rel_err(lin.cov, approx.cov))
    return worst, f"{n_instances} linear instances, squared+logistic"


def verify_theorem_vi_step(n_instances: int = 50, seed: int = 1) -> OracleReport:
    """One full-matrix natural-gradient VI step vs its linear-model posterior."""
    from d2g import losses, mlp
    from d2g.linearize import (
        linear_posterior,
        transform_dataset,
        transform_dataset_stacked,
        voggn_linear_prior,
    )
    from d2g.optim import VognState, vogn_step
    from d2g.posterior import vi_posterior

    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_instances):
        # strictly convex losses only: the equivalence needs an invertible
        # noise precision, which softmax lacks without damping
        use_logistic = trial % 2 == 1
        kdim = 1 if use_logistic else int(rng.integers(1, 3))
        ddim = int(rng.integers(1, 4))
        hidden = (int(rng.integers(2, 6)),)
        cfg = mlp.MlpConfig(input_dim=ddim, hidden=hidden, output_dim=kdim)
        p = mlp.param_count(cfg)
        n = int(rng.integers(2, 8))
        x = rng.normal(size=(n, ddim))
        if use_logistic:
            kind = losses.Logistic()
            y = rng.integers(0, 2, size=n).astype(np.float64)
        else:
            kind = losses.Squared(sigma2=float(rng.uniform(0.5, 2.0)))
            y = rng.normal(size=(n, kdim))
        delta = float(rng.uniform(0.5, 2.0))
        beta = float(rng.uniform(0.2, 0.9))
        mu = rng.normal(size=p) * 0.5
        g = rng.normal(size=(p, p))
        s_full = g @ g.T / p + 0.5 * np.eye(p)

        n_mc = 1 if trial % 3 else 3
        state = VognState(
            mu=mu.copy(), s=s_full.copy(), delta=delta, beta=beta,
            num_samples=n_mc, rng=np.random.default_rng(seed + trial),
        )
        q_t = vi_posterior(state)
        if n_mc == 1:
            new = vogn_step(cfg, kind, x, y, state, pin_to_mean=True)
            tsamples = transform_dataset(cfg, kind, x, y, q_t)
            lam_scale = beta
        else:
            draws = rng.normal(size=(n_mc, p)) * 0.3 + mu
            new = vogn_step(cfg, kind, x, y, state, samples=draws)
            tsamples = transform_dataset_stacked(cfg, kind, x, y, mu, draws)
            lam_scale = beta / n_mc
        m_t, v_t = voggn_linear_prior(q_t, beta, delta)
        lin = linear_posterior(
            tsamples, m_t, np.linalg.inv(v_t), lam_scale=lam_scale
        )
        q_next = vi_posterior(new)
        worst = max(worst, max_rel_err(lin.mean, q_next.mean))
        worst = max(worst, max_rel_err(lin.cov, q_next.cov))
    return worst, f"{n_instances} full-matrix steps incl. 3-sample stacking"


def verify_ggn_exactness(seed: int = 2) -> OracleReport:
    """Gauss-Newton curvature vs finite-difference Hessians."""
    from d2g import losses, mlp
    from d2g.optim import OggnState, oggn_step

    rng = np.random.default_rng(seed)
    worst = 0.0
    # linear networks: exact equality up to fd error
    for trial in range(10):
        kdim = int(rng.integers(1, 3))
        ddim = int(rng.integers(1, 5))
        cfg = mlp.MlpConfig(input_dim=ddim, hidden=(), output_dim=kdim)
        p = mlp.param_count(cfg)
        n = int(rng.integers(2, 6))
        x = rng.normal(size=(n, ddim))
        if trial % 2:
            kind = losses.Logistic()
            kdim = 1
            cfg = mlp.MlpConfig(input_dim=ddim, hidden=(), output_dim=1)
            p = mlp.param_count(cfg)
            y = rng.integers(0, 2, size=n).astype(np.float64)
        else:
            kind = losses.Squared(sigma2=1.0)
            y = rng.normal(size=(n, kdim))
        w = rng.normal(size=p) * 0.3
        f, jacs = mlp.batch_jacobian(cfg, w, x)
        ggn = sum(
            losses.ggn_term(jacs[i], losses.noise_precision(kind, f[i]))
            for i in range(n)
        )
        hess = fd_hessian(
            lambda v: losses.data_loss(kind, cfg, v, x, y), w, step=3e-4
        )
        err = np.linalg.norm(ggn - hess) / np.linalg.norm(hess)
        worst = max(worst, err)
    lin_err = worst

    # nonlinear network trained to near-zero residuals
    cfg = mlp.MlpConfig(input_dim=1, hidden=(8,), output_dim=1)
    x = np.array([[-1.0], [0.2], [0.9]])
    y = np.array([[0.3], [-0.4], [0.5]])
    kind = losses.Squared(sigma2=1.0)
    state = OggnState(
        w=mlp.init_params(cfg, 0), s=np.zeros((mlp.param_count(cfg),) * 2),
        delta=1e-9, beta=0.9,
    )
    for _ in range(300):
        state = oggn_step(cfg, kind, x, y, state)
    f, jacs = mlp.batch_jacobian(cfg, state.w, x)
    res_norm = float(np.linalg.norm(losses.batch_residual(kind, y, f)))
    ggn = sum(
        losses.ggn_term(jacs[i], losses.noise_precision(kind, f[i]))
        for i in range(x.shape[0])
    )
    hess = fd_hessian(lambda v: losses.data_loss(kind, cfg, v, x, y), state.w, step=3e-4)
    nl_err = np.linalg.norm(ggn - hess) / np.linalg.norm(hess)
    # report whichever suite came closer to its own budget
    score = max(lin_err / 1e-6, nl_err / 1e-3)
    return score, (
        f"linear err {lin_err:.2e} (tol 1e-6), trained err {nl_err:.2e} "
        f"(tol 1e-3, residual {res_norm:.1e}); reported as max ratio to tolerance"
    )


def verify_gradient_identity(n_instances: int = 100, seed: int = 3) -> OracleReport:
    """J^T r vs finite differences of the composed loss.

    Agreement is measured on the gradient vector norm; per-entry ratios on
    near-zero entries only resolve finite-difference roundoff.
    """
    from d2g import losses, mlp

    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_instances):
        ddim = int(rng.integers(1, 5))
        hidden = tuple(
            int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3)))
        )
        kdim = int(rng.integers(1, 4))
        act = "tanh" if trial % 2 else "sigmoid"
        mode = trial % 3
        if mode == 1:
            kind, kdim = losses.Logistic(), 1
            y = float(rng.integers(0, 2))
        elif mode == 2:
            kdim = max(kdim, 2)
            kind = losses.Softmax(num_classes=kdim)
            y = int(rng.integers(0, kdim))
        else:
            kind = losses.Squared(sigma2=float(rng.uniform(0.5, 2.0)))
            y = rng.normal(size=kdim)
        cfg = mlp.MlpConfig(input_dim=ddim, hidden=hidden, output_dim=kdim, activation=act)
        w = rng.normal(size=mlp.param_count(cfg)) * 0.7
        x = rng.normal(size=ddim)
        f = mlp.forward(cfg, w, x)
        jac = mlp.jacobian(cfg, w, x)
        g = losses.grad_via_identity(kind, y, jac, f)
        g_fd = fd_gradient(
            lambda v: losses.loss_value(kind, y, mlp.forward(cfg, v, x)), w
        )
        err = float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12))
        worst = max(worst, err)
    return worst, f"{n_instances} random networks, all three losses"


def verify_duality(n_trials: int = 100, seed: int = 4) -> OracleReport:
    """Weight-space posterior predictive and evidence vs dense GP."""
    from d2g.evidence import log_marginal_likelihood
    from d2g.linearize import TransformedSample, linear_posterior

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        kdim = int(rng.integers(1, 4))
        n = int(rng.integers(1, 9))
        p = int(rng.integers(kdim, 30))
        delta = float(rng.uniform(0.5, 2.0))
        samples = []
        for i in range(n):
            jac = rng.normal(size=(kdim, p)) / math.sqrt(p)
            q = rng.normal(size=(kdim, kdim))
            lam = q @ q.T + 0.5 * np.eye(kdim)
            y = rng.normal(size=kdim)
            samples.append(
                TransformedSample(index=i, x=np.zeros(1), y_tilde=y, lam=lam, jac=jac)
            )
        test_jacs = [rng.normal(size=(kdim, p)) for _ in range(3)]
        lin = linear_posterior(samples, np.zeros(p), delta * np.eye(p))
        ora = gp_function_space(samples, delta, test_jacs=test_jacs)
        for t, jac_star in enumerate(test_jacs):
            worst = max(worst, max_rel_err(jac_star @ lin.mean, ora["means"][t]))
            worst = max(
                worst, max_rel_err(jac_star @ lin.cov @ jac_star.T, ora["covs"][t])
            )
        ev = log_marginal_likelihood(samples, delta)
        worst = max(
            worst,
            abs(ev.log_ml - ora["evidence"]) / max(1.0, abs(ora["evidence"])),
        )
    return worst, f"{n_trials} random instances, NK <= 32"


def verify_kernels(n_trials: int = 20, seed: int = 5) -> OracleReport:
    """Symmetry, PSD, and per-class summation of tangent kernel matrices.

    Reported as the worst ratio of each check to its own budget, so the
    suite passes when the score stays below 1.
    """
    from d2g.linearize import ntk_kernel

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        n = int(rng.integers(2, 12))
        kdim = int(rng.integers(1, 4))
        p = int(rng.integers(3, 25))
        delta = float(rng.uniform(0.25, 4.0))
        jacs = rng.normal(size=(n, kdim, p))
        for summarized in (False, True):
            km = ntk_kernel(jacs, delta, summarized=summarized)
            m = km.entries
            sym = float(np.max(np.abs(m - m.T), initial=0.0))
            worst = max(worst, sym / 1e-12)
            eigs = np.linalg.eigvalsh(m)
            bound = -1e-8 * np.trace(m) / m.shape[0]
            if eigs[0] < bound:
                worst = max(worst, eigs[0] / bound)
        summarized_m = ntk_kernel(jacs, delta, summarized=True).entries
        per_class = sum(
            ntk_kernel(jacs[:, k : k + 1, :], delta, summarized=False).entries
            for k in range(kdim)
        )
        if not np.array_equal(summarized_m, per_class):
            worst = max(worst, 2.0)
    return worst, f"{n_trials} random Jacobian sets; score is worst check/budget"


def verify_all(seed: int = 0) -> list[OracleReport]:
    """Run the six equivalence/property suites behind `d2g verify`."""
    return [
        _timed("laplace_linear_model_equivalence", 1e-9,
               lambda: verify_theorem_laplace(seed=seed)),
        _timed("vi_step_linear_model_equivalence", 1e-9,
               lambda: verify_theorem_vi_step(seed=seed + 1)),
        _timed("ggn_vs_fd_hessian", 1.0,
               lambda: verify_ggn_exactness(seed=seed + 2)),
        _timed("gradient_identity_vs_fd", 1e-5,
               lambda: verify_gradient_identity(seed=seed + 3)),
        _timed("weight_vs_function_space", 1e-8,
               lambda: verify_duality(seed=seed + 4)),
        _timed("kernel_properties", 1.0,
               lambda: verify_kernels(seed=seed + 5)),
    ]
