"""Log marginal likelihood of the transformed data under the equivalent
linear model, and grid sweeps that use it to pick hyperparameters.

The evidence integrates the weights out of

    prod_i N(y_tilde_i | J_i w, lam_i^{-1}) * N(w | 0, I / delta)

and is computed in weight space:

    -0.5 * [ sum_i (y_i^T lam_i y_i + log det(2 pi lam_i^{-1}))
             - m^T A m - P log delta + log det A ]

with A = delta I + sum_i J_i^T lam_i J_i and m = A^{-1} sum_i J_i^T lam_i y_i.
The three reported pieces (data fit, complexity, constant) add up to the
total exactly. Accumulation sorts samples by their dataset index first, so
the result is bit-identical under permutations of the input list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from d2g import linalg
from d2g.errors import ConfigError


@dataclass(frozen=True)
class EvidenceResult:
    log_ml: float
    n_points: int
    delta: float
    sigma2: float | None
    data_fit: float
    complexity: float
    constant: float


def log_marginal_likelihood(samples, delta: float,
                            sigma2: float | None = None) -> EvidenceResult:
    """Evidence of the linear model over the given transformed samples.

    An empty sample list integrates the prior alone and returns zero.
    ``sigma2`` is carried through for reporting only.
    """
    if not delta > 0:
        raise ConfigError("prior precision delta must be > 0")
    if not samples:
        return EvidenceResult(log_ml=0.0, n_points=0, delta=delta, sigma2=sigma2,
                              data_fit=0.0, complexity=0.0, constant=0.0)
    ordered = sorted(samples, key=lambda t: t.index)
    p = ordered[0].jac.shape[1]
    a = delta * np.eye(p)
    rhs = np.zeros(p)
    quad = 0.0
    const = 0.0
    for ts in ordered:
        lam = np.atleast_2d(ts.lam)
        jac = np.atleast_2d(ts.jac)
        y = np.atleast_1d(ts.y_tilde)
        k = lam.shape[0]
        a += jac.T @ (lam @ jac)
        rhs += jac.T @ (lam @ y)
        quad += float(y @ (lam @ y))
        # log det(2 pi lam^{-1}) = k log 2 pi - log det lam
        const += k * math.log(2.0 * math.pi) - linalg.logdet_psd(linalg.cholesky(lam))
    factor = linalg.cholesky(a)
    m = linalg.solve_psd(factor, rhs)
    logdet_a = linalg.logdet_psd(factor)

    data_fit = -0.5 * (quad - float(m @ (a @ m)))
    complexity = -0.5 * (logdet_a - p * math.log(delta))
    constant = -0.5 * const
    return EvidenceResult(
        log_ml=data_fit + complexity + constant,
        n_points=len(ordered),
        delta=delta,
        sigma2=sigma2,
        data_fit=data_fit,
        complexity=complexity,
        constant=constant,
    )


# ---------------------------------------------------------------------------
# hyperparameter sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepCell:
    param_name: str
    param_value: float
    repeat: int
    train_mse: float | None
    test_mse: float | None
    log_ml: float | None
    error: str = ""


def _mse(cfg, w, x, y) -> float:
    from d2g import mlp

    pred = mlp.batch_forward(cfg, w, x)
    return float(np.mean((pred - y) ** 2))


def run_cell(config: dict, param_name: str, value, seed: int) -> SweepCell:
    """Train once under the modified config and score the three columns."""
    from d2g import losses as losses_mod
    from d2g import mlp
    from d2g.datasets import make_dataset, split
    from d2g.linearize import transform_dataset
    from d2g.optim import train
    from d2g.posterior import laplace_ggn, vi_posterior

    cfg_dict = {k: (dict(v) if isinstance(v, dict) else v) for k, v in config.items()}
    if param_name == "delta":
        cfg_dict["delta"] = float(value)
    elif param_name == "sigma2":
        cfg_dict["loss"]["sigma2"] = float(value)
    elif param_name == "width":
        cfg_dict["model"]["hidden"] = [int(value)] * len(cfg_dict["model"]["hidden"])
    else:
        raise ConfigError(f"unknown sweep parameter {param_name!r}")

    ds = make_dataset(cfg_dict["dataset"], seed=seed)
    train_ds, test_ds = split(ds, cfg_dict.get("test_fraction", 0.5), seed=seed)

    model = mlp.MlpConfig(
        input_dim=cfg_dict["model"]["input_dim"],
        hidden=tuple(cfg_dict["model"]["hidden"]),
        output_dim=cfg_dict["model"]["output_dim"],
        activation=cfg_dict["model"].get("activation", "tanh"),
    )
    kind = losses_mod.Squared(sigma2=float(cfg_dict["loss"].get("sigma2", 1.0)))
    opt = cfg_dict.get("optimizer", {})
    delta = float(cfg_dict["delta"])

    report = train(
        model, kind, train_ds.inputs, train_ds.targets,
        optimizer=opt.get("kind", "adam"),
        epochs=int(opt.get("epochs", 1000)),
        seed=seed,
        delta=delta,
        alpha=float(opt.get("alpha", 1e-3)),
        beta=float(opt.get("beta", 0.1)),
        num_samples=int(opt.get("num_samples", 1)),
    )
    w = report.final_params
    if opt.get("kind") == "vogn":
        anchor = vi_posterior(report.final_state)
    else:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            anchor = laplace_ggn(model, kind, train_ds.inputs, train_ds.targets,
                                 w, delta, mode="full")
    tsamples = transform_dataset(model, kind, train_ds.inputs, train_ds.targets,
                                 anchor)
    ev = log_marginal_likelihood(tsamples, delta, sigma2=kind.sigma2)
    return SweepCell(
        param_name=param_name,
        param_value=float(value),
        repeat=seed,
        train_mse=_mse(model, w, train_ds.inputs, train_ds.targets),
        test_mse=_mse(model, w, test_ds.inputs, test_ds.targets),
        log_ml=ev.log_ml,
    )


def sweep(config: dict, jobs: int = 1, progress=None) -> list[SweepCell]:
    """Run the grid from config["sweep"]; failures become error rows.

    Cell seeds derive from (master seed, cell index) so results do not
    depend on execution order; rows come back sorted by (value, repeat).
    """
    spec = config.get("sweep")
    if not spec:
        raise ConfigError("config has no sweep section")
    values = spec["values"]
    repeats = int(spec.get("repeats", 1))
    if not values or repeats < 1:
        raise ConfigError("sweep needs a nonempty grid and repeats >= 1")
    master = int(config.get("seed", 0))
    param = spec["param"]

    tasks = [
        (vi, value, rep, master + 7919 * (vi * repeats + rep))
        for vi, value in enumerate(values)
        for rep in range(repeats)
    ]

    def run_one(task):
        vi, value, rep, seed = task
        try:
            cell = run_cell(config, param, value, seed)
            cell.repeat = rep
            return (vi, rep, cell)
        except Exception as exc:  # recorded, not fatal
            return (vi, rep, SweepCell(param_name=param, param_value=float(value),
                                       repeat=rep, train_mse=None, test_mse=None,
                                       log_ml=None, error=f"{type(exc).__name__}: {exc}"))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = []
        for task in tasks:
            results.append(run_one(task))
            if progress is not None:
                progress(f"cell {param}={task[1]} repeat {task[2]} done")
    results.sort(key=lambda t: (t[0], t[1]))
    return [cell for _, _, cell in results]


def aggregate(cells: list[SweepCell]) -> list[dict]:
    """Mean and standard error per grid value, keeping grid order."""
    rows = []
    seen = []
    for cell in cells:
        if cell.param_value not in seen:
            seen.append(cell.param_value)
    for value in seen:
        group = [c for c in cells if c.param_value == value and not c.error]
        failed = [c for c in cells if c.param_value == value and c.error]
        row = {"param_name": cells[0].param_name, "param_value": value,
               "n_ok": len(group), "errors": len(failed)}
        for col in ("train_mse", "test_mse", "log_ml"):
            vals = np.array([getattr(c, col) for c in group], dtype=np.float64)
            if vals.size:
                row[f"{col}_mean"] = float(vals.mean())
                row[f"{col}_stderr"] = (
                    float(vals.std(ddof=1) / math.sqrt(vals.size))
                    if vals.size > 1 else 0.0
                )
            else:
                row[f"{col}_mean"] = math.nan
                row[f"{col}_stderr"] = math.nan
        rows.append(row)
    return rows
