"""Command-line driver: train, predict, kernel, sweep, verify.

Configs are JSON with an explicit validated schema; unknown keys are
rejected with the offending path in the message. Every artifact embeds a
hash of the training-relevant config sections so downstream commands can
refuse params produced under a different setup. All files are written via
a temp-file rename, and every command is deterministic given the config
and master seed.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from d2g import losses, mlp, oracles
from d2g.datasets import make_dataset
from d2g.errors import ConfigError, D2gError, HashMismatch
from d2g.evidence import aggregate as sweep_aggregate
from d2g.evidence import sweep as run_sweep
from d2g.linearize import mc_predict, ntk_kernel, predict
from d2g.optim import train as train_model
from d2g.posterior import laplace_ggn, load_posterior, save_posterior, vi_posterior

# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_SECTIONS = {
    "dataset", "model", "loss", "optimizer", "delta", "posterior", "seed",
    "predict", "kernel", "sweep", "test_fraction",
}
_KEYS = {
    "dataset": {"kind", "path", "target", "standardize", "gap", "n", "seed",
                "noise_std", "num_classes", "spread"},
    "model": {"input_dim", "hidden", "output_dim", "activation"},
    "loss": {"kind", "sigma2", "num_classes"},
    "optimizer": {"kind", "epochs", "alpha", "beta1", "beta2", "eps", "beta",
                  "num_samples", "curvature", "batch_size"},
    "posterior": {"approx", "mode"},
    "predict": {"min", "max", "num", "mc_samples"},
    "kernel": {"subsample", "summarized"},
    "sweep": {"param", "values", "repeats"},
}
# sections whose content pins the identity of a trained artifact
_HASH_SECTIONS = ("dataset", "model", "loss", "optimizer", "delta", "seed")


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"config.{path}: {msg}")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise ConfigError("config: top level must be an object")
    unknown = set(config) - _SECTIONS
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown key")
    for section in ("dataset", "model", "loss"):
        _expect(section in config, section, "section is required")
    for section, keys in _KEYS.items():
        if section in config:
            _expect(isinstance(config[section], dict), section, "must be an object")
            bad = set(config[section]) - keys
            if bad:
                raise ConfigError(f"config.{section}.{sorted(bad)[0]}: unknown key")

    model = config["model"]
    for key in ("input_dim", "hidden", "output_dim"):
        _expect(key in model, f"model.{key}", "is required")
    _expect(isinstance(model["hidden"], list), "model.hidden", "must be a list")

    loss = config["loss"]
    _expect(loss.get("kind") in ("squared", "logistic", "softmax"),
            "loss.kind", "must be squared, logistic, or softmax")
    if loss["kind"] == "logistic":
        _expect(model["output_dim"] == 1, "model.output_dim",
                "logistic loss needs a single logit")
    if loss["kind"] == "softmax":
        k = loss.get("num_classes", model["output_dim"])
        _expect(k == model["output_dim"], "loss.num_classes",
                "must equal model.output_dim")
    if "delta" in config:
        _expect(float(config["delta"]) > 0, "delta", "must be > 0")
    if "optimizer" in config:
        _expect(config["optimizer"].get("kind", "adam") in ("adam", "oggn", "vogn"),
                "optimizer.kind", "must be adam, oggn, or vogn")
    if "posterior" in config:
        _expect(config["posterior"].get("approx", "laplace") in ("laplace", "vi"),
                "posterior.approx", "must be laplace or vi")
        _expect(config["posterior"].get("mode", "full") in ("full", "diagonal"),
                "posterior.mode", "must be full or diagonal")


def config_hash(config: dict) -> str:
    core = {k: config[k] for k in _HASH_SECTIONS if k in config}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_loss(config: dict) -> losses.LossKind:
    loss = config["loss"]
    if loss["kind"] == "squared":
        return losses.Squared(sigma2=float(loss.get("sigma2", 1.0)))
    if loss["kind"] == "logistic":
        return losses.Logistic()
    return losses.Softmax(num_classes=int(loss.get("num_classes",
                                                   config["model"]["output_dim"])))


def build_model(config: dict) -> mlp.MlpConfig:
    model = config["model"]
    return mlp.MlpConfig(
        input_dim=int(model["input_dim"]),
        hidden=tuple(int(h) for h in model["hidden"]),
        output_dim=int(model["output_dim"]),
        activation=model.get("activation", "tanh"),
    )


# ---------------------------------------------------------------------------
# artifact IO
# ---------------------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(config: dict, out_dir: Path) -> int:
    if "optimizer" not in config:
        raise ConfigError("config.optimizer: section is required for training")
    master = int(config.get("seed", 0))
    ds = make_dataset(config["dataset"])
    model = build_model(config)
    kind = build_loss(config)
    if ds.inputs.shape[1] != model.input_dim:
        raise ConfigError(
            f"config.model.input_dim: dataset has {ds.inputs.shape[1]} features"
        )
    opt = config["optimizer"]
    delta = float(config.get("delta", 1.0))
    report = train_model(
        model, kind, ds.inputs, ds.targets,
        optimizer=opt.get("kind", "adam"),
        epochs=int(opt.get("epochs", 1000)),
        seed=master,
        delta=delta,
        alpha=float(opt.get("alpha", 1e-3)),
        beta1=float(opt.get("beta1", 0.9)),
        beta2=float(opt.get("beta2", 0.999)),
        eps=float(opt.get("eps", 1e-8)),
        beta=float(opt.get("beta", 0.1)),
        num_samples=int(opt.get("num_samples", 1)),
        curvature=opt.get("curvature", "diag"),
        batch_size=opt.get("batch_size"),
    )
    chash = config_hash(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_atomic(out_dir / "params.json", json.dumps({
        "config_hash": chash,
        "values": [float(v) for v in report.final_params],
    }))
    write_atomic(out_dir / "report.json", json.dumps({
        "config_hash": chash,
        "seed": master,
        "loss_trace": report.loss_trace,
        "grad_norm": report.grad_norm,
    }, indent=2))

    post_cfg = config.get("posterior", {})
    approx = post_cfg.get("approx", "laplace")
    mode = post_cfg.get("mode", "full")
    if approx == "vi":
        if opt.get("kind") != "vogn":
            raise ConfigError("config.posterior.approx: vi needs the vogn optimizer")
        gauss = vi_posterior(report.final_state)
    else:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gauss = laplace_ggn(model, kind, ds.inputs, ds.targets,
                                report.final_params, delta, mode=mode)
    save_posterior(gauss, out_dir / "posterior.json", config_hash=chash)
    print(f"wrote {out_dir / 'params.json'}", file=sys.stderr)
    return 0


def _load_params(path: Path, expected_hash: str) -> np.ndarray:
    obj = json.loads(path.read_text())
    if obj.get("config_hash") != expected_hash:
        raise HashMismatch(
            f"{path}: params were trained under config hash "
            f"{obj.get('config_hash')}, expected {expected_hash}"
        )
    return np.array(obj["values"], dtype=np.float64)


def _grid_points(spec: dict, input_dim: int) -> np.ndarray:
    lo = spec.get("min", 0.0)
    hi = spec.get("max", 1.0)
    num = int(spec.get("num", 50))
    lo = [float(lo)] * input_dim if np.isscalar(lo) else [float(v) for v in lo]
    hi = [float(hi)] * input_dim if np.isscalar(hi) else [float(v) for v in hi]
    if len(lo) != input_dim or len(hi) != input_dim:
        raise ConfigError("config.predict: min/max must match the input dimension")
    axes = [np.linspace(a, b, num) for a, b in zip(lo, hi)]
    return np.array([pt for pt in itertools.product(*axes)])


def cmd_predict(config: dict, out_dir: Path, params_path: Path,
                posterior_path: Path, method: str) -> int:
    chash = config_hash(config)
    _load_params(params_path, chash)  # hash check only; the anchor is the posterior mean
    gauss, post_hash = load_posterior(posterior_path)
    if post_hash != chash:
        raise HashMismatch(
            f"{posterior_path}: posterior was built under config hash "
            f"{post_hash}, expected {chash}"
        )
    model = build_model(config)
    kind = build_loss(config)
    spec = config.get("predict", {})
    grid = _grid_points(spec, model.input_dim)
    k = model.output_dim

    rows = []
    for i, x_star in enumerate(grid):
        if method == "mc":
            dist = mc_predict(model, kind, gauss, x_star,
                              n_samples=int(spec.get("mc_samples", 100)),
                              seed=int(config.get("seed", 0)))
        else:
            dist = predict(model, kind, gauss, x_star)
        rows.append(
            [float(v) for v in x_star]
            + [float(v) for v in dist.mean]
            + [float(v) for v in dist.aleatoric]
            + [float(v) for v in dist.epistemic]
            + [float(v) for v in dist.total]
        )
    header = (
        [f"x{d}" for d in range(model.input_dim)]
        + [f"mean_{j}" for j in range(k)]
        + [f"aleatoric_{j}" for j in range(k)]
        + [f"epistemic_{j}" for j in range(k)]
        + [f"total_{j}" for j in range(k)]
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "predictions.csv", header, rows)
    print(f"wrote {out_dir / 'predictions.csv'}", file=sys.stderr)
    return 0


def cmd_kernel(config: dict, out_dir: Path, params_path: Path,
               summarized: bool, subsample: int | None) -> int:
    chash = config_hash(config)
    w = _load_params(params_path, chash)
    model = build_model(config)
    ds = make_dataset(config["dataset"])
    spec = config.get("kernel", {})
    n_keep = subsample if subsample is not None else spec.get("subsample")
    if spec.get("summarized") is not None and not summarized:
        summarized = bool(spec["summarized"])

    labels = (ds.targets if ds.is_classification
              else np.zeros(ds.n, dtype=np.int64))
    order = np.argsort(labels, kind="stable")  # group rows by class
    if n_keep is not None:
        n_keep = int(n_keep)
        if n_keep > ds.n:
            raise ConfigError("config.kernel.subsample: larger than the dataset")
        rng = np.random.default_rng(int(config.get("seed", 0)))
        chosen = np.sort(rng.choice(ds.n, size=n_keep, replace=False))
        order = chosen[np.argsort(labels[chosen], kind="stable")]
    x = ds.inputs[order]
    lab = labels[order]

    _, jacs = mlp.batch_jacobian(model, w, x)
    km = ntk_kernel(jacs, float(config.get("delta", 1.0)),
                    summarized=summarized, labels=lab)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = km.entries
    row_labels = km.labels if km.labels is not None else np.zeros(m.shape[0], int)
    header = ["index", "class"] + [str(i) for i in range(m.shape[0])]
    rows = [[i, int(row_labels[i])] + [float(v) for v in m[i]]
            for i in range(m.shape[0])]
    _write_csv(out_dir / "kernel.csv", header, rows)
    tmp = out_dir / "kernel.npz.tmp.npz"
    np.savez(tmp, entries=m, labels=row_labels)
    os.replace(tmp, out_dir / "kernel.npz")
    print(f"wrote {out_dir / 'kernel.csv'}", file=sys.stderr)
    return 0


def cmd_sweep(config: dict, out_dir: Path, jobs: int) -> int:
    cells = run_sweep(config, jobs=jobs,
                      progress=lambda msg: print(msg, file=sys.stderr))
    agg = sweep_aggregate(cells)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "sweep_cells.csv",
        ["param_name", "param_value", "repeat", "train_mse", "test_mse",
         "log_ml", "error"],
        [[c.param_name, c.param_value, c.repeat,
          "" if c.train_mse is None else c.train_mse,
          "" if c.test_mse is None else c.test_mse,
          "" if c.log_ml is None else c.log_ml,
          c.error] for c in cells],
    )
    header = list(agg[0].keys())
    _write_csv(out_dir / "sweep_agg.csv", header,
               [[row[k] for k in header] for row in agg])
    print(f"wrote {out_dir / 'sweep_agg.csv'}", file=sys.stderr)
    return 0


def cmd_verify(seed: int, out_path: Path | None) -> int:
    reports = oracles.verify_all(seed=seed)
    payload = json.dumps([r.as_dict() for r in reports], indent=2)
    if out_path is not None:
        write_atomic(out_path, payload)
    print(payload)
    ok = all(r.passed for r in reports)
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="d2g", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to the JSON experiment config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")

    p_train = sub.add_parser("train", help="train and write params + posterior")
    common(p_train)

    p_pred = sub.add_parser("predict", help="predictive distribution on a grid")
    common(p_pred)
    p_pred.add_argument("--params", required=True, help="params.json from train")
    p_pred.add_argument("--posterior", required=True,
                        help="posterior.json from train")
    p_pred.add_argument("--method", choices=("dnn2gp", "mc"), default="dnn2gp",
                        help="linear-model predictive or Monte-Carlo baseline")

    p_kern = sub.add_parser("kernel", help="tangent kernel matrix as CSV")
    common(p_kern)
    p_kern.add_argument("--params", required=True, help="params.json from train")
    p_kern.add_argument("--summarized", action="store_true",
                        help="sum per-class kernels into an N x N matrix")
    p_kern.add_argument("--subsample", type=int, default=None,
                        help="evaluate the kernel on a random subset of rows")

    p_sweep = sub.add_parser("sweep", help="hyperparameter grid with evidence")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel sweep cells (deterministic aggregation)")

    p_ver = sub.add_parser("verify", help="run the equivalence oracle suites")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", default=None, help="also write the report here")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.seed,
                              Path(args.out) if args.out else None)
        config = load_config(args.config)
        if args.seed is not None:
            config = dict(config, seed=args.seed)
        out_dir = Path(args.out)
        if args.command == "train":
            return cmd_train(config, out_dir)
        if args.command == "predict":
            return cmd_predict(config, out_dir, Path(args.params),
                               Path(args.posterior), args.method)
        if args.command == "kernel":
            return cmd_kernel(config, out_dir, Path(args.params),
                              args.summarized, args.subsample)
        if args.command == "sweep":
            return cmd_sweep(config, out_dir, args.jobs)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except D2gError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
