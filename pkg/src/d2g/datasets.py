"""Dataset loading and generation with deterministic seeding.

Loaders validate their files and raise typed errors that name the failing
line. Generators take a 64-bit seed and are bit-reproducible. The gap
filter used by the 1-D regression experiments drops inputs strictly
between 1.5 and 3, which is where in-between uncertainty gets probed.

Synthetic regression recipe: inputs from the mixture
0.5 N(-2, 0.6^2) + 0.5 N(+2, 0.6^2) truncated to [-4, 4] (sparse near the
origin), targets sin(2x) + 0.2 x^2 plus N(0, 0.1^2) noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from d2g.errors import ConfigError, ConstantColumn, EmptyAfterFilter, ParseError

GAP_LO, GAP_HI = 1.5, 3.0


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, D)
    targets: np.ndarray  # (N, K) floats for regression, (N,) ints for classes
    name: str
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.targets.ndim == 1 and np.issubdtype(self.targets.dtype, np.integer)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{name}: non-finite values after load")


def apply_gap(ds: Dataset) -> Dataset:
    """Drop rows whose (1-D) input lies strictly inside the gap."""
    x = ds.inputs[:, 0]
    keep = ~((x > GAP_LO) & (x < GAP_HI))
    if not np.any(keep):
        raise EmptyAfterFilter(f"{ds.name}: gap filter removed every row")
    return replace(ds, inputs=ds.inputs[keep], targets=ds.targets[keep])


def load_snelson(path, apply_gap_filter: bool = True) -> Dataset:
    """Two-column text file (whitespace or comma separated): x then y."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file does not exist")
    xs, ys = [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected two columns, got {len(parts)}")
        try:
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: could not parse {line!r}") from None
    if not xs:
        raise ParseError(f"{path}: no data rows")
    ds = Dataset(inputs=np.array(xs)[:, None], targets=np.array(ys)[:, None],
                 name=path.stem)
    _check_finite(str(path), ds.inputs)
    _check_finite(str(path), ds.targets)
    return apply_gap(ds) if apply_gap_filter else ds


def gen_snelson_like(seed: int, n: int = 200, apply_gap_filter: bool = True
                     ) -> Dataset:
    """Seeded look-alike of the classic 1-D wavy regression set on [0, 6]."""
    if n < 2:
        raise ConfigError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 6.0, size=n))
    y = np.sin(1.5 * x) + 0.3 * np.cos(4.0 * x) + rng.normal(0.0, 0.1, size=n)
    ds = Dataset(inputs=x[:, None], targets=y[:, None], name="snelson_like")
    return apply_gap(ds) if apply_gap_filter else ds


def gen_synthetic_reg(seed: int, n: int = 100) -> Dataset:
    """1-D regression with a bimodal input density sparse around zero."""
    if n < 2:
        raise ConfigError("need n >= 2")
    rng = np.random.default_rng(seed)
    xs = np.empty(n)
    filled = 0
    while filled < n:
        component = rng.integers(0, 2, size=n - filled)
        draw = rng.normal(0.0, 0.6, size=n - filled) + np.where(component, 2.0, -2.0)
        draw = draw[(draw >= -4.0) & (draw <= 4.0)]
        xs[filled:filled + draw.size] = draw
        filled += draw.size
    y = np.sin(2.0 * xs) + 0.2 * xs**2 + rng.normal(0.0, 0.1, size=n)
    return Dataset(inputs=xs[:, None], targets=y[:, None], name="synthetic_reg")


def load_csv(path, target_column: str, standardize: bool = False) -> Dataset:
    """Numeric CSV with a header row; the named column becomes the target."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise ParseError(f"{path}: no column named {target_column!r}")
        tcol = header.index(target_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    _check_finite(str(path), data)
    targets = data[:, tcol:tcol + 1]
    inputs = np.delete(data, tcol, axis=1)
    means = stds = None
    if standardize:
        means = inputs.mean(axis=0)
        stds = inputs.std(axis=0)
        zero = np.where(stds == 0)[0]
        if zero.size:
            feat = [h for i, h in enumerate(header) if i != tcol][zero[0]]
            raise ConstantColumn(f"{path}: feature {feat!r} has zero variance")
        inputs = (inputs - means) / stds
    return Dataset(inputs=inputs, targets=targets, name=path.stem,
                   feature_means=means, feature_stds=stds)


def unstandardize(ds: Dataset) -> np.ndarray:
    """Recover the raw inputs of a standardized dataset."""
    if ds.feature_means is None:
        return ds.inputs
    return ds.inputs * ds.feature_stds + ds.feature_means


def gen_two_moons(seed: int, n: int = 100, noise_std: float = 0.1) -> Dataset:
    """Two interleaved half circles with Gaussian jitter; binary labels.

    Class 0 is the upper arc of the unit circle, class 1 the lower arc
    shifted to interleave. n must be even so the classes balance.
    """
    if n < 2 or n % 2:
        raise ConfigError("n must be even and >= 2")
    rng = np.random.default_rng(seed)
    half = n // 2
    theta = rng.uniform(0.0, np.pi, size=half)
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    theta2 = rng.uniform(0.0, np.pi, size=half)
    lower = np.column_stack([1.0 - np.cos(theta2), 0.5 - np.sin(theta2)])
    x = np.vstack([upper, lower])
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(half, dtype=np.int64)])
    return Dataset(inputs=x, targets=labels, name="two_moons")


def gen_blobs(seed: int, n: int = 150, num_classes: int = 3,
              spread: float = 0.35) -> Dataset:
    """2-D multiclass toy: Gaussian blobs centered on a circle."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.column_stack([np.cos(angles), np.sin(angles)]) * 1.5
    labels = np.arange(n, dtype=np.int64) % num_classes
    x = centers[labels] + rng.normal(0.0, spread, size=(n, 2))
    return Dataset(inputs=x, targets=labels, name="blobs")


def gen_wine_like(seed: int, n: int = 400) -> Dataset:
    """12-feature regression with a nonlinear signal and noise std ~0.6."""
    if n < 2:
        raise ConfigError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 12))
    coefs = rng.normal(size=12) / np.sqrt(12.0)
    y = (np.tanh(x @ coefs) + 0.5 * np.sin(x[:, 0] * x[:, 1])
         + 0.3 * x[:, 2] ** 2 - 0.3 + rng.normal(0.0, 0.6, size=n))
    return Dataset(inputs=x, targets=y[:, None], name="wine_like")


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test split from a seeded permutation."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    n_test = int(round(ds.n * test_fraction))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    train = replace(ds, inputs=ds.inputs[train_idx], targets=ds.targets[train_idx],
                    name=f"{ds.name}_train")
    test = replace(ds, inputs=ds.inputs[test_idx], targets=ds.targets[test_idx],
                   name=f"{ds.name}_test")
    return train, test


def make_dataset(spec: dict, seed: int | None = None) -> Dataset:
    """Build a dataset from a config dict; the seed argument overrides."""
    kind = spec.get("kind")
    use_seed = int(spec.get("seed", 0)) if seed is None else int(seed)
    if kind == "snelson":
        return load_snelson(spec["path"], apply_gap_filter=spec.get("gap", True))
    if kind == "snelson_like":
        return gen_snelson_like(use_seed, n=int(spec.get("n", 200)),
                                apply_gap_filter=spec.get("gap", True))
    if kind == "synthetic_reg":
        return gen_synthetic_reg(use_seed, n=int(spec.get("n", 100)))
    if kind == "csv":
        return load_csv(spec["path"], spec["target"],
                        standardize=spec.get("standardize", False))
    if kind == "two_moons":
        return gen_two_moons(use_seed, n=int(spec.get("n", 100)),
                             noise_std=float(spec.get("noise_std", 0.1)))
    if kind == "blobs":
        return gen_blobs(use_seed, n=int(spec.get("n", 150)),
                         num_classes=int(spec.get("num_classes", 3)),
                         spread=float(spec.get("spread", 0.35)))
    if kind == "wine_like":
        return gen_wine_like(use_seed, n=int(spec.get("n", 400)))
    raise ConfigError(f"unknown dataset kind {kind!r}")
