"""Datasets, CSV ingestion and the synthetic data-generating processes.

Random numbers come from numpy's ``PCG64`` bit generator seeded through
``numpy.random.default_rng(seed)``. For a fixed seed the draw order inside
:func:`generate_dgp` is

1. propensity coefficients ``alpha`` (3), ``beta`` (3), ``gamma`` (3),
2. outcome coefficients ``beta_out`` (K),
3. covariates ``X`` (n x K),
4. uniforms for the treatment draw (n),
5. outcome noise (n).

When ``coef_seed`` is set, steps 1-2 use ``default_rng(coef_seed)`` instead,
so the coefficients stay fixed across replications.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

TAU0 = 5.0


class DataError(ValueError):
    """Raised for malformed datasets or input files."""


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (n x K), binary treatment ``d`` and outcome ``y``."""

    x: np.ndarray
    d: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        d = np.asarray(self.d)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or d.ndim != 1 or y.ndim != 1:
            raise DataError("x must be 2-D, d and y 1-D")
        n = x.shape[0]
        if d.shape[0] != n or y.shape[0] != n:
            raise DataError(f"row counts differ: x={n}, d={d.shape[0]}, y={y.shape[0]}")
        if n < 2:
            raise DataError("need at least 2 rows")
        if not np.all((d == 0) | (d == 1)):
            raise DataError("invalid treatment value: d must be 0 or 1")
        d = d.astype(np.int8)
        if d.sum() == 0 or d.sum() == n:
            raise DataError("both treatment groups must be non-empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("x and y must be finite")
        for name, arr in (("x", x), ("d", d), ("y", y)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def n1(self) -> int:
        return int(self.d.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def subset(self, index) -> "Dataset":
        return Dataset(self.x[index], self.d[index], self.y[index])


def load_csv(path: Union[str, Path]) -> Dataset:
    """Read a dataset with header ``y,d,x1,...,xK`` (columns in any order)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    missing = [c for c in ("y", "d") if c not in header]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")
    xcols = [c for c in header if c not in ("y", "d")]
    k = len(xcols)
    expected = {f"x{j}" for j in range(1, k + 1)}
    if k == 0 or set(xcols) != expected:
        raise DataError(f"{path}: covariate columns must be x1..xK, got {xcols}")

    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at line {i}") from None

    col = {name: j for j, name in enumerate(header)}
    d = values[:, col["d"]]
    if not np.all((d == 0) | (d == 1)):
        raise DataError(f"{path}: invalid treatment value in column d")
    x = values[:, [col[f"x{j}"] for j in range(1, k + 1)]].reshape(len(rows), k)
    return Dataset(x=x, d=d.astype(np.int8), y=values[:, col["y"]])


def write_csv(data: Dataset, path: Union[str, Path]) -> None:
    """Write ``data`` with header ``y,d,x1,...,xK`` using round-trip float reprs."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y", "d"] + [f"x{j}" for j in range(1, data.k + 1)])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), int(data.d[i])]
                            + [repr(float(v)) for v in data.x[i]])


class OutcomeModel(str, enum.Enum):
    MODEL1 = "model1"
    MODEL2 = "model2"


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of one synthetic draw.

    ``coef_scale`` is the *variance* of the normal the propensity
    coefficients are drawn from.
    """

    k: int = 3
    outcome_model: OutcomeModel = OutcomeModel.MODEL1
    n: int = 3000
    seed: int = 0
    coef_scale: float = 0.5
    noise_sd: float = 1.0
    coef_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "outcome_model", OutcomeModel(self.outcome_model))
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.coef_scale < 0 or self.noise_sd < 0:
            raise ValueError("coef_scale and noise_sd must be non-negative")


@dataclass(frozen=True)
class SyntheticTruth:
    """Exact nuisance functions of a synthetic draw."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    beta_out: np.ndarray
    outcome_model: OutcomeModel
    dgp_seed: int
    tau0: float = TAU0

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        a, b, g = self.alpha, self.beta, self.gamma
        return (a[0] * x1 + a[1] * x2 + a[2] * x3
                + b[0] * x1 ** 2 + b[1] * x2 ** 2 + b[2] * x3 ** 2
                + g[0] * x1 * x2 + g[1] * x2 * x3 + g[2] * x1 * x3)

    def e0(self, x) -> np.ndarray:
        s = self.score(x)
        return 1.0 / (1.0 + np.exp(-s))

    def r0(self, d: int, x) -> np.ndarray:
        """True inverse propensity 1/e0 (d=1) or 1/(1-e0) (d=0)."""
        s = self.score(x)
        return 1.0 + np.exp(-s) if d == 1 else 1.0 + np.exp(s)

    def mu0(self, d, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lin = x @ self.beta_out
        base = lin ** 2 + 1.1
        if self.outcome_model is OutcomeModel.MODEL2:
            base = base + lin + 3.0 * np.sin(x[:, 0])
        return base + self.tau0 * np.asarray(d, dtype=float)

    def h0(self, d, x) -> np.ndarray:
        d = np.asarray(d)
        return np.where(d == 1, self.r0(1, x), -self.r0(0, x))

    def w0(self, x) -> np.ndarray:
        """ATT weight e0/(1-e0)."""
        return np.exp(self.score(x))


def _draw_coefficients(rng: np.random.Generator, cfg: DgpConfig):
    sd = math.sqrt(cfg.coef_scale)
    alpha = rng.normal(0.0, sd, 3)
    beta = rng.normal(0.0, sd, 3)
    gamma = rng.normal(0.0, sd, 3)
    beta_out = rng.normal(0.0, 1.0, cfg.k)
    return alpha, beta, gamma, beta_out


def generate_dgp(cfg: DgpConfig) -> tuple[Dataset, SyntheticTruth]:
    rng = np.random.default_rng(cfg.seed)
    coef_rng = rng if cfg.coef_seed is None else np.random.default_rng(cfg.coef_seed)
    alpha, beta, gamma, beta_out = _draw_coefficients(coef_rng, cfg)
    truth = SyntheticTruth(alpha=alpha, beta=beta, gamma=gamma, beta_out=beta_out,
                           outcome_model=cfg.outcome_model, dgp_seed=cfg.seed)

    x = rng.standard_normal((cfg.n, cfg.k))
    e = truth.e0(x)
    d = (rng.random(cfg.n) < e).astype(np.int8)
    eps = rng.standard_normal(cfg.n) * cfg.noise_sd
    y = truth.mu0(d, x) + eps
    return Dataset(x=x, d=d, y=y), truth


def oracle_h(truth: SyntheticTruth, d: int, x) -> float:
    """Bias-correction term 1/e0(x) for d=1, -1/(1-e0(x)) for d=0."""
    e = float(truth.e0(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return h_from_propensity(e, d)


def h_from_propensity(e: float, d: int) -> float:
    if not 0.0 < e < 1.0:
        raise ValueError(f"propensity {e} outside (0, 1)")
    return 1.0 / e if d == 1 else -1.0 / (1.0 - e)
