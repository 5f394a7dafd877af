"""Monte Carlo replication harness for the synthetic benchmark.

Each grid cell is written ``correction:family:estimator[:outcome]``:

- correction: ls, ukl, eb, logistic, oracle (true h0) or none
- family: linear, kernel, mlp, or ``-`` for oracle/none
- estimator: dm, ipw or aipw
- outcome: linear, kernel, mlp, oracle (true mu0) or zero; defaults to the
  ``[outcome]`` family of the config

Replication ``i`` draws its data from ``SeedSequence(master_seed, spawn_key=(i,))``,
so adding replications never changes the seeds of earlier ones.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DgpConfig, OutcomeModel, generate_dgp
from .estimators import estimate_aipw, estimate_dm, estimate_ipw
from .fit import (CORRECTION_LOSSES, FAMILIES, FitConfig, Nuisances, fit_correction,
                  fit_outcome, make_folds)
from .models import KernelSpec, MlpSpec

log = logging.getLogger(__name__)

CORRECTIONS = CORRECTION_LOSSES + ("oracle", "none")
ESTIMATORS = ("dm", "ipw", "aipw")
OUTCOMES = FAMILIES + ("oracle", "zero")
CSV_COLUMNS = ("model", "k", "method", "estimator", "mse", "bias", "mc_se")


class ConfigError(ValueError):
    pass


class BenchError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cell:
    correction: str
    family: str
    estimator: str
    outcome: str

    @classmethod
    def parse(cls, text: str, default_outcome: str) -> "Cell":
        parts = [p.strip().lower() for p in text.strip().split(":")]
        if len(parts) not in (3, 4):
            raise ConfigError(f"grid cell {text!r}: expected correction:family:estimator[:outcome]")
        corr, family, est = parts[:3]
        outcome = parts[3] if len(parts) == 4 else default_outcome
        if corr not in CORRECTIONS:
            raise ConfigError(f"grid cell {text!r}: unknown correction {corr!r}")
        if corr in ("oracle", "none"):
            family = "-"
        elif family not in FAMILIES:
            raise ConfigError(f"grid cell {text!r}: unknown family {family!r}")
        if est not in ESTIMATORS:
            raise ConfigError(f"grid cell {text!r}: unknown estimator {est!r}")
        if outcome not in OUTCOMES:
            raise ConfigError(f"grid cell {text!r}: unknown outcome {outcome!r}")
        if corr == "none" and est != "dm":
            raise ConfigError(f"grid cell {text!r}: correction 'none' only supports dm")
        return cls(corr, family, est, outcome)

    @property
    def method(self) -> str:
        return self.correction if self.family == "-" else f"{self.correction}-{self.family}"

    @property
    def estimator_label(self) -> str:
        if self.estimator == "ipw":
            return "IPW"
        return f"{self.estimator.upper()}({self.outcome})"

    def __str__(self):
        return f"{self.correction}:{self.family}:{self.estimator}:{self.outcome}"


@dataclass(frozen=True)
class BenchConfig:
    dgp: DgpConfig = DgpConfig()
    replications: int = 100
    grid: tuple = ("ls:mlp:ipw", "ls:mlp:aipw", "logistic:mlp:ipw", "logistic:mlp:aipw",
                   "none:-:dm")
    crossfit: int = 0
    master_seed: int = 0
    threads: int = 1
    output: str = "bench.csv"
    fit: FitConfig = FitConfig(family="mlp", max_iters=300, lr=1e-3,
                               mlp=MlpSpec(width=32))
    outcome: FitConfig = FitConfig(family="mlp", generator="mse", max_iters=1000, lr=1e-2,
                                   lr_decay=0.003, lam=1e-3, mlp=MlpSpec(width=32))

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.grid:
            raise ConfigError("grid must not be empty")
        if self.crossfit == 1 or self.crossfit < 0:
            raise ConfigError("crossfit must be 0 (off) or >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        cells = tuple(Cell.parse(c, self.outcome.family) if isinstance(c, str) else c
                      for c in self.grid)
        object.__setattr__(self, "grid", cells)

    def to_dict(self) -> dict:
        return {"dgp": {**asdict(self.dgp), "outcome_model": self.dgp.outcome_model.value},
                "replications": self.replications, "grid": [str(c) for c in self.grid],
                "crossfit": self.crossfit, "master_seed": self.master_seed,
                "threads": self.threads, "output": self.output,
                "fit": self.fit.to_dict(), "outcome": self.outcome.to_dict()}


def replication_seed(master_seed: int, index: int) -> int:
    """Seed of replication ``index``; independent of the replication count."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


# config files

def _opt(section, key, conv, default):
    raw = section.get(key, fallback=None)
    if raw is None or raw.strip() == "":
        return default
    try:
        return conv(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from exc


def _optional(conv):
    return lambda s: None if s.lower() in ("none", "off") else conv(s)


def _boolean(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


FIT_KEYS = ("family", "generator", "lambda", "max_iters", "tol", "step_rule", "lr", "lr_decay",
            "seed", "score_bound", "intercept_only", "hidden_layers", "width", "activation",
            "bandwidth", "max_anchors")
SECTION_KEYS = {
    "dgp": ("model", "k", "n", "coef_scale", "noise_sd", "coef_seed"),
    "bench": ("replications", "master_seed", "grid", "crossfit", "threads", "output"),
    "fit": FIT_KEYS,
    "outcome": FIT_KEYS,
}


def _fit_from_section(sec, base: FitConfig) -> FitConfig:
    mlp = MlpSpec(hidden_layers=_opt(sec, "hidden_layers", int, base.mlp.hidden_layers),
                  width=_opt(sec, "width", int, base.mlp.width),
                  activation=_opt(sec, "activation", str, base.mlp.activation),
                  output_bound=base.mlp.output_bound)
    kernel = KernelSpec(bandwidth=_opt(sec, "bandwidth", _optional(float), base.kernel.bandwidth),
                        max_anchors=_opt(sec, "max_anchors", int, base.kernel.max_anchors))
    return replace(
        base,
        family=_opt(sec, "family", str, base.family),
        generator=_opt(sec, "generator", str, base.generator),
        lam=_opt(sec, "lambda", _optional(float), base.lam),
        max_iters=_opt(sec, "max_iters", _optional(int), base.max_iters),
        tol=_opt(sec, "tol", _optional(float), base.tol),
        step_rule=_opt(sec, "step_rule", _optional(str), base.step_rule),
        lr=_opt(sec, "lr", float, base.lr),
        lr_decay=_opt(sec, "lr_decay", float, base.lr_decay),
        seed=_opt(sec, "seed", int, base.seed),
        score_bound=_opt(sec, "score_bound", _optional(float), base.score_bound),
        intercept_only=_opt(sec, "intercept_only", _boolean, base.intercept_only),
        mlp=mlp, kernel=kernel)


def parse_config(text: str, base: BenchConfig = BenchConfig()) -> BenchConfig:
    """Build a BenchConfig from INI text; missing keys keep the ``base`` values."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(cp.sections()) - set(SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, keys in SECTION_KEYS.items():
        if not cp.has_section(name):
            cp.add_section(name)
        extra = sorted(set(cp[name]) - set(keys))
        if extra:
            raise ConfigError(f"[{name}]: unknown keys {extra}")
    try:
        d, b = cp["dgp"], cp["bench"]
        dgp = DgpConfig(
            k=_opt(d, "k", int, base.dgp.k),
            outcome_model=OutcomeModel(_opt(d, "model", str, base.dgp.outcome_model.value)),
            n=_opt(d, "n", int, base.dgp.n),
            seed=base.dgp.seed,
            coef_scale=_opt(d, "coef_scale", float, base.dgp.coef_scale),
            noise_sd=_opt(d, "noise_sd", float, base.dgp.noise_sd),
            coef_seed=_opt(d, "coef_seed", _optional(int), base.dgp.coef_seed))
        fit = _fit_from_section(cp["fit"], base.fit)
        outcome = _fit_from_section(cp["outcome"], base.outcome)
        grid_raw = _opt(b, "grid", str, None)
        grid = base.grid if grid_raw is None else tuple(
            c for c in grid_raw.replace("\n", ",").split(",") if c.strip())
        grid = tuple(str(c) if isinstance(c, Cell) else c for c in grid)
        return BenchConfig(
            dgp=dgp,
            replications=_opt(b, "replications", int, base.replications),
            grid=grid,
            crossfit=_opt(b, "crossfit", int, base.crossfit),
            master_seed=_opt(b, "master_seed", int, base.master_seed),
            threads=_opt(b, "threads", int, base.threads),
            output=_opt(b, "output", str, base.output),
            fit=fit, outcome=outcome)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> BenchConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(v) -> str:
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: BenchConfig) -> str:
    """INI text with every setting spelled out; parses back to ``cfg``."""
    lines = ["[dgp]",
             f"model = {cfg.dgp.outcome_model.value}",
             f"k = {cfg.dgp.k}",
             f"n = {cfg.dgp.n}",
             f"coef_scale = {_fmt(cfg.dgp.coef_scale)}",
             f"noise_sd = {_fmt(cfg.dgp.noise_sd)}",
             f"coef_seed = {_fmt(cfg.dgp.coef_seed)}",
             "",
             "[bench]",
             f"replications = {cfg.replications}",
             f"master_seed = {cfg.master_seed}",
             f"grid = {', '.join(str(c) for c in cfg.grid)}",
             f"crossfit = {cfg.crossfit}",
             f"threads = {cfg.threads}",
             f"output = {cfg.output}",
             ""]
    for name, fc in (("fit", cfg.fit), ("outcome", cfg.outcome)):
        lines += [f"[{name}]",
                  f"family = {fc.family}",
                  f"generator = {fc.generator}",
                  f"lambda = {_fmt(fc.lam)}",
                  f"max_iters = {_fmt(fc.max_iters)}",
                  f"tol = {_fmt(fc.tol)}",
                  f"step_rule = {_fmt(fc.step_rule)}",
                  f"lr = {_fmt(fc.lr)}",
                  f"lr_decay = {_fmt(fc.lr_decay)}",
                  f"seed = {fc.seed}",
                  f"score_bound = {_fmt(fc.score_bound)}",
                  f"intercept_only = {str(fc.intercept_only).lower()}",
                  f"hidden_layers = {fc.mlp.hidden_layers}",
                  f"width = {fc.mlp.width}",
                  f"activation = {fc.mlp.activation}",
                  f"bandwidth = {_fmt(fc.kernel.bandwidth)}",
                  f"max_anchors = {fc.kernel.max_anchors}",
                  ""]
    return "\n".join(lines)


# replications

def _crossfit(data, folds, fitter, evaluate, width):
    out = np.empty((width, data.n))
    for j in range(folds.k_folds):
        test = folds.test_mask(j)
        model = fitter(data.subset(~test))
        out[:, test] = evaluate(model, data.d[test], data.x[test])
    return out


def run_replication(cfg: BenchConfig, index: int) -> dict:
    """Estimates of every grid cell on replication ``index``: {cell: (tau_hat, var_hat)}."""
    seed = replication_seed(cfg.master_seed, index)
    data, truth = generate_dgp(replace(cfg.dgp, seed=seed))
    fit_seed = seed % 2**32
    folds = make_folds(data.n, data.d, cfg.crossfit, seed=fit_seed) if cfg.crossfit else None
    h_cache, mu_cache = {}, {}

    def h_values(cell):
        key = (cell.correction, cell.family)
        if key not in h_cache:
            if cell.correction == "oracle":
                h_cache[key] = truth.h0(data.d, data.x)
            else:
                fc = replace(cfg.fit, generator=cell.correction, family=cell.family, seed=fit_seed)
                fitter = lambda sub: fit_correction(sub, fc)
                evaluate = lambda corr, d, x: corr.h(d, x)[None, :]
                if folds is None:
                    h_cache[key] = evaluate(fitter(data), data.d, data.x)[0]
                else:
                    h_cache[key] = _crossfit(data, folds, fitter, evaluate, 1)[0]
        return h_cache[key]

    def mu_values(outcome):
        if outcome not in mu_cache:
            if outcome == "oracle":
                mu_cache[outcome] = np.stack([truth.mu0(1, data.x), truth.mu0(0, data.x)])
            elif outcome == "zero":
                mu_cache[outcome] = np.zeros((2, data.n))
            else:
                oc = replace(cfg.outcome, family=outcome, generator="mse", seed=fit_seed)
                fitter = lambda sub: fit_outcome(sub, oc)
                evaluate = lambda mu, d, x: np.stack([mu(1, x), mu(0, x)])
                if folds is None:
                    mu_cache[outcome] = evaluate(fitter(data), data.d, data.x)
                else:
                    mu_cache[outcome] = _crossfit(data, folds, fitter, evaluate, 2)
        return mu_cache[outcome]

    out = {}
    for cell in cfg.grid:
        if cell.estimator == "ipw":
            rep = estimate_ipw(data, h_values(cell))
        elif cell.estimator == "dm":
            mu = mu_values(cell.outcome)
            rep = estimate_dm(data, lambda d, x: mu[0] if d == 1 else mu[1])
        else:
            mu = mu_values(cell.outcome)
            rep = estimate_aipw(data, Nuisances(h_values(cell), mu[0], mu[1]))
        out[cell] = (rep.tau_hat, rep.variance_hat, rep.ci95)
    return out


def _safe_replication(args):
    cfg, index = args
    try:
        return index, run_replication(cfg, index), None
    except Exception as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


@dataclass
class CellResult:
    model: str
    k: int
    method: str
    estimator: str
    mse: float
    bias: float
    mc_se: float
    coverage: float
    mean_variance: float
    tau_hats: list = field(repr=False, default_factory=list)


@dataclass
class BenchResult:
    config: BenchConfig
    cells: list
    seeds: list
    runtime_seconds: float

    def cell(self, spec: str) -> CellResult:
        target = Cell.parse(spec, self.config.outcome.family)
        for c, res in zip(self.config.grid, self.cells):
            if c == target:
                return res
        raise KeyError(spec)

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for c in self.cells:
                writer.writerow([c.model, c.k, c.method, c.estimator,
                                 repr(c.mse), repr(c.bias), repr(c.mc_se)])

    def sidecar(self) -> dict:
        return {"config": self.config.to_dict(),
                "seeds": self.seeds,
                "runtime_seconds": self.runtime_seconds,
                "cells": [{k: v for k, v in asdict(c).items()} for c in self.cells]}

    def write_sidecar(self, path):
        Path(path).write_text(json.dumps(self.sidecar(), indent=2) + "\n")


def _summarize(cfg: BenchConfig, cell: Cell, rows: list) -> CellResult:
    tau0 = 5.0
    taus = np.array([r[0] for r in rows])
    err = taus - tau0
    reps = err.size
    mc_se = float(np.std(err, ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    covered = [lo <= tau0 <= hi for _, _, (lo, hi) in rows]
    return CellResult(model=cfg.dgp.outcome_model.value, k=cfg.dgp.k, method=cell.method,
                      estimator=cell.estimator_label,
                      mse=math.fsum(err * err) / reps, bias=math.fsum(err) / reps,
                      mc_se=mc_se, coverage=float(np.mean(covered)),
                      mean_variance=math.fsum(r[1] for r in rows) / reps,
                      tau_hats=taus.tolist())


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Run every replication and summarize each cell; raises BenchError on any failure."""
    start = time.perf_counter()
    jobs = [(cfg, i) for i in range(cfg.replications)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_safe_replication, jobs))
    else:
        results = [_safe_replication(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    seeds = [replication_seed(cfg.master_seed, i) for i in range(cfg.replications)]
    for index, _, err in results:
        if err is not None:
            log.error("replication %d (seed %d) failed: %s", index, seeds[index], err)
            raise BenchError(f"replication {index} (seed {seeds[index]}) failed: {err}")
    cells = [_summarize(cfg, cell, [res[cell] for _, res, _ in results]) for cell in cfg.grid]
    return BenchResult(cfg, cells, seeds, time.perf_counter() - start)
