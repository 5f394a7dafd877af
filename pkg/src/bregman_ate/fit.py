"""Empirical risk minimization, outcome regression and cross-fitting."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .bregman import DomainError, GENERATORS, get_generator
from .data import Dataset
from .models import (KernelSpec, MlpSpec, ScoreModel, kernel_model, linear_model,
                     mlp_model, model_from_dict, r_from_f)

log = logging.getLogger(__name__)

FAMILIES = ("linear", "kernel", "mlp")
STEP_RULES = ("backtracking", "fixed", "adam")


class FitError(RuntimeError):
    pass


class LogisticLoss:
    """Negative log-likelihood of the propensity model, written in terms of r."""

    name = "logistic"
    domain_min = 1.0

    def check_domain(self, r, s=None):
        ok = (r > 1.0) if s is None else (np.asarray(s) > 0) & np.isfinite(r)
        if not np.all(ok):
            raise DomainError("logistic: r must exceed 1")

    def arm_loss(self, ind, r, s=None):
        return ind * np.log(r)

    def arm_grad(self, ind, r, s=None):
        return ind / r


LOGISTIC = LogisticLoss()
CORRECTION_LOSSES = tuple(GENERATORS) + ("logistic",)


def get_loss(name):
    if not isinstance(name, str):
        return name
    if name.lower() == "logistic":
        return LOGISTIC
    return get_generator(name)


@dataclass(frozen=True)
class FitConfig:
    """Settings for one fit. ``None`` fields take family-dependent defaults."""

    generator: str = "ls"
    family: str = "linear"
    lam: Optional[float] = None
    max_iters: Optional[int] = None
    tol: Optional[float] = None
    step_rule: Optional[str] = None
    lr: float = 1e-3
    lr_decay: float = 0.0
    seed: int = 0
    mlp: MlpSpec = MlpSpec()
    kernel: KernelSpec = KernelSpec()
    # |f| cap for correction scores (tanh for mlp, clip otherwise); the least-squares
    # risk is unbounded below without it. 3 keeps e within about [0.047, 0.953]
    score_bound: Optional[float] = 3.0
    # linear family only: fit the intercept alone, slopes stay at zero
    intercept_only: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.generator not in CORRECTION_LOSSES + ("att", "mse"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_rule is not None and self.step_rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.score_bound is not None and not self.score_bound > 0:
            raise ValueError("score_bound must be positive")
        if self.intercept_only and self.family != "linear":
            raise ValueError("intercept_only needs the linear family")

    def resolved(self, n: int) -> "FitConfig":
        mlp = self.family == "mlp"
        lam = self.lam
        if lam is None:
            lam = 1e-3 / math.sqrt(n) if self.family == "kernel" else 1e-4
        return replace(
            self, lam=lam,
            max_iters=self.max_iters or (2000 if mlp else 10000),
            tol=self.tol or (1e-5 if mlp else 1e-8),
            step_rule=self.step_rule or ("adam" if mlp else "backtracking"))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


def init_model(family: str, x: np.ndarray, cfg: FitConfig) -> ScoreModel:
    if family == "linear":
        return linear_model(x.shape[1])
    if family == "kernel":
        return kernel_model(x, cfg.kernel, seed=cfg.seed)
    if family == "mlp":
        spec = cfg.mlp
        if cfg.generator != "mse" and spec.output_bound is None and cfg.score_bound is not None:
            spec = replace(spec, output_bound=cfg.score_bound)
        return mlp_model(x.shape[1], spec, seed=cfg.seed)
    raise ValueError(f"unknown family {family!r}")


@dataclass
class OptimResult:
    params: np.ndarray
    loss_trace: list
    converged: bool
    grad_norm: float
    iterations: int


Objective = Callable[[np.ndarray], tuple]


def minimize(model: ScoreModel, design: np.ndarray, objective: Objective, cfg: FitConfig,
             n: Optional[int] = None) -> OptimResult:
    """Minimize mean(objective(f)) + lam * J over the model parameters.

    ``objective`` maps scores ``f`` to ``(per_sample_loss, dloss_df)``.
    """
    n = n if n is not None else design.shape[0]
    lam = cfg.lam

    def evaluate(theta, with_grad=True):
        f, cache = model.forward(design, theta)
        per, dldf = objective(f)
        pen, pen_grad = model.penalty(theta)
        # fsum raises on mixed infinities; nan lets the callers reject or report it
        value = math.fsum(per.tolist()) / n + lam * pen if np.all(np.isfinite(per)) else math.nan
        if not with_grad:
            return value, None
        grad = model.backward(cache, dldf / n, theta) + lam * pen_grad
        return value, grad

    theta = np.array(model.params, dtype=float)
    value, grad = evaluate(theta)
    trace = [value]
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    converged = gnorm <= cfg.tol
    step = cfg.lr if cfg.step_rule != "backtracking" else 1.0
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    it = 0
    flat = 0

    while not converged and it < cfg.max_iters:
        it += 1
        if cfg.step_rule == "backtracking":
            gg = float(grad @ grad)
            t = min(step * 2.0, 1e6)
            while True:
                trial = theta - t * grad
                try:
                    # overshooting trials may overflow; they are rejected below
                    with np.errstate(over="ignore", invalid="ignore"):
                        new_value, _ = evaluate(trial, with_grad=False)
                except DomainError:
                    new_value = math.inf
                if np.isfinite(new_value) and new_value <= value - 1e-4 * t * gg:
                    break
                t *= 0.5
                if t < 1e-30:
                    break
            # accepted steps that no longer lower the loss (e.g. at a clip kink)
            flat = flat + 1 if not new_value < value else 0
            if t < 1e-30 or flat >= 10:
                log.debug("line search stalled at iteration %d", it)
                break
            step = t
            theta = trial
        elif cfg.step_rule == "fixed":
            theta = theta - cfg.lr / (1.0 + cfg.lr_decay * it) * grad
        else:
            b1, b2 = 0.9, 0.999
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            lr = cfg.lr / (1.0 + cfg.lr_decay * it)
            mhat = m / (1 - b1 ** it)
            vhat = v / (1 - b2 ** it)
            theta = theta - lr * mhat / (np.sqrt(vhat) + 1e-8)

        try:
            value, grad = evaluate(theta)
        except DomainError as exc:
            raise FitError(f"iteration {it}: {exc} (|theta|={np.linalg.norm(theta):.3g})") from exc
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise FitError(f"non-finite loss or gradient at iteration {it} "
                           f"(|theta|={np.linalg.norm(theta):.3g})")
        trace.append(value)
        gnorm = float(np.max(np.abs(grad)))
        converged = gnorm <= cfg.tol

    return OptimResult(theta, trace, converged, gnorm, it)


def penalized_risk(model: ScoreModel, data: Dataset, generator, lam: float = 0.0,
                   bound: Optional[float] = None) -> tuple:
    """Penalized empirical risk at ``model.params`` and its analytic parameter gradient."""
    objective = (att_objective(data.d, bound) if generator == "att"
                 else correction_objective(get_loss(generator), data.d, bound))
    f, cache = model.forward(model.design(data.x))
    per, dldf = objective(f)
    pen, pen_grad = model.penalty()
    value = math.fsum(per.tolist()) / data.n + lam * pen
    return value, model.backward(cache, dldf / data.n) + lam * pen_grad


def _clipper(bound: Optional[float]):
    """Clip scores to [-bound, bound]; returns (clipped f, d clipped / d f)."""
    def clip(f):
        if bound is None:
            return f, 1.0
        return np.clip(f, -bound, bound), (np.abs(f) < bound).astype(float)
    return clip


def correction_objective(loss, d: np.ndarray, bound: Optional[float] = None) -> Objective:
    """Per-sample loss of the bias-correction risk as a function of the score.

    With ``bound`` the score is clipped first. The least-squares risk over an
    exponential link is otherwise unbounded below in most finite samples.
    """
    ind1 = d.astype(float)
    ind0 = 1.0 - ind1
    clip = _clipper(bound)

    def objective(f):
        f, inner = clip(f)
        # overflow shows up as a non-finite loss, which minimize reports
        with np.errstate(over="ignore"):
            s1, s0 = np.exp(-f), np.exp(f)
        r1, r0 = 1.0 + s1, 1.0 + s0
        loss.check_domain(r1, s1)
        loss.check_domain(r0, s0)
        per = loss.arm_loss(ind1, r1, s1) + loss.arm_loss(ind0, r0, s0)
        # dr1/df = -s1, dr0/df = s0
        dldf = s0 * loss.arm_grad(ind0, r0, s0) - s1 * loss.arm_grad(ind1, r1, s1)
        return per, dldf * inner

    return objective


def att_objective(d: np.ndarray, bound: Optional[float] = None) -> Objective:
    """Squared-loss ATT risk in the score, with weight w = exp(f)."""
    ind1 = d.astype(float)
    ind0 = 1.0 - ind1
    clip = _clipper(bound)

    def objective(f):
        f, inner = clip(f)
        w = np.exp(f)
        per = -2.0 * ind1 * w + ind0 * w * w
        return per, (-2.0 * ind1 + 2.0 * ind0 * w) * w * inner

    return objective


def mse_objective(y: np.ndarray) -> Objective:
    def objective(f):
        res = y - f
        return res * res, -2.0 * res
    return objective


@dataclass
class FittedCorrection:
    """A fitted score model read as an inverse-propensity (or ATT weight) model."""

    model: ScoreModel
    generator: str
    lam: float
    loss_trace: list = field(default_factory=list)
    converged: bool = False
    grad_norm: float = math.nan
    iterations: int = 0
    # clip applied to the score at evaluation (the mlp family bounds itself)
    score_bound: Optional[float] = None

    def f(self, x):
        f = self.model.f(x)
        return f if self.score_bound is None else np.clip(f, -self.score_bound, self.score_bound)

    def e(self, x):
        return 1.0 / r_from_f(1, self.f(x))

    def r(self, d, x):
        return r_from_f(d, self.f(x))

    def h(self, d, x):
        f = self.f(x)
        d = np.broadcast_to(np.asarray(d), f.shape)
        return np.where(d == 1, r_from_f(1, f), -r_from_f(0, f))

    def w(self, x):
        """ATT weight e/(1-e) = exp(f)."""
        return np.exp(self.f(x))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "generator": self.generator,
                "lambda": self.lam, "converged": self.converged,
                "grad_norm": self.grad_norm, "iterations": self.iterations,
                "score_bound": self.score_bound, "loss_trace": [float(v) for v in self.loss_trace]}

    @classmethod
    def from_dict(cls, obj: dict) -> "FittedCorrection":
        return cls(model=model_from_dict(obj["model"]), generator=obj["generator"],
                   lam=obj["lambda"], loss_trace=obj.get("loss_trace", []),
                   converged=obj.get("converged", False),
                   grad_norm=obj.get("grad_norm", math.nan),
                   iterations=obj.get("iterations", 0),
                   score_bound=obj.get("score_bound"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FittedCorrection":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _run(model, data_x, objective, cfg, name, bound=None) -> FittedCorrection:
    k = data_x.shape[1]
    if cfg.intercept_only:
        data_x = data_x[:, :0]
        model = linear_model(0, model.params[-1:])
    res = minimize(model, model.design(data_x), objective, cfg)
    if cfg.intercept_only:
        res.params = np.concatenate([np.zeros(k), res.params])
        model = linear_model(k)
    if not res.converged:
        log.info("%s fit stopped after %d iterations, grad sup-norm %.3g",
                 name, res.iterations, res.grad_norm)
    return FittedCorrection(model=model.with_params(res.params), generator=name,
                            lam=cfg.lam, loss_trace=res.loss_trace, converged=res.converged,
                            grad_norm=res.grad_norm, iterations=res.iterations,
                            score_bound=bound)


def _clip_bound(model, cfg) -> Optional[float]:
    if model.family == "mlp" and model.spec.output_bound is not None:
        return None
    return cfg.score_bound


def fit_correction(data: Dataset, cfg: FitConfig = FitConfig(),
                   model: Optional[ScoreModel] = None) -> FittedCorrection:
    """Fit r(d, x) by penalized empirical risk minimization under ``cfg.generator``."""
    cfg = cfg.resolved(data.n)
    if cfg.generator == "att":
        return fit_att_weights(data, cfg, model=model)
    loss = get_loss(cfg.generator)
    model = model if model is not None else init_model(cfg.family, data.x, cfg)
    bound = _clip_bound(model, cfg)
    return _run(model, data.x, correction_objective(loss, data.d, bound), cfg, loss.name, bound)


def fit_att_weights(data: Dataset, cfg: Union[FitConfig, str] = "linear",
                    lam: Optional[float] = None,
                    model: Optional[ScoreModel] = None) -> FittedCorrection:
    """Fit the ATT weight w(x) = exp(f(x)); evaluate it through ``.w``."""
    if isinstance(cfg, str):
        cfg = FitConfig(family=cfg)
    cfg = replace(cfg, generator="att")
    if lam is not None:
        cfg = replace(cfg, lam=lam)
    cfg = cfg.resolved(data.n)
    model = model if model is not None else init_model(cfg.family, data.x, cfg)
    bound = _clip_bound(model, cfg)
    return _run(model, data.x, att_objective(data.d, bound), cfg, "att", bound)


# outcome regression

class ArmRegression:
    """One arm's regression mu(x) = offset + scale * f(x)."""

    def __init__(self, model: ScoreModel, offset: float = 0.0, scale: float = 1.0):
        self.model = model
        self.offset = offset
        self.scale = scale

    def __call__(self, x):
        return self.offset + self.scale * self.model.f(x)


class OutcomeRegression:
    """Evaluable mu(d, x) built from one regression per treatment arm."""

    def __init__(self, arms: dict):
        self.arms = arms

    def __call__(self, d, x):
        x = np.asarray(x, dtype=float)
        d = np.asarray(d)
        if d.ndim == 0:
            return self.arms[int(d)](x)
        return np.where(d == 1, self.arms[1](x), self.arms[0](x))


def zero_outcome(d, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.zeros(x.shape[0])


def _ridge(design: np.ndarray, y: np.ndarray, lam: float, penalized: np.ndarray) -> np.ndarray:
    n = design.shape[0]
    a = design.T @ design / n + lam * np.diag(penalized.astype(float))
    b = design.T @ y / n
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return sol


def _fit_arm(x, y, cfg: FitConfig) -> ArmRegression:
    if cfg.family == "linear":
        model = linear_model(x.shape[1])
        pen = np.ones(model.n_params, dtype=bool)
        pen[-1] = False
        return ArmRegression(model.with_params(_ridge(model.design(x), y, cfg.lam, pen)))
    if cfg.family == "kernel":
        model = kernel_model(x, cfg.kernel, seed=cfg.seed)
        offset = float(np.mean(y))
        kx = model.design(x)
        n = x.shape[0]
        a = kx.T @ kx / n + cfg.lam * model.gram
        alpha, *_ = np.linalg.lstsq(a, kx.T @ (y - offset) / n, rcond=None)
        return ArmRegression(model.with_params(alpha), offset=offset)
    offset = float(np.mean(y))
    scale = float(np.std(y)) or 1.0
    model = mlp_model(x.shape[1], cfg.mlp, seed=cfg.seed)
    res = minimize(model, model.design(x), mse_objective((y - offset) / scale), cfg)
    return ArmRegression(model.with_params(res.params), offset=offset, scale=scale)


def fit_outcome(data: Dataset, cfg: Union[FitConfig, str] = "linear",
                lam: Optional[float] = None) -> OutcomeRegression:
    """Fit mu(d, x) separately on each arm by penalized least squares."""
    if isinstance(cfg, str):
        cfg = FitConfig(family=cfg, generator="mse")
    if lam is not None:
        cfg = replace(cfg, lam=lam)
    arms = {}
    for d in (1, 0):
        mask = data.d == d
        arm_cfg = cfg.resolved(int(mask.sum()))
        arms[d] = _fit_arm(data.x[mask], data.y[mask], arm_cfg)
    return OutcomeRegression(arms)


# cross-fitting

@dataclass(frozen=True)
class FoldPlan:
    k_folds: int
    assignment: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if a.min() < 0 or a.max() >= self.k_folds or len(np.unique(a)) != self.k_folds:
            raise ValueError("every fold must be non-empty")
        object.__setattr__(self, "assignment", a)

    def test_mask(self, fold: int) -> np.ndarray:
        return self.assignment == fold


def make_folds(n: int, d, k: int = 5, seed: int = 0) -> FoldPlan:
    """Random partition into ``k`` folds, stratified by treatment arm."""
    d = np.asarray(d)
    if k < 2:
        raise ValueError("k must be >= 2")
    if d.shape[0] != n:
        raise ValueError("d must have length n")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    for arm in (1, 0):
        idx = np.flatnonzero(d == arm)
        if idx.size < k:
            raise ValueError(f"arm d={arm} has {idx.size} units, fewer than k={k} folds")
        perm = rng.permutation(idx)
        assignment[perm] = np.arange(perm.size) % k
    return FoldPlan(k, assignment, seed)


@dataclass
class Nuisances:
    """Per-row nuisance values h(D_i, X_i), mu(1, X_i), mu(0, X_i).

    ``eval_fold[i]`` names the model that produced row i (-1 = full sample);
    ``train_masks[j]`` marks the rows model j was trained on.
    """

    h: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    eval_fold: Optional[np.ndarray] = None
    train_masks: Optional[list] = None

    def audit(self) -> bool:
        """True when no row's nuisances came from a model trained on that row."""
        if self.eval_fold is None or self.train_masks is None:
            return False
        rows = np.arange(self.h.shape[0])
        return not any(self.train_masks[j][i] for i, j in zip(rows, self.eval_fold))

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["h", "mu1", "mu0"])
            for row in zip(self.h, self.mu1, self.mu0):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Nuisances":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            cols = {c: np.array([float(r[c]) for r in rows]) for c in ("h", "mu1", "mu0")}
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: nuisance table needs numeric columns h, mu1, mu0") from exc
        return cls(**cols)


def nuisances_from(data: Dataset, h_fn, mu) -> Nuisances:
    """Evaluate h(d, x) and mu(d, x) on every row of ``data``."""
    return Nuisances(h=np.asarray(h_fn(data.d, data.x), dtype=float),
                     mu1=np.asarray(mu(1, data.x), dtype=float),
                     mu0=np.asarray(mu(0, data.x), dtype=float))


def full_sample_nuisances(data: Dataset, cfg: FitConfig,
                          outcome_cfg: Union[FitConfig, str]) -> Nuisances:
    corr = fit_correction(data, cfg)
    out = nuisances_from(data, corr.h, fit_outcome(data, outcome_cfg))
    out.eval_fold = np.full(data.n, -1)
    return out


def crossfit_nuisances(data: Dataset, cfg: FitConfig, outcome_cfg: Union[FitConfig, str],
                       folds: FoldPlan) -> Nuisances:
    """Fit on all folds but one, evaluate on the held-out fold, for every fold."""
    if folds.assignment.shape[0] != data.n:
        raise ValueError("fold plan does not match the dataset size")
    h = np.empty(data.n)
    mu1 = np.empty(data.n)
    mu0 = np.empty(data.n)
    masks = []
    for j in range(folds.k_folds):
        test = folds.test_mask(j)
        train = ~test
        masks.append(train)
        try:
            sub = data.subset(train)
            corr = fit_correction(sub, cfg)
            mu = fit_outcome(sub, outcome_cfg)
        except Exception as exc:
            raise FitError(f"fold {j}: {exc}") from exc
        xt = data.x[test]
        h[test] = corr.h(data.d[test], xt)
        mu1[test] = mu(1, xt)
        mu0[test] = mu(0, xt)
    return Nuisances(h, mu1, mu0, eval_fold=folds.assignment.copy(), train_masks=masks)
