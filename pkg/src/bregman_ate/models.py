"""Score models ``f(x; theta)`` and the propensity quantities they induce.

A score ``f`` gives ``e(x) = 1 / (1 + exp(-f(x)))`` together with the
inverse propensities ``r(1, x) = 1 + exp(-f(x))`` and
``r(0, x) = 1 + exp(f(x))``.

Parameter layouts (the flat ``params`` vector in the JSON form):

* ``linear``: ``K`` slopes followed by one intercept.
* ``kernel``: one coefficient per anchor point.
* ``mlp``: for each layer in order, the weight matrix (fan_in x fan_out,
  row-major) followed by its bias vector. The output layer has one unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    """Feed-forward architecture.

    ``output_bound`` (if set) maps the raw output through
    ``bound * tanh(raw / bound)`` so that ``|f| < bound`` everywhere.
    """

    hidden_layers: int = 3
    width: int = 100
    activation: str = "elu"
    output_bound: Optional[float] = None

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("hidden_layers and width must be >= 1")
        if self.activation not in ("elu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_bound is not None and not self.output_bound > 0:
            raise ValueError("output_bound must be positive")


@dataclass(frozen=True)
class KernelSpec:
    """``bandwidth=None`` selects the median-distance heuristic."""

    bandwidth: Optional[float] = None
    max_anchors: int = 2000

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.max_anchors < 1:
            raise ValueError("max_anchors must be >= 1")


def _as_matrix(x, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != k:
        raise DimensionError(f"expected covariates with {k} columns, got shape {x.shape}")
    return x


def r_from_f(d: int, f) -> np.ndarray:
    """Inverse propensity for arm ``d`` from the score; finite for |f| <= 700."""
    f = np.asarray(f, dtype=float)
    return 1.0 + np.exp(-f) if d == 1 else 1.0 + np.exp(f)


def dr_df(d: int, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return -np.exp(-f) if d == 1 else np.exp(f)


class ScoreModel:
    """Base class. Subclasses define the design, forward and backward passes."""

    family: str = ""

    def __init__(self, params, k: int):
        params = np.array(params, dtype=float).ravel()
        params.setflags(write=False)
        self.params = params
        self.k = int(k)

    # design matrices are precomputed once per dataset during fitting
    def design(self, x) -> np.ndarray:
        return _as_matrix(x, self.k)

    def forward(self, design, params=None):
        raise NotImplementedError

    def backward(self, cache, v, params=None) -> np.ndarray:
        """Return sum_i v_i * d f(x_i) / d theta."""
        raise NotImplementedError

    def penalty(self, params=None) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def meta(self) -> dict:
        raise NotImplementedError

    def with_params(self, params) -> "ScoreModel":
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return self.params.size

    def f(self, x) -> np.ndarray:
        return self.forward(self.design(x))[0]

    def e(self, x) -> np.ndarray:
        return 1.0 / r_from_f(1, self.f(x))

    def r(self, d: int, x) -> np.ndarray:
        return r_from_f(d, self.f(x))

    def grad_f(self, x) -> np.ndarray:
        """Jacobian of ``f`` at each row of ``x`` (rows x n_params)."""
        design = self.design(x)
        out = np.empty((design.shape[0], self.n_params))
        for i in range(design.shape[0]):
            _, cache = self.forward(design[i:i + 1])
            out[i] = self.backward(cache, np.ones(1))
        return out

    def to_dict(self) -> dict:
        return {"family": self.family, "params": [float(p) for p in self.params],
                "meta": self.meta()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __repr__(self):
        return f"{type(self).__name__}(k={self.k}, n_params={self.n_params})"


class LinearScore(ScoreModel):
    family = "linear"

    def design(self, x):
        x = _as_matrix(x, self.k)
        return np.hstack([x, np.ones((x.shape[0], 1))])

    def forward(self, design, params=None):
        p = self.params if params is None else params
        return design @ p, design

    def backward(self, cache, v, params=None):
        return cache.T @ v

    def penalty(self, params=None):
        p = self.params if params is None else params
        grad = 2.0 * p
        grad[-1] = 0.0
        return float(p[:-1] @ p[:-1]), grad

    def meta(self):
        return {"k": self.k}

    def with_params(self, params):
        return LinearScore(params, self.k)


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def gaussian_kernel(a, b, bandwidth: float) -> np.ndarray:
    return np.exp(-sq_distances(a, b) / (2.0 * bandwidth ** 2))


def median_bandwidth(x, max_points: int = 1000, seed: int = 0) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(x.shape[0], max_points, replace=False)
        x = x[np.sort(idx)]
    iu = np.triu_indices(x.shape[0], 1)
    dist = np.sqrt(sq_distances(x, x)[iu])
    med = float(np.median(dist)) if dist.size else 1.0
    return med if med > 0 else 1.0


class KernelScore(ScoreModel):
    family = "kernel"

    def __init__(self, params, anchors, bandwidth: float):
        anchors = np.array(anchors, dtype=float)
        if anchors.ndim != 2:
            raise DimensionError("anchors must be a 2-D array")
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        anchors.setflags(write=False)
        self.anchors = anchors
        self.bandwidth = float(bandwidth)
        self._gram = None
        super().__init__(params, anchors.shape[1])
        if self.params.size != anchors.shape[0]:
            raise DimensionError("one coefficient per anchor required")

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = gaussian_kernel(self.anchors, self.anchors, self.bandwidth)
        return self._gram

    def design(self, x):
        return gaussian_kernel(_as_matrix(x, self.k), self.anchors, self.bandwidth)

    def forward(self, design, params=None):
        p = self.params if params is None else params
        return design @ p, design

    def backward(self, cache, v, params=None):
        return cache.T @ v

    def penalty(self, params=None):
        p = self.params if params is None else params
        kp = self.gram @ p
        return float(p @ kp), 2.0 * kp

    def meta(self):
        return {"k": self.k, "bandwidth": self.bandwidth,
                "anchors": [[float(v) for v in row] for row in self.anchors]}

    def with_params(self, params):
        out = KernelScore(params, self.anchors, self.bandwidth)
        out._gram = self._gram
        return out


class MlpScore(ScoreModel):
    family = "mlp"

    def __init__(self, params, k: int, spec: MlpSpec = MlpSpec()):
        self.spec = spec
        sizes = [k] + [spec.width] * spec.hidden_layers + [1]
        self.shapes = list(zip(sizes[:-1], sizes[1:]))
        self._mask = None
        super().__init__(params, k)
        expected = sum(a * b + b for a, b in self.shapes)
        if self.params.size != expected:
            raise DimensionError(f"mlp expects {expected} params, got {self.params.size}")

    def layers(self, params=None):
        p = self.params if params is None else params
        out, pos = [], 0
        for a, b in self.shapes:
            w = p[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((w, p[pos:pos + b]))
            pos += b
        return out

    def forward(self, design, params=None):
        layers = self.layers(params)
        act = design
        cache = [design]
        relu = self.spec.activation == "relu"
        for w, b in layers[:-1]:
            z = act @ w
            z += b
            if relu:
                slope = (z > 0).astype(float)
                act = np.maximum(z, 0.0, out=z)
            else:
                # expm1(min(z, 0)) is exactly 0 for z > 0, so one pass gives both
                neg = np.minimum(z, 0.0)
                np.expm1(neg, out=neg)
                act = np.maximum(z, 0.0, out=z)
                act += neg
                neg += 1.0
                slope = neg
            cache.append((act, slope))
        w, b = layers[-1]
        raw = (act @ w + b).ravel()
        bound = self.spec.output_bound
        if bound is None:
            return raw, cache
        t = np.tanh(raw / bound)
        cache.append(1.0 - t * t)
        return bound * t, cache

    def backward(self, cache, v, params=None):
        layers = self.layers(params)
        v = np.asarray(v, dtype=float)
        if self.spec.output_bound is not None:
            v = v * cache[-1]
            cache = cache[:-1]
        v = v.reshape(-1, 1)
        grads = [None] * len(layers)
        w_out, _ = layers[-1]
        prev = cache[-1][0] if len(cache) > 1 else cache[0]
        grads[-1] = ((prev.T @ v).ravel(), np.array([v.sum()]))
        delta = v @ w_out.T
        ones = np.ones(delta.shape[0])  # column sums through BLAS
        for li in range(len(layers) - 2, -1, -1):
            _, slope = cache[li + 1]
            delta *= slope
            inp = cache[li] if li == 0 else cache[li][0]
            grads[li] = ((inp.T @ delta).ravel(), ones @ delta)
            if li > 0:
                delta = delta @ layers[li][0].T
        return np.concatenate([np.concatenate(g) for g in grads])

    def weight_mask(self) -> np.ndarray:
        if self._mask is None:
            self._mask = np.concatenate([np.concatenate([np.ones(a * b), np.zeros(b)])
                                         for a, b in self.shapes])
        return self._mask

    def penalty(self, params=None):
        p = self.params if params is None else params
        pw = p * self.weight_mask()
        return float(pw @ pw), 2.0 * pw

    def meta(self):
        return {"k": self.k, "hidden_layers": self.spec.hidden_layers,
                "width": self.spec.width, "activation": self.spec.activation,
                "output_bound": self.spec.output_bound}

    def with_params(self, params):
        return MlpScore(params, self.k, self.spec)


def linear_model(k: int, params=None) -> LinearScore:
    return LinearScore(np.zeros(k + 1) if params is None else params, k)


def kernel_model(x, spec: KernelSpec = KernelSpec(), seed: int = 0, params=None) -> KernelScore:
    """Kernel score anchored on (a uniform subsample of) the rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] > spec.max_anchors:
        idx = np.random.default_rng(seed).choice(x.shape[0], spec.max_anchors, replace=False)
        anchors = x[np.sort(idx)]
    else:
        anchors = x
    bw = spec.bandwidth if spec.bandwidth is not None else median_bandwidth(x, seed=seed)
    return KernelScore(np.zeros(anchors.shape[0]) if params is None else params, anchors, bw)


def mlp_model(k: int, spec: MlpSpec = MlpSpec(), seed: int = 0, params=None) -> MlpScore:
    """MLP with fan-in scaled normal weights and zero biases."""
    if params is None:
        rng = np.random.default_rng(seed)
        sizes = [k] + [spec.width] * spec.hidden_layers + [1]
        chunks = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            chunks.append(rng.normal(0.0, 1.0 / np.sqrt(a), a * b))
            chunks.append(np.zeros(b))
        params = np.concatenate(chunks)
    return MlpScore(params, k, spec)


def model_from_dict(obj: dict) -> ScoreModel:
    family, params, meta = obj["family"], obj["params"], obj["meta"]
    if family == "linear":
        return LinearScore(params, meta["k"])
    if family == "kernel":
        return KernelScore(params, meta["anchors"], meta["bandwidth"])
    if family == "mlp":
        spec = MlpSpec(meta["hidden_layers"], meta["width"], meta["activation"],
                       meta.get("output_bound"))
        return MlpScore(params, meta["k"], spec)
    raise ValueError(f"unknown model family {family!r}")


def model_from_json(text: str) -> ScoreModel:
    return model_from_dict(json.loads(text))


# functional surface

def eval_f(model: ScoreModel, x) -> np.ndarray:
    return model.f(x)


def eval_e(model: ScoreModel, x) -> np.ndarray:
    return model.e(x)


def eval_r(model: ScoreModel, d: int, x) -> np.ndarray:
    return model.r(d, x)


def grad_params(model: ScoreModel, d: int, x) -> np.ndarray:
    """d r(d, x) / d theta; one row per covariate row (squeezed for a single x)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    jac = model.grad_f(x)
    out = dr_df(d, model.f(x))[:, None] * jac
    return out[0] if single else out


def penalty(model: ScoreModel) -> tuple[float, np.ndarray]:
    return model.penalty()
