"""Label-only classifier oracles, synthetic data and the fool-ratio metric.

Random weights come from ``numpy.random.Generator(PCG64(seed))``; numpy keeps
the PCG64 stream stable across releases, so a seed pins every weight.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .conv import ConvLayer, apply_conv
from .errors import ContractError, OracleError, OracleQueryError
from .perturb import apply_perturbation

ACTIVATIONS = ("linear", "relu")
POOLS = ("none", "max2")


def rng_from_seed(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def argmax_label(scores) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already returns the lowest tied index."""
    return np.argmax(np.asarray(scores), axis=-1)


class Oracle:
    """Base class: deterministic image -> label map with a query counter."""

    kind = "oracle"

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    def _bump(self, k: int = 1):
        with self._lock:
            self._count += k

    @property
    def descriptor(self) -> str:
        return self.kind

    def _labels(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def query(self, x) -> int:
        x = np.asarray(x, dtype=float)
        self._bump()
        return int(self._labels(x[None])[0])

    def query_batch(self, xs) -> np.ndarray:
        """Labels for a ``(B, C, N, N)`` stack; counts ``B`` queries."""
        xs = np.asarray(xs, dtype=float)
        self._bump(len(xs))
        return np.asarray(self._labels(xs), dtype=np.int64)


class FunctionOracle(Oracle):
    """Wraps a per-image ``fn(x) -> label``; handy for rigged test oracles."""

    kind = "function"

    def __init__(self, fn, name: str = "function"):
        super().__init__()
        self._fn = fn
        self._name = name

    @property
    def descriptor(self) -> str:
        return self._name

    def _labels(self, xs):
        out = np.empty(len(xs), dtype=np.int64)
        for k, x in enumerate(xs):
            try:
                out[k] = int(self._fn(x))
            except OracleError as exc:
                raise OracleQueryError(f"image {k}: {exc}", index=k) from exc
        return out


class ToyCNN(Oracle):
    """Circular convolutions with optional ReLU / 2x2 max-pool, then GAP + linear."""

    kind = "toy-cnn"

    def __init__(self, layers, activations, pools, readout, readout_bias=None, name=None,
                 input_shift=0.0):
        super().__init__()
        self.input_shift = float(input_shift)
        self.layers = list(layers)
        self.activations = list(activations)
        self.pools = list(pools)
        if not (len(self.layers) == len(self.activations) == len(self.pools)):
            raise ContractError("layers, activations and pools must have equal length")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r}")
        for p in self.pools:
            if p not in POOLS:
                raise ContractError(f"unknown pool {p!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ContractError("channel chain broken")
        self.readout = np.asarray(readout, dtype=float)
        if self.readout.shape[1] != self.layers[-1].out_channels:
            raise ContractError("readout width does not match last layer")
        self.readout_bias = (
            np.zeros(self.readout.shape[0]) if readout_bias is None
            else np.asarray(readout_bias, dtype=float)
        )
        self._name = name

    @property
    def num_classes(self) -> int:
        return self.readout.shape[0]

    @property
    def descriptor(self) -> str:
        return self._name or self.kind

    def features(self, xs) -> np.ndarray:
        h = np.asarray(xs, dtype=float) - self.input_shift
        for layer, act, pool in zip(self.layers, self.activations, self.pools):
            h = apply_conv(layer, h)
            if act == "relu":
                h = np.maximum(h, 0.0)
            if pool == "max2":
                *lead, c, n, _ = h.shape
                if n % 2:
                    raise ContractError(f"max2 pool needs even size, got {n}")
                h = h.reshape(*lead, c, n // 2, 2, n // 2, 2).max(axis=(-3, -1))
        return h

    def logits(self, xs) -> np.ndarray:
        pooled = self.features(xs).mean(axis=(-2, -1))
        return pooled @ self.readout.T + self.readout_bias

    def _labels(self, xs):
        return argmax_label(self.logits(xs))


class ToyMLP(Oracle):
    """Flatten -> (affine -> ReLU)* -> affine -> argmax."""

    kind = "toy-mlp"

    def __init__(self, weights, biases, name=None):
        super().__init__()
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self._name = name

    @property
    def descriptor(self) -> str:
        return self._name or self.kind

    def logits(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        h = xs.reshape(len(xs), -1)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def _labels(self, xs):
        return argmax_label(self.logits(xs))


@dataclass(frozen=True)
class LayerSpec:
    out: int
    k: int = 3
    stride: int = 1
    activation: str = "relu"
    pool: str = "none"


@dataclass(frozen=True)
class ToyModelSpec:
    """Recipe for a seeded random toy model (``kind`` is toy-cnn or toy-mlp)."""

    seed: int
    n: int
    channels: int = 3
    num_classes: int = 10
    kind: str = "toy-cnn"
    layers: tuple = field(default_factory=tuple)
    hidden: tuple = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, d: dict) -> ToyModelSpec:
        d = dict(d)
        known = {"seed", "n", "channels", "num_classes", "kind", "layers", "hidden"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model spec fields: {sorted(extra)}")
        layers = tuple(LayerSpec(**layer) for layer in d.pop("layers", ()))
        hidden = tuple(int(h) for h in d.pop("hidden", ()))
        return cls(layers=layers, hidden=hidden, **d)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "n": self.n,
             "channels": self.channels, "num_classes": self.num_classes}
        if self.kind == "toy-cnn":
            d["layers"] = [vars(layer).copy() for layer in self.layers]
        else:
            d["hidden"] = list(self.hidden)
        return d

    @property
    def descriptor(self) -> str:
        if self.kind == "toy-cnn":
            arch = "-".join(
                f"c{l.out}k{l.k}s{l.stride}{l.activation[0]}{'p' if l.pool != 'none' else ''}"
                for l in self.layers
            )
        else:
            arch = "h" + "-".join(str(h) for h in self.hidden)
        return f"{self.kind}:seed={self.seed}:n={self.n}:c={self.channels}:k={self.num_classes}:{arch}"


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def make_toy_cnn(spec: ToyModelSpec) -> ToyCNN:
    if not spec.layers:
        raise ContractError("toy CNN needs at least one layer")
    rng = rng_from_seed(spec.seed)
    layers, acts, pools = [], [], []
    c, n = spec.channels, spec.n
    for ls in spec.layers:
        if ls.k > n:
            raise ContractError(f"kernel {ls.k} larger than feature size {n}")
        w = _uniform(rng, (ls.out, c, ls.k, ls.k), c * ls.k * ls.k)
        layer = ConvLayer(w, stride=ls.stride)
        n = layer.output_size(n)
        if ls.pool == "max2":
            if n % 2:
                raise ContractError(f"max2 pool needs even size, got {n}")
            n //= 2
        layers.append(layer)
        acts.append(ls.activation)
        pools.append(ls.pool)
        c = ls.out
    readout = _uniform(rng, (spec.num_classes, c), c)
    model = ToyCNN(layers, acts, pools, readout, name=spec.descriptor, input_shift=0.5)
    # centre the logits on a seeded reference batch so classes are balanced
    ref = synthetic_batch(spec.seed + 1, spec.n, spec.channels, 64)
    model.readout_bias = -model.logits(ref).mean(axis=0)
    return model


def make_toy_mlp(seed, n, hidden, num_classes, channels=3) -> ToyMLP:
    sizes = [channels * n * n, *hidden, num_classes]
    if any(s <= 0 for s in sizes):
        raise ContractError(f"layer sizes must be positive: {sizes}")
    rng = rng_from_seed(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(_uniform(rng, (fan_out, fan_in), fan_in))
        biases.append(_uniform(rng, (fan_out,), fan_in))
    spec = ToyModelSpec(seed=seed, n=n, channels=channels, num_classes=num_classes,
                        kind="toy-mlp", hidden=tuple(hidden))
    return ToyMLP(weights, biases, name=spec.descriptor)


def build_oracle(spec: ToyModelSpec) -> Oracle:
    if spec.kind == "toy-cnn":
        return make_toy_cnn(spec)
    if spec.kind == "toy-mlp":
        return make_toy_mlp(spec.seed, spec.n, spec.hidden, spec.num_classes, spec.channels)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def synthetic_batch(seed, n, channels, count, generator="uniform", num_classes=2,
                    return_classes=False):
    """Deterministic ``(count, channels, n, n)`` images in ``[0, 1]``.

    ``gaussian-mixture-classes`` draws a smooth random mean image per class and
    adds pixel noise; the class index of each image is returned on request.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = rng_from_seed(seed)
    if generator == "uniform":
        x = rng.uniform(0.0, 1.0, size=(count, channels, n, n))
        classes = np.zeros(count, dtype=np.int64)
    elif generator == "gaussian-mixture-classes":
        level = rng.uniform(0.2, 0.8, size=(num_classes, channels, 1, 1))
        coarse = level + rng.uniform(-0.15, 0.15, size=(num_classes, channels, 4, 4))
        reps = -(-n // 4)
        means = np.kron(coarse, np.ones((reps, reps)))[..., :n, :n]
        classes = rng.integers(0, num_classes, size=count)
        x = means[classes] + rng.normal(0.0, 0.1, size=(count, channels, n, n))
    else:
        raise ValueError(f"unknown generator {generator!r}")
    x = np.clip(x, 0.0, 1.0)
    return (x, classes) if return_classes else x


def query_labels(oracle: Oracle, xs, frequency=None) -> np.ndarray:
    """``oracle.query_batch`` with failures re-raised as :class:`OracleQueryError`."""
    try:
        return oracle.query_batch(xs)
    except OracleQueryError as exc:
        if frequency is not None and exc.frequency is None:
            exc.frequency = frequency
        raise
    except OracleError as exc:
        raise OracleQueryError(str(exc), frequency=frequency) from exc


def fool_ratio(oracle: Oracle, batch, perturbation, clean_labels=None) -> float:
    """Fraction of the batch whose label changes under the perturbation."""
    batch = np.asarray(batch, dtype=float)
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    if clean_labels is None:
        clean_labels = query_labels(oracle, batch)
    perturbed = query_labels(oracle, apply_perturbation(batch, perturbation))
    return float(np.count_nonzero(perturbed != clean_labels)) / len(batch)
