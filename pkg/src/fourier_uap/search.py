"""Frequency sweeps and searches against label-only oracles, plus the
closed-form kernel-response analysis that explains why neighbouring
frequencies behave alike."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ConvLayer, apply_conv, apply_network, as_network
from .errors import ContractError, OracleQueryError
from .oracle import Oracle, fool_ratio, query_labels, rng_from_seed
from .perturb import make_pattern
from .spectral import Frequency, all_frequencies, as_frequency, fourier_basis


@dataclass(frozen=True)
class FoolHeatmap:
    n: int
    epsilon: float
    values: np.ndarray
    batch_size: int
    oracle: str
    seed: int | None = None
    signed: bool = False

    def argmax(self) -> tuple[Frequency, float]:
        """Highest cell; ties go to the smallest ``(i, j)`` in row-major order."""
        flat = int(np.argmax(self.values))
        i, j = divmod(flat, self.n)
        return Frequency(i, j, self.n), float(self.values[i, j])


@dataclass(frozen=True)
class ResponseMap:
    n: int
    kernel: str
    values: np.ndarray


@dataclass(frozen=True)
class SearchResult:
    freq: Frequency
    fool_ratio: float
    queries: int
    evaluations: int


def canonical_frequencies(n: int) -> list:
    """One representative per conjugate pair, in row-major order."""
    return [f for f in all_frequencies(n) if f.canonical() == f]


class _FrequencyObjective:
    """Fool ratio per frequency with clean labels queried once."""

    def __init__(self, oracle, batch, epsilon, signed):
        self.oracle = oracle
        self.batch = np.asarray(batch, dtype=float)
        if self.batch.ndim != 4 or len(self.batch) == 0:
            raise ValueError("batch must be a nonempty (B, C, N, N) array")
        self.n = self.batch.shape[-1]
        self.epsilon = float(epsilon)
        self.signed = signed
        self.clean = query_labels(oracle, self.batch)
        self.cache = {}

    def __call__(self, freq: Frequency) -> float:
        key = freq.canonical()
        if key not in self.cache:
            p = make_pattern(self.n, key, self.epsilon, self.signed)
            try:
                self.cache[key] = fool_ratio(self.oracle, self.batch, p, self.clean)
            except OracleQueryError as exc:
                raise OracleQueryError(
                    f"frequency {key.as_tuple()}: {exc}", index=exc.index, frequency=key.as_tuple()
                ) from exc
        return self.cache[key]

    def grid(self) -> np.ndarray:
        values = np.full((self.n, self.n), -np.inf)
        for f, v in self.cache.items():
            values[f.i, f.j] = v
            c = f.conjugate()
            values[c.i, c.j] = v
        return values


def fool_heatmap(oracle: Oracle, batch, epsilon: float, signed: bool = False,
                 seed=None) -> FoolHeatmap:
    """Fool ratio of the (signed) single Fourier attack at every frequency.

    Conjugate cells share one pattern, so each pair is evaluated once; total
    cost is ``|batch| * (1 + number of conjugate pairs)`` queries.
    """
    obj = _FrequencyObjective(oracle, batch, epsilon, signed)
    for f in canonical_frequencies(obj.n):
        obj(f)
    return FoolHeatmap(obj.n, obj.epsilon, obj.grid(), len(obj.batch),
                       oracle.descriptor, seed, signed)


def brute_force_search(oracle: Oracle, batch, epsilon: float, signed: bool = False):
    """Exhaustive search; returns ``(frequency, fool ratio)``."""
    return fool_heatmap(oracle, batch, epsilon, signed).argmax()


def _neighbors(f: Frequency) -> list:
    n = f.n
    out = set()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                g = Frequency((f.i + di) % n, (f.j + dj) % n, n).canonical()
                if g != f.canonical():
                    out.add(g)
    return sorted(out)


class _BudgetSpent(Exception):
    pass


def local_search(oracle: Oracle, batch, epsilon: float, budget: int, seed,
                 signed: bool = False) -> SearchResult:
    """Multi-restart steepest-ascent hill climbing on the frequency torus.

    ``budget`` counts distinct frequency evaluations (conjugate pairs count
    once). Restarts begin at unvisited cells drawn from a seeded permutation.
    With a budget covering every pair the result equals
    :func:`brute_force_search`.
    """
    if budget < 1:
        raise ValueError("budget must allow at least one frequency evaluation")
    start_count = oracle.query_count
    obj = _FrequencyObjective(oracle, batch, epsilon, signed)
    cells = canonical_frequencies(obj.n)
    limit = min(budget, len(cells))
    order = [cells[k] for k in rng_from_seed(seed).permutation(len(cells))]

    def evaluate(f):
        if f.canonical() not in obj.cache and len(obj.cache) >= limit:
            raise _BudgetSpent
        return obj(f)

    try:
        for start in order:
            if start in obj.cache:
                continue
            current, value = start, evaluate(start)
            while True:
                scored = [(evaluate(g), g) for g in _neighbors(current)]
                best_value = max(v for v, _ in scored)
                if best_value <= value:
                    break
                current = min(g for v, g in scored if v == best_value)
                value = best_value
    except _BudgetSpent:
        pass

    best, ratio = FoolHeatmap(obj.n, obj.epsilon, obj.grid(), len(obj.batch),
                              oracle.descriptor).argmax()
    return SearchResult(best, ratio, oracle.query_count - start_count, len(obj.cache))


def pixel_heatmap(oracle: Oracle, batch, value: float = 1.0) -> FoolHeatmap:
    """Standard-basis counterpart: add ``value`` to one pixel (all channels), clip."""
    batch = np.asarray(batch, dtype=float)
    n = batch.shape[-1]
    clean = query_labels(oracle, batch)
    grid = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            delta = np.zeros((n, n))
            delta[u, v] = value
            grid[u, v] = fool_ratio(oracle, batch, delta, clean)
    return FoolHeatmap(n, float(value), grid, len(batch), f"pixel:{oracle.descriptor}")


def heatmap_contrast(values, floor: float) -> float:
    """``max / median`` of a heatmap, with the median floored at ``floor``."""
    values = np.asarray(values, dtype=float)
    return float(values.max() / max(np.median(values), floor))


def _kernel_layer(kernel) -> ConvLayer:
    if isinstance(kernel, ConvLayer):
        layer = kernel
    else:
        w = np.asarray(kernel, dtype=float)
        if w.ndim == 2:
            w = w[None, None]
        layer = ConvLayer(w)
    if layer.stride != 1:
        raise ContractError("response maps are defined for stride-1 kernels")
    return layer


def kernel_response_map(kernel, n: int, name: str = "kernel") -> ResponseMap:
    """Output l2 norm when ``basis(i, j)`` is fed to every input channel.

    Computed by applying the convolution to each complex basis input.
    """
    layer = _kernel_layer(kernel)
    m = layer.in_channels
    inputs = np.stack([fourier_basis(n, f) for f in all_frequencies(n)])
    inputs = np.repeat(inputs[:, None], m, axis=1)
    out = apply_conv(layer, inputs)
    values = np.sqrt(np.sum(np.abs(out) ** 2, axis=(1, 2, 3))).reshape(n, n)
    return ResponseMap(n, name, values)


def matched_kernel(freq, k: int, n: int) -> ConvLayer:
    """Real unit-Frobenius ``k x k`` kernel with the largest response at ``freq``.

    The response of a real kernel ``K`` is ``|<K, c>|**2 + |<K, s>|**2`` with
    ``c, s`` the cosine/sine parts of the conjugate basis restricted to the
    kernel support, so the optimum is the top eigenvector of the 2x2 Gram
    problem in span{c, s}: the restricted conjugate basis, rotated to the phase
    whose real part carries the most energy.
    """
    f = as_frequency(freq, n)
    if not 1 <= k <= n:
        raise ContractError(f"kernel size {k} must lie in [1, {n}]")
    dy, dx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    theta = 2 * np.pi * ((f.i * dy + f.j * dx) % n) / n
    basis = np.stack([np.cos(theta).ravel(), np.sin(theta).ravel()], axis=1)
    gram = basis.T @ basis
    evals, evecs = np.linalg.eigh(gram)
    w = basis @ evecs[:, -1]
    # fix the sign so the kernel sum is nonnegative (DC gives +1/k everywhere)
    if w.sum() < 0 or (np.isclose(w.sum(), 0) and w[np.argmax(np.abs(w))] < 0):
        w = -w
    w = w / np.linalg.norm(w)
    return ConvLayer(w.reshape(1, 1, k, k))


def displacement_map(net, n: int) -> np.ndarray:
    """Largest output displacement under unit-energy inputs at each frequency.

    Measured by running the network on ``e_c (x) basis(w)`` for each input
    channel ``c`` and taking the top singular value of the stacked outputs.
    """
    net = as_network(net)
    m = net.in_channels
    eye = np.eye(m)
    freqs = all_frequencies(n)
    inputs = np.stack([
        eye[:, :, None, None] * fourier_basis(n, f)[None, None] for f in freqs
    ])
    out = apply_network(net, inputs.reshape(-1, m, n, n))
    out = out.reshape(len(freqs), m, -1).transpose(0, 2, 1)
    return np.linalg.svd(out, compute_uv=False)[:, 0].reshape(n, n)
