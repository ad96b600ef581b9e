"""Exact SVD of circular convolution stacks through per-frequency blocks.

A stride-1 layer maps ``a (x) basis(w)`` to ``(G(w) a) (x) basis(w)``, where
``G(w)`` is the ``m_out x m_in`` channel-mixing matrix

    G(w)[o, c] = sum_{dy,dx} K[o, c, dy, dx] * exp(2*pi*1j*(i*dy + j*dx)/N).

With real kernels this is the unnormalized 2-D DFT of the zero-embedded kernel
slice evaluated at the conjugate frequency ``(-i, -j)``; that phase convention
follows from the kernel anchoring in :mod:`fourier_uap.conv` and does not
affect singular values.

Subsampling by ``s`` sends ``basis_N(w)`` to ``basis_{N/s}(w mod N/s) / s``, so
a strided operator mixes the ``s**2`` aliases of each output frequency; the
resulting ``m_out x (m_in * s**2)`` folded block is decomposed instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import ConvLayer, Network, as_network, fold_normalization, fold_network
from .errors import ContractError, StrideError
from .spectral import Frequency, as_frequency, fourier_basis

RANK_TOL = 1e-10


def _layer_block_array(layer: ConvLayer, n: int) -> np.ndarray:
    """``(n, n, m_out, m_in)`` array of stride-1 transfer matrices."""
    layer = fold_normalization(layer)
    kh, kw = layer.kernel_shape
    if kh > n or kw > n:
        raise ContractError(f"kernel {kh}x{kw} larger than input size {n}")
    padded = np.zeros(layer.weights.shape[:2] + (n, n))
    padded[:, :, :kh, :kw] = layer.weights
    # n**2 * ifft2 evaluates sum K * exp(+2*pi*1j*(i*dy + j*dx)/n).
    g = np.fft.ifft2(padded, axes=(-2, -1)) * (n * n)
    return np.moveaxis(g, (0, 1), (2, 3))


def frequency_blocks(layer: ConvLayer, n: int) -> dict[Frequency, np.ndarray]:
    """Channel-mixing matrix of a stride-1 layer at every frequency."""
    if layer.stride != 1:
        raise StrideError("frequency_blocks needs stride 1; use svd_strided for strided layers")
    g = _layer_block_array(layer, n)
    return {Frequency(i, j, n): g[i, j] for i in range(n) for j in range(n)}


def _composed_block_array(net: Network, n: int) -> np.ndarray:
    if any(layer.stride != 1 for layer in net.layers):
        raise StrideError("composition of blocks needs stride 1 everywhere")
    net = fold_network(net)
    g = None
    for layer in net.layers:
        b = _layer_block_array(layer, n)
        g = b if g is None else b @ g
    if net.skip:
        g = g + np.eye(g.shape[-1])
    return g


def compose_blocks(net, n: int) -> dict[Frequency, np.ndarray]:
    """Per-frequency product of layer blocks in application order (+I on skip)."""
    g = _composed_block_array(as_network(net), n)
    return {Frequency(i, j, n): g[i, j] for i in range(n) for j in range(n)}


@dataclass(frozen=True)
class FoldedBlock:
    """Folded channel map for one output frequency of a strided operator.

    ``block`` has one column per ``(alias, channel)`` pair, alias-major, in the
    order of ``aliases``.
    """

    out_freq: Frequency
    aliases: tuple
    block: np.ndarray

    @property
    def rank(self) -> int:
        sv = np.linalg.svd(self.block, compute_uv=False)
        return int(np.sum(sv > RANK_TOL))


@dataclass(frozen=True)
class SpectralEntry:
    """One singular triple.

    ``right`` holds coefficients over ``(alias, input channel)`` pairs,
    alias-major; for stride-1 operators there is a single alias equal to
    ``freq``. ``left`` is the output channel vector, or ``None`` for the
    zero singular values that pad the right basis beyond the output rank.
    """

    sigma: float
    freq: Frequency
    right: np.ndarray
    left: np.ndarray | None
    aliases: tuple


@dataclass
class SpectralDecomposition:
    n_in: int
    n_out: int
    in_channels: int
    out_channels: int
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def sigmas(self) -> np.ndarray:
        """All singular values, descending."""
        return np.sort(np.array([e.sigma for e in self.entries]))[::-1]

    def sorted(self) -> list:
        order = sorted(range(len(self.entries)), key=lambda k: -self.entries[k].sigma)
        return [self.entries[k] for k in order]

    def right_vector(self, entry: SpectralEntry) -> np.ndarray:
        """Dense right singular vector in ``vec`` ordering, shape ``(m_in*N*N,)``."""
        m = self.in_channels
        out = np.zeros((m, self.n_in, self.n_in), dtype=complex)
        coeffs = np.asarray(entry.right).reshape(len(entry.aliases), m)
        for alias, p in zip(entry.aliases, coeffs):
            out += p[:, None, None] * fourier_basis(self.n_in, alias)
        return out.ravel()

    def left_vector(self, entry: SpectralEntry) -> np.ndarray | None:
        if entry.left is None:
            return None
        b = fourier_basis(self.n_out, entry.freq)
        return np.kron(entry.left, b.ravel())

    def right_matrix(self) -> np.ndarray:
        return np.stack([self.right_vector(e) for e in self.entries], axis=1)


def _svd_entries(mat: np.ndarray, freq: Frequency, aliases: tuple) -> list:
    """Full SVD of one (folded) block turned into entries.

    Produces one entry per column so the right vectors span the input space.
    """
    u, s, vh = np.linalg.svd(mat, full_matrices=True)
    ncols = mat.shape[1]
    entries = []
    for k in range(ncols):
        sigma = float(s[k]) if k < len(s) else 0.0
        left = u[:, k] if k < len(s) else None
        entries.append(SpectralEntry(sigma, freq, vh[k].conj(), left, aliases))
    return entries


def svd_stride1(net, n: int) -> SpectralDecomposition:
    """SVD of a stride-1 stack from the SVDs of its composed frequency blocks."""
    net = as_network(net)
    g = _composed_block_array(net, n)
    dec = SpectralDecomposition(n, n, net.in_channels, net.out_channels)
    for i in range(n):
        for j in range(n):
            f = Frequency(i, j, n)
            dec.entries.extend(_svd_entries(g[i, j], f, (f,)))
    return dec


def alias_set(out_freq: Frequency, n: int) -> tuple:
    """Input frequencies on the ``n`` grid that fold onto ``out_freq``."""
    n_out = out_freq.n
    if n % n_out:
        raise StrideError(f"grid {n} is not a multiple of {n_out}")
    s = n // n_out
    return tuple(
        Frequency((out_freq.i + l * n_out) % n, (out_freq.j + r * n_out) % n, n)
        for l in range(s) for r in range(s)
    )


def folded_blocks(layer: ConvLayer, n: int) -> list:
    """Folded blocks of a single strided layer, one per output frequency."""
    return _folded_blocks(layer, n)[0]


def _folded_blocks(layer: ConvLayer, n: int):
    """Folded blocks plus the right singular basis of every alias block.

    Columns are ``sigma * x / s`` for every singular triple ``(sigma, x, y)``
    of every alias block, so the coefficient vectors found by decomposing the
    folded block are expressed in the aliases' right singular bases.
    """
    n_out = layer.output_size(n)
    s = layer.stride
    g = _layer_block_array(layer, n)
    m_out, m_in = layer.out_channels, layer.in_channels
    bases = {}
    blocks = []
    for wi in range(n_out):
        for wj in range(n_out):
            w = Frequency(wi, wj, n_out)
            aliases = alias_set(w, n)
            cols = []
            for a in aliases:
                u, sv, vh = np.linalg.svd(g[a.i, a.j], full_matrices=True)
                scaled = np.zeros((m_out, m_in), dtype=complex)
                r = len(sv)
                scaled[:, :r] = u[:, :r] * sv / s
                cols.append(scaled)
                bases[a] = vh.conj().T
            blocks.append(FoldedBlock(w, aliases, np.concatenate(cols, axis=1)))
    return blocks, bases


def svd_strided(layer: ConvLayer, n: int) -> SpectralDecomposition:
    """SVD of a single strided layer by folding aliased frequencies."""
    if layer.stride < 2:
        raise StrideError("svd_strided expects stride > 1; use svd_stride1")
    if n % layer.stride:
        raise StrideError(f"input size {n} not divisible by stride {layer.stride}")
    blocks, bases = _folded_blocks(layer, n)
    m_in = layer.in_channels
    dec = SpectralDecomposition(n, n // layer.stride, m_in, layer.out_channels)
    for fb in blocks:
        for e in _svd_entries(fb.block, fb.out_freq, fb.aliases):
            # coefficients over (alias, right singular vector of that alias)
            # converted to (alias, input channel) coefficients.
            p = e.right.reshape(len(fb.aliases), m_in)
            q = np.concatenate([bases[a] @ pa for a, pa in zip(fb.aliases, p)])
            dec.entries.append(SpectralEntry(e.sigma, e.freq, q, e.left, e.aliases))
    return dec


def composite_folded_blocks(net, n: int) -> list:
    """Folded blocks for an arbitrary stack of (possibly strided) layers.

    Each input frequency is pushed through the layers, being reduced modulo
    the current grid after every subsampling; columns are channel-basis.
    """
    net = fold_network(as_network(net))
    n_out = net.output_size(n)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    comp = None
    size = n
    for layer in net.layers:
        b = _layer_block_array(layer, size)[ii % size, jj % size] / layer.stride
        comp = b if comp is None else b @ comp
        size //= layer.stride
    if net.skip:
        comp = comp + np.eye(comp.shape[-1])
    blocks = []
    for wi in range(n_out):
        for wj in range(n_out):
            w = Frequency(wi, wj, n_out)
            aliases = alias_set(w, n)
            mat = np.concatenate([comp[a.i, a.j] for a in aliases], axis=1)
            blocks.append(FoldedBlock(w, aliases, mat))
    return blocks


def decompose(obj, n: int) -> SpectralDecomposition:
    """SVD of a layer or network, choosing the stride-1 or folded route."""
    net = as_network(obj)
    if all(layer.stride == 1 for layer in net.layers):
        return svd_stride1(net, n)
    if len(net.layers) == 1:
        return svd_strided(net.layers[0], n)
    dec = SpectralDecomposition(n, net.output_size(n), net.in_channels, net.out_channels)
    for fb in composite_folded_blocks(net, n):
        dec.entries.extend(_svd_entries(fb.block, fb.out_freq, fb.aliases))
    return dec


def full_spectrum(obj, n: int) -> list:
    """``(sigma, frequency)`` pairs sorted by descending sigma."""
    return [(e.sigma, e.freq) for e in decompose(obj, n).sorted()]


def disturbance_map(net, n: int) -> np.ndarray:
    """Top singular value of the composed block at every frequency."""
    g = _composed_block_array(as_network(net), n)
    return np.linalg.svd(g, compute_uv=False)[..., 0]


def predicted_disturbance(net, n: int, freq) -> float:
    """Largest gain ``max_{|a|=1} |G(freq) a|`` of a stride-1 stack."""
    f = as_frequency(freq, n)
    g = _composed_block_array(as_network(net), n)[f.i, f.j]
    return float(np.linalg.svd(g, compute_uv=False)[0])


def top_direction(net, n: int, freq) -> np.ndarray:
    """Unit input channel vector attaining :func:`predicted_disturbance`."""
    f = as_frequency(freq, n)
    g = _composed_block_array(as_network(net), n)[f.i, f.j]
    return np.linalg.svd(g)[2][0].conj()
