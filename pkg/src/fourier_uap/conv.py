"""Multi-channel circular convolution layers and their dense matrices.

Conventions used everywhere in the package:

* Kernel anchoring: ``out[o, y, x] = sum_{c,dy,dx} w[o, c, dy, dx] *
  in[c, (y + dy) % N, (x + dx) % N]``. Weight ``(o, c, 0, 0)`` sees the pixel
  at the output's own coordinate.
* Stride ``s`` means stride-1 convolution followed by keeping coordinates that
  are ``0 mod s``.
* An optional per-output-channel ``scale`` models a test-time normalization
  layer after the convolution (additive shifts are not modeled).
* ``vec`` ordering is channel-major, then row-major inside a channel, i.e.
  plain ``ndarray.ravel()`` of a ``(C, N, N)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DegenerateNormalizationError,
    ShapeError,
    StrideError,
)


@dataclass(frozen=True)
class ConvLayer:
    """Kernel of shape ``(out_channels, in_channels, k_h, k_w)`` plus stride."""

    weights: np.ndarray
    stride: int = 1
    scale: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 4:
            raise ShapeError(f"kernel must be 4-D (o, c, kh, kw), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        if int(self.stride) != self.stride or self.stride < 1:
            raise StrideError(f"stride must be a positive integer, got {self.stride}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stride", int(self.stride))
        if self.scale is not None:
            g = np.asarray(self.scale, dtype=float).reshape(-1)
            if g.shape != (w.shape[0],):
                raise ShapeError(
                    f"normalization needs {w.shape[0]} scales, got {g.size}"
                )
            object.__setattr__(self, "scale", g)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_shape(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    def output_size(self, n: int) -> int:
        kh, kw = self.kernel_shape
        if kh > n or kw > n:
            raise ContractError(f"kernel {kh}x{kw} larger than input size {n}")
        if n % self.stride:
            raise StrideError(f"input size {n} not divisible by stride {self.stride}")
        return n // self.stride


@dataclass(frozen=True)
class Network:
    """Layers applied in list order, with an optional identity skip around them."""

    layers: tuple = field(default_factory=tuple)
    skip: bool = False

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ContractError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ContractError(
                    f"channel chain broken: {a.out_channels} outputs feed "
                    f"{b.in_channels} inputs"
                )
        if self.skip:
            if layers[0].in_channels != layers[-1].out_channels:
                raise ContractError("skip connection needs matching in/out channels")
            if any(layer.stride != 1 for layer in layers):
                raise ContractError("skip connection requires stride 1 everywhere")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def total_stride(self) -> int:
        return int(np.prod([layer.stride for layer in self.layers]))

    def output_size(self, n: int) -> int:
        for layer in self.layers:
            n = layer.output_size(n)
        return n


def as_network(obj) -> Network:
    return obj if isinstance(obj, Network) else Network((obj,))


def _check_input(layer: ConvLayer, x: np.ndarray) -> int:
    if x.ndim < 3 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"expected (..., C, N, N) input, got shape {x.shape}")
    if x.shape[-3] != layer.in_channels:
        raise ContractError(
            f"layer expects {layer.in_channels} channels, input has {x.shape[-3]}"
        )
    return layer.output_size(x.shape[-1])


def apply_conv(layer: ConvLayer, x) -> np.ndarray:
    """Apply one layer to ``(C, N, N)`` or batched ``(B, C, N, N)`` input.

    Complex inputs are allowed; the operator is linear.
    """
    x = np.asarray(x)
    _check_input(layer, x)
    kh, kw = layer.kernel_shape
    dtype = np.result_type(x.dtype, np.float64)
    out = np.zeros(x.shape[:-3] + (layer.out_channels,) + x.shape[-2:], dtype=dtype)
    for dy in range(kh):
        for dx in range(kw):
            shifted = np.roll(x, shift=(-dy, -dx), axis=(-2, -1))
            out += np.einsum("oc,...cyx->...oyx", layer.weights[:, :, dy, dx], shifted)
    s = layer.stride
    if s > 1:
        out = out[..., ::s, ::s]
    if layer.scale is not None:
        out = out * layer.scale[:, None, None]
    return out


def apply_network(net, x) -> np.ndarray:
    net = as_network(net)
    x = np.asarray(x)
    out = x
    for layer in net.layers:
        out = apply_conv(layer, out)
    if net.skip:
        out = out + x
    return out


def materialize_dense(layer: ConvLayer, n: int) -> np.ndarray:
    """Dense matrix of shape ``(m_out*(n/s)**2, m_in*n**2)`` for the layer.

    Built by direct index arithmetic on the circulant structure, independent of
    :func:`apply_conv`.
    """
    n_out = layer.output_size(n)
    m_out, m_in = layer.out_channels, layer.in_channels
    kh, kw = layer.kernel_shape
    s = layer.stride
    mat = np.zeros((m_out * n_out * n_out, m_in * n * n))

    o, c, dy, dx, yy, xx = np.meshgrid(
        np.arange(m_out), np.arange(m_in), np.arange(kh), np.arange(kw),
        np.arange(n_out), np.arange(n_out), indexing="ij",
    )
    rows = (o * n_out + yy) * n_out + xx
    cols = (c * n + (s * yy + dy) % n) * n + (s * xx + dx) % n
    vals = layer.weights[o, c, dy, dx]
    np.add.at(mat, (rows.ravel(), cols.ravel()), vals.ravel())
    if layer.scale is not None:
        mat *= np.repeat(layer.scale, n_out * n_out)[:, None]
    return mat


def materialize_network(net, n: int) -> np.ndarray:
    """Product of the layers' dense matrices, plus identity if skipped."""
    net = as_network(net)
    mat = None
    size = n
    for layer in net.layers:
        dense = materialize_dense(layer, size)
        mat = dense if mat is None else dense @ mat
        size = layer.output_size(size)
    if net.skip:
        mat = mat + np.eye(mat.shape[0])
    return mat


def fold_normalization(layer: ConvLayer) -> ConvLayer:
    """Absorb the per-channel normalization scale into the kernel."""
    if layer.scale is None:
        return layer
    g = layer.scale
    if not np.all(np.isfinite(g)) or np.any(g == 0):
        raise DegenerateNormalizationError(f"normalization scales must be finite and nonzero: {g}")
    return ConvLayer(layer.weights * g[:, None, None, None], stride=layer.stride)


def fold_network(net) -> Network:
    net = as_network(net)
    return Network(tuple(fold_normalization(l) for l in net.layers), skip=net.skip)
