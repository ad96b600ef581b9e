"""Discrete Fourier machinery on square grids.

Two normalizations live side by side here:

* ``dft2`` / ``idft2`` use the unnormalized forward sum
  ``S(x)[u, v] = sum_{m,n} x[m, n] exp(-2*pi*1j*(u*m + v*n)/N)`` and its exact
  inverse (scaled by ``1/N**2``).
* ``dft_matrix`` and ``fourier_basis`` are unitary: every entry carries
  ``1/sqrt(N)`` per axis, so basis elements have unit Frobenius norm.

Basis elements use the positive exponent, ``basis(i, j)[u, v] =
exp(2*pi*1j*(i*u + j*v)/N) / N``, which makes ``dft2(basis(i, j))`` a single
spike of height ``N`` at ``(i, j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidFrequencyError, InvalidSizeError, ShapeError


@dataclass(frozen=True, order=True)
class Frequency:
    """A 2-D frequency index ``(i, j)`` on an ``n x n`` grid."""

    i: int
    j: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSizeError(f"grid size must be positive, got {self.n}")
        if not (0 <= self.i < self.n and 0 <= self.j < self.n):
            raise InvalidFrequencyError(
                f"frequency ({self.i}, {self.j}) outside [0, {self.n})^2"
            )

    def conjugate(self) -> Frequency:
        return Frequency((-self.i) % self.n, (-self.j) % self.n, self.n)

    def canonical(self) -> Frequency:
        """Lexicographically smaller member of the conjugate pair."""
        return min(self, self.conjugate())

    @property
    def is_self_conjugate(self) -> bool:
        return self == self.conjugate()

    def as_tuple(self) -> tuple[int, int]:
        return (self.i, self.j)


def as_frequency(freq, n: int) -> Frequency:
    """Accept a ``Frequency`` or an ``(i, j)`` pair; validate against ``n``."""
    if isinstance(freq, Frequency):
        if freq.n != n:
            raise InvalidFrequencyError(f"frequency is for n={freq.n}, expected n={n}")
        return freq
    i, j = freq
    return Frequency(int(i), int(j), n)


def all_frequencies(n: int):
    return [Frequency(i, j, n) for i in range(n) for j in range(n)]


def _check_size(n):
    if int(n) != n or n < 1:
        raise InvalidSizeError(f"size must be a positive integer, got {n!r}")
    return int(n)


def _roots(n: int, k) -> np.ndarray:
    """``exp(2*pi*1j*k/n)`` with the exponent reduced mod ``n`` first."""
    k = np.mod(k, n)
    return np.exp(2j * np.pi * k / n)


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(2*pi*1j*u*v/n) / sqrt(n)``."""
    n = _check_size(n)
    u = np.arange(n)
    return _roots(n, np.outer(u, u)) / np.sqrt(n)


def _square(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"expected square grid(s), got shape {x.shape}")
    return x


def dft2(x) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the last two axes.

    Leading axes are treated as a batch (e.g. channels).
    """
    x = _square(x)
    return np.fft.fft2(x, axes=(-2, -1))


def idft2(y) -> np.ndarray:
    """Exact inverse of :func:`dft2` (scaled by ``1/N**2``)."""
    y = _square(y)
    return np.fft.ifft2(y, axes=(-2, -1))


def fourier_basis(n: int, freq) -> np.ndarray:
    """Unit-norm basis element ``(F_n)_i (x) (F_n)_j`` as an ``n x n`` grid."""
    n = _check_size(n)
    f = as_frequency(freq, n)
    u = np.arange(n)
    return _roots(n, f.i * u[:, None] + f.j * u[None, :]) / n


def conjugate_mirror(y) -> np.ndarray:
    """``conj(y[(N-u) % N, (N-v) % N])`` over the last two axes."""
    y = _square(y)
    n = y.shape[-1]
    idx = (-np.arange(n)) % n
    return np.conj(y[..., idx[:, None], idx[None, :]])


def check_conjugate_symmetry(y, tol: float = 1e-10) -> bool:
    """True iff ``max |y[u,v] - conj(y[N-u, N-v])| <= tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    y = _square(y)
    if y.size == 0:
        return True
    return bool(np.max(np.abs(y - conjugate_mirror(y))) <= tol)
