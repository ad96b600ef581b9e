"""Single Fourier attack patterns, their application, and spectrum analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrequencyError, ShapeError
from .spectral import Frequency, as_frequency, dft2, fourier_basis

# |raw| below this fraction of max|raw| counts as an exact zero for sign().
_SIGN_ZERO = 1e-12


@dataclass(frozen=True)
class Perturbation:
    """Real ``n x n`` pattern added identically to every image channel."""

    pattern: np.ndarray
    freq: Frequency
    epsilon: float
    signed: bool = False

    @property
    def n(self) -> int:
        return self.pattern.shape[-1]


def sfa_raw(n: int, freq) -> np.ndarray:
    """``(1+1j) * basis(w) + (1-1j) * basis(-w)`` as a real grid.

    The pattern is built from the canonical member of the conjugate pair, so
    ``w`` and its conjugate produce bit-identical grids.
    """
    f = as_frequency(freq, n).canonical()
    raw = (1 + 1j) * fourier_basis(n, f) + (1 - 1j) * fourier_basis(n, f.conjugate())
    return raw


def _normalized(n, freq, epsilon):
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    f = as_frequency(freq, n)
    raw = sfa_raw(n, f).real
    peak = np.max(np.abs(raw))
    if not peak > 0:
        raise DegenerateFrequencyError(f"pattern for {f.as_tuple()} vanishes identically")
    return f, raw, peak


def sfa_pattern(n: int, freq, epsilon: float) -> Perturbation:
    """Single Fourier attack pattern scaled so that ``max|pattern| == epsilon``."""
    f, raw, peak = _normalized(n, freq, epsilon)
    return Perturbation(epsilon * (raw / peak), f, float(epsilon), signed=False)


def ssfa_pattern(n: int, freq, epsilon: float) -> Perturbation:
    """Signed variant: ``epsilon * sign(raw)`` with ``sign(0) = 0``."""
    f, raw, peak = _normalized(n, freq, epsilon)
    sign = np.sign(raw)
    sign[np.abs(raw) <= _SIGN_ZERO * peak] = 0.0
    return Perturbation(epsilon * sign, f, float(epsilon), signed=True)


def make_pattern(n: int, freq, epsilon: float, signed: bool = False) -> Perturbation:
    return (ssfa_pattern if signed else sfa_pattern)(n, freq, epsilon)


def apply_perturbation(x, p) -> np.ndarray:
    """Add the pattern to every channel and clip to ``[0, 1]``.

    ``x`` may be one ``(C, N, N)`` image or a batch ``(B, C, N, N)``; ``p`` may
    be a :class:`Perturbation` or a raw ``(N, N)`` / ``(C, N, N)`` array.
    """
    x = np.asarray(x, dtype=float)
    pattern = p.pattern if isinstance(p, Perturbation) else np.asarray(p, dtype=float)
    if x.ndim < 3 or pattern.shape[-2:] != x.shape[-2:]:
        raise ShapeError(f"pattern {pattern.shape} does not fit image {x.shape}")
    return np.clip(x + pattern, 0.0, 1.0)


def perturbation_spectrum(x, centered: bool = False) -> np.ndarray:
    """Per-channel ``log(1 + |dft2(channel)|)``.

    With the default corner layout DC sits at ``[0, 0]`` and the highest
    frequency ``(N/2, N/2)`` lands in the middle of the grid. ``centered=True``
    applies an fftshift so DC moves to the middle instead.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    mag = np.log1p(np.abs(dft2(x)))
    if centered:
        mag = np.fft.fftshift(mag, axes=(-2, -1))
    return mag


def quantize_pattern(p: Perturbation) -> np.ndarray:
    """8-bit rendering ``round(255 * (0.5 + pattern / (2*eps)))``."""
    if p.epsilon == 0:
        return np.full(p.pattern.shape, 128, dtype=np.uint8)
    q = np.round(255 * (0.5 + p.pattern / (2 * p.epsilon)))
    return np.clip(q, 0, 255).astype(np.uint8)
