"""Independent reference implementations used as test oracles.

Nothing here calls into the package: transforms are explicit double sums and
convolution matrices are filled entry by entry from the anchoring rule.
"""

import cmath

import numpy as np


def direct_dft2(x):
    """``S[u, v] = sum_{a,b} x[a, b] exp(-2 pi i (u a + v b) / N)`` by loops."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    out = np.zeros((n, n), dtype=complex)
    for u in range(n):
        for v in range(n):
            acc = 0j
            for a in range(n):
                for b in range(n):
                    acc += x[a, b] * cmath.exp(-2j * cmath.pi * (u * a + v * b) / n)
            out[u, v] = acc
    return out


def dense_layer(weights, n, stride=1, scale=None):
    """Matrix of one circular conv layer, built entry by entry."""
    w = np.asarray(weights, dtype=float)
    mo, mi, kh, kw = w.shape
    no = n // stride
    mat = np.zeros((mo * no * no, mi * n * n))
    for o in range(mo):
        g = 1.0 if scale is None else scale[o]
        for yo in range(no):
            for xo in range(no):
                row = o * no * no + yo * no + xo
                y, x = yo * stride, xo * stride
                for c in range(mi):
                    for dy in range(kh):
                        for dx in range(kw):
                            col = c * n * n + ((y + dy) % n) * n + (x + dx) % n
                            mat[row, col] += g * w[o, c, dy, dx]
    return mat


def dense_stack(specs, n, skip=False):
    """``specs`` is a list of ``(weights, stride, scale)`` in application order."""
    mat = None
    size = n
    for w, s, g in specs:
        m = dense_layer(w, size, s, g)
        mat = m if mat is None else m @ mat
        size //= s
    if skip:
        mat = mat + np.eye(mat.shape[0])
    return mat


def padded_sigmas(mat):
    """Dense singular values padded with zeros to the column count, descending."""
    s = np.linalg.svd(mat, compute_uv=False)
    return np.sort(np.concatenate([s, np.zeros(mat.shape[1] - len(s))]))[::-1]


def sigmas_close(a, b, rel=1e-8, abs_small=1e-10, small=1e-6):
    a = np.sort(np.asarray(a))[::-1]
    b = np.sort(np.asarray(b))[::-1]
    if a.shape != b.shape:
        return False
    big = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b)
    ok = np.where(big < small, err <= abs_small, err <= rel * big)
    return bool(np.all(ok))
