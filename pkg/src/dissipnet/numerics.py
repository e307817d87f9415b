"""Numerical kernels: radix-2 FFT, Cholesky factorization, power-iteration PCA."""

from functools import lru_cache

import numpy as np


class NotPositiveDefiniteError(ValueError):
    pass


def is_power_of_two(n):
    return n >= 2 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx = idx >> 1
    return rev


@lru_cache(maxsize=64)
def _twiddles(m):
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def _fft(x):
    """Iterative decimation-in-time FFT along the last axis."""
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two >= 2, got {n}")
    lead = x.shape[:-1]
    y = np.asarray(x, dtype=np.complex128)[..., _bit_reversal(n)]
    m = 2
    while m <= n:
        half = m // 2
        y = y.reshape(lead + (n // m, m))
        even = y[..., :half]
        odd = y[..., half:] * _twiddles(m)
        y = np.concatenate((even + odd, even - odd), axis=-1)
        m *= 2
    return y.reshape(lead + (n,))


def fft_forward(signal):
    """Unnormalized DFT of ``signal`` along its last axis (complex128 result)."""
    return _fft(np.asarray(signal))


def fft_inverse(spectrum, real=True, n=None):
    """Inverse DFT with 1/N normalization.

    With ``real=True`` the imaginary residue is dropped, which is what callers
    holding the spectrum of a real signal want.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if n is not None and spectrum.shape[-1] != n:
        raise ValueError(f"spectrum length {spectrum.shape[-1]} does not match expected {n}")
    size = spectrum.shape[-1]
    out = np.conj(_fft(np.conj(spectrum))) / size
    return out.real if real else out


def cholesky(Q):
    """Lower-triangular L with L @ L.T == Q (row-oriented Cholesky-Banachiewicz)."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=0.0):
        raise ValueError("matrix is not symmetric")
    n = Q.shape[0]
    L = np.zeros_like(Q)
    for i in range(n):
        for j in range(i + 1):
            s = Q[i, j] - L[i, :j] @ L[j, :j]
            if i == j:
                if not s > 0.0:
                    raise NotPositiveDefiniteError(
                        f"matrix is not positive definite (pivot {i} = {s!r})"
                    )
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L


def solve_lower(L, B):
    """Forward substitution for L X = B; B may be a vector or have columns."""
    B = np.asarray(B, dtype=float)
    X = np.array(B, dtype=float, copy=True)
    n = L.shape[0]
    for i in range(n):
        X[i] = (B[i] - L[i, :i] @ X[:i]) / L[i, i]
    return X


def solve_upper(U, B):
    """Back substitution for U X = B."""
    B = np.asarray(B, dtype=float)
    X = np.array(B, dtype=float, copy=True)
    n = U.shape[0]
    for i in range(n - 1, -1, -1):
        X[i] = (B[i] - U[i, i + 1:] @ X[i + 1:]) / U[i, i]
    return X


def _fix_sign(v):
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _angle(a, b):
    # a, b unit vectors; sign-insensitive
    return np.arccos(min(1.0, abs(float(a @ b))))


def top_principal_components(data, count=2, tol=1e-10, max_iter=10_000, seed=0):
    """Leading eigenvectors of the sample covariance by power iteration + deflation.

    Returns ``(components, projected, eigenvalues)``: ``components`` is
    ``count x n`` with rows ordered by decreasing eigenvalue, ``projected`` is
    the mean-centered data times ``components.T``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a T x n matrix")
    T, n = X.shape
    if T < 2:
        raise ValueError("need at least two samples")
    if count < 1 or count > min(T, n):
        raise ValueError(f"count must be in [1, {min(T, n)}], got {count}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (T - 1)
    total = np.trace(cov)
    if not total > 0.0:
        raise ValueError("data has zero variance; principal components undefined")

    rng = np.random.default_rng(seed)
    components = np.zeros((count, n))
    eigenvalues = np.zeros(count)
    A = cov.copy()
    for i in range(count):
        prev = components[:i]
        v = rng.standard_normal(n)
        v -= prev.T @ (prev @ v)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = A @ v
            # re-orthogonalize so round-off cannot pull v back onto earlier components
            w -= prev.T @ (prev @ w)
            norm = np.linalg.norm(w)
            if norm <= 1e-13 * total:
                # remaining spectrum is numerically zero; keep the orthogonal start vector
                break
            w /= norm
            done = _angle(v, w) < tol
            v = w
            if done:
                break
        v = _fix_sign(v)
        lam = float(v @ cov @ v)
        components[i] = v
        eigenvalues[i] = lam
        A = A - lam * np.outer(v, v)
    projected = centered @ components.T
    return components, projected, eigenvalues
