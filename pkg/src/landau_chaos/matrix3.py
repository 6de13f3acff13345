"""Fixed-size 3x3 symmetric linear algebra.

Everything here works on plain ``(3, 3)`` numpy arrays. The eigensolver is a
cyclic Jacobi iteration compiled with numba; the same routines are reused by
the particle steppers, so the python-level functions and the in-loop versions
agree bitwise.
"""

import numpy as np
from numba import njit

from .errors import NotPSDError

PSD_TOL = 1e-10
REG_THRESHOLD = 1e-8
# eigenvalues below this fraction of the spectral radius are rounding noise
ROUND_FLOOR = 32.0 * np.finfo(float).eps


@njit(cache=True)
def _eigh3(A, w, Q):
    """Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.

    Writes eigenvalues to ``w`` and eigenvectors (columns) to ``Q``.
    """
    a = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            a[i, j] = 0.5 * (A[i, j] + A[j, i])
            Q[i, j] = 1.0 if i == j else 0.0
    scale = 0.0
    for i in range(3):
        for j in range(3):
            scale += a[i, j] * a[i, j]
    if scale == 0.0:
        for i in range(3):
            w[i] = 0.0
        return
    for sweep in range(60):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        if off <= 1e-34 * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(3):
                    qkp = Q[k, p]
                    qkq = Q[k, q]
                    Q[k, p] = c * qkp - s * qkq
                    Q[k, q] = s * qkp + c * qkq
    for i in range(3):
        w[i] = a[i, i]


@njit(cache=True)
def _spectral(Q, f, out):
    # out = Q diag(f) Q^T, mirrored so the result is exactly symmetric
    for i in range(3):
        for j in range(i, 3):
            acc = 0.0
            for k in range(3):
                acc += Q[i, k] * f[k] * Q[j, k]
            out[i, j] = acc
            out[j, i] = acc


@njit(cache=True)
def _sqrt3(A, out):
    """Clamped PSD square root; returns the smallest raw eigenvalue.

    Eigenvalues below ``ROUND_FLOOR`` times the spectral radius are treated
    as zero, which keeps the root of a singular matrix accurate to rounding.
    """
    w = np.empty(3)
    Q = np.empty((3, 3))
    _eigh3(A, w, Q)
    f = np.empty(3)
    lo = w[0]
    top = 0.0
    for k in range(3):
        top = max(top, abs(w[k]))
    cut = ROUND_FLOOR * top
    for k in range(3):
        lo = min(lo, w[k])
        f[k] = np.sqrt(w[k]) if w[k] > cut else 0.0
    _spectral(Q, f, out)
    return lo


@njit(cache=True)
def _matmul3(A, B, out):
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


@njit(cache=True)
def _rotation3(S1, S2, reg, threshold, U):
    """Optimal Gaussian coupling rotation; returns False when the identity fallback fired."""
    same = True
    for i in range(3):
        for j in range(3):
            if S1[i, j] != S2[i, j]:
                same = False
    if same:
        for i in range(3):
            for j in range(3):
                U[i, j] = 1.0 if i == j else 0.0
        return True
    w1 = np.empty(3)
    Q1 = np.empty((3, 3))
    w2 = np.empty(3)
    Q2 = np.empty((3, 3))
    _eigh3(S1, w1, Q1)
    _eigh3(S2, w2, Q2)
    if min(w1[0], min(w1[1], w1[2])) < threshold or min(w2[0], min(w2[1], w2[2])) < threshold:
        for i in range(3):
            for j in range(3):
                U[i, j] = 1.0 if i == j else 0.0
        return False
    f = np.empty(3)
    S1h = np.empty((3, 3))
    S1ih = np.empty((3, 3))
    S2ih = np.empty((3, 3))
    for k in range(3):
        f[k] = np.sqrt(w1[k])
    _spectral(Q1, f, S1h)
    for k in range(3):
        f[k] = 1.0 / np.sqrt(w1[k] + reg)
    _spectral(Q1, f, S1ih)
    for k in range(3):
        f[k] = 1.0 / np.sqrt(w2[k] + reg)
    _spectral(Q2, f, S2ih)
    T = np.empty((3, 3))
    Mid = np.empty((3, 3))
    _matmul3(S1h, S2, T)
    _matmul3(T, S1h, Mid)
    Mh = np.empty((3, 3))
    _sqrt3(Mid, Mh)
    _matmul3(S2ih, S1ih, T)
    _matmul3(T, Mh, U)
    return True


def _as_sym(M):
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (M + M.T)


def eigh(M):
    """Eigenvalues (unsorted) and eigenvector columns of a symmetric 3x3 matrix."""
    A = _as_sym(M)
    w = np.empty(3)
    Q = np.empty((3, 3))
    _eigh3(A, w, Q)
    return w, Q


def is_psd(M, tol=PSD_TOL):
    w, _ = eigh(M)
    return bool(w.min() >= -tol * max(1.0, np.abs(w).max()))


def sqrt_psd(M):
    """Unique symmetric PSD square root.

    Eigenvalues down to ``-1e-10`` (relative to the spectral scale when that
    exceeds one) are treated as rounding and clamped to zero; anything more
    negative raises :class:`NotPSDError`.
    """
    A = _as_sym(M)
    out = np.empty((3, 3))
    lo = _sqrt3(A, out)
    if lo < -PSD_TOL * max(1.0, float(np.abs(A).max())):
        raise NotPSDError(f"smallest eigenvalue {lo:.3e} is negative")
    return out


def inv_sqrt_psd(M, reg=0.0):
    """``(M + reg I)^{-1/2}`` through the eigendecomposition of ``M``."""
    w, Q = eigh(M)
    return (Q / np.sqrt(np.clip(w, 0.0, None) + reg)) @ Q.T


def procrustes_rotation(S1, S2):
    """Orthogonal ``U`` minimising ``|S1^{1/2} - S2^{1/2} U|_F``, defined for singular inputs too.

    ``U`` is the polar factor of ``S2^{1/2} S1^{1/2}``; when both matrices
    are nonsingular it coincides with :func:`coupling_rotation`.
    """
    X, _, Yt = np.linalg.svd(sqrt_psd(S2) @ sqrt_psd(S1))
    return X @ Yt


def coupling_rotation(S1, S2, reg=0.0, threshold=REG_THRESHOLD, return_status=False, fallback="identity"):
    r"""Orthogonal matrix ``U`` making ``(S1^{1/2} Y, S2^{1/2} U Y)`` an optimal coupling.

    Computes ``S2^{-1/2} S1^{-1/2} (S1^{1/2} S2 S1^{1/2})^{1/2}``. If either
    matrix has an eigenvalue below ``threshold`` the formula is undefined and
    ``fallback`` decides the result: ``"identity"`` returns ``I`` and
    ``"procrustes"`` returns the optimal rotation from
    :func:`procrustes_rotation`. Pass ``return_status=True`` to learn whether
    the formula was used.
    """
    if fallback not in ("identity", "procrustes"):
        raise ValueError(f"unknown fallback {fallback!r}")
    A = _as_sym(S1)
    B = _as_sym(S2)
    U = np.empty((3, 3))
    ok = _rotation3(A, B, float(reg), float(threshold), U)
    if not ok and fallback == "procrustes":
        U = procrustes_rotation(A, B)
    return (U, bool(ok)) if return_status else U


def gaussian_w2sq(S1, S2):
    """Squared W2 distance between centred Gaussians with covariances S1, S2.

    ``Tr((S1^{1/2} S2 S1^{1/2})^{1/2})`` is evaluated as the sum of singular
    values of ``S2^{1/2} S1^{1/2}``, which keeps full absolute accuracy when
    the inner product matrix is nearly singular.
    """
    A = _as_sym(S1)
    B = _as_sym(S2)
    nuc = float(np.sum(np.linalg.svd(sqrt_psd(B) @ sqrt_psd(A), compute_uv=False)))
    return float(np.trace(A) + np.trace(B) - 2.0 * nuc)


@njit(cache=True)
def _sqrt_packed_batch(A, S):
    """Square roots of packed ``(n, 6)`` symmetric matrices into ``(n, 3, 3)``."""
    M = np.empty((3, 3))
    out = np.empty((3, 3))
    for i in range(A.shape[0]):
        M[0, 0] = A[i, 0]
        M[0, 1] = A[i, 1]
        M[1, 0] = A[i, 1]
        M[0, 2] = A[i, 2]
        M[2, 0] = A[i, 2]
        M[1, 1] = A[i, 3]
        M[1, 2] = A[i, 4]
        M[2, 1] = A[i, 4]
        M[2, 2] = A[i, 5]
        _sqrt3(M, out)
        for r in range(3):
            for c in range(3):
                S[i, r, c] = out[r, c]


def sqrt_psd_packed(A):
    """Batched clamped square roots of packed symmetric matrices."""
    A = np.ascontiguousarray(A, dtype=float)
    S = np.empty((A.shape[0], 3, 3))
    _sqrt_packed_batch(A, S)
    return S
