"""Landau interaction kernels, their ball mollifications, and empirical fields.

For ``gamma`` in ``(-2, 0)`` the kernels are

* ``a(v) = |v|^gamma (|v|^2 I - v v^T)``
* ``b(v) = div a(v) = -2 |v|^gamma v``
* ``sigma(v) = a(v)^{1/2} = |v|^{gamma/2 - 1} (|v|^2 I - v v^T)``

with ``a(0) = b(0) = sigma(0) = 0``.

Mollified kernels average over the uniform ball of radius ``eta``. The ball
integral is replaced by a fixed node set that is closed under ``u -> -u``;
nodes are stored as antithetic pairs and every pair is summed before it is
accumulated, so ``b_eta(0) = 0`` and ``b_eta(-x) = -b_eta(x)`` hold bitwise.

Far from the origin (``|x| > far_cutoff * eta``) the node average can be
replaced by its second-order moment expansion
``f(x) + eta^2/2 * M : D^2 f(x)`` with ``M`` the node second-moment matrix.
Odd orders vanish for a symmetric node set, so the truncation error is
``O((eta/|x|)^4)`` relative. The default cutoff is ``inf`` (plain quadrature).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, prange
from scipy.stats import qmc

from .errors import InvalidArgument

DEFAULT_QUAD_NODES = 64


@dataclass(frozen=True)
class KernelParams:
    """Kernel exponent and mollification settings.

    Parameters
    ----------
    gamma : float
        Exponent in ``(-2, 0)``.
    eta : float
        Mollification radius. ``0`` means the raw kernel.
    quad_nodes : int
        Even number of ball quadrature nodes.
    far_cutoff : float
        Pairs with ``|x| > far_cutoff * eta`` use the moment expansion.
    """

    gamma: float
    eta: float = 0.0
    quad_nodes: int = DEFAULT_QUAD_NODES
    far_cutoff: float = math.inf

    def __post_init__(self):
        validate_gamma(self.gamma)
        if not (math.isfinite(self.eta) and 0.0 <= self.eta < 1.0):
            raise InvalidArgument(f"eta must lie in [0, 1), got {self.eta}")
        if int(self.quad_nodes) != self.quad_nodes or self.quad_nodes < 2 or self.quad_nodes % 2:
            raise InvalidArgument(f"quad_nodes must be a positive even integer, got {self.quad_nodes}")
        if not self.far_cutoff > 1.0:
            raise InvalidArgument(f"far_cutoff must exceed 1, got {self.far_cutoff}")

    def nodes(self):
        return ball_nodes(int(self.quad_nodes))

    def node_moment(self):
        return node_second_moment(int(self.quad_nodes))


@dataclass(frozen=True)
class ExponentReport:
    """Exponents attached to the convergence rate for a moment order ``q``."""

    q_gamma: float
    p1: float
    p2: float
    alpha: float
    p2_defined: bool


def validate_gamma(gamma):
    if not (isinstance(gamma, (int, float, np.floating)) and -2.0 < float(gamma) < 0.0):
        raise InvalidArgument(f"gamma must lie in (-2, 0), got {gamma!r}")


def theoretical_exponents(gamma, q):
    """``q(gamma)``, ``p1``, ``p2`` and the rate exponent ``alpha``.

    ``p2`` is only meaningful for ``q > q(gamma)``; otherwise it is reported
    as ``nan`` and ``p2_defined`` is ``False``.
    """
    validate_gamma(gamma)
    if not q > 0:
        raise InvalidArgument(f"q must be positive, got {q}")
    g = float(gamma)
    q_gamma = g * g / (2.0 + g)
    p1 = 3.0 / (3.0 + g)
    defined = q > q_gamma
    p2 = (3.0 * q - 3.0 * g) / (q - 3.0 * g) if defined else math.nan
    alpha = (1.0 - 6.0 / q) * (2.0 + 2.0 * g) / 3.0
    return ExponentReport(q_gamma=q_gamma, p1=p1, p2=p2, alpha=alpha, p2_defined=defined)


# ---------------------------------------------------------------------------
# node set

@lru_cache(maxsize=None)
def ball_nodes(k=DEFAULT_QUAD_NODES):
    """Deterministic ``(k, 3)`` node set in the unit ball, rows ``[u1, -u1, u2, -u2, ...]``.

    Base points come from an unscrambled Sobol sequence with a half-cell
    Cranley-Patterson shift, mapped to the ball by ``r = s1^{1/3}``,
    ``cos(theta) = 2 s2 - 1``, ``phi = 2 pi s3``. The returned array is
    read-only and shared.
    """
    if k < 2 or k % 2:
        raise InvalidArgument("node count must be a positive even integer")
    half = k // 2
    m = max(1, math.ceil(math.log2(half)))
    s = qmc.Sobol(d=3, scramble=False).random_base2(m)[:half]
    s = np.mod(s + 0.5 / half, 1.0)
    r = np.cbrt(s[:, 0])
    z = 2.0 * s[:, 1] - 1.0
    phi = 2.0 * np.pi * s[:, 2]
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    base = np.column_stack([r * rho * np.cos(phi), r * rho * np.sin(phi), r * z])
    out = np.empty((k, 3))
    out[0::2] = base
    out[1::2] = -base
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def node_second_moment(k=DEFAULT_QUAD_NODES):
    """Mean of ``u u^T`` over the node set, packed as ``(xx, xy, xz, yy, yz, zz)``."""
    u = ball_nodes(k)
    M = u.T @ u / k
    out = np.array([M[0, 0], M[0, 1], M[0, 2], M[1, 1], M[1, 2], M[2, 2]])
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# compiled pair kernels; symmetric matrices packed as (xx, xy, xz, yy, yz, zz)

@njit(cache=True, inline="always")
def _raw(g, y0, y1, y2):
    r2 = y0 * y0 + y1 * y1 + y2 * y2
    if r2 == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    p = r2 ** (0.5 * g)
    c = -2.0 * p
    return (c * y0, c * y1, c * y2,
            p * (r2 - y0 * y0), -p * y0 * y1, -p * y0 * y2,
            p * (r2 - y1 * y1), -p * y1 * y2, p * (r2 - y2 * y2))


@njit(cache=True, inline="always")
def _far(g, eta, M, x0, x1, x2):
    r2 = x0 * x0 + x1 * x1 + x2 * x2
    p = r2 ** (0.5 * g)
    t = M[0] + M[3] + M[5]
    w0 = M[0] * x0 + M[1] * x1 + M[2] * x2
    w1 = M[1] * x0 + M[3] * x1 + M[4] * x2
    w2 = M[2] * x0 + M[4] * x1 + M[5] * x2
    s = x0 * w0 + x1 * w1 + x2 * w2
    pr = p / r2
    phi = g * pr * t + g * (g - 2.0) * pr / r2 * s
    psi = (g + 2.0) * p * t + (g + 2.0) * g * pr * s
    gp2 = 2.0 * g * pr
    h = 0.5 * eta * eta
    # b + h * M:D^2 b
    b0 = -2.0 * p * x0 - 2.0 * h * (phi * x0 + gp2 * w0)
    b1 = -2.0 * p * x1 - 2.0 * h * (phi * x1 + gp2 * w1)
    b2 = -2.0 * p * x2 - 2.0 * h * (phi * x2 + gp2 * w2)
    # a + h * M:D^2 a
    a00 = p * (r2 - x0 * x0) + h * (psi - phi * x0 * x0 - 2.0 * gp2 * w0 * x0 - 2.0 * p * M[0])
    a01 = -p * x0 * x1 - h * (phi * x0 * x1 + gp2 * (w0 * x1 + x0 * w1) + 2.0 * p * M[1])
    a02 = -p * x0 * x2 - h * (phi * x0 * x2 + gp2 * (w0 * x2 + x0 * w2) + 2.0 * p * M[2])
    a11 = p * (r2 - x1 * x1) + h * (psi - phi * x1 * x1 - 2.0 * gp2 * w1 * x1 - 2.0 * p * M[3])
    a12 = -p * x1 * x2 - h * (phi * x1 * x2 + gp2 * (w1 * x2 + x1 * w2) + 2.0 * p * M[4])
    a22 = p * (r2 - x2 * x2) + h * (psi - phi * x2 * x2 - 2.0 * gp2 * w2 * x2 - 2.0 * p * M[5])
    return b0, b1, b2, a00, a01, a02, a11, a12, a22


@njit(cache=True, inline="always")
def _pair(g, eta, nodes, M, far2, x0, x1, x2):
    """Mollified (b, a) at displacement x; ``far2`` is ``(far_cutoff * eta)^2``."""
    if eta == 0.0:
        return _raw(g, x0, x1, x2)
    r2 = x0 * x0 + x1 * x1 + x2 * x2
    if r2 > far2:
        return _far(g, eta, M, x0, x1, x2)
    k = nodes.shape[0]
    s0 = s1 = s2 = 0.0
    q0 = q1 = q2 = q3 = q4 = q5 = 0.0
    for n in range(0, k, 2):
        u0 = eta * nodes[n, 0]
        u1 = eta * nodes[n, 1]
        u2 = eta * nodes[n, 2]
        m = _raw(g, x0 - u0, x1 - u1, x2 - u2)
        P = _raw(g, x0 + u0, x1 + u1, x2 + u2)
        s0 += m[0] + P[0]
        s1 += m[1] + P[1]
        s2 += m[2] + P[2]
        q0 += m[3] + P[3]
        q1 += m[4] + P[4]
        q2 += m[5] + P[5]
        q3 += m[6] + P[6]
        q4 += m[7] + P[7]
        q5 += m[8] + P[8]
    c = 1.0 / k
    return s0 * c, s1 * c, s2 * c, q0 * c, q1 * c, q2 * c, q3 * c, q4 * c, q5 * c


@njit(cache=True)
def _pair_batch(g, eta, nodes, M, far2, X, B, A):
    for i in range(X.shape[0]):
        r = _pair(g, eta, nodes, M, far2, X[i, 0], X[i, 1], X[i, 2])
        for c in range(3):
            B[i, c] = r[c]
        for c in range(6):
            A[i, c] = r[3 + c]


@njit(cache=True)
def _self_fields_seq(g, eta, nodes, M, far2, V, B, A):
    """Fields of the cloud V at its own points, via one pass over i < j.

    Each accumulator receives its terms in increasing j order, so the result
    matches :func:`_self_fields_par` bitwise.
    """
    n = V.shape[0]
    z = _pair(g, eta, nodes, M, far2, 0.0, 0.0, 0.0)
    B[:, :] = 0.0
    A[:, :] = 0.0
    for i in range(n):
        b0 = B[i, 0]
        b1 = B[i, 1]
        b2 = B[i, 2]
        a0 = A[i, 0] + z[3]
        a1 = A[i, 1] + z[4]
        a2 = A[i, 2] + z[5]
        a3 = A[i, 3] + z[6]
        a4 = A[i, 4] + z[7]
        a5 = A[i, 5] + z[8]
        v0 = V[i, 0]
        v1 = V[i, 1]
        v2 = V[i, 2]
        for j in range(i + 1, n):
            r = _pair(g, eta, nodes, M, far2, v0 - V[j, 0], v1 - V[j, 1], v2 - V[j, 2])
            b0 += r[0]
            b1 += r[1]
            b2 += r[2]
            a0 += r[3]
            a1 += r[4]
            a2 += r[5]
            a3 += r[6]
            a4 += r[7]
            a5 += r[8]
            B[j, 0] -= r[0]
            B[j, 1] -= r[1]
            B[j, 2] -= r[2]
            A[j, 0] += r[3]
            A[j, 1] += r[4]
            A[j, 2] += r[5]
            A[j, 3] += r[6]
            A[j, 4] += r[7]
            A[j, 5] += r[8]
        inv = 1.0 / n
        B[i, 0] = b0 * inv
        B[i, 1] = b1 * inv
        B[i, 2] = b2 * inv
        A[i, 0] = a0 * inv
        A[i, 1] = a1 * inv
        A[i, 2] = a2 * inv
        A[i, 3] = a3 * inv
        A[i, 4] = a4 * inv
        A[i, 5] = a5 * inv


@njit(cache=True, inline="always")
def _row_sum(g, eta, nodes, M, far2, q0, q1, q2, P, inv, B, A, i):
    b0 = b1 = b2 = 0.0
    a0 = a1 = a2 = a3 = a4 = a5 = 0.0
    for j in range(P.shape[0]):
        r = _pair(g, eta, nodes, M, far2, q0 - P[j, 0], q1 - P[j, 1], q2 - P[j, 2])
        b0 += r[0]
        b1 += r[1]
        b2 += r[2]
        a0 += r[3]
        a1 += r[4]
        a2 += r[5]
        a3 += r[6]
        a4 += r[7]
        a5 += r[8]
    B[i, 0] = b0 * inv
    B[i, 1] = b1 * inv
    B[i, 2] = b2 * inv
    A[i, 0] = a0 * inv
    A[i, 1] = a1 * inv
    A[i, 2] = a2 * inv
    A[i, 3] = a3 * inv
    A[i, 4] = a4 * inv
    A[i, 5] = a5 * inv


@njit(cache=True, parallel=True)
def _self_fields_par(g, eta, nodes, M, far2, V, B, A):
    inv = 1.0 / V.shape[0]
    for i in prange(V.shape[0]):
        _row_sum(g, eta, nodes, M, far2, V[i, 0], V[i, 1], V[i, 2], V, inv, B, A, i)


@njit(cache=True, parallel=True)
def _cross_fields(g, eta, nodes, M, far2, Q, P, B, A):
    """Fields generated by cloud P, evaluated at the points Q."""
    inv = 1.0 / P.shape[0]
    for i in prange(Q.shape[0]):
        _row_sum(g, eta, nodes, M, far2, Q[i, 0], Q[i, 1], Q[i, 2], P, inv, B, A, i)


# ---------------------------------------------------------------------------
# python surface

def _vectors(v):
    arr = np.asarray(v, dtype=float)
    if arr.shape[-1:] != (3,):
        raise InvalidArgument(f"expected trailing dimension 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("non-finite velocity")
    return arr


def unpack_sym(P):
    """``(..., 6)`` packed entries to ``(..., 3, 3)`` symmetric matrices."""
    P = np.asarray(P)
    out = np.empty(P.shape[:-1] + (3, 3))
    idx = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    for c, (i, j) in enumerate(idx):
        out[..., i, j] = P[..., c]
        out[..., j, i] = P[..., c]
    return out


def _radial_power(v, power):
    r2 = np.einsum("...i,...i->...", v, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(r2 > 0.0, r2 ** (0.5 * power), 0.0)
    return r2, p


def eval_b(gamma, v):
    """Raw drift kernel ``-2 |v|^gamma v``; zero at the origin.

    Accepts a single vector or an ``(..., 3)`` stack.
    """
    validate_gamma(gamma)
    v = _vectors(v)
    _, p = _radial_power(v, gamma)
    return -2.0 * p[..., None] * v


def eval_a(gamma, v):
    """Raw diffusion kernel ``|v|^gamma (|v|^2 I - v v^T)``; zero at the origin."""
    validate_gamma(gamma)
    v = _vectors(v)
    r2, p = _radial_power(v, gamma)
    outer = v[..., :, None] * v[..., None, :]
    return p[..., None, None] * (r2[..., None, None] * np.eye(3) - outer)


def eval_sigma(gamma, v):
    """Symmetric square root ``|v|^{gamma/2 - 1} (|v|^2 I - v v^T)`` of :func:`eval_a`."""
    validate_gamma(gamma)
    v = _vectors(v)
    r2, p = _radial_power(v, 0.5 * gamma - 1.0)
    outer = v[..., :, None] * v[..., None, :]
    return p[..., None, None] * (r2[..., None, None] * np.eye(3) - outer)


def _compiled_args(params):
    far = params.far_cutoff * params.eta
    far2 = far * far if math.isfinite(far) else math.inf
    return (float(params.gamma), float(params.eta), params.nodes(), params.node_moment(), far2)


def _mollified(params, x):
    x = _vectors(x)
    flat = np.ascontiguousarray(x.reshape(-1, 3))
    B = np.empty((flat.shape[0], 3))
    A = np.empty((flat.shape[0], 6))
    _pair_batch(*_compiled_args(params), flat, B, A)
    return B.reshape(x.shape), unpack_sym(A).reshape(x.shape[:-1] + (3, 3))


def eval_b_mollified(params, x):
    """``(b * phi_eta)(x)`` by antithetic ball quadrature; raw kernel when ``eta == 0``."""
    if params.eta == 0.0:
        return eval_b(params.gamma, x)
    return _mollified(params, x)[0]


def eval_a_mollified(params, x):
    """``(a * phi_eta)(x)`` by antithetic ball quadrature; raw kernel when ``eta == 0``."""
    if params.eta == 0.0:
        return eval_a(params.gamma, x)
    return _mollified(params, x)[1]


def as_cloud(points):
    """Velocity array of an ensemble-like object or array, as contiguous ``(n, 3)``."""
    v = getattr(points, "velocities", points)
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
        raise InvalidArgument(f"expected a nonempty (n, 3) cloud, got shape {v.shape}")
    return v


def fields_at(params, cloud, points):
    """Packed drift ``(m, 3)`` and diffusion ``(m, 6)`` of ``cloud`` at ``points``."""
    P = as_cloud(cloud)
    Q = np.ascontiguousarray(np.atleast_2d(_vectors(points)))
    B = np.empty((Q.shape[0], 3))
    A = np.empty((Q.shape[0], 6))
    _cross_fields(*_compiled_args(params), Q, P, B, A)
    return B, A


def self_fields(params, cloud, parallel=None):
    """Packed fields of the cloud at its own points (self term included)."""
    from numba import get_num_threads

    V = as_cloud(cloud)
    B = np.empty((V.shape[0], 3))
    A = np.empty((V.shape[0], 6))
    if parallel is None:
        parallel = get_num_threads() > 1
    fn = _self_fields_par if parallel else _self_fields_seq
    fn(*_compiled_args(params), V, B, A)
    return B, A


def field_b(params, ensemble, v):
    """``N^{-1} sum_j b_eta(v - V_j)`` for one query point or an ``(m, 3)`` stack."""
    v = _vectors(v)
    B, _ = fields_at(params, ensemble, v.reshape(-1, 3))
    return B.reshape(v.shape)


def field_a(params, ensemble, v):
    """``N^{-1} sum_j a_eta(v - V_j)`` for one query point or an ``(m, 3)`` stack."""
    v = _vectors(v)
    _, A = fields_at(params, ensemble, v.reshape(-1, 3))
    return unpack_sym(A).reshape(v.shape[:-1] + (3, 3))
