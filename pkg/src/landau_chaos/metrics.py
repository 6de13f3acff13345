"""Functionals of empirical measures.

Entropy follows the sign ``H(f) = int f log f``, the negative of the
differential entropy reported by most libraries. ``H`` of the standard
Gaussian on R^3 is ``-1.5 log(2 pi e) = -4.2568``.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from . import kernels
from .coupling import optimal_assignment_w2
from .errors import InvalidArgument

DISTANCE_FLOOR = 1e-12
DEFAULT_K = 4


@dataclass(frozen=True)
class MetricReport:
    value: float
    stderr: float
    method: str

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# analytic densities

@dataclass(frozen=True)
class DensitySpec:
    """Analytic test density: ``isotropic-gaussian`` (``sigma``) or ``gaussian-mixture``."""

    family: str = "isotropic-gaussian"
    sigma: float = 1.0
    weights: tuple = ()
    means: tuple = ()
    covs: tuple = ()

    def __post_init__(self):
        if self.family not in ("isotropic-gaussian", "gaussian-mixture"):
            raise InvalidArgument(f"unsupported density family {self.family!r}")
        if self.family == "isotropic-gaussian" and not self.sigma > 0:
            raise InvalidArgument("sigma must be positive")
        if self.family == "gaussian-mixture":
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0 or not math.isclose(w.sum(), 1.0, rel_tol=1e-9) or np.any(w < 0):
                raise InvalidArgument("mixture weights must be non-negative and sum to 1")
            if np.shape(self.means) != (w.size, 3) or np.shape(self.covs) != (w.size, 3, 3):
                raise InvalidArgument("mixture needs (k, 3) means and (k, 3, 3) covariances")

    def _parts(self):
        if self.family == "isotropic-gaussian":
            return np.ones(1), np.zeros((1, 3)), (self.sigma ** 2 * np.eye(3))[None]
        return np.asarray(self.weights, float), np.asarray(self.means, float), np.asarray(self.covs, float)

    def pdf_and_score(self, x):
        """Density and ``grad log f`` at the points ``x`` (shape ``(n, 3)``)."""
        w, m, c = self._parts()
        inv = np.linalg.inv(c)
        norm = w / np.sqrt((2 * np.pi) ** 3 * np.linalg.det(c))
        d = x[:, None, :] - m[None]
        pd = np.einsum("kij,nkj->nki", inv, d)
        comp = norm[None] * np.exp(-0.5 * np.einsum("nki,nki->nk", d, pd))
        f = comp.sum(axis=1)
        grad = -np.einsum("nk,nki->ni", comp, pd)
        with np.errstate(invalid="ignore", divide="ignore"):
            score = np.where(f[:, None] > 0, grad / f[:, None], 0.0)
        return f, score


# ---------------------------------------------------------------------------
# transport distances

def w2sq_empirical(X, Y):
    """Squared W2 between two equal-size empirical measures, from the exact matching."""
    plan = optimal_assignment_w2(X, Y)
    return plan.w2sq


def _pot():
    for k in ("POT_BACKEND_DISABLE_PYTORCH", "POT_BACKEND_DISABLE_JAX",
              "POT_BACKEND_DISABLE_TENSORFLOW", "POT_BACKEND_DISABLE_CUPY"):
        os.environ.setdefault(k, "1")
    import ot

    return ot


def w2sq_transport(X, Y):
    """Squared W2 between empirical measures of possibly different sizes (network simplex)."""
    X = kernels.as_cloud(X)
    Y = kernels.as_cloud(Y)
    ot = _pot()
    a = np.full(X.shape[0], 1.0 / X.shape[0])
    b = np.full(Y.shape[0], 1.0 / Y.shape[0])
    d = X[:, None, :] - Y[None, :, :]
    M = np.einsum("ijk,ijk->ij", d, d)
    return float(ot.emd2(a, b, M, numItermax=10_000_000))


def sliced_w2sq(X, Y, n_proj=128, seed=0):
    """Mean over random unit directions of the 1-D squared W2 of the projections.

    Works in any dimension; the two clouds must have equal sizes.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise InvalidArgument("sliced_w2sq needs two clouds of the same shape")
    rng = np.random.default_rng(seed)
    th = rng.standard_normal((n_proj, X.shape[1]))
    th /= np.linalg.norm(th, axis=1, keepdims=True)
    px = np.sort(X @ th.T, axis=0)
    py = np.sort(Y @ th.T, axis=0)
    per = np.mean((px - py) ** 2, axis=0)
    se = float(per.std(ddof=1) / math.sqrt(n_proj)) if n_proj > 1 else 0.0
    return MetricReport(value=float(per.mean()), stderr=se, method="sliced")


# ---------------------------------------------------------------------------
# blob norm

def lens_volume(d, eps):
    """Volume of the intersection of two radius-``eps`` balls whose centres are ``d`` apart."""
    d = np.asarray(d, dtype=float)
    return np.where(d < 2 * eps, np.pi * (4 * eps + d) * (2 * eps - d) ** 2 / 12.0, 0.0)


def blob_l2_norm(X, eps):
    """Squared L2 norm of the empirical measure convolved with the uniform ball ``phi_eps``.

    ``(3 / (4 pi eps^3))^2 N^-2 sum_{i,j} |B(X_i, eps) ∩ B(X_j, eps)|``, exact.
    """
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    X = kernels.as_cloud(X)
    n = X.shape[0]
    tree = cKDTree(X)
    pairs = tree.query_pairs(2 * eps, output_type="ndarray")
    ball = 4.0 * np.pi * eps ** 3 / 3.0
    total = n * ball
    if pairs.size:
        d = np.linalg.norm(X[pairs[:, 0]] - X[pairs[:, 1]], axis=1)
        total += 2.0 * float(np.sum(lens_volume(d, eps)))
    return total / (ball * ball * n * n)


def blob_l2_cube_bound(X, eps, constant=3731.0):
    """Cube-counting upper bound ``constant / (N^2 eps^3) sum_D (#points in D)^2``.

    ``D`` runs over the cubes of the grid ``eps Z^3``.
    """
    X = kernels.as_cloud(X)
    n = X.shape[0]
    _, counts = np.unique(np.floor(X / eps).astype(np.int64), axis=0, return_counts=True)
    return constant / (n * n * eps ** 3) * float(np.sum(counts.astype(float) ** 2))


# ---------------------------------------------------------------------------
# entropy

def knn_entropy(X, k=DEFAULT_K):
    """Kozachenko-Leonenko estimate of ``H(f) = int f log f`` (negative differential entropy).

    ``-H = psi(N) - psi(k) + log(4 pi / 3) + 3 mean(log eps_k)`` with
    ``eps_k`` the distance to the k-th neighbour, floored at ``1e-12``.
    The standard error is the sample spread of the per-point terms.
    """
    X = kernels.as_cloud(X)
    n = X.shape[0]
    if n < 50:
        raise InvalidArgument("knn_entropy needs at least 50 points")
    if not 1 <= k <= 16:
        raise InvalidArgument("k must lie in [1, 16]")
    dist, _ = cKDTree(X).query(X, k=k + 1)
    r = np.maximum(dist[:, k], DISTANCE_FLOOR)
    terms = 3.0 * np.log(r)
    h_diff = special.digamma(n) - special.digamma(k) + math.log(4.0 * math.pi / 3.0) + terms.mean()
    return MetricReport(value=float(-h_diff), stderr=float(terms.std(ddof=1) / math.sqrt(n)),
                        method=f"kozachenko-leonenko-k{k}")


def gaussian_entropy(cov):
    """Closed-form ``H = int f log f`` of a centred Gaussian."""
    cov = np.asarray(cov, dtype=float)
    return float(-0.5 * np.log((2 * np.pi * np.e) ** 3 * np.linalg.det(cov)))


# ---------------------------------------------------------------------------
# Fisher information

def weighted_fisher_quadrature(spec, gamma, n_theta=48, n_phi=96):
    """``I_gamma(f) = int (1 + |v|^2)^(gamma/2) |grad log f|^2 f dv`` for an analytic density.

    Isotropic Gaussians reduce to the radial integral
    ``int (1 + r^2)^(gamma/2) (r^2 / sigma^4) f(r) 4 pi r^2 dr``; mixtures use
    adaptive radial quadrature of a Gauss-Legendre x trapezoid spherical
    average.
    """
    if not isinstance(spec, DensitySpec):
        raise InvalidArgument("weighted_fisher_quadrature needs an analytic DensitySpec")
    g = float(gamma)
    if spec.family == "isotropic-gaussian":
        s2 = spec.sigma ** 2
        norm = (2 * np.pi * s2) ** -1.5

        def radial(r):
            return (1 + r * r) ** (g / 2) * (r * r / (s2 * s2)) * norm * math.exp(-r * r / (2 * s2)) * 4 * math.pi * r * r

        val, _ = integrate.quad(radial, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - z * z)
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(z, np.ones(n_phi))], -1).reshape(-1, 3)
    wdir = (np.outer(wz, np.ones(n_phi)) * (2 * np.pi / n_phi)).reshape(-1)

    def radial(r):
        f, sc = spec.pdf_and_score(r * dirs)
        return (1 + r * r) ** (g / 2) * r * r * float(np.sum(wdir * f * np.sum(sc * sc, axis=1)))

    scale = math.sqrt(max(np.max(np.linalg.eigvalsh(np.asarray(c))) for c in spec._parts()[2]))
    shift = float(np.max(np.linalg.norm(spec._parts()[1], axis=1)))
    top = shift + 40.0 * scale
    val, _ = integrate.quad(radial, 0.0, top, epsabs=1e-12, epsrel=1e-10, limit=400)
    return float(val)


def silverman_bandwidth(X):
    n, d = X.shape
    return float((4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * np.mean(X.std(axis=0, ddof=1)))


def weighted_fisher_kde(X, gamma, bandwidth=0.0, chunk=256):
    """Weighted Fisher information from a leave-one-out Gaussian KDE (diagnostic, biased).

    Squaring a kernel score estimate overshoots badly in the tails, so the
    estimate uses the integration-by-parts form
    ``I_gamma = E[w (|s|^2 - Lap f / f) - grad w . s]`` with
    ``w = (1 + |v|^2)^(gamma/2)`` and ``s = grad log f``, every term taken
    from the KDE built on the other samples. ``bandwidth = 0`` selects
    Silverman's rule.
    """
    X = kernels.as_cloud(X)
    n = X.shape[0]
    if n < 500:
        raise InvalidArgument("weighted_fisher_kde needs at least 500 points")
    h = silverman_bandwidth(X) if bandwidth == 0 else float(bandwidth)
    if not h > 0:
        raise InvalidArgument("bandwidth must be positive")
    g = float(gamma)
    h2 = h * h
    terms = np.empty(n)
    sq = np.sum(X * X, axis=1)
    for s in range(0, n, chunk):
        Q = X[s:s + chunk]
        m = Q.shape[0]
        d2 = np.maximum(sq[s:s + chunk, None] + sq[None, :] - 2.0 * Q @ X.T, 0.0)
        logk = -0.5 * d2 / h2
        logk[np.arange(m), np.arange(s, s + m)] = -np.inf
        logk -= logk.max(axis=1, keepdims=True)
        W = np.exp(logk)
        W /= W.sum(axis=1, keepdims=True)
        score = (W @ X - Q) / h2
        s2 = np.sum(score * score, axis=1)
        lap = np.sum(W * d2, axis=1) / (h2 * h2) - 3.0 / h2
        base = 1.0 + sq[s:s + chunk]
        w = base ** (g / 2)
        grad_w = (g * base ** (g / 2 - 1))[:, None] * Q
        terms[s:s + chunk] = w * (s2 - lap) - np.sum(grad_w * score, axis=1)
    return MetricReport(value=float(terms.mean()), stderr=float(terms.std(ddof=1) / math.sqrt(n)),
                        method=f"kde-loo-parts-diagnostic-h{h:.4g}")


# ---------------------------------------------------------------------------
# masses and chaos

def ball_mass(X, center, radius):
    """Fraction of points strictly inside ``B(center, radius)``."""
    if not radius > 0:
        raise InvalidArgument("radius must be positive")
    X = kernels.as_cloud(X)
    c = np.asarray(center, dtype=float)
    return float(np.mean(np.sum((X - c) ** 2, axis=1) < radius * radius))


def chaos_pair_gap(runs, ref, n_proj=256, seed=0):
    """Sliced W2^2 between the law of the first two particles and ``ref (x) ref``.

    The first two particles (by label) of each run form a 6-D sample; the
    product sample pairs two independent resamplings of ``ref``.
    """
    runs = list(runs)
    if len(runs) < 16:
        raise InvalidArgument("chaos_pair_gap needs at least 16 runs")
    pairs = []
    for r in runs:
        lab = getattr(r, "labels", None)
        V = kernels.as_cloud(r)
        order = np.argsort(lab, kind="stable") if lab is not None else np.arange(V.shape[0])
        pairs.append(np.concatenate([V[order[0]], V[order[1]]]))
    P = np.asarray(pairs)
    R = kernels.as_cloud(ref)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, R.shape[0], P.shape[0])
    j = rng.integers(0, R.shape[0], P.shape[0])
    Q = np.concatenate([R[i], R[j]], axis=1)
    rep = sliced_w2sq(P, Q, n_proj=n_proj, seed=seed + 1)
    return MetricReport(rep.value, rep.stderr, "sliced-pair-gap")


def chaos_pair_null(ref, n_runs, reps=32, n_proj=256, seed=0):
    """Null distribution of :func:`chaos_pair_gap` for ``n_runs`` exactly chaotic runs.

    Each replicate draws the particle pairs from ``ref (x) ref``. The value is
    the mean null gap and ``stderr`` the spread of a single null gap, which is
    the scale a measured gap should be compared on.
    """
    R = kernels.as_cloud(ref)
    rng = np.random.default_rng(seed)
    gaps = []
    for r in range(reps):
        runs = [R[rng.integers(0, R.shape[0], 2)] for _ in range(n_runs)]
        gaps.append(chaos_pair_gap(runs, R, n_proj=n_proj, seed=int(rng.integers(2 ** 31))).value)
    gaps = np.asarray(gaps)
    return MetricReport(float(gaps.mean()), float(gaps.std(ddof=1)), "sliced-pair-null")


# ---------------------------------------------------------------------------
# entropy-moment inequality

def gaussian_entropy_moment_constant():
    """``sup_m [1.5 log(2 pi e m / 3) - m]``: the best ``C`` in ``H(f) >= -C - m2(f)``.

    The Gaussian maximises differential entropy at fixed second moment; the
    supremum sits at ``m = 3/2``.
    """
    return 1.5 * math.log(math.pi * math.e) - 1.5


@dataclass(frozen=True)
class BallCheck:
    center: tuple
    radius: float
    volume: float
    mass: float
    bound: float
    margin: float
    skipped: bool


def entropy_moment_inequality_check(X, sets, C=None, k=DEFAULT_K):
    """Compare ``f(A)`` with ``(C + H + m2) / (-log |A|)`` on balls ``A``.

    ``H`` is the kNN estimate, so margins are diagnostic. ``C`` defaults to
    ``1 + sup_m [1.5 log(2 pi e m / 3) - m]``. Balls with volume ``>= 1`` are
    skipped.
    """
    X = kernels.as_cloud(X)
    C = 1.0 + abs(gaussian_entropy_moment_constant()) if C is None else float(C)
    H = knn_entropy(X, k)
    m2 = float(np.mean(np.sum(X * X, axis=1)))
    out = []
    for center, radius in sets:
        vol = 4.0 * math.pi * radius ** 3 / 3.0
        if vol >= 1.0:
            out.append(BallCheck(tuple(center), radius, vol, math.nan, math.nan, math.nan, True))
            continue
        mass = ball_mass(X, center, radius)
        bound = (C + H.value + m2) / (-math.log(vol))
        out.append(BallCheck(tuple(map(float, center)), float(radius), vol, mass, bound, bound - mass, False))
    return {"C": C, "H": H.to_dict(), "m2": m2, "balls": out,
            "violations": sum(1 for b in out if not b.skipped and b.margin < 0)}
