"""Alignment geometry and the alignment-triggered extra noise.

Three anchor balls satisfying the non-alignment condition give a lower
bound on the smallest eigenvalue of ``a(f, v)`` in terms of the ball
masses. The perturbed particle system adds ``c dW + c grad(c) dt`` to each
particle where ``c`` is a smooth count of anchor balls that have lost mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AnchorSelectionFailed, InvalidArgument, NumericalBlowup
from .particles import Ensemble, _check_dt, em_increment, sorted_view


def check_non_alignment(x1, x2, x3, delta):
    """Whether ``(x1, x2, x3)`` satisfies the ``delta``-non-alignment condition.

    ``|x2 - x1| >= 6 sqrt(delta)`` and
    ``|p_perp(x3 - x1)| >= 24 delta + 2 sqrt(delta) |x3 - x1|`` where
    ``p_perp`` projects onto the plane orthogonal to ``x2 - x1``. The order
    of the points matters.
    """
    if not delta > 0:
        raise InvalidArgument(f"delta must be positive, got {delta}")
    x1, x2, x3 = (np.asarray(x, dtype=float) for x in (x1, x2, x3))
    d = x2 - x1
    nd = float(np.linalg.norm(d))
    sd = math.sqrt(delta)
    if nd == 0.0 or nd < 6.0 * sd:
        return False
    e = x3 - x1
    perp = e - (e @ d) / (nd * nd) * d
    return bool(np.linalg.norm(perp) >= 24.0 * delta + 2.0 * sd * np.linalg.norm(e))


@dataclass(frozen=True)
class AnchorSet:
    """Three anchor centres with the radius, mass and window parameters.

    Invariants: the triple passes :func:`check_non_alignment` at
    ``4 * delta0`` and ``0 < kappa0 <= 1``.
    """

    anchors: tuple
    delta0: float
    kappa0: float
    tau0: float = math.inf
    n0: int = 0

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=float)
        if a.shape != (3, 3) or not np.all(np.isfinite(a)):
            raise InvalidArgument("anchors must be three finite 3-vectors")
        object.__setattr__(self, "anchors", tuple(tuple(map(float, x)) for x in a))
        if not self.delta0 > 0:
            raise InvalidArgument("delta0 must be positive")
        if not 0.0 < self.kappa0 <= 1.0:
            raise InvalidArgument(f"kappa0 must lie in (0, 1], got {self.kappa0}")
        if not self.tau0 > 0:
            raise InvalidArgument("tau0 must be positive")
        if not check_non_alignment(*a, 4.0 * self.delta0):
            raise InvalidArgument("anchors fail the non-alignment condition at 4*delta0")

    @property
    def points(self):
        return np.asarray(self.anchors)

    def to_json(self):
        return json.dumps({
            "delta0": self.delta0,
            "kappa0": self.kappa0,
            "tau0": None if math.isinf(self.tau0) else self.tau0,
            "n0": self.n0,
            "anchors": [list(x) for x in self.anchors],
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        tau0 = d.get("tau0")
        return cls(anchors=tuple(map(tuple, d["anchors"])), delta0=d["delta0"], kappa0=d["kappa0"],
                   tau0=math.inf if tau0 is None else tau0, n0=d.get("n0", 0))


# ---------------------------------------------------------------------------
# greedy anchor search

@dataclass(frozen=True)
class AnchorSearch:
    """Outcome of :func:`select_anchors` beyond the anchor set itself."""

    anchor_set: AnchorSet
    delta: float
    ell: int
    radius: float
    masses: tuple
    n_candidates: int


def _candidate_masses(X, delta, R):
    """Grid centres of pitch ``delta`` inside ``B(0, R)`` with their ball masses.

    Only centres within ``delta`` of some sample can carry mass, so those are
    enumerated directly from the samples.
    """
    base = np.floor(X / delta).astype(np.int64)
    offs = np.array([(i, j, k) for i in range(-1, 3) for j in range(-1, 3) for k in range(-1, 3)])
    idx = (base[:, None, :] + offs[None, :, :]).reshape(-1, 3)
    pts = np.repeat(X, offs.shape[0], axis=0)
    inside = np.sum((idx * delta - pts) ** 2, axis=1) < delta * delta
    idx = idx[inside]
    centres = idx * delta
    keep = np.sum(centres ** 2, axis=1) <= R * R
    idx = idx[keep]
    if idx.size == 0:
        return np.empty((0, 3)), np.empty(0)
    uniq, counts = np.unique(idx, axis=0, return_counts=True)
    return uniq * delta, counts / X.shape[0]


def _best(centres, masses, mask, stage, reason):
    if not np.any(mask):
        raise AnchorSelectionFailed(stage, reason)
    c = centres[mask]
    m = masses[mask]
    # lexsort: last key is primary -> largest mass, then smallest coordinates
    order = np.lexsort((c[:, 2], c[:, 1], c[:, 0], -m))
    return c[order[0]], float(m[order[0]])


def select_anchors(samples, delta, ell=4, tau0=math.inf, n0=0, return_search=False):
    """Greedy anchor triple for the empirical measure of ``samples``.

    With ``R = 1 + sqrt(2 m2)`` and centres on the grid ``delta Z^3 ∩ B(0, R)``:

    1. ``x1`` maximises the mass of ``B(c, delta)``;
    2. ``x2`` maximises it among centres with ``|c - x1| >= 6 sqrt(ell delta)``;
    3. ``x3`` maximises it outside the slab
       ``|p_perp(c - x1)| <= 24 ell delta + 2 sqrt(ell delta) |c - x1|``.

    The triple passes the non-alignment condition at ``ell * delta``. The
    returned set uses ``delta0 = ell * delta / 4`` and ``kappa0`` equal to the
    smallest of the three masses. Ties go to the lexicographically smallest
    centre.

    Raises
    ------
    AnchorSelectionFailed
        When a stage has no admissible centre.
    """
    X = kernels.as_cloud(samples)
    if X.shape[0] < 100:
        raise InvalidArgument("anchor selection needs at least 100 samples")
    if not 0.0 < delta < 1.0:
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta}")
    if int(ell) != ell or ell < 4:
        raise InvalidArgument("ell must be an integer >= 4 so that 2*delta0 >= delta")
    m2 = float(np.mean(np.sum(X * X, axis=1)))
    R = 1.0 + math.sqrt(2.0 * m2)
    centres, masses = _candidate_masses(X, delta, R)
    if centres.shape[0] == 0:
        raise AnchorSelectionFailed(1, "no sample inside the search ball")
    ld = ell * delta
    x1, m1 = _best(centres, masses, np.ones(len(masses), bool), 1, "")
    dist = np.linalg.norm(centres - x1, axis=1)
    x2, m2_ = _best(centres, masses, dist >= 6.0 * math.sqrt(ld), 2,
                    "no candidate far enough from the first anchor")
    d = (x2 - x1) / np.linalg.norm(x2 - x1)
    e = centres - x1
    perp = np.linalg.norm(e - np.outer(e @ d, d), axis=1)
    x3, m3 = _best(centres, masses, perp > 24.0 * ld + 2.0 * math.sqrt(ld) * dist, 3,
                   "every candidate lies in the alignment slab")
    kappa0 = min(m1, m2_, m3)
    aset = AnchorSet(anchors=(tuple(x1), tuple(x2), tuple(x3)), delta0=ld / 4.0,
                     kappa0=kappa0, tau0=tau0, n0=n0)
    if return_search:
        return AnchorSearch(aset, float(delta), int(ell), R, (m1, m2_, m3), int(centres.shape[0]))
    return aset


# ---------------------------------------------------------------------------
# bumps

@dataclass(frozen=True)
class BumpSpec:
    """Quintic smoothstep bumps ``h(u) = S(2 - |u|)`` and ``chi(r) = S(2 - r)``.

    ``S(s) = 6 s^5 - 15 s^4 + 10 s^3`` on ``[0, 1]``, ``0`` below and ``1``
    above. ``S`` is C^2 with ``max S' = 15/8`` at ``s = 1/2``.
    """

    c5: float = 6.0
    c4: float = -15.0
    c3: float = 10.0

    max_slope = 1.875

    def S(self, s):
        s = np.clip(s, 0.0, 1.0)
        return s * s * s * (self.c3 + s * (self.c4 + s * self.c5))

    def dS(self, s):
        s = np.asarray(s, dtype=float)
        inner = (s > 0.0) & (s < 1.0)
        return np.where(inner, s * s * (3 * self.c3 + s * (4 * self.c4 + 5 * self.c5 * s)), 0.0)

    def h(self, u):
        return self.S(2.0 - np.linalg.norm(u, axis=-1))

    def grad_h(self, u):
        u = np.asarray(u, dtype=float)
        r = np.linalg.norm(u, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(r > 0, -self.dS(2.0 - r) / r, 0.0)
        return coef[..., None] * u

    def chi(self, r):
        return self.S(2.0 - np.asarray(r, dtype=float))

    def dchi(self, r):
        return -self.dS(2.0 - np.asarray(r, dtype=float))

    def gradient_bound(self, n, kappa0, delta0):
        """Upper bound on ``|grad_i c|`` from the bump slopes (three anchors)."""
        return 3.0 * self.max_slope * self.max_slope * 2.0 / (n * kappa0 * delta0)

    def stability_constant(self, kappa0, delta0):
        """Lipschitz constant of ``c`` with respect to W1."""
        return 3.0 * self.max_slope * self.max_slope * 2.0 / (kappa0 * delta0)


DEFAULT_BUMPS = BumpSpec()


def _anchor_integrals(anchors, V, bumps):
    x = anchors.points
    u = (V[None, :, :] - x[:, None, :]) / (2.0 * anchors.delta0)
    return u, bumps.h(u).mean(axis=1)


def eval_cl(anchors, ensemble, bumps=DEFAULT_BUMPS):
    """``sum_k chi((4/kappa0) * mean_j h((V_j - x_k) / (2 delta0)))``, a value in ``[0, 3]``."""
    V = kernels.as_cloud(ensemble)
    _, m = _anchor_integrals(anchors, V, bumps)
    return float(np.sum(bumps.chi(4.0 / anchors.kappa0 * m)))


def grad_cl_all(anchors, ensemble, bumps=DEFAULT_BUMPS):
    """Gradient of :func:`eval_cl` with respect to every particle, shape ``(n, 3)``."""
    V = kernels.as_cloud(ensemble)
    n = V.shape[0]
    u, m = _anchor_integrals(anchors, V, bumps)
    w = bumps.dchi(4.0 / anchors.kappa0 * m) * 4.0 / (anchors.kappa0 * n * 2.0 * anchors.delta0)
    return np.einsum("k,kjc->jc", w, bumps.grad_h(u))


def grad_cl(anchors, ensemble, i, bumps=DEFAULT_BUMPS):
    """Gradient of :func:`eval_cl` with respect to particle ``i``."""
    V = kernels.as_cloud(ensemble)
    if not 0 <= i < V.shape[0]:
        raise InvalidArgument(f"index {i} out of range")
    return grad_cl_all(anchors, V, bumps)[i]


def active_anchors(anchors, t):
    """Anchor set for time ``t``: entry ``floor(t / tau0)`` of a schedule, clamped to the last."""
    if isinstance(anchors, AnchorSet):
        return anchors
    seq = list(anchors)
    tau0 = seq[0].tau0
    l = 0 if math.isinf(tau0) else int(math.floor(t / tau0 + 1e-12))
    return seq[min(l, len(seq) - 1)]


def step_perturbed(ensemble, kernel, anchors, bumps, dt, noise, noise2, step=None, return_c=False):
    """Euler-Maruyama step of the perturbed system.

    On top of :func:`landau_chaos.particles.step_em` each particle gains
    ``c sqrt(dt) zeta_i + c grad_i(c) dt`` with ``c`` evaluated on the
    pre-step snapshot and ``zeta`` drawn from ``noise2``. When ``c == 0`` the
    result equals the plain step bitwise.
    """
    _check_dt(dt)
    bumps = DEFAULT_BUMPS if bumps is None else bumps
    aset = active_anchors(anchors, ensemble.time)
    order, V = sorted_view(ensemble)
    labels = ensemble.labels[order]
    xi = noise.draw(labels)
    zeta = noise2.draw(labels)
    new, bad = em_increment(V, kernel, dt, xi)
    c = eval_cl(aset, V, bumps)
    if c != 0.0:
        new = new + c * math.sqrt(dt) * zeta + (c * dt) * grad_cl_all(aset, V, bumps)
        rows = np.flatnonzero(~np.all(np.isfinite(new), axis=1))
        bad = int(rows[0]) if rows.size else bad
    if bad >= 0:
        raise NumericalBlowup(order[bad], step)
    out = np.empty_like(new)
    out[order] = new
    ens = Ensemble(out, ensemble.time + dt, ensemble.labels.copy())
    return (ens, c) if return_c else ens


# ---------------------------------------------------------------------------
# ellipticity floor

@dataclass(frozen=True)
class EllipticityReport:
    trials: int
    violations: int
    vacuous: int
    worst_margin: float
    worst_ratio: float
    kappa: float
    min_mass: float

    @property
    def ok(self):
        return self.violations == 0


def ellipticity_kappa(delta, R, gamma):
    return (delta / (R + 3.0)) ** (4.0 + gamma)


def ellipticity_floor_check(samples, anchors, gamma, delta, R, trials=10_000, seed=0,
                            v_scale=None, chunk=512):
    """Test ``xi^T a(f, v) xi >= kappa (1 + |v|)^gamma min_k f(B(x_k, delta))``.

    ``f`` is the raw empirical measure of ``samples`` and
    ``kappa = (delta / (R + 3))^(4 + gamma)``. Query velocities are drawn
    half from the samples themselves and half from a Gaussian of scale
    ``v_scale`` (default: twice the sample radius of gyration); directions
    are uniform on the sphere. A zero floor counts as vacuous, not as a pass
    or a violation.
    """
    from .metrics import ball_mass

    X = kernels.as_cloud(samples)
    pts = anchors.points if isinstance(anchors, AnchorSet) else np.asarray(anchors, dtype=float)
    if not (0.0 < delta < 1.0 and R > 1.0):
        raise InvalidArgument("need delta in (0, 1) and R > 1")
    if np.any(np.linalg.norm(pts, axis=1) >= R):
        raise InvalidArgument("anchors must lie inside B(0, R)")
    if not check_non_alignment(*pts, delta):
        raise InvalidArgument("anchors fail the non-alignment condition at delta")
    kappa = ellipticity_kappa(delta, R, gamma)
    mmin = min(ball_mass(X, x, delta) for x in pts)
    rng = np.random.default_rng(seed)
    if v_scale is None:
        v_scale = 2.0 * math.sqrt(np.mean(np.sum(X * X, axis=1)) / 3.0)
    half = trials // 2
    v = np.concatenate([X[rng.integers(0, X.shape[0], half)],
                        v_scale * rng.standard_normal((trials - half, 3))])
    xi = rng.standard_normal((trials, 3))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    raw = kernels.KernelParams(gamma=gamma, eta=0.0)
    lhs = np.empty(trials)
    for s in range(0, trials, chunk):
        _, A = kernels.fields_at(raw, X, v[s:s + chunk])
        M = kernels.unpack_sym(A)
        lhs[s:s + chunk] = np.einsum("ni,nij,nj->n", xi[s:s + chunk], M, xi[s:s + chunk])
    floor = kappa * (1.0 + np.linalg.norm(v, axis=1)) ** gamma * mmin
    vac = int(np.sum(floor == 0.0))
    live = floor > 0.0
    viol = int(np.sum(lhs[live] < floor[live]))
    if np.any(live):
        margin = float(np.min(lhs[live] - floor[live]))
        ratio = float(np.min(lhs[live] / floor[live]))
    else:
        margin = ratio = math.inf
    return EllipticityReport(trials=trials, violations=viol, vacuous=vac, worst_margin=margin,
                             worst_ratio=ratio, kappa=kappa, min_mass=mmin)
