"""Optimal matchings between point clouds and coupled particle systems.

* :func:`optimal_assignment_w2` solves the squared-distance assignment
  problem exactly (shortest augmenting paths with potentials) and returns
  the lexicographically smallest optimal permutation.
* :func:`symmetrized_coupling` builds an exchangeable optimal pairing by
  random relabelling followed by a uniform draw among optimal permutations.
* :func:`step_coupled_pair` advances a particle system together with a
  companion system driven by a reference cloud through rotated shared noise.
* :func:`delta_decomposition` evaluates the two-point quantity ``Delta`` and
  its antisymmetric / remainder split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import kernels
from .errors import InvalidArgument, NumericalBlowup
from .matrix3 import _rotation3, REG_THRESHOLD
from .particles import Ensemble, _check_dt, _em_update, sorted_view

ASSIGNMENT_CAP = 4096
TIGHT_RTOL = 1e-12


@dataclass(frozen=True)
class CouplingPlan:
    """Permutation ``perm`` pairing ``X[i]`` with ``Y[perm[i]]``, and its total squared cost."""

    perm: tuple
    cost_sq: float

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if p.ndim != 1 or np.unique(p).size != p.size or (p.size and (p.min() != 0 or p.max() != p.size - 1)):
            raise InvalidArgument("perm must be a permutation of 0..n-1")
        object.__setattr__(self, "perm", tuple(int(i) for i in p))
        if not self.cost_sq >= 0:
            raise InvalidArgument("cost_sq must be non-negative")

    @property
    def n(self):
        return len(self.perm)

    @property
    def w2sq(self):
        return self.cost_sq / self.n

    def to_json(self):
        return json.dumps({"perm": list(self.perm), "cost_sq": self.cost_sq})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(perm=tuple(d["perm"]), cost_sq=float(d["cost_sq"]))


def sq_cost(X, Y):
    """``|X_i - Y_j|^2`` matrix, computed from differences so it is exact for copies."""
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def paired_cost_sq(X, Y_paired):
    """``sum_i |X_i - Y_paired_i|^2`` in the canonical summation order used for every ``cost_sq``."""
    d = np.asarray(X, dtype=float) - np.asarray(Y_paired, dtype=float)
    return float(np.sum(np.sum(d * d, axis=1)))


@njit(cache=True)
def _hungarian(C, u, v):
    """Min-cost perfect matching by shortest augmenting paths; returns row -> column.

    Writes the optimal dual potentials to ``u`` (rows) and ``v`` (columns).
    """
    n = C.shape[0]
    INF = np.inf
    uu = np.zeros(n + 1)
    vv = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INF
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - uu[i0] - vv[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    uu[p[j]] += delta
                    vv[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row[p[j] - 1] = j - 1
    for i in range(n):
        u[i] = uu[i + 1]
        v[i] = vv[i + 1]
    return row


def tight_graph(C, u, v, perm):
    """Adjacency of reduced-cost-zero edges; every optimal permutation lives in it."""
    scale = max(1.0, float(np.abs(C).max()))
    red = C - u[:, None] - v[None, :]
    tight = red <= TIGHT_RTOL * scale * C.shape[0]
    tight[np.arange(C.shape[0]), perm] = True
    return [np.flatnonzero(row) for row in tight]


def _reroute(adj, match_row, match_col, i, j, frozen):
    """Alternating path letting row ``i`` take column ``j`` without touching frozen rows.

    The column released by ``i`` may be claimed by the displaced rows. On
    success the matching is updated in place.
    """
    target = match_row[i]
    start = match_col[j]
    if start == i:
        return True
    # BFS over rows; parent maps a row to (previous row, column it takes)
    parent = {start: (i, j)}
    queue = [start]
    found = None
    while queue and found is None:
        nxt = []
        for r in queue:
            for c in adj[r]:
                if c == target:
                    found = (r, c)
                    break
                o = match_col[c]
                if o == i or frozen[o] or o in parent:
                    continue
                parent[o] = (r, c)
                nxt.append(o)
            if found is not None:
                break
        queue = nxt
    if found is None:
        return False
    r, c = found
    while True:
        match_row[r] = c
        match_col[c] = r
        if r == i:
            break
        r, c = parent[r]
    return True


def lexicographic_optimum(adj, perm):
    """Smallest optimal permutation in lexicographic order, starting from ``perm``."""
    n = len(adj)
    match_row = np.array(perm, dtype=np.int64)
    match_col = np.empty(n, dtype=np.int64)
    match_col[match_row] = np.arange(n)
    frozen = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in adj[i]:
            if j >= match_row[i]:
                break
            if not frozen[match_col[j]] and _reroute(adj, match_row, match_col, i, int(j), frozen):
                break
        frozen[i] = True
    return match_row


def _clouds(X, Y):
    X = kernels.as_cloud(X) if np.size(X) else np.empty((0, 3))
    Y = kernels.as_cloud(Y) if np.size(Y) else np.empty((0, 3))
    if X.shape != Y.shape:
        raise InvalidArgument(f"cloud sizes differ: {X.shape[0]} vs {Y.shape[0]}")
    return X, Y


def _solve(X, Y):
    n = X.shape[0]
    if n > ASSIGNMENT_CAP:
        raise InvalidArgument(f"exact assignment is capped at {ASSIGNMENT_CAP} points; use sliced_w2sq")
    C = sq_cost(X, Y)
    u = np.empty(n)
    v = np.empty(n)
    perm = _hungarian(C, u, v)
    return C, u, v, perm


def optimal_assignment_w2(X, Y):
    """Exact squared-W2 matching between two equal-size clouds.

    Returns the lexicographically smallest optimal permutation; the empirical
    ``W2^2`` is ``plan.cost_sq / n``.
    """
    X, Y = _clouds(X, Y)
    C, u, v, perm = _solve(X, Y)
    adj, _ = prune_tight(tight_graph(C, u, v, perm), perm)
    perm = lexicographic_optimum(adj, perm)
    return CouplingPlan(perm=tuple(perm), cost_sq=paired_cost_sq(X, Y[np.asarray(perm, dtype=np.int64)]))


def prune_tight(adj, perm):
    """Keep only tight edges lying in some perfect matching; also return component labels.

    An edge outside the matching ``perm`` belongs to another perfect matching
    iff it closes an alternating cycle, i.e. its endpoints share a strongly
    connected component of the graph orienting matched edges column -> row
    and the others row -> column.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    n = len(adj)
    rows = np.repeat(np.arange(n), [len(a) for a in adj])
    cols = np.concatenate(adj).astype(np.int64) if n else np.empty(0, np.int64)
    src = np.concatenate([rows, n + np.asarray(perm)])
    dst = np.concatenate([n + cols, np.arange(n)])
    g = coo_matrix((np.ones(src.size), (src, dst)), shape=(2 * n, 2 * n)).tocsr()
    _, lab = connected_components(g, directed=True, connection="strong")
    keep = lab[rows] == lab[n + cols]
    out = [[] for _ in range(n)]
    for i, j in zip(rows[keep].tolist(), cols[keep].tolist()):
        out[i].append(j)
    return [np.array(sorted(a), dtype=np.int64) for a in out], lab[:n]


def enumerate_perfect_matchings(adj, cap, budget=None):
    """All perfect matchings of a bipartite adjacency list.

    Returns ``None`` once more than ``cap`` matchings are found or the search
    visits more than ``budget`` nodes (default ``10 * cap``).
    """
    n = len(adj)
    out = []
    used = set()
    cur = np.empty(n, dtype=np.int64)
    budget = 10 * cap if budget is None else budget
    visits = [0]

    def rec(i):
        visits[0] += 1
        if len(out) > cap or visits[0] > budget:
            return
        if i == n:
            out.append(cur.copy())
            return
        for j in adj[i].tolist():
            if j not in used:
                used.add(j)
                cur[i] = j
                rec(i + 1)
                used.discard(j)

    rec(0)
    return None if len(out) > cap or visits[0] > budget else out


def optimal_permutations(adj, perm, cap):
    """Optimal permutations as independent per-component choices.

    Returns a list of ``(rows, matchings)`` where ``matchings`` lists every
    way to match ``rows`` inside its component, or ``None`` when a component
    has more than ``cap`` matchings.
    """
    adj, comp = prune_tight(adj, perm)
    parts = []
    for c in np.unique(comp):
        rows = np.flatnonzero(comp == c)
        if rows.size == 1:
            parts.append((rows, [np.array([perm[rows[0]]])]))
            continue
        mats = enumerate_perfect_matchings([adj[r] for r in rows], cap)
        if mats is None:
            return None
        parts.append((rows, mats))
    return parts


@dataclass(frozen=True)
class PairedSample:
    """Output of :func:`symmetrized_coupling`: ``Y_paired[i] = Y[perm[i]]`` is paired with ``X[i]``."""

    X: np.ndarray
    Y_paired: np.ndarray
    perm: np.ndarray
    cost_sq: float
    n_optimal: int
    uniform: bool


def symmetrized_coupling(X, Y, seed, cap=20_000):
    """Exchangeable optimal pairing of two equal-size clouds.

    1. relabel ``Y`` by a uniform random permutation ``sigma``;
    2. collect the optimal permutations ``S`` for ``X`` against the relabelled ``Y``;
    3. draw ``tau`` uniformly from ``S``.

    Every output attains the optimal cost, so
    ``n * W2^2(mu_X, mu_Y) = sum_i |X_i - Y_paired_i|^2``. If ``S`` has more
    than ``cap`` elements the last draw is a random feasible completion,
    which is not exactly uniform, and ``uniform`` is ``False``.
    """
    X, Y = _clouds(X, Y)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    sigma = rng.permutation(n)
    Ys = Y[sigma]
    C, u, v, perm = _solve(X, Ys)
    adj = tight_graph(C, u, v, perm)
    parts = optimal_permutations(adj, perm, cap)
    if parts is not None:
        tau = np.empty(n, dtype=np.int64)
        count = 1
        for rows, mats in parts:
            tau[rows] = mats[rng.integers(len(mats))]
            count *= len(mats)
        uniform = True
    else:
        tau = _random_completion(prune_tight(adj, perm)[0], perm, rng)
        count, uniform = -1, False
    full = sigma[tau]
    return PairedSample(X=X, Y_paired=Y[full], perm=full, cost_sq=paired_cost_sq(X, Y[full]),
                        n_optimal=count, uniform=uniform)


def _random_completion(adj, perm, rng):
    n = len(adj)
    match_row = np.array(perm, dtype=np.int64)
    match_col = np.empty(n, dtype=np.int64)
    match_col[match_row] = np.arange(n)
    frozen = np.zeros(n, dtype=bool)
    for i in rng.permutation(n):
        for j in rng.permutation(adj[i]):
            if not frozen[match_col[j]] and _reroute(adj, match_row, match_col, int(i), int(j), frozen):
                break
        frozen[i] = True
    return match_row


# ---------------------------------------------------------------------------
# coupled stepping

@njit(cache=True)
def _rotate_noise(AA, AB, xi, reg, threshold, out):
    S1 = np.empty((3, 3))
    S2 = np.empty((3, 3))
    U = np.empty((3, 3))
    fallbacks = 0
    for i in range(xi.shape[0]):
        for S, A in ((S1, AA), (S2, AB)):
            S[0, 0] = A[i, 0]
            S[0, 1] = A[i, 1]
            S[1, 0] = A[i, 1]
            S[0, 2] = A[i, 2]
            S[2, 0] = A[i, 2]
            S[1, 1] = A[i, 3]
            S[1, 2] = A[i, 4]
            S[2, 1] = A[i, 4]
            S[2, 2] = A[i, 5]
        same = True
        for c in range(6):
            if AA[i, c] != AB[i, c]:
                same = False
        if same:
            for r in range(3):
                out[i, r] = xi[i, r]
            continue
        if not _rotation3(S1, S2, reg, threshold, U):
            fallbacks += 1
        for r in range(3):
            out[i, r] = U[r, 0] * xi[i, 0] + U[r, 1] * xi[i, 1] + U[r, 2] * xi[i, 2]
    return fallbacks


@dataclass
class CoupledStepInfo:
    fallbacks: int = 0


def step_coupled_pair(sysA, sysB, reference, kernel, blob_eps, dt, shared_noise,
                      reg=0.0, threshold=REG_THRESHOLD, step=None, info=None):
    """Advance the particle system ``sysA`` and its companion ``sysB`` by one step.

    ``sysA`` takes a plain Euler-Maruyama step with its own mollified field.
    ``sysB`` uses drift and diffusion generated by ``reference`` and the
    increment ``U xi_i`` where ``xi_i`` is particle ``i``'s increment in
    ``sysA`` and ``U`` is the optimal Gaussian rotation between the
    ``blob_eps``-blob diffusion matrices of the two systems at their
    respective particles. Particles are paired by label.
    """
    _check_dt(dt)
    if sysA.n != sysB.n or not np.array_equal(np.sort(sysA.labels), np.sort(sysB.labels)):
        raise InvalidArgument("coupled systems need the same labels")
    if not 0.0 < blob_eps < 1.0:
        raise InvalidArgument("blob_eps must lie in (0, 1)")
    ordA, V = sorted_view(sysA)
    ordB, W = sorted_view(sysB)
    R = kernels.as_cloud(reference)
    xi = np.ascontiguousarray(shared_noise.draw(sysA.labels[ordA]))

    bA, aA = kernels.self_fields(kernel, V)
    bB, aB = kernels.fields_at(kernel, R, W)
    blob = kernels.KernelParams(kernel.gamma, blob_eps, kernel.quad_nodes, kernel.far_cutoff)
    _, sA = kernels.self_fields(blob, V)
    _, sB = kernels.self_fields(blob, W)
    eta = np.empty_like(xi)
    fb = _rotate_noise(sA, sB, xi, float(reg), float(threshold), eta)
    if info is not None:
        info.fallbacks += int(fb)

    newA = np.empty_like(V)
    newB = np.empty_like(W)
    badA = _em_update(V, bA, aA, xi, float(dt), newA)
    badB = _em_update(W, bB, aB, eta, float(dt), newB)
    if badA >= 0:
        raise NumericalBlowup(ordA[badA], step)
    if badB >= 0:
        raise NumericalBlowup(ordB[badB], step)
    outA = np.empty_like(V)
    outB = np.empty_like(W)
    outA[ordA] = newA
    outB[ordB] = newB
    return (Ensemble(outA, sysA.time + dt, sysA.labels.copy()),
            Ensemble(outB, sysB.time + dt, sysB.labels.copy()))


# ---------------------------------------------------------------------------
# two-point decomposition

def k_weight(x, y, gamma):
    """``K(x, y) = min(x, y)^(1 + gamma) / max(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.minimum(x, y) ** (1.0 + gamma) / np.maximum(x, y)


def delta_decomposition(v, v_star, w, w_star, gamma):
    """``(Delta, Delta1, Delta2)`` for one quadruple or stacks of them.

    ``Delta = 2 (v - w).(b(v - v*) - b(w - w*)) + |sigma(v - v*) - sigma(w - w*)|_F^2``,
    ``Delta1 = ((v - w) + (v* - w*)).(b(v - v*) - b(w - w*))`` and
    ``Delta2 = Delta - Delta1``.
    """
    v, v_star, w, w_star = (np.asarray(a, dtype=float) for a in (v, v_star, w, w_star))
    x = v - v_star
    y = w - w_star
    if np.any(np.all(x == 0.0, axis=-1)) or np.any(np.all(y == 0.0, axis=-1)):
        raise InvalidArgument("kernel arguments v - v* and w - w* must be nonzero")
    db = kernels.eval_b(gamma, x) - kernels.eval_b(gamma, y)
    ds = kernels.eval_sigma(gamma, x) - kernels.eval_sigma(gamma, y)
    d = 2.0 * np.sum((v - w) * db, axis=-1) + np.sum(ds * ds, axis=(-2, -1))
    d1 = np.sum(((v - w) + (v_star - w_star)) * db, axis=-1)
    return d, d1, d - d1


def delta2_bound(v, v_star, w, w_star, gamma):
    """``4 (|v - w|^2 + |v* - w*|^2) K(|v - v*|, |w - w*|)``."""
    v, v_star, w, w_star = (np.asarray(a, dtype=float) for a in (v, v_star, w, w_star))
    s = np.sum((v - w) ** 2, axis=-1) + np.sum((v_star - w_star) ** 2, axis=-1)
    return 4.0 * s * k_weight(np.linalg.norm(v - v_star, axis=-1), np.linalg.norm(w - w_star, axis=-1), gamma)
