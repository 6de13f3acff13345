import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from landau_chaos import kernels, perturbation
from landau_chaos.errors import AnchorSelectionFailed, InvalidArgument
from landau_chaos.kernels import KernelParams
from landau_chaos.particles import Ensemble, NoiseSource, init_ensemble, InitSpec, step_em
from landau_chaos.perturbation import (DEFAULT_BUMPS, AnchorSet, check_non_alignment, ellipticity_floor_check,
                                       eval_cl, grad_cl, grad_cl_all, select_anchors, step_perturbed)

ANCHORS = AnchorSet(((0.0, 0.0, 0.0), (3.0, 0.0, 0.0), (0.0, 3.0, 0.0)), delta0=0.01, kappa0=0.4)
points = arrays(np.float64, 3, elements=st.floats(-5, 5))


def shell_cloud(rng, aset=ANCHORS, per=3, extra=3):
    pts = []
    for x in aset.points:
        d = rng.standard_normal((per, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts.append(x + d * rng.uniform(1.5, 4.5, (per, 1)) * aset.delta0)
    pts.append(rng.standard_normal((extra, 3)) + 10.0)
    return np.concatenate(pts)


# -- non-alignment and anchor sets -------------------------------------------

def test_non_alignment_examples():
    o, e1, e2 = np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert check_non_alignment(o, e1, e2, 0.01)
    assert not check_non_alignment(o, e1, 2 * e1, 0.01)
    assert not check_non_alignment(o, o, e2, 0.01)
    with pytest.raises(InvalidArgument):
        check_non_alignment(o, e1, e2, 0.0)


def test_non_alignment_not_permutation_invariant():
    x1, x2, x3 = np.zeros(3), np.array([2.0, 0, 0]), np.array([0, 0.5, 0])
    assert check_non_alignment(x1, x2, x3, 0.01)
    assert not check_non_alignment(x1, x3, x2, 0.01)


@given(points, points, points, st.floats(1e-4, 0.5), st.floats(0.01, 1.0))
def test_non_alignment_monotone_in_delta(x1, x2, x3, delta, frac):
    if check_non_alignment(x1, x2, x3, delta):
        assert check_non_alignment(x1, x2, x3, delta * frac)


def test_anchor_set_json_roundtrip():
    a = AnchorSet(ANCHORS.anchors, 0.01, 0.3, tau0=0.25, n0=2)
    assert AnchorSet.from_json(a.to_json()) == a
    assert AnchorSet.from_json(ANCHORS.to_json()).tau0 == math.inf
    with pytest.raises(InvalidArgument):
        AnchorSet(((0, 0, 0), (0.1, 0, 0), (0, 3, 0)), 0.01, 0.3)
    with pytest.raises(InvalidArgument):
        AnchorSet(ANCHORS.anchors, 0.01, 1.5)


def test_select_anchors_gaussian(rng):
    X = rng.standard_normal((10_000, 3))
    s = select_anchors(X, 0.01, 4, return_search=True)
    a = s.anchor_set
    assert check_non_alignment(*a.points, 0.04)
    assert a.kappa0 > 0 and a.delta0 == pytest.approx(0.01)
    assert s.radius == pytest.approx(1 + math.sqrt(2 * np.mean(np.sum(X * X, axis=1))))
    from landau_chaos.metrics import ball_mass

    for x, m in zip(a.points, s.masses):
        assert ball_mass(X, x, 0.01) == pytest.approx(m)
        assert m >= a.kappa0
        assert np.linalg.norm(x) <= s.radius
        np.testing.assert_allclose(x / 0.01, np.round(x / 0.01), atol=1e-9)


def test_select_anchors_gaussian_coarse_is_infeasible(rng):
    # the alignment slab 24 * 0.4 is wider than the search ball
    X = rng.standard_normal((10_000, 3))
    with pytest.raises(AnchorSelectionFailed) as e:
        select_anchors(X, 0.05, 8)
    assert e.value.stage == 3


def test_candidate_masses_match_full_grid(rng):
    X = rng.standard_normal((400, 3)) * 0.2
    delta, R = 0.1, 0.6
    centres, masses = perturbation._candidate_masses(X, delta, R)
    g = np.arange(-math.ceil(R / delta), math.ceil(R / delta) + 1) * delta
    G = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    G = G[np.sum(G * G, axis=1) <= R * R]
    full = (cdist(G, X) < delta).mean(axis=1)
    keep = full > 0
    assert centres.shape[0] == keep.sum()
    order_a = np.lexsort(centres.T[::-1])
    order_b = np.lexsort(G[keep].T[::-1])
    np.testing.assert_allclose(centres[order_a], G[keep][order_b], atol=1e-12)
    np.testing.assert_allclose(masses[order_a], full[keep][order_b])


def test_select_anchors_uniform_grid():
    h = 0.05
    g = np.arange(-1, 1 + h / 2, h)
    G = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    G = G[np.sum(G * G, axis=1) <= 1.0]
    # 6 sqrt(0.16) exceeds the diameter of the support: no admissible second anchor
    with pytest.raises(AnchorSelectionFailed) as e:
        select_anchors(G, 0.02, 8)
    assert e.value.stage == 2
    a = select_anchors(G, 0.005, 4)
    assert check_non_alignment(*a.points, 0.02) and a.kappa0 > 0


def test_select_anchors_degenerate():
    with pytest.raises(AnchorSelectionFailed) as e:
        select_anchors(np.ones((200, 3)) * 0.3, 0.01, 4)
    assert e.value.stage == 2
    with pytest.raises(InvalidArgument):
        select_anchors(np.zeros((50, 3)), 0.01, 4)


# -- bumps and the cutoff functional ----------------------------------------

def test_bump_sandwich_and_smoothness():
    b = DEFAULT_BUMPS
    r = np.linspace(0, 3, 30001)
    assert np.all((r <= 1) <= b.chi(r)) and np.all(b.chi(r) <= (r <= 2))
    assert b.S(0.5) == 0.5 and b.dS(0.5) == b.max_slope
    assert np.max(np.abs(b.dS(np.linspace(0, 1, 10001)))) == pytest.approx(b.max_slope)
    # C^1: numerical derivative continuous across the knots
    h = 1e-7
    for s0 in (0.0, 1.0):
        assert abs(b.dS(s0 + h)) < 1e-10 and abs(b.dS(s0 - h)) < 1e-10


def test_cl_examples(rng):
    far = rng.standard_normal((50, 3)) + 20
    assert eval_cl(ANCHORS, far) == 3.0
    n = 40
    k = int(math.ceil(ANCHORS.kappa0 / 2 * n))
    pts = [np.repeat(x[None], k, axis=0) for x in ANCHORS.points]
    V = np.concatenate(pts + [far[: n - 3 * k]])
    assert eval_cl(ANCHORS, V) == 0.0
    V2 = V.copy()
    V2[: k - int(ANCHORS.kappa0 / 4 * n)] += 30
    assert eval_cl(ANCHORS, V2) >= 1.0


def test_cl_range(rng):
    for _ in range(200):
        c = eval_cl(ANCHORS, shell_cloud(rng))
        assert 0.0 <= c <= 3.0


def test_grad_far_is_zero(rng):
    V = shell_cloud(rng)
    np.testing.assert_array_equal(grad_cl(ANCHORS, V, V.shape[0] - 1), np.zeros(3))
    with pytest.raises(InvalidArgument):
        grad_cl(ANCHORS, V, V.shape[0])


def test_grad_matches_finite_differences(rng):
    step = 1e-6
    for _ in range(200):
        V = shell_cloud(rng)
        i = int(rng.integers(9))
        g = grad_cl(ANCHORS, V, i)
        fd = np.empty(3)
        for d in range(3):
            P, M = V.copy(), V.copy()
            P[i, d] += step
            M[i, d] -= step
            fd[d] = (eval_cl(ANCHORS, P) - eval_cl(ANCHORS, M)) / (2 * step)
        scale = max(np.linalg.norm(fd), 1 / (V.shape[0] * ANCHORS.kappa0 * ANCHORS.delta0))
        assert np.linalg.norm(g - fd) <= 1e-5 * scale


def test_grad_bound_and_scaling(rng):
    for _ in range(50):
        V = shell_cloud(rng)
        n = V.shape[0]
        G = grad_cl_all(ANCHORS, V)
        bound = DEFAULT_BUMPS.gradient_bound(n, ANCHORS.kappa0, ANCHORS.delta0)
        assert np.linalg.norm(G, axis=1).max() <= bound
        # the same configuration at twice the size: identical masses, half the gradient
        G2 = grad_cl_all(ANCHORS, np.concatenate([V, V]))
        np.testing.assert_allclose(G2[:n], G / 2, rtol=1e-12, atol=1e-15)


def test_cl_stability_against_w1(rng):
    C = DEFAULT_BUMPS.stability_constant(ANCHORS.kappa0, ANCHORS.delta0)
    for _ in range(100):
        V = shell_cloud(rng)
        W = V + rng.standard_normal(V.shape) * 10 ** rng.uniform(-4, -2)
        D = cdist(V, W)
        r, c = linear_sum_assignment(D)
        w1 = D[r, c].mean()
        assert abs(eval_cl(ANCHORS, V) - eval_cl(ANCHORS, W)) <= C * w1 + 1e-15


def test_effective_ellipticity_positive(rng):
    kern = KernelParams(-0.5, 0.01)
    worst = math.inf
    for _ in range(100):
        V = np.concatenate([shell_cloud(rng, per=2), rng.standard_normal((6, 3))])
        c = eval_cl(ANCHORS, V)
        _, A = kernels.self_fields(kern, V)
        M = kernels.unpack_sym(A)
        xi = rng.standard_normal((V.shape[0], 3))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        base = np.einsum("ni,nij,nj->n", xi, M, xi)
        weight = (1 + np.linalg.norm(V, axis=1)) ** -0.5
        # linear form and the squared form used by the perturbed diffusion
        worst = min(worst, float(np.min((base + c) / weight)), float(np.min((base + c * c) / weight)))
    assert worst > 0


# -- perturbed stepping ------------------------------------------------------

def test_step_perturbed_equals_plain_when_c_zero():
    n = 30
    k = int(math.ceil(ANCHORS.kappa0 / 2 * n))
    rng = np.random.default_rng(1)
    V = np.concatenate([x + rng.uniform(-1, 1, (k, 3)) * 0.005 for x in ANCHORS.points]
                       + [rng.standard_normal((n - 3 * k, 3)) + 8])
    ens = Ensemble(V)
    kern = KernelParams(-0.5, 0.01)
    out, c = step_perturbed(ens, kern, ANCHORS, None, 1e-3, NoiseSource(3), NoiseSource(3, 2), return_c=True)
    assert c == 0.0
    np.testing.assert_array_equal(out.velocities, step_em(ens, kern, 1e-3, NoiseSource(3)).velocities)


def test_step_perturbed_full_noise_far_from_anchors():
    ens = init_ensemble(InitSpec(), 20, 0)
    ens = Ensemble(ens.velocities + 50.0)
    kern = KernelParams(-0.5, 0.01)
    dt = 1e-2
    out, c = step_perturbed(ens, kern, ANCHORS, None, dt, NoiseSource(4), NoiseSource(4, 2), return_c=True)
    assert c == 3.0
    plain = step_em(ens, kern, dt, NoiseSource(4))
    zeta = NoiseSource(4, 2).draw(ens.labels)
    np.testing.assert_allclose(out.velocities - plain.velocities, 3 * math.sqrt(dt) * zeta, atol=1e-12)


def test_active_anchor_schedule():
    a0 = AnchorSet(ANCHORS.anchors, 0.01, 0.4, tau0=0.1)
    a1 = AnchorSet(((0, 0, 0), (0, 3, 0), (3, 0, 0)), 0.01, 0.4, tau0=0.1)
    assert perturbation.active_anchors([a0, a1], 0.05) is a0
    assert perturbation.active_anchors([a0, a1], 0.1) is a1
    assert perturbation.active_anchors([a0, a1], 5.0) is a1


# -- ellipticity floor -------------------------------------------------------

def test_floor_with_point_masses_at_anchors():
    g, delta = -0.5, 0.01
    pts = ANCHORS.points
    R = 5.0
    kappa = perturbation.ellipticity_kappa(delta, R, g)
    axis = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
    raw = KernelParams(g)
    for t in np.linspace(-2, 5, 15):
        v = pts[0] + t * axis
        A = kernels.field_a(raw, pts, v)
        lhs = axis @ A @ axis
        assert lhs >= kappa * (1 + np.linalg.norm(v)) ** g / 3


def test_floor_vacuous_on_line(rng):
    t = rng.uniform(-1, 4, 500)
    X = np.outer(t, [1.0, 0, 0])
    rep = ellipticity_floor_check(X, ANCHORS, -0.5, 0.01, 5.0, trials=200)
    assert rep.vacuous == 200 and rep.violations == 0 and rep.min_mass == 0.0


def test_floor_gaussian_small(rng):
    X = rng.standard_normal((10_000, 3))
    s = select_anchors(X, 0.01, 4, return_search=True)
    rep = ellipticity_floor_check(X, s.anchor_set, -0.5, 0.01, s.radius, trials=1000, seed=2)
    assert rep.ok and rep.violations == 0 and rep.vacuous == 0
