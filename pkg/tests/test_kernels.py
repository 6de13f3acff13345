import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from landau_chaos import kernels, matrix3
from landau_chaos.errors import InvalidArgument
from landau_chaos.kernels import KernelParams
from landau_chaos.verify import mollification_slope

gammas = st.floats(-1.95, -0.05)
vecs = arrays(np.float64, 3, elements=st.floats(-50, 50)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def ball_average(f, x, eta, n_r=24, n_t=24, n_p=48):
    """Tensor Gauss-Legendre average of ``f(x - u)`` over the ball ``B(0, eta)``."""
    r, wr = np.polynomial.legendre.leggauss(n_r)
    c, wc = np.polynomial.legendre.leggauss(n_t)
    r = 0.5 * eta * (r + 1)
    wr = 0.5 * eta * wr * r * r
    p = (np.arange(n_p) + 0.5) * 2 * np.pi / n_p
    wp = np.full(n_p, 2 * np.pi / n_p)
    R, C, P = np.meshgrid(r, c, p, indexing="ij")
    W = (wr[:, None, None] * wc[None, :, None] * wp[None, None, :]).ravel()
    S = np.sqrt(1 - C * C)
    U = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], axis=-1).reshape(-1, 3)
    vals = f(x - U)
    return np.tensordot(W, vals, axes=1) / (4 * np.pi * eta ** 3 / 3)


# -- raw kernels ------------------------------------------------------------

def test_closed_form_examples():
    np.testing.assert_allclose(kernels.eval_a(-1, [2, 0, 0]), np.diag([0, 2, 2]), atol=1e-15)
    np.testing.assert_allclose(kernels.eval_b(-1, [2, 0, 0]), [-2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(kernels.eval_b(-1.5, [0, 0, 4]), [0, 0, -1], atol=1e-15)
    np.testing.assert_allclose(kernels.eval_sigma(-1, [2, 0, 0]), np.diag([0, math.sqrt(2), math.sqrt(2)]),
                               atol=1e-15)
    for g in (-1.9, -1.0, -0.1):
        assert not np.any(kernels.eval_a(g, np.zeros(3)))
        assert not np.any(kernels.eval_b(g, np.zeros(3)))
        assert not np.any(kernels.eval_sigma(g, np.zeros(3)))


def test_unit_vector_trace(rng):
    v = rng.standard_normal((100, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    np.testing.assert_allclose(np.trace(kernels.eval_a(-0.5, v), axis1=1, axis2=2), 2.0, rtol=1e-14)


def test_invalid_inputs():
    with pytest.raises(InvalidArgument):
        kernels.eval_a(-1, [np.nan, 0, 0])
    with pytest.raises(InvalidArgument):
        kernels.eval_b(-1, [np.inf, 0, 0])
    with pytest.raises(InvalidArgument):
        kernels.eval_b(0.0, [1, 0, 0])
    with pytest.raises(InvalidArgument):
        kernels.eval_b(-2.0, [1, 0, 0])
    with pytest.raises(InvalidArgument):
        KernelParams(-1, eta=1.0)
    with pytest.raises(InvalidArgument):
        KernelParams(-1, eta=0.1, quad_nodes=63)


@given(gammas, vecs)
def test_identities_property(g, v):
    a = kernels.eval_a(g, v)
    r = np.linalg.norm(v)
    scale = r ** (g + 2)
    assert np.linalg.norm(a @ v) <= 1e-12 * scale * r
    assert abs(np.trace(a) - 2 * scale) <= 1e-12 * scale
    s = kernels.eval_sigma(g, v)
    assert np.linalg.norm(s @ s - a) <= 1e-12 * np.linalg.norm(a)
    np.testing.assert_array_equal(kernels.eval_b(g, -v), -kernels.eval_b(g, v))
    np.testing.assert_array_equal(kernels.eval_a(g, -v), a)


@given(vecs)
def test_sigma_matches_eigen_sqrt(v):
    a = kernels.eval_a(-0.7, v)
    s = matrix3.sqrt_psd(a)
    assert np.linalg.norm(kernels.eval_sigma(-0.7, v) - s) <= 1e-10 * max(1.0, np.linalg.norm(s))


def test_lipschitz_constants(rng):
    from landau_chaos.verify import check_lipschitz

    c, bound = check_lipschitz(3, 100_000)
    assert c <= bound


# -- node set and mollified kernels ------------------------------------------

def test_nodes_antithetic_and_in_ball():
    u = kernels.ball_nodes(64)
    assert u.shape == (64, 3)
    np.testing.assert_array_equal(u[1::2], -u[0::2])
    assert np.all(np.linalg.norm(u, axis=1) < 1.0)
    assert not u.flags.writeable


def test_mollified_trace_at_origin_matches_radial_integral():
    g, eta = -1.0, 0.1
    # Tr a(u) = 2 |u|^{g+2}; average over the ball by a 1-D radial integral.
    exact = integrate.quad(lambda r: 2 * r ** (g + 2) * 3 * r * r / eta ** 3, 0, eta)[0]
    assert exact == pytest.approx(2 * 3 * eta ** (g + 2) / (g + 5), rel=1e-12)
    got = np.trace(kernels.eval_a_mollified(KernelParams(g, eta), np.zeros(3)))
    assert got == pytest.approx(exact, rel=5e-3)


def test_mollified_b_vanishes_at_origin_and_is_odd(rng):
    for g in (-1.9, -1.0, -0.3):
        p = KernelParams(g, 0.2)
        assert not np.any(kernels.eval_b_mollified(p, np.zeros(3)))
        x = rng.standard_normal((500, 3)) * 0.3
        np.testing.assert_array_equal(kernels.eval_b_mollified(p, -x), -kernels.eval_b_mollified(p, x))
        np.testing.assert_array_equal(kernels.eval_a_mollified(p, -x), kernels.eval_a_mollified(p, x))


def test_mollified_b_far_example():
    p = KernelParams(-1.0, 1e-3)
    np.testing.assert_allclose(kernels.eval_b_mollified(p, [2, 0, 0]), [-2, 0, 0], atol=1e-4)


@pytest.mark.parametrize("g", [-1.5, -0.5])
def test_mollified_against_tensor_quadrature(g, rng):
    eta = 0.05
    p = KernelParams(g, eta)
    for _ in range(5):
        d = rng.standard_normal(3)
        x = d / np.linalg.norm(d) * eta * rng.uniform(3, 20)
        ref_b = ball_average(lambda y: kernels.eval_b(g, y), x, eta)
        ref_a = ball_average(lambda y: kernels.eval_a(g, y), x, eta)
        got_b = kernels.eval_b_mollified(p, x)
        got_a = kernels.eval_a_mollified(p, x)
        # the node set is exact to second order, so the gap is O((eta/|x|)^2)
        rel = (eta / np.linalg.norm(x)) ** 2
        assert np.linalg.norm(got_b - ref_b) <= 0.2 * rel * np.linalg.norm(ref_b)
        assert np.linalg.norm(got_a - ref_a) <= 0.2 * rel * np.linalg.norm(ref_a)


@pytest.mark.parametrize("g", [-1.5, -0.5])
def test_mollification_error_bounds(g, rng):
    d = rng.standard_normal((50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * rng.uniform(0.5, 5.0, (50, 1))
    r = np.linalg.norm(x, axis=1)
    for eta in (1e-3, 1e-2, 1e-1):
        p = KernelParams(g, eta)
        eb = np.linalg.norm(kernels.eval_b_mollified(p, x) - kernels.eval_b(g, x), axis=1)
        ea = np.linalg.norm(kernels.eval_a_mollified(p, x) - kernels.eval_a(g, x), axis=(1, 2))
        assert np.max(eb / (np.minimum(eta, r) * r ** g)) < 10
        assert np.max(ea / (eta ** 2 * (eta + r) ** g)) < 10


def test_mollification_converges_and_slope():
    x = np.array([0.3, -0.4, 1.2])
    errs = [np.linalg.norm(kernels.eval_a_mollified(KernelParams(-0.5, e), x) - kernels.eval_a(-0.5, x))
            for e in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert mollification_slope() >= 1.9


@pytest.mark.parametrize("cut", [4.0, 12.0])
def test_far_field_expansion_accuracy(cut, rng):
    g, eta = -0.5, 0.05
    exact = KernelParams(g, eta)
    far = KernelParams(g, eta, far_cutoff=cut)
    d = rng.standard_normal((2000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * eta * rng.uniform(cut * 1.01, 60, (2000, 1))
    for i, j in ((0, 0), (1, 1)):
        e = kernels._mollified(exact, x)[i]
        f = kernels._mollified(far, x)[i]
        scale = np.linalg.norm(e.reshape(len(x), -1), axis=1)
        err = np.linalg.norm((e - f).reshape(len(x), -1), axis=1)
        assert np.max(err / scale) < 5.0 / cut ** 4
    # below the cutoff both paths are identical
    y = d[:10] * eta * 0.9 * cut
    np.testing.assert_array_equal(kernels.eval_a_mollified(exact, y), kernels.eval_a_mollified(far, y))


# -- fields ------------------------------------------------------------------

def test_field_examples():
    p = KernelParams(-1.0, 1e-3)
    np.testing.assert_allclose(kernels.field_b(p, np.zeros((1, 3)), [1, 0, 0]), [-2, 0, 0], atol=1e-5)
    two = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    np.testing.assert_allclose(kernels.field_b(p, two, [1, 0, 0]), [-1, 0, 0], atol=1e-5)
    np.testing.assert_allclose(kernels.field_a(p, np.zeros((1, 3)), [2, 0, 0]), np.diag([0, 2, 2]), atol=1e-5)
    far = np.array([1e6, 0, 0])
    assert np.linalg.norm(kernels.field_b(p, two, far)) == pytest.approx(2.0, rel=1e-6)


def test_field_self_term_vanishes():
    p = KernelParams(-1.3, 0.01)
    cloud = np.array([[0.5, 0.1, 0.0]])
    assert not np.any(kernels.field_b(p, cloud, cloud[0]))


def test_field_isotropic_for_symmetric_cloud(rng):
    p = KernelParams(-0.5, 0.01)
    X = rng.standard_normal((300, 3))
    X = np.concatenate([X, -X])
    A = kernels.field_a(p, X, np.zeros(3))
    np.testing.assert_allclose(np.linalg.eigvalsh(A), np.trace(A) / 3, rtol=0.15)
    np.testing.assert_allclose(kernels.field_b(p, X, np.zeros(3)), 0, atol=1e-13)


def test_field_trace_oracle(rng):
    g, eta = -0.8, 0.05
    p = KernelParams(g, eta)
    X = rng.standard_normal((40, 3))
    v = rng.standard_normal((7, 3))
    u = np.asarray(kernels.ball_nodes(64)) * eta
    d = v[:, None, None, :] - X[None, :, None, :] - u[None, None, :, :]
    oracle = 2 * np.mean(np.linalg.norm(d, axis=-1) ** (g + 2), axis=(1, 2))
    A = kernels.field_a(p, X, v)
    np.testing.assert_allclose(np.trace(A, axis1=1, axis2=2), oracle, rtol=1e-10)
    assert np.all(np.linalg.eigvalsh(A) >= -1e-12)


def test_self_fields_match_cross_fields(rng):
    p = KernelParams(-0.5, 0.05, far_cutoff=12.0)
    X = rng.standard_normal((150, 3))
    bs, as_ = kernels.self_fields(p, X)
    bc, ac = kernels.fields_at(p, X, X)
    np.testing.assert_allclose(bs, bc, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(as_, ac, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("cut", [math.inf, 12.0])
def test_sequential_and_parallel_assembly_bitwise(cut, rng):
    p = KernelParams(-1.1, 0.03, far_cutoff=cut)
    X = rng.standard_normal((257, 3))
    bs, as_ = kernels.self_fields(p, X, parallel=False)
    bp, ap = kernels.self_fields(p, X, parallel=True)
    np.testing.assert_array_equal(bs, bp)
    np.testing.assert_array_equal(as_, ap)


def test_pairwise_drift_cancels(rng):
    p = KernelParams(-1.5, 1e-3)
    X = rng.standard_normal((200, 3))
    B, _ = kernels.self_fields(p, X)
    assert np.abs(B.sum(axis=0)).max() < 1e-12


# -- exponents ---------------------------------------------------------------

def test_theoretical_exponents():
    r = kernels.theoretical_exponents(-1, 8)
    assert (r.q_gamma, r.p1, r.alpha) == (1.0, 1.5, 0.0)
    assert r.p2 == pytest.approx(27 / 11)
    assert kernels.theoretical_exponents(-0.5, 8).alpha == pytest.approx(1 / 12)
    assert kernels.theoretical_exponents(-0.5, 1e12).alpha == pytest.approx(1 / 3, rel=1e-9)
    bad = kernels.theoretical_exponents(-1.5, 2.0)
    assert not bad.p2_defined and math.isnan(bad.p2)


@given(gammas, st.floats(0.01, 1e4))
def test_exponent_ordering(g, extra):
    q_gamma = g * g / (2 + g)
    r = kernels.theoretical_exponents(g, q_gamma + extra)
    assert 1 < r.p1 < r.p2 < 3
