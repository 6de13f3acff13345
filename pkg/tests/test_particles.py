import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from landau_chaos import kernels, particles
from landau_chaos.errors import ConfigError, InvalidArgument, NumericalBlowup
from landau_chaos.kernels import KernelParams
from landau_chaos.particles import (Ensemble, InitSpec, NoiseSource, SimConfig, ZeroNoise,
                                    init_ensemble, moments, simulate, step_em)


class InfNoise:
    def __init__(self, row):
        self.row = row

    def draw(self, labels):
        xi = np.zeros((len(labels), 3))
        xi[self.row] = np.inf
        return xi


def test_init_examples():
    ens = init_ensemble(InitSpec(), 10_000, 3)
    assert np.all(np.abs(ens.velocities.mean(axis=0)) < 4 / np.sqrt(10_000))
    np.testing.assert_array_equal(ens.velocities, init_ensemble(InitSpec(), 10_000, 3).velocities)
    ball = init_ensemble(InitSpec(family="uniform-ball", radius=1.0), 5000, 0)
    assert np.linalg.norm(ball.velocities, axis=1).max() <= 1.0


def test_init_mixture_moment():
    spec = InitSpec(family="gaussian-mixture", weights=(0.3, 0.7), means=((1, 0, 0), (-1, 0, 0)),
                    covs=(np.eye(3).tolist(), (0.5 * np.eye(3)).tolist()))
    X = init_ensemble(spec, 200_000, 1).velocities
    assert moments(X, 2) == pytest.approx(spec.second_moment(), rel=0.01)
    g = InitSpec.gaussian((4.0, 0.25, 0.25))
    assert g.second_moment() == pytest.approx(4.5)


@pytest.mark.parametrize("kw", [dict(family="nope"), dict(sigma=-1.0), dict(family="uniform-ball", radius=0),
                                dict(family="gaussian-mixture", weights=(0.5,), means=((0, 0, 0),),
                                     covs=(np.eye(3).tolist(),))])
def test_init_rejects(kw):
    with pytest.raises(ConfigError):
        InitSpec(**kw)


def test_ensemble_validation():
    with pytest.raises(InvalidArgument):
        Ensemble(np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        Ensemble(np.array([[np.nan, 0, 0]]))
    with pytest.raises(InvalidArgument):
        Ensemble(np.zeros((2, 3)), labels=[1, 1])


def test_moments_examples():
    assert moments(np.array([[3.0, 4.0, 0.0]]), 2) == 25.0
    X = init_ensemble(InitSpec(), 100_000, 0).velocities
    assert moments(X, 0) == 1.0
    assert moments(X, 2) == pytest.approx(3.0, abs=0.1)


def test_noise_streams_depend_only_on_label():
    a = NoiseSource(5)
    b = NoiseSource(5)
    x = np.stack([a.draw([0, 1, 2]) for _ in range(300)])
    y = np.stack([b.draw([2, 0, 1]) for _ in range(300)])
    np.testing.assert_array_equal(x[:, [2, 0, 1]], y)
    assert not np.array_equal(x[:, 0], x[:, 1])
    z = x.reshape(-1, 3)
    assert abs(z.mean()) < 0.1 and abs(z.std() - 1) < 0.05


def test_drift_only_example():
    ens = Ensemble(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    new = step_em(ens, KernelParams(-1.0, 1e-3), 0.01, ZeroNoise())
    np.testing.assert_allclose(new.velocities[0], [0.99, 0, 0], atol=1e-6)
    np.testing.assert_allclose(new.velocities[1], [-0.99, 0, 0], atol=1e-6)
    assert new.time == pytest.approx(0.01)


def test_coincident_pair_diffusion():
    g, eta = -1.0, 0.1
    ens = Ensemble(np.zeros((2, 3)))
    B, A = kernels.self_fields(KernelParams(g, eta), ens)
    assert not np.any(B)
    tr = A[:, 0] + A[:, 3] + A[:, 5]
    expected = 6 * eta ** (g + 2) / (g + 5)
    np.testing.assert_allclose(tr, expected, rtol=5e-3)


def test_momentum_cancellation():
    ens = init_ensemble(InitSpec(), 128, 9)
    new = step_em(ens, KernelParams(-1.5, 1e-3), 1e-2, ZeroNoise())
    assert np.abs(new.velocities.sum(axis=0) - ens.velocities.sum(axis=0)).max() < 1e-12


def test_blowup_reports_index():
    ens = init_ensemble(InitSpec(), 8, 0)
    ens = Ensemble(ens.velocities, labels=[7, 6, 5, 4, 3, 2, 1, 0])
    with pytest.raises(NumericalBlowup) as e:
        step_em(ens, KernelParams(-0.5, 0.1), 1e-3, InfNoise(2), step=4)
    # sorted row 2 is label 2, stored at position 5
    assert e.value.index == 5 and e.value.step == 4


@given(st.permutations(list(range(12))))
def test_exchangeability(perm):
    perm = np.asarray(perm)
    kern = KernelParams(-0.7, 0.1)
    ens = init_ensemble(InitSpec(), 12, 4)
    shuffled = Ensemble(ens.velocities[perm], labels=ens.labels[perm])
    a, b = ens, shuffled
    na, nb = NoiseSource(1), NoiseSource(1)
    for _ in range(5):
        a = step_em(a, kern, 1e-3, na)
        b = step_em(b, kern, 1e-3, nb)
    np.testing.assert_array_equal(a.velocities[perm], b.velocities)


def test_sim_config_validation():
    k = KernelParams(-0.5, 0.01)
    with pytest.raises(ConfigError):
        SimConfig(n=10, dt=0.1, t_end=0.05, kernel=k)
    with pytest.raises(ConfigError):
        SimConfig(n=10, dt=0.01, t_end=0.1, kernel=KernelParams(-0.5, 0.0))
    with pytest.raises(ConfigError):
        SimConfig(n=10, dt=0.03, t_end=0.1, kernel=k)


def test_simulate_zero_time_and_determinism(tmp_path):
    k = KernelParams(-0.5, 0.05)
    tr = simulate(SimConfig(n=16, dt=0.01, t_end=0.0, kernel=k, seed=2))
    assert len(tr.snapshots) == 1 and tr.times == [0.0]
    cfg = SimConfig(n=32, dt=0.01, t_end=0.1, kernel=k, seed=2, record_every=3)
    a, b = simulate(cfg), simulate(cfg)
    assert a.times == pytest.approx([0, 0.03, 0.06, 0.09, 0.1])
    for x, y in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(x, y)
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "t,i,vx,vy,vz"
    a.write_summary(tmp_path / "s.json", metrics={"x": {"value": 1.0}})
    s = json.loads((tmp_path / "s.json").read_text())
    assert len(s["m2"]) == 5 and s["metrics"]["x"]["value"] == 1.0


def test_energy_identity_raw_kernel(rng):
    # 2 x.b(x) + 2 Tr a(x) = 0 for the raw kernel: mean energy drift is the Ito correction only
    g = -0.5
    x = rng.standard_normal((1000, 3))
    lhs = 2 * np.sum(x * kernels.eval_b(g, x), axis=1) + 2 * np.trace(kernels.eval_a(g, x), axis1=1, axis2=2)
    np.testing.assert_allclose(lhs, 0, atol=1e-12)


def test_energy_drift_small():
    k = KernelParams(-0.5, 1e-3, far_cutoff=12.0)
    drift = []
    for s in range(4):
        tr = simulate(SimConfig(n=128, dt=1e-3, t_end=0.1, kernel=k, seed=s, record_every=100))
        m2 = tr.moment_series(2)
        drift.append(m2[-1] / m2[0] - 1)
    assert abs(np.mean(drift)) < 0.05
