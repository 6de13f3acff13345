"""Euler-Maruyama integration of the mollified Landau particle system.

One step of the scheme reads ::

    V_i <- V_i + b(mu, V_i) dt + a(mu, V_i)^{1/2} sqrt(dt) xi_i

with ``mu`` the ball-mollified empirical measure of the pre-step snapshot.
Fields are assembled in label order, so a run only depends on the multiset
of (label, velocity) pairs and not on how the particles are stored.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from . import kernels
from .errors import ConfigError, InvalidArgument, NumericalBlowup
from .matrix3 import _sqrt3

INIT_STREAM = 0
NOISE_STREAM = 1


@dataclass
class Ensemble:
    """Particle velocities at a common time.

    ``labels`` name the particles for noise routing and output; they default
    to ``0..n-1`` and must be distinct non-negative integers.
    """

    velocities: np.ndarray
    time: float = 0.0
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 1:
            raise InvalidArgument(f"velocities must have shape (n, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("velocities must be finite")
        self.velocities = v
        if self.labels is None:
            self.labels = np.arange(v.shape[0])
        else:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (v.shape[0],) or np.any(lab < 0) or np.unique(lab).size != lab.size:
                raise InvalidArgument("labels must be distinct non-negative integers, one per particle")
            self.labels = lab
        self.time = float(self.time)

    @property
    def n(self):
        return self.velocities.shape[0]

    def copy(self):
        return Ensemble(self.velocities.copy(), self.time, self.labels.copy())


# ---------------------------------------------------------------------------
# initial data

FAMILIES = ("isotropic-gaussian", "gaussian-mixture", "uniform-ball")


@dataclass(frozen=True)
class InitSpec:
    """Initial density family and its parameters.

    * ``isotropic-gaussian``: ``N(0, sigma^2 I)``.
    * ``gaussian-mixture``: ``weights``, ``means`` (k, 3), ``covs`` (k, 3, 3).
    * ``uniform-ball``: uniform on ``B(0, radius)``.
    """

    family: str = "isotropic-gaussian"
    sigma: float = 1.0
    radius: float = 1.0
    weights: tuple = ()
    means: tuple = ()
    covs: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown init family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "isotropic-gaussian" and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.family == "uniform-ball" and not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.family == "gaussian-mixture":
            w = np.asarray(self.weights, dtype=float)
            m = np.asarray(self.means, dtype=float)
            c = np.asarray(self.covs, dtype=float)
            k = w.size
            if k == 0 or m.shape != (k, 3) or c.shape != (k, 3, 3):
                raise ConfigError("mixture needs k weights, (k, 3) means and (k, 3, 3) covariances")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ConfigError("mixture weights must be non-negative and sum to 1")
            for C in c:
                if not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() <= 0:
                    raise ConfigError("mixture covariances must be symmetric positive definite")

    @classmethod
    def gaussian(cls, cov):
        """Single centred Gaussian with covariance ``cov`` (a 3-vector means a diagonal)."""
        cov = np.asarray(cov, dtype=float)
        if cov.shape == (3,):
            cov = np.diag(cov)
        return cls(family="gaussian-mixture", weights=(1.0,), means=((0.0, 0.0, 0.0),),
                   covs=(tuple(map(tuple, cov)),))

    def second_moment(self):
        if self.family == "isotropic-gaussian":
            return 3.0 * self.sigma ** 2
        if self.family == "uniform-ball":
            return 0.6 * self.radius ** 2
        w = np.asarray(self.weights)
        m = np.asarray(self.means)
        c = np.asarray(self.covs)
        return float(np.sum(w * (np.einsum("kii->k", c) + np.einsum("ki,ki->k", m, m))))

    def sample(self, n, rng):
        if self.family == "isotropic-gaussian":
            return self.sigma * rng.standard_normal((n, 3))
        if self.family == "uniform-ball":
            d = rng.standard_normal((n, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return self.radius * np.cbrt(rng.random(n))[:, None] * d
        w = np.asarray(self.weights)
        comp = rng.choice(w.size, size=n, p=w)
        z = rng.standard_normal((n, 3))
        L = np.linalg.cholesky(np.asarray(self.covs))
        return np.asarray(self.means)[comp] + np.einsum("nij,nj->ni", L[comp], z)


def make_rng(seed, *keys):
    """Counter-based generator keyed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def init_ensemble(spec, n, seed):
    """``n`` i.i.d. draws from ``spec``; identical for identical seeds."""
    if int(n) != n or n < 1:
        raise InvalidArgument(f"n must be a positive integer, got {n}")
    return Ensemble(spec.sample(int(n), make_rng(seed, INIT_STREAM)), 0.0)


# ---------------------------------------------------------------------------
# noise

class NoiseSource:
    """Independent standard normal 3-vectors, one stream per particle label.

    Label ``k`` draws from a Philox generator seeded with
    ``(seed, stream, k)``, so the values a particle sees depend only on its
    label and on how many steps it has taken.
    """

    def __init__(self, seed, stream=NOISE_STREAM, block=128):
        self.seed = int(seed)
        self.stream = int(stream)
        self.block = int(block)
        self._gens = {}
        self._buf = np.empty((0, self.block, 3))
        self._ptr = np.empty(0, dtype=np.int64)
        self._row = {}

    def _rows(self, labels):
        rows = np.empty(labels.size, dtype=np.int64)
        fresh = []
        for k, lab in enumerate(labels.tolist()):
            r = self._row.get(lab)
            if r is None:
                r = len(self._row)
                self._row[lab] = r
                self._gens[lab] = make_rng(self.seed, self.stream, lab)
                fresh.append(lab)
            rows[k] = r
        if fresh:
            extra = np.empty((len(fresh), self.block, 3))
            for j, lab in enumerate(fresh):
                extra[j] = self._gens[lab].standard_normal((self.block, 3))
            self._buf = np.concatenate([self._buf, extra])
            self._ptr = np.concatenate([self._ptr, np.zeros(len(fresh), dtype=np.int64)])
        return rows

    def draw(self, labels):
        """One normal 3-vector per label, advancing each label's stream."""
        labels = np.asarray(labels, dtype=np.int64)
        if np.unique(labels).size != labels.size:
            raise InvalidArgument("labels within one draw must be distinct")
        rows = self._rows(labels)
        spent = rows[self._ptr[rows] >= self.block]
        if spent.size:
            inv = {r: lab for lab, r in self._row.items()}
            for r in spent.tolist():
                self._buf[r] = self._gens[inv[r]].standard_normal((self.block, 3))
                self._ptr[r] = 0
        out = self._buf[rows, self._ptr[rows]]
        self._ptr[rows] += 1
        return out


class ZeroNoise:
    """Noise source returning zeros, for deterministic drift-only steps."""

    def draw(self, labels):
        return np.zeros((len(labels), 3))


# ---------------------------------------------------------------------------
# stepping

@njit(cache=True)
def _em_update(V, B, A, xi, dt, out):
    sq = math.sqrt(dt)
    M = np.empty((3, 3))
    S = np.empty((3, 3))
    bad = -1
    for i in range(V.shape[0]):
        M[0, 0] = A[i, 0]
        M[0, 1] = A[i, 1]
        M[1, 0] = A[i, 1]
        M[0, 2] = A[i, 2]
        M[2, 0] = A[i, 2]
        M[1, 1] = A[i, 3]
        M[1, 2] = A[i, 4]
        M[2, 1] = A[i, 4]
        M[2, 2] = A[i, 5]
        _sqrt3(M, S)
        for r in range(3):
            inc = S[r, 0] * xi[i, 0] + S[r, 1] * xi[i, 1] + S[r, 2] * xi[i, 2]
            out[i, r] = V[i, r] + B[i, r] * dt + sq * inc
            if bad < 0 and not math.isfinite(out[i, r]):
                bad = i
    return bad


def _check_dt(dt):
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidArgument(f"dt must be positive, got {dt}")


def sorted_view(ensemble):
    """Permutation putting the ensemble in label order, and the sorted velocities."""
    order = np.argsort(ensemble.labels, kind="stable")
    return order, np.ascontiguousarray(ensemble.velocities[order])


def em_increment(V, kernel, dt, xi):
    """New positions for label-sorted velocities ``V`` and noise ``xi``.

    Returns ``(new, bad)`` with ``bad`` the first sorted row that became
    non-finite, or ``-1``.
    """
    B, A = kernels.self_fields(kernel, V)
    out = np.empty_like(V)
    bad = _em_update(V, B, A, np.ascontiguousarray(xi, dtype=float), float(dt), out)
    return out, int(bad)


def step_em(ensemble, kernel, dt, noise, step=None):
    """Advance the particle system by one Euler-Maruyama step.

    Raises
    ------
    NumericalBlowup
        If a particle velocity becomes non-finite. ``index`` is the
        particle's position in ``ensemble.velocities``.
    """
    _check_dt(dt)
    order, V = sorted_view(ensemble)
    xi = noise.draw(ensemble.labels[order])
    new, bad = em_increment(V, kernel, dt, xi)
    if bad >= 0:
        raise NumericalBlowup(order[bad], step)
    out = np.empty_like(new)
    out[order] = new
    return Ensemble(out, ensemble.time + dt, ensemble.labels.copy())


# ---------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class SimConfig:
    """One particle run.

    ``t_end`` is rounded to a whole number of steps; ``t_end = 0`` returns the
    initial ensemble alone.
    """

    n: int
    dt: float
    t_end: float
    kernel: kernels.KernelParams
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    record_every: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise ConfigError(f"t_end must be non-negative, got {self.t_end}")
        if self.t_end > 0 and self.dt > self.t_end * (1 + 1e-12):
            raise ConfigError("dt exceeds t_end")
        if not 0.0 < self.kernel.eta < 1.0:
            raise ConfigError(f"kernel eta must lie in (0, 1), got {self.kernel.eta}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every must be a positive integer")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError("t_end must be an integer multiple of dt")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    def to_dict(self):
        d = asdict(self)
        d["kernel"]["far_cutoff"] = _json_float(self.kernel.far_cutoff)
        return d


def _json_float(x):
    return None if not math.isfinite(x) else float(x)


@dataclass
class Trajectory:
    """Recorded snapshots of one run."""

    times: list
    snapshots: list
    labels: np.ndarray
    config: SimConfig | None = None

    def final(self):
        return Ensemble(self.snapshots[-1], self.times[-1], self.labels)

    def moment_series(self, q):
        return [float(np.mean(np.sum(s * s, axis=1) ** (0.5 * q))) for s in self.snapshots]

    def momentum_series(self):
        return [s.mean(axis=0).tolist() for s in self.snapshots]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "i", "vx", "vy", "vz"])
            for t, s in zip(self.times, self.snapshots):
                for lab, v in zip(self.labels.tolist(), s):
                    w.writerow([repr(float(t)), lab, repr(float(v[0])), repr(float(v[1])), repr(float(v[2]))])

    def summary(self):
        out = {
            "t": [float(t) for t in self.times],
            "m2": self.moment_series(2),
            "m4": self.moment_series(4),
            "mean_velocity": self.momentum_series(),
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def write_summary(self, path, metrics=None):
        s = self.summary()
        if metrics:
            s["metrics"] = metrics
        with open(path, "w") as fh:
            json.dump(s, fh, indent=2)


def simulate(config, noise=None, ensemble=None, stepper=None):
    """Run ``config`` from its initial ensemble (or a supplied one).

    Snapshots are kept every ``record_every`` steps and at the final step.
    ``stepper(ensemble, step)`` can replace the Euler-Maruyama update.
    """
    ens = init_ensemble(config.init, config.n, config.seed) if ensemble is None else ensemble
    if noise is None:
        noise = NoiseSource(config.seed)
    times, snaps = [ens.time], [ens.velocities.copy()]
    n_steps = config.n_steps
    t0 = ens.time
    for k in range(1, n_steps + 1):
        if stepper is None:
            ens = step_em(ens, config.kernel, config.dt, noise, step=k)
        else:
            ens = stepper(ens, k)
        ens = replace(ens, time=t0 + k * config.dt)
        if k % config.record_every == 0 or k == n_steps:
            times.append(ens.time)
            snaps.append(ens.velocities.copy())
    return Trajectory(times, snaps, ens.labels.copy(), config)


def moments(ensemble, q):
    """Empirical moment ``N^{-1} sum |V_i|^q``."""
    if not q >= 0:
        raise InvalidArgument(f"q must be non-negative, got {q}")
    v = kernels.as_cloud(ensemble)
    if q == 0:
        return 1.0
    return float(np.mean(np.einsum("ij,ij->i", v, v) ** (0.5 * q)))
