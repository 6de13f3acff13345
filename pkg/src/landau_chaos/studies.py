"""Experiment drivers: rate, dissipation, trigger and coupled studies, and the verification suite.

Each study takes a dataclass config and returns a report object that can be
written to CSV/JSON. Runs are seeded per (study seed, N, replicate), so any
single replicate can be reproduced in isolation.
"""

from __future__ import annotations

import csv
from functools import reduce
import json
import math
from math import gcd
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, kernels
from .coupling import CoupledStepInfo, step_coupled_pair, symmetrized_coupling
from .errors import ConfigError
from .metrics import knn_entropy, w2sq_transport, weighted_fisher_kde
from .particles import (Ensemble, InitSpec, NoiseSource, SimConfig, init_ensemble, make_rng,
                        simulate)
from .perturbation import AnchorSet, select_anchors, step_perturbed

DEFAULT_FAR_CUTOFF = 12.0
REFERENCE_SEED_OFFSET = 1_000_003
COMPANION_SEED_OFFSET = 2_000_003


def _seed(base, n, rep):
    return int(base) * 1_000_000 + int(n) * 1_000 + int(rep)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


@dataclass
class RunManifest:
    """Enough to rerun a study bitwise at one thread."""

    study: str
    config: dict
    seed: int
    version: str = __version__
    wall_time: float = 0.0
    python: str = field(default_factory=platform.python_version)
    numpy: str = field(default_factory=lambda: np.__version__)

    def to_json(self):
        return json.dumps(_jsonable(asdict(self)), indent=2)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _slope(ns, values):
    if len(ns) < 2:
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def _strictly_decreasing(v):
    return all(b < a for a, b in zip(v, v[1:]))


# ---------------------------------------------------------------------------
# rate study

@dataclass(frozen=True)
class RateConfig:
    """W2 distance to a pooled reference as N grows.

    The mollification radius at size N is ``N ** -eta_exponent`` and must
    stay below ``N ** (-1/3)``. The reference pools ``ref_runs`` runs of
    ``ref_n`` particles.
    """

    gamma: float = -0.5
    n_list: tuple = (64, 128, 256, 512)
    seeds: int = 32
    t_end: float = 0.5
    dt: float = 1e-3
    init: InitSpec = field(default_factory=InitSpec)
    ref_runs: int = 8
    ref_n: int = 512
    eta_exponent: float = 0.5
    far_cutoff: float = DEFAULT_FAR_CUTOFF
    seed: int = 0
    self_distance: bool = False

    def __post_init__(self):
        if not -1.0 < self.gamma < 0.0:
            raise ConfigError("the rate study needs gamma in (-1, 0)")
        ns = list(self.n_list)
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("n_list must be strictly increasing")
        if self.seeds < 8:
            raise ConfigError("the rate study needs at least 8 seeds per N")
        if self.ref_runs * self.ref_n < 8 * max(ns):
            raise ConfigError(f"reference under-resolved: {self.ref_runs}x{self.ref_n} < 8 x {max(ns)}")
        if self.ref_runs < 8:
            raise ConfigError("the reference must pool at least 8 runs")
        for n in ns + [self.ref_n]:
            if not self.eta(n) < n ** (-1.0 / 3.0):
                raise ConfigError(f"eta_N = {self.eta(n):.4g} is not below N^(-1/3) at N = {n}")

    def eta(self, n):
        return float(n) ** (-self.eta_exponent)

    def kernel(self, n):
        return kernels.KernelParams(self.gamma, self.eta(n), far_cutoff=self.far_cutoff)

    def sim(self, n, seed):
        return SimConfig(n=n, dt=self.dt, t_end=self.t_end, kernel=self.kernel(n), seed=seed,
                         init=self.init, record_every=max(1, int(round(self.t_end / self.dt))))


@dataclass
class RateReport:
    records: list
    rows: list
    slope: float
    reference: dict
    self_records: list = field(default_factory=list)
    self_slope: float = math.nan

    @property
    def medians(self):
        return [r["median_w2sq"] for r in self.records]

    @property
    def strictly_decreasing(self):
        return _strictly_decreasing(self.medians)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "seed", "w2sq", "t_wall"])
            for r in self.rows:
                w.writerow([r["N"], r["seed"], repr(r["w2sq"]), f"{r['t_wall']:.3f}"])

    def to_dict(self):
        return _jsonable({"records": self.records, "slope": self.slope, "reference": self.reference,
                          "self_records": self.self_records, "self_slope": self.self_slope})


def build_reference(cfg):
    """Pooled final clouds of ``cfg.ref_runs`` independent runs of size ``cfg.ref_n``."""
    clouds = []
    for r in range(cfg.ref_runs):
        sim = cfg.sim(cfg.ref_n, _seed(cfg.seed, cfg.ref_n, r) + REFERENCE_SEED_OFFSET)
        clouds.append(simulate(sim).snapshots[-1])
    return np.concatenate(clouds)


def _final(cfg, n, seed):
    return simulate(cfg.sim(n, seed)).snapshots[-1]


def run_rate_study(cfg, reference=None, log=None):
    """Median ``W2^2(mu^N_T, reference)`` over seeds for each N, with the log-log slope."""
    t0 = time.perf_counter()
    ref = build_reference(cfg) if reference is None else kernels.as_cloud(reference)
    meta = {"n_ref": int(ref.shape[0]), "runs": cfg.ref_runs, "n_per_run": cfg.ref_n,
            "eta_ref": cfg.eta(cfg.ref_n), "build_seconds": time.perf_counter() - t0}
    rows, records = [], []
    for n in cfg.n_list:
        vals = []
        for rep in range(cfg.seeds):
            s = _seed(cfg.seed, n, rep)
            t1 = time.perf_counter()
            w = w2sq_transport(_final(cfg, n, s), ref)
            rows.append({"N": n, "seed": s, "w2sq": w, "t_wall": time.perf_counter() - t1})
            vals.append(w)
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        records.append({"N": n, "seeds": cfg.seeds, "median_w2sq": float(med), "iqr": float(q3 - q1),
                        "eta": cfg.eta(n)})
        if log:
            log(f"N={n} median W2^2={med:.5g} iqr={q3 - q1:.3g}")
    rep = RateReport(records=records, rows=rows, slope=_slope(cfg.n_list, [r["median_w2sq"] for r in records]),
                     reference=meta)
    if cfg.self_distance:
        for n in cfg.n_list:
            vals = []
            for r in range(cfg.seeds):
                a = _final(cfg, n, _seed(cfg.seed, n, r))
                b = _final(cfg, 2 * n, _seed(cfg.seed, 2 * n, r) + COMPANION_SEED_OFFSET)
                vals.append(w2sq_transport(a, b))
            rep.self_records.append({"N": n, "median_w2sq": float(np.median(vals))})
        rep.self_slope = _slope(cfg.n_list, [r["median_w2sq"] for r in rep.self_records])
    return rep


# ---------------------------------------------------------------------------
# dissipation study

@dataclass(frozen=True)
class DissipationConfig:
    gamma: float = -0.5
    n: int = 1024
    seeds: int = 16
    times: tuple = (0.0, 0.25, 0.5)
    dt: float = 1e-3
    eta: float | None = None
    init: InitSpec = field(default_factory=lambda: InitSpec.gaussian((4.0, 0.25, 0.25)))
    far_cutoff: float = DEFAULT_FAR_CUTOFF
    k: int = 4
    fisher_gamma: float | None = None
    bandwidth: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 512 or self.seeds < 16:
            raise ConfigError("the dissipation study needs n >= 512 and at least 16 seeds")
        ts = list(self.times)
        if ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("times must start at 0 and increase")
        for t in ts:
            k = t / self.dt
            if abs(k - round(k)) > 1e-6:
                raise ConfigError("checkpoint times must be multiples of dt")


def run_dissipation_study(cfg, log=None):
    """Pooled entropy, Fisher information and second moment at the checkpoint times."""
    steps = [int(round(t / cfg.dt)) for t in cfg.times]
    every = reduce(gcd, [s for s in steps if s > 0]) if steps[-1] > 0 else 1
    eta = cfg.n ** -0.5 if cfg.eta is None else cfg.eta
    kern = kernels.KernelParams(cfg.gamma, eta, far_cutoff=cfg.far_cutoff)
    pooled = [[] for _ in steps]
    for rep in range(cfg.seeds):
        sim = SimConfig(n=cfg.n, dt=cfg.dt, t_end=cfg.times[-1], kernel=kern, seed=_seed(cfg.seed, cfg.n, rep),
                        init=cfg.init, record_every=every)
        tr = simulate(sim)
        for k, st in enumerate(steps):
            pooled[k].append(tr.snapshots[st // every])
        if log:
            log(f"seed {rep} done")
    fg = cfg.gamma if cfg.fisher_gamma is None else cfg.fisher_gamma
    rows = []
    for t, clouds in zip(cfg.times, pooled):
        X = np.concatenate(clouds)
        H = knn_entropy(X, cfg.k)
        I = weighted_fisher_kde(X, fg, cfg.bandwidth)
        rows.append({"t": float(t), "H_hat": H.value, "H_stderr": H.stderr, "I_hat": I.value,
                     "m2": float(np.mean(np.sum(X * X, axis=1)))})
    return rows


def write_dissipation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "H_hat", "H_stderr", "I_hat", "m2"])
        for r in rows:
            w.writerow([r["t"], repr(r["H_hat"]), repr(r["H_stderr"]), repr(r["I_hat"]), repr(r["m2"])])


# ---------------------------------------------------------------------------
# trigger study

@dataclass(frozen=True)
class TriggerConfig:
    """Fraction of steps on which the extra noise is active.

    Anchors come from ``anchor_samples`` draws of the initial law unless an
    :class:`AnchorSet` is supplied to :func:`run_trigger_study`. With
    ``reanchor`` the anchors are re-selected from the current ensemble at
    every window of length ``tau0``.
    """

    gamma: float = -0.5
    n_list: tuple = (64, 128, 256, 512)
    seeds: int = 8
    t_end: float = 0.5
    dt: float = 1e-3
    eta: float | None = None
    init: InitSpec = field(default_factory=InitSpec)
    anchor_init: InitSpec | None = None
    anchor_samples: int = 100_000
    delta: float = 0.01
    ell: int = 4
    reanchor: bool = False
    tau0: float = math.inf
    far_cutoff: float = DEFAULT_FAR_CUTOFF
    seed: int = 0

    def __post_init__(self):
        if self.reanchor and not math.isfinite(self.tau0):
            raise ConfigError("reanchoring needs a finite tau0")
        if self.seeds < 1 or not self.n_list:
            raise ConfigError("the trigger study needs at least one seed and one N")


@dataclass
class TriggerReport:
    anchors: AnchorSet
    records: list
    rows: list

    @property
    def medians(self):
        return [r["median_frequency"] for r in self.records]

    def to_dict(self):
        return _jsonable({"anchors": json.loads(self.anchors.to_json()), "records": self.records})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "seed", "frequency", "first_c", "mean_c"])
            for r in self.rows:
                w.writerow([r["N"], r["seed"], repr(r["frequency"]), repr(r["first_c"]), repr(r["mean_c"])])


def trigger_anchors(cfg):
    spec = cfg.anchor_init or cfg.init
    X = spec.sample(cfg.anchor_samples, make_rng(cfg.seed, 7, cfg.anchor_samples))
    return select_anchors(X, cfg.delta, cfg.ell, tau0=cfg.tau0 if cfg.reanchor else math.inf)


def run_perturbed(ens, kernel, anchors, dt, n_steps, seed, reanchor=None):
    """Perturbed trajectory; returns the final ensemble and the value of ``c`` before every step."""
    noise = NoiseSource(seed)
    noise2 = NoiseSource(seed, stream=2)
    cs = []
    schedule = [anchors]
    for k in range(n_steps):
        if reanchor is not None:
            l = int(math.floor(ens.time / anchors.tau0 + 1e-12))
            while len(schedule) <= l:
                schedule.append(select_anchors(ens.velocities, reanchor[0], reanchor[1], tau0=anchors.tau0))
        ens, c = step_perturbed(ens, kernel, schedule if reanchor is not None else anchors, None, dt,
                                noise, noise2, step=k + 1, return_c=True)
        cs.append(c)
    return ens, np.asarray(cs)


def run_trigger_study(cfg, anchors=None, log=None):
    aset = trigger_anchors(cfg) if anchors is None else anchors
    n_steps = int(round(cfg.t_end / cfg.dt))
    rows, records = [], []
    for n in cfg.n_list:
        eta = n ** -0.5 if cfg.eta is None else cfg.eta
        kern = kernels.KernelParams(cfg.gamma, eta, far_cutoff=cfg.far_cutoff)
        freqs = []
        for rep in range(cfg.seeds):
            s = _seed(cfg.seed, n, rep)
            ens = init_ensemble(cfg.init, n, s)
            _, cs = run_perturbed(ens, kern, aset, cfg.dt, n_steps, s,
                                  reanchor=(cfg.delta, cfg.ell) if cfg.reanchor else None)
            f = float(np.mean(cs > 0)) if cs.size else 0.0
            rows.append({"N": n, "seed": s, "frequency": f, "first_c": float(cs[0]) if cs.size else math.nan,
                         "mean_c": float(cs.mean()) if cs.size else math.nan})
            freqs.append(f)
        records.append({"N": n, "median_frequency": float(np.median(freqs)), "seeds": cfg.seeds})
        if log:
            log(f"N={n} median trigger frequency {np.median(freqs):.4f}")
    return TriggerReport(anchors=aset, records=records, rows=rows)


# ---------------------------------------------------------------------------
# coupled study

@dataclass(frozen=True)
class CoupledConfig:
    """A particle system coupled to i.i.d. companions driven by a reference cloud."""

    gamma: float = -0.5
    n: int = 128
    t_end: float = 0.25
    dt: float = 1e-3
    eta: float | None = None
    blob_delta: float = 0.2
    blob_eps: float | None = None
    init: InitSpec = field(default_factory=InitSpec)
    ref_runs: int = 8
    ref_record_every: int = 10
    far_cutoff: float = DEFAULT_FAR_CUTOFF
    seed: int = 0

    @property
    def eta_value(self):
        return self.n ** -0.5 if self.eta is None else self.eta

    @property
    def eps_value(self):
        return self.n ** (-(1.0 - self.blob_delta) / 3.0) if self.blob_eps is None else self.blob_eps


def run_coupled_study(cfg, log=None):
    """Mean squared pair distance ``N^-1 sum |V_i - W_i|^2`` over time, with a fitted log-growth rate."""
    kern = kernels.KernelParams(cfg.gamma, cfg.eta_value, far_cutoff=cfg.far_cutoff)
    n_steps = int(round(cfg.t_end / cfg.dt))
    n_ref = 8 * cfg.n
    per = n_ref // cfg.ref_runs
    ref_kern = kernels.KernelParams(cfg.gamma, per ** -0.5, far_cutoff=cfg.far_cutoff)
    ref_traj = [simulate(SimConfig(n=per, dt=cfg.dt, t_end=cfg.t_end, kernel=ref_kern,
                                   seed=_seed(cfg.seed, per, r) + REFERENCE_SEED_OFFSET, init=cfg.init,
                                   record_every=cfg.ref_record_every)) for r in range(cfg.ref_runs)]
    ref_times = np.asarray(ref_traj[0].times)
    ref_snaps = [np.concatenate([t.snapshots[k] for t in ref_traj]) for k in range(len(ref_times))]

    A = init_ensemble(cfg.init, cfg.n, _seed(cfg.seed, cfg.n, 0))
    W0 = cfg.init.sample(cfg.n, make_rng(_seed(cfg.seed, cfg.n, 0) + COMPANION_SEED_OFFSET, 0))
    paired = symmetrized_coupling(A.velocities, W0, seed=_seed(cfg.seed, cfg.n, 0))
    B = Ensemble(paired.Y_paired, 0.0, A.labels.copy())
    noise = NoiseSource(_seed(cfg.seed, cfg.n, 0))
    info = CoupledStepInfo()
    ts, ds = [0.0], [float(np.mean(np.sum((A.velocities - B.velocities) ** 2, axis=1)))]
    for k in range(n_steps):
        ref = ref_snaps[int(np.argmin(np.abs(ref_times - A.time)))]
        A, B = step_coupled_pair(A, B, ref, kern, cfg.eps_value, cfg.dt, noise, step=k + 1, info=info)
        ts.append((k + 1) * cfg.dt)
        ds.append(float(np.mean(np.sum((A.velocities - B.velocities) ** 2, axis=1))))
    ts = np.asarray(ts)
    ds = np.asarray(ds)
    rate = float(np.polyfit(ts, np.log(ds), 1)[0]) if np.all(ds > 0) and len(ts) > 1 else math.nan
    if log:
        log(f"pair distance {ds[0]:.4g} -> {ds[-1]:.4g}, log-growth rate {rate:.3g}")
    return {"t": ts.tolist(), "pair_sq_distance": ds.tolist(), "log_growth_rate": rate,
            "initial_w2sq": paired.cost_sq / cfg.n, "fallbacks": info.fallbacks,
            "reference": {"n_ref": n_ref, "runs": cfg.ref_runs, "snapshots": len(ref_times)},
            "blob_eps": cfg.eps_value, "eta": cfg.eta_value}
