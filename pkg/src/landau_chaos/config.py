"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Vectors are comma
separated and lists of vectors are separated by ``;``. Every key must be
listed in :data:`KEYS`; anything else is a :class:`ConfigError`.
"""

from __future__ import annotations

import math

from .errors import ConfigError


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _vectors(s):
    return tuple(_floats(part) for part in s.split(";") if part.strip())


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


KEYS = {
    "n": (int, "particle count"),
    "dt": (float, "time step"),
    "t_end": (float, "final time"),
    "gamma": (float, "kernel exponent in (-2, 0)"),
    "eta": (_opt_float, "mollification radius; 'auto' means n^-1/2"),
    "seed": (int, "master seed"),
    "record_every": (int, "snapshot stride in steps"),
    "quad_nodes": (int, "ball quadrature nodes (even)"),
    "far_cutoff": (float, "far-field switch in units of eta; inf disables it"),
    "threads": (int, "worker threads for field assembly"),
    "init.family": (str, "isotropic-gaussian | gaussian-mixture | uniform-ball"),
    "init.sigma": (float, "isotropic Gaussian standard deviation"),
    "init.radius": (float, "uniform ball radius"),
    "init.cov": (_floats, "single Gaussian covariance: 3 diagonal entries or 9 entries"),
    "init.weights": (_floats, "mixture weights"),
    "init.means": (_vectors, "mixture means, ';' separated"),
    "init.covs": (_vectors, "mixture covariances (9 entries each), ';' separated"),
    "anchors.delta": (float, "greedy search pitch"),
    "anchors.ell": (int, "non-alignment multiplier (>= 4)"),
    "anchors.samples": (int, "initial-law samples used for anchor selection"),
    "anchors.reanchor": (_bool, "re-select anchors at each window"),
    "anchors.tau0": (float, "anchor window length"),
    "anchors.file": (str, "JSON anchor set to load instead of selecting"),
    "anchors.trials": (int, "ellipticity floor trials"),
    "metrics.k": (int, "kNN entropy neighbour index"),
    "metrics.fisher_gamma": (_opt_float, "weight exponent for the Fisher diagnostic"),
    "metrics.bandwidth": (float, "KDE bandwidth; 0 selects Silverman"),
    "metrics.blob_eps": (_opt_float, "blob radius for coupled runs; 'auto' means n^-(1-blob_delta)/3"),
    "metrics.blob_delta": (float, "exponent offset of the default blob radius"),
    "rate.n_list": (_ints, "particle counts"),
    "rate.seeds": (int, "replicates per N"),
    "rate.ref_runs": (int, "runs pooled into the reference"),
    "rate.ref_n": (int, "particles per reference run"),
    "rate.eta_exponent": (float, "eta_N = N^-eta_exponent"),
    "rate.self_distance": (_bool, "also measure W2^2(mu^N, mu^2N)"),
    "trigger.n_list": (_ints, "particle counts for the trigger study"),
    "trigger.seeds": (int, "replicates per N"),
    "dissipation.seeds": (int, "pooled runs"),
    "dissipation.times": (_floats, "checkpoint times"),
    "coupled.ref_runs": (int, "runs pooled into the reference"),
    "coupled.ref_record_every": (int, "reference snapshot stride in steps"),
    "out": (str, "output directory"),
}


def parse_value(key, raw):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][0](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load(path=None, overrides=()):
    """Read ``path`` (optional) and apply ``key=value`` overrides in order."""
    cfg = {}
    if path:
        try:
            with open(path) as fh:
                cfg = parse_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = parse_value(key.strip(), raw)
    return cfg


def init_spec(cfg):
    """Build an :class:`~landau_chaos.particles.InitSpec` from ``init.*`` keys."""
    from .particles import InitSpec

    if "init.cov" in cfg:
        c = cfg["init.cov"]
        if len(c) == 3:
            return InitSpec.gaussian(c)
        if len(c) == 9:
            return InitSpec.gaussian([c[0:3], c[3:6], c[6:9]])
        raise ConfigError("init.cov needs 3 or 9 entries")
    kw = {}
    if "init.family" in cfg:
        kw["family"] = cfg["init.family"]
    for k in ("sigma", "radius"):
        if f"init.{k}" in cfg:
            kw[k] = cfg[f"init.{k}"]
    if "init.weights" in cfg:
        kw["weights"] = cfg["init.weights"]
    if "init.means" in cfg:
        kw["means"] = cfg["init.means"]
    if "init.covs" in cfg:
        covs = []
        for c in cfg["init.covs"]:
            if len(c) != 9:
                raise ConfigError("each init.covs entry needs 9 entries")
            covs.append((c[0:3], c[3:6], c[6:9]))
        kw["covs"] = tuple(covs)
    return InitSpec(**kw)


def kernel_params(cfg, n=None, far_default=math.inf):
    from .kernels import KernelParams

    n = cfg.get("n", 256) if n is None else n
    eta = cfg.get("eta")
    eta = n ** -0.5 if eta is None else eta
    kw = {"far_cutoff": cfg.get("far_cutoff", far_default)}
    if "quad_nodes" in cfg:
        kw["quad_nodes"] = cfg["quad_nodes"]
    try:
        return KernelParams(cfg.get("gamma", -0.5), eta, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
