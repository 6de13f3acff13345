"""Command-line entry point ``landau-chaos``.

Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import config as cfgmod
from .errors import (AnchorSelectionFailed, ConfigError, InvalidArgument, NotPSDError,
                     NumericalBlowup)

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY = 0, 2, 3, 4

FLAG_KEYS = ("n", "dt", "t_end", "gamma", "eta", "seed", "out")


def _parser():
    p = argparse.ArgumentParser(prog="landau-chaos", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--n", type=str)
        sp.add_argument("--dt", type=str)
        sp.add_argument("--t-end", dest="t_end", type=str)
        sp.add_argument("--gamma", type=str)
        sp.add_argument("--eta", type=str)
        sp.add_argument("--seed", type=str)
        sp.add_argument("--out", type=str, help="output directory (default: current directory)")
        sp.add_argument("--quiet", action="store_true")
        return sp

    common(sub.add_parser("simulate", help="run the particle system and dump snapshots"))
    common(sub.add_parser("rate", help="W2 distance to a pooled reference as N grows"))
    common(sub.add_parser("coupled", help="particle system coupled to reference-driven companions"))
    sp = common(sub.add_parser("perturbed", help="trigger frequency of the perturbation noise"))
    sp.add_argument("--reanchor", action="store_true", help="re-select anchors at each window")
    common(sub.add_parser("anchors", help="greedy anchor selection and ellipticity floor check"))
    common(sub.add_parser("entropy", help="entropy, Fisher and energy at checkpoint times"))
    sp = sub.add_parser("verify", help="run the invariant battery")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mutation", default="none", help="tamper with the drift kernel (sanity demo)")
    sp.add_argument("--out", type=str)
    return p


def _load(args):
    overrides = list(args.set)
    for k in FLAG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            overrides.append(f"{k}={v}")
    if getattr(args, "reanchor", False):
        overrides.append("anchors.reanchor=true")
    cfg = cfgmod.load(args.config, overrides)
    if "threads" in cfg:
        import numba

        numba.set_num_threads(max(1, min(cfg["threads"], numba.config.NUMBA_NUM_THREADS)))
    return cfg


def _outdir(cfg):
    out = cfg.get("out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, obj):
    from .studies import _jsonable

    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)


def _manifest(study, cfg, seed, t0, out):
    from .studies import RunManifest

    RunManifest(study=study, config=dict(cfg), seed=seed, wall_time=time.perf_counter() - t0).write(
        os.path.join(out, f"{study}_manifest.json"))


def cmd_simulate(cfg, log):
    from .metrics import knn_entropy
    from .particles import SimConfig, simulate

    n = cfg.get("n", 256)
    sim = SimConfig(n=n, dt=cfg.get("dt", 1e-3), t_end=cfg.get("t_end", 0.5),
                    kernel=cfgmod.kernel_params(cfg, n, far_default=12.0), seed=cfg.get("seed", 0),
                    init=cfgmod.init_spec(cfg), record_every=cfg.get("record_every", 100))
    traj = simulate(sim)
    out = _outdir(cfg)
    traj.write_csv(os.path.join(out, "snapshots.csv"))
    m = {}
    if n >= 50:
        m["knn_entropy_final"] = knn_entropy(traj.snapshots[-1], cfg.get("metrics.k", 4)).to_dict()
    traj.write_summary(os.path.join(out, "summary.json"), metrics=m)
    log(f"simulated {sim.n_steps} steps; m2 {traj.moment_series(2)[0]:.4f} -> {traj.moment_series(2)[-1]:.4f}")
    return EXIT_OK


def cmd_rate(cfg, log):
    from .studies import RateConfig, run_rate_study

    kw = {"gamma": cfg.get("gamma", -0.5), "t_end": cfg.get("t_end", 0.5), "dt": cfg.get("dt", 1e-3),
          "init": cfgmod.init_spec(cfg), "seed": cfg.get("seed", 0), "far_cutoff": cfg.get("far_cutoff", 12.0)}
    for key, name in (("rate.n_list", "n_list"), ("rate.seeds", "seeds"), ("rate.ref_runs", "ref_runs"),
                      ("rate.ref_n", "ref_n"), ("rate.eta_exponent", "eta_exponent"),
                      ("rate.self_distance", "self_distance")):
        if key in cfg:
            kw[name] = cfg[key]
    rc = RateConfig(**kw)
    rep = run_rate_study(rc, log=log)
    out = _outdir(cfg)
    rep.write_csv(os.path.join(out, "rate.csv"))
    _write_json(os.path.join(out, "rate.json"), rep.to_dict())
    log(f"medians {['%.4g' % m for m in rep.medians]} slope {rep.slope:.3f}")
    return EXIT_OK


def cmd_coupled(cfg, log):
    from .studies import CoupledConfig, run_coupled_study

    kw = {"gamma": cfg.get("gamma", -0.5), "n": cfg.get("n", 128), "t_end": cfg.get("t_end", 0.25),
          "dt": cfg.get("dt", 1e-3), "eta": cfg.get("eta"), "init": cfgmod.init_spec(cfg),
          "seed": cfg.get("seed", 0), "far_cutoff": cfg.get("far_cutoff", 12.0)}
    for key, name in (("metrics.blob_eps", "blob_eps"), ("metrics.blob_delta", "blob_delta"),
                      ("coupled.ref_runs", "ref_runs"), ("coupled.ref_record_every", "ref_record_every")):
        if key in cfg:
            kw[name] = cfg[key]
    res = run_coupled_study(CoupledConfig(**kw), log=log)
    out = _outdir(cfg)
    _write_json(os.path.join(out, "coupled.json"), res)
    with open(os.path.join(out, "coupled.csv"), "w") as fh:
        fh.write("t,pair_sq_distance\n")
        for t, d in zip(res["t"], res["pair_sq_distance"]):
            fh.write(f"{t!r},{d!r}\n")
    return EXIT_OK


def _trigger_config(cfg):
    from .studies import TriggerConfig

    kw = {"gamma": cfg.get("gamma", -0.5), "t_end": cfg.get("t_end", 0.5), "dt": cfg.get("dt", 1e-3),
          "eta": cfg.get("eta"), "init": cfgmod.init_spec(cfg), "seed": cfg.get("seed", 0),
          "far_cutoff": cfg.get("far_cutoff", 12.0)}
    for key, name in (("trigger.n_list", "n_list"), ("trigger.seeds", "seeds"), ("anchors.delta", "delta"),
                      ("anchors.ell", "ell"), ("anchors.samples", "anchor_samples"),
                      ("anchors.reanchor", "reanchor"), ("anchors.tau0", "tau0")):
        if key in cfg:
            kw[name] = cfg[key]
    return TriggerConfig(**kw)


def cmd_perturbed(cfg, log):
    from .perturbation import AnchorSet
    from .studies import run_trigger_study

    tc = _trigger_config(cfg)
    anchors = None
    if "anchors.file" in cfg:
        with open(cfg["anchors.file"]) as fh:
            anchors = AnchorSet.from_json(fh.read())
    rep = run_trigger_study(tc, anchors=anchors, log=log)
    out = _outdir(cfg)
    rep.write_csv(os.path.join(out, "trigger.csv"))
    _write_json(os.path.join(out, "trigger.json"), rep.to_dict())
    return EXIT_OK


def cmd_anchors(cfg, log):
    from dataclasses import asdict

    from .particles import make_rng
    from .perturbation import ellipticity_floor_check, select_anchors

    tc = _trigger_config(cfg)
    spec = tc.init
    X = spec.sample(tc.anchor_samples, make_rng(tc.seed, 7, tc.anchor_samples))
    search = select_anchors(X, tc.delta, tc.ell, tau0=tc.tau0, return_search=True)
    aset = search.anchor_set
    rep = ellipticity_floor_check(X, aset, tc.gamma, tc.delta, search.radius,
                                  trials=cfg.get("anchors.trials", 10_000), seed=tc.seed)
    out = _outdir(cfg)
    with open(os.path.join(out, "anchors.json"), "w") as fh:
        fh.write(aset.to_json())
    _write_json(os.path.join(out, "ellipticity.json"), {**asdict(rep), "masses": search.masses,
                                                        "radius": search.radius})
    log(f"anchors {aset.points.round(4).tolist()} kappa0 {aset.kappa0:.3g} violations {rep.violations}")
    return EXIT_OK


def cmd_entropy(cfg, log):
    from .studies import DissipationConfig, run_dissipation_study, write_dissipation_csv

    kw = {"gamma": cfg.get("gamma", -0.5), "dt": cfg.get("dt", 1e-3), "eta": cfg.get("eta"),
          "seed": cfg.get("seed", 0), "far_cutoff": cfg.get("far_cutoff", 12.0)}
    if "n" in cfg:
        kw["n"] = cfg["n"]
    if any(k.startswith("init.") for k in cfg):
        kw["init"] = cfgmod.init_spec(cfg)
    for key, name in (("dissipation.seeds", "seeds"), ("dissipation.times", "times"), ("metrics.k", "k"),
                      ("metrics.fisher_gamma", "fisher_gamma"), ("metrics.bandwidth", "bandwidth")):
        if key in cfg:
            kw[name] = cfg[key]
    rows = run_dissipation_study(DissipationConfig(**kw), log=log)
    out = _outdir(cfg)
    write_dissipation_csv(rows, os.path.join(out, "dissipation.csv"))
    for r in rows:
        log(f"t={r['t']:.3f} H={r['H_hat']:.4f}+-{r['H_stderr']:.4f} I={r['I_hat']:.4f} m2={r['m2']:.4f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "rate": cmd_rate, "coupled": cmd_coupled,
            "perturbed": cmd_perturbed, "anchors": cmd_anchors, "entropy": cmd_entropy}


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "verify":
        from .verify import verify_suite

        try:
            verdict = verify_suite(args.seed, mutation=args.mutation)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        text = json.dumps(verdict, indent=2)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "verify.json"), "w") as fh:
                fh.write(text)
        print(text)
        return EXIT_OK if verdict["passed"] else EXIT_VERIFY

    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    t0 = time.perf_counter()
    try:
        cfg = _load(args)
        code = COMMANDS[args.command](cfg, log)
        _manifest(args.command, cfg, cfg.get("seed", 0), t0, _outdir(cfg))
        return code
    except NumericalBlowup as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ConfigError, InvalidArgument, NotPSDError, AnchorSelectionFailed) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
