"""Command line: wavedn <subcommand> [--config cfg.json] [--out dir] [--seed n] [--threads n].

Exit codes: 0 ok, 2 validation failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import HAVE_NUMBA, USE_NUMBA, backend
from .fields import Grid, gauge_reduce
from .geometry import GeometryConfig, GeometryError, validate_geometry, normalize_regime
from .go_probe import ProbeSpec, ResolutionError, remainder_report
from .io import write_wdn1, write_sidecar, coeff_hash
from .ray_transform import gaussian_packets, fourier_slice, direct_dft, slice_direction, \
    ray_transform
from .reconstruction import ReconstructionContext, ReconstructionParams, reconstruct, \
    CoverageError
from .wave_solver import (WaveProblem, CFLViolation, NumericalFailure, march, response,
                          operator_distance, default_dictionary, dictionary_id)
from . import experiments as ex

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class ValidationFailure(Exception):
    pass


# --- configuration ---------------------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def geometry_from(conf, default_nx=48) -> GeometryConfig:
    g = conf.get("geometry")
    if g is None:
        return ex.experiment_config(default_nx)
    cfg = GeometryConfig.from_dict(g)
    if "nt" not in g:
        cfg = cfg.refined(cfg.nx)
    return cfg


def family_from(conf, regime, seed):
    d = dict(conf.get("family", {}))
    d.setdefault("regime", regime)
    d.setdefault("seed", seed)
    return ex.PerturbationFamily(**d)


def params_from(conf, regime, mode=None):
    d = dict(conf.get("params", {}))
    d["regime"] = regime
    if mode is not None:
        d["mode"] = mode
    d.setdefault("mode", "probe")
    base = ex.stability_params(regime).to_dict()
    base.update(d)
    return ReconstructionParams(**base)


def _pairs(conf, cfg, regime, seed, delta):
    grid = Grid.from_config(cfg, nt=int(conf.get("grid_nt", 60)))
    fam = family_from(conf, regime, seed)
    base = ex.zero_background(grid)
    return ex.add_pairs(base, fam.coefficients(grid, delta)), base, fam


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def _check_geometry(cfg):
    rep = validate_geometry(cfg)
    if not rep.ok:
        raise ValidationFailure("; ".join(v.message for v in rep.violations))
    return rep


# --- subcommands -------------------------------------------------------------------

def cmd_validate(args, conf):
    cfg = geometry_from(conf)
    rep = validate_geometry(cfg)
    out = {"geometry": cfg.to_dict(), **rep.to_dict()}
    _dump(_out(args) / "validate.json", out)
    print(json.dumps(out, sort_keys=True, default=_jsonable))
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def cmd_forward(args, conf):
    cfg = geometry_from(conf)
    _check_geometry(cfg)
    reg = normalize_regime(args.regime)
    cp1, _, _ = _pairs(conf, cfg, reg, args.seed, args.delta)
    entry = default_dictionary(cfg, reg)[args.entry]
    init = None
    if entry.u0 is not None or entry.u1 is not None:
        z = np.zeros((cfg.nx, cfg.nx))
        init = (z if entry.u0 is None else entry.u0, z if entry.u1 is None else entry.u1)
    sol = march(WaveProblem(cfg, cp1, "convection", dirichlet=entry.f, initial=init),
                keep_full=True)
    u = sol.u[0]
    meta = {"geometry": cfg.to_dict(), "entry": entry.label, "delta": args.delta,
            "coeff_hash": coeff_hash(cp1), "max_abs": float(np.max(np.abs(u)))}
    write_wdn1(_out(args) / "u.wdn1", u, meta)
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def cmd_response(args, conf):
    cfg = geometry_from(conf)
    _check_geometry(cfg)
    reg = normalize_regime(args.regime)
    cp1, _, _ = _pairs(conf, cfg, reg, args.seed, args.delta)
    entry = default_dictionary(cfg, reg)[args.entry]
    rec = response(cfg, reg, cp1, entry.f, entry.u0, entry.u1)
    out = _out(args)
    meta = {"geometry": cfg.to_dict(), "regime": reg, "entry": entry.label,
            "kind": rec.trace.kind, "delta": args.delta}
    write_wdn1(out / "trace.wdn1", rec.trace.samples, meta)
    if rec.final_u is not None:
        write_wdn1(out / "final.wdn1", np.stack([rec.final_u, rec.final_ut], -1), meta)
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def cmd_distance(args, conf):
    cfg = geometry_from(conf)
    _check_geometry(cfg)
    reg = normalize_regime(args.regime)
    cp1, base, _ = _pairs(conf, cfg, reg, args.seed, args.delta)
    rep = operator_distance(cfg, reg, cp1, base, refine=args.refine, report=True,
                            size=args.size)
    out = {"regime": reg, "delta": args.delta, "epsilon": rep.epsilon,
           "refined": rep.refined, "dictionary_id": rep.dictionary_id,
           "per_entry": rep.per_entry, "gate_ok": rep.epsilon < 1}
    _dump(_out(args) / "distance.json", out)
    print(json.dumps({k: out[k] for k in ("regime", "delta", "epsilon", "dictionary_id")}))
    return EXIT_OK


def cmd_probe(args, conf):
    cfg = geometry_from(conf, default_nx=96)
    _check_geometry(cfg)
    pc = conf.get("probe", {})
    reg = normalize_regime(args.regime)
    mp = None
    if args.delta != 0:
        cp1, _, _ = _pairs(conf, cfg, reg, args.seed, args.delta)
        mp = gauge_reduce(cp1)
    rows = []
    for s in args.sigmas:
        spec = ProbeSpec(tuple(pc.get("omega", (1.0, 0.0))), s, tuple(pc.get("y", (1.5, 0.0))),
                         pc.get("h", 0.4))
        r = remainder_report(cfg, mp, spec)
        rows.append({"sigma": s, "r_l2": r.r_l2, "grad_r_l2": r.grad_r_l2,
                     "sigma_r_l2": r.sigma_r_l2, "u_l2": r.u_l2})
    _dump(_out(args) / "probe.json", rows)
    print(json.dumps(rows))
    return EXIT_OK


def cmd_ray(args, conf):
    rng = np.random.default_rng(args.seed)
    f, ft = gaussian_packets(args.seed)
    ax = [np.linspace(f.lo[j], f.hi[j], 161) for j in range(2)]
    ts = np.linspace(f.t0, f.t1, 241)
    X, Y = np.meshgrid(*ax, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], -1)
    vals = np.stack([f(P, np.full(len(P), t)).reshape(X.shape) for t in ts], -1)
    rows = []
    for _ in range(args.samples):
        xi = rng.uniform(-6, 6, 2)
        tau = rng.uniform(-0.5, 0.5) * np.linalg.norm(xi)
        om = slice_direction(xi, tau)
        a = fourier_slice(f, xi, tau, om)
        b = direct_dft(vals, ax, ts, xi, tau)
        rows.append({"xi": xi, "tau": tau, "omega": om, "rel_err": abs(a - b) / abs(b)})
    y = rng.uniform(-1, 1, (4, 2))
    out = {"slices": rows, "max_rel_err": max(r["rel_err"] for r in rows),
           "ray_samples": ray_transform(f, y, (1.0, 0.0)).real}
    _dump(_out(args) / "ray.json", out)
    print(json.dumps({"samples": args.samples, "max_rel_err": out["max_rel_err"]}))
    return EXIT_OK


def cmd_reconstruct(args, conf):
    cfg = geometry_from(conf)
    _check_geometry(cfg)
    reg = normalize_regime(args.regime)
    cp1, base, _ = _pairs(conf, cfg, reg, args.seed, args.delta)
    params = params_from(conf, reg, args.mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ctx = ReconstructionContext.build(gauge_reduce(cp1), gauge_reduce(base))
    res = reconstruct(ctx, cfg, params)
    out = _out(args)
    meta = {"mode": params.mode, "params": params.to_dict(), "errors": res.errors,
            "counts": res.counts}
    for name, fld in (("V0", res.V_rec[0]), ("V1", res.V_rec[1]), ("p", res.p_rec)):
        write_wdn1(out / f"{name}_rec.wdn1", fld.values, {**meta, "field": name,
                                                          "grid": fld.grid.to_dict()})
    _dump(out / "reconstruct.json", {**meta, "timings": res.timings})
    print(json.dumps(res.errors, sort_keys=True))
    return EXIT_OK


def cmd_stability(args, conf):
    cfg = geometry_from(conf)
    _check_geometry(cfg)
    reg = normalize_regime(args.regime)
    fam = family_from(conf, reg, args.seed)
    ladder = conf.get("ladder", ex.default_ladder(args.rungs, regime=reg))
    params = params_from(conf, reg)
    curve = ex.run_stability(reg, fam, ladder, params, cfg, seed=args.seed,
                             grid_nt=int(conf.get("grid_nt", 60)))
    out = _out(args)
    curve.write_csv(out / f"stability_{reg}.csv", zero_wallclock=args.zero_wallclock)
    fits = {}
    for which, model in (("V", "log"), ("P", "loglog")):
        try:
            fits[which] = ex.fit_log_law(curve, model=model, which=which).to_dict()
        except ValueError as e:
            fits[which] = {"error": str(e)}
    mono = curve.monotone()
    _dump(out / f"fit_{reg}.json", {"fits": fits, "monotone_eps": mono[0],
                                    "monotone_errV": mono[1],
                                    "statuses": [r.status for r in curve.rungs]})
    print(curve.csv_text(zero_wallclock=args.zero_wallclock), end="")
    if any(r.status == "failed" for r in curve.rungs):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_convergence(args, conf):
    levels = conf.get("convergence", {}).get("levels", args.levels)
    rows = [ex.convergence_study(c, levels).to_dict() for c in args.cases]
    _dump(_out(args) / "convergence.json", rows)
    for r in rows:
        print(f"{r['case']}: errors={r['errors']} orders={r['orders']}")
    if any(r["order"] is None for r in rows):
        return EXIT_NUMERICAL
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="wavedn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON configuration file")
    common.add_argument("--out", default="wavedn_out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None)
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(fn=fn)
        return s

    add("validate", cmd_validate, "check the geometry hypotheses")
    for name, fn, h in (("forward", cmd_forward, "one forward solve"),
                        ("response", cmd_response, "emit a response record")):
        s = add(name, fn, h)
        s.add_argument("--regime", default="lambda")
        s.add_argument("--entry", type=int, default=0)
        s.add_argument("--delta", type=float, default=1.0)
    s = add("distance", cmd_distance, "operator distance over the dictionary")
    s.add_argument("--regime", default="lambda")
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--refine", action="store_true")
    s = add("probe", cmd_probe, "GO remainder report over a sigma sweep")
    s.add_argument("--regime", default="lambda")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--sigmas", type=float, nargs="+", default=[10.0, 20.0, 40.0])
    s = add("ray", cmd_ray, "Fourier slice checks on seeded Gaussian packets")
    s.add_argument("--samples", type=int, default=10)
    s = add("reconstruct", cmd_reconstruct, "full pipeline")
    s.add_argument("--mode", choices=("direct", "probe"), default="probe")
    s.add_argument("--regime", default="lambda")
    s.add_argument("--delta", type=float, default=1.0)
    s = add("stability", cmd_stability, "stability ladder and log-law fits")
    s.add_argument("--regime", default="lambda")
    s.add_argument("--rungs", type=int, default=5)
    s.add_argument("--zero-wallclock", action="store_true",
                   help="write 0 in the wallclock column for byte-identical reruns")
    s = add("convergence", cmd_convergence, "manufactured-solution convergence")
    s.add_argument("--cases", nargs="+", default=["free", "convection", "magnetic"])
    s.add_argument("--levels", type=int, nargs="+", default=[17, 33, 65])
    return p


def _set_threads(n):
    if n is None or not HAVE_NUMBA:
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        conf = load_config(args.config)
        return args.fn(args, conf)
    except (ValidationFailure, GeometryError, CFLViolation, ResolutionError) as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, CoverageError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
