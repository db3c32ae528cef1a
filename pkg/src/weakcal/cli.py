"""Command-line interface.

    weakcal toy-convergence  [--sizes 128,256,...] [--reps 10] --out DIR
    weakcal weakview RECORDS.csv --regime {pn,pu,uu,pconf} [--split] --out DIR
    weakcal estimate VIEW_DIR [--regime R] [--eval-pool RECORDS.csv] --out DIR
    weakcal calibrate CORR_VIEW --test TEST_VIEW --method {wlmc,temp,platt} --out DIR

Settings resolve as: built-in defaults < ``--config`` file < flags.  The
master seed falls back to ``$WEAKCAL_SEED`` and then to 0.  Every command
writes ``manifest.json`` with the effective configuration next to its outputs.

Output files:
    convergence.csv  regime,n,mean_abs_err,std_abs_err
    slopes.json      {"slopes": {regime: slope}, "population_mc": ...}
    report.json      regime,ece,max_ece,max_ece_group,mc,mc_group,mc_bin,mu_min,denominator
    residuals.csv    group,bin,bin_lo,bin_hi,moment,active_mass
    trace.csv        round,group,bin_lo,bin_hi,signed_violation,step_applied
    map.json         {"steps": [{"kind": ..., ...}, ...]}

Exit codes: 0 success, 2 usage, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decon import (
    REGIMES,
    WeakBags,
    corrected_residual,
    default_mass_source,
    group_mass,
    make_spec,
)
from .errors import DataError, WeakcalError
from .files import atomic_write, dump_json, read_records, read_view, write_view
from .metrics import mc, report
from .postproc import (
    NLL_REGIMES,
    WeakNllObjective,
    WlmcConfig,
    fit_platt,
    fit_temperature,
    wlmc_fit,
)
from .rng import child_rng, master_seed
from .toylab import DEFAULT_SIZES, ConvergenceRun, ToyWorld, convergence_experiment
from .weakview import SPLIT_NAMES, SplitPlan, WeakViewParams, make_view, split
from .witness import CalibrationMap, WitnessFamily


class UsageError(WeakcalError):
    exit_code = 2


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# name: (parser, default)
PARAMS = {
    "pi_plus": (float, None),
    "gamma1": (float, 0.2),
    "gamma2": (float, 0.2),
    "bins": (int, 10),
    "eta": (float, 0.05),
    "rounds": (int, 50),
    "threshold": (float, 0.005),
    "min_mass": (float, 0.01),
    "rmin": (float, 1e-3),
    "seed": (int, None),
    "reps": (int, 10),
    "sizes": (_int_list, DEFAULT_SIZES),
    "regime": (str, None),
    "method": (str, "wlmc"),
    "mu_min": (float, 0.0),
    "select_best": (_bool, False),
    "fresh_batches": (_bool, False),
    "lambda_p": (float, 0.5),
    "lambda_u": (float, 1.0),
    "lambda_1": (float, 1.0),
    "lambda_2": (float, 1.0),
    "test_fraction": (float, 0.2),
    "val_fraction": (float, 0.2),
    "correction_fraction": (float, 0.4),
    "test_seed": (int, 42),
    "correction_seed": (int, 50),
    "split": (_bool, False),
}


def read_config(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARAMS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = PARAMS[key][0](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def effective_config(args: argparse.Namespace) -> tuple[dict, set]:
    """Defaults < config file < flags; returns the config and the explicitly set keys."""
    cfg = {k: d for k, (_, d) in PARAMS.items()}
    explicit = set()
    if getattr(args, "config", None):
        file_cfg = read_config(args.config)
        cfg.update(file_cfg)
        explicit |= set(file_cfg)
    for key in PARAMS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
            explicit.add(key)
    cfg["seed"] = master_seed(cfg["seed"])
    return cfg, explicit


def _jsonable(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())}


def _write_manifest(out: Path, command: str, cfg: dict, **extra) -> None:
    atomic_write(out / "manifest.json", dump_json({"command": command, "version": __version__,
                                                   "config": _jsonable(cfg), **extra}))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_toy_convergence(args, cfg, explicit) -> int:
    out = Path(args.out)
    run = ConvergenceRun(sizes=tuple(cfg["sizes"]), reps=cfg["reps"])
    result = convergence_experiment(ToyWorld(), run, cfg["seed"])
    atomic_write(out / "convergence.csv", result.to_csv())
    atomic_write(out / "slopes.json", dump_json({"slopes": result.slopes, "population_mc": result.population_mc}))
    _write_manifest(out, "toy-convergence", cfg, files=["convergence.csv", "slopes.json"])
    return 0


def _view_params(cfg) -> WeakViewParams:
    if cfg["regime"] not in ("pn", "pu", "uu", "pconf"):
        raise UsageError("weakview needs --regime pn, pu, uu or pconf")
    return WeakViewParams(cfg["regime"], cfg["lambda_p"], cfg["lambda_u"], cfg["gamma1"], cfg["gamma2"],
                          cfg["lambda_1"], cfg["lambda_2"], cfg["seed"])


def _view_manifest(bags: WeakBags, params: WeakViewParams, cfg: dict) -> dict:
    man = {
        "regime": params.regime,
        "pi_hat": bags.pi_hat,
        "split": bags.meta.get("split"),
        "n_groups": bags.m,
        "seeds": {"view_seed": params.seed, "test_seed": cfg["test_seed"],
                  "correction_seed": cfg["correction_seed"], "run_seed": cfg["seed"]},
        "counts": {k: len(v) for k, v in bags.sources.items()},
        "config": _jsonable(cfg),
    }
    if params.regime == "uu":
        man["gamma1"], man["gamma2"] = params.gamma1, params.gamma2
    return man


def cmd_weakview(args, cfg, explicit) -> int:
    out = Path(args.out)
    params = _view_params(cfg)
    records = read_records(args.records)
    if cfg["split"]:
        plan = SplitPlan(cfg["test_fraction"], cfg["val_fraction"], cfg["correction_fraction"],
                         cfg["test_seed"], cfg["correction_seed"], cfg["seed"])
        parts = split(len(records), plan)
        for name in SPLIT_NAMES:
            bags = make_view(records.take(parts[name]), params, name)
            write_view(out / name, bags, _view_manifest(bags, params, cfg))
        _write_manifest(out, "weakview", cfg, splits={k: int(v.size) for k, v in parts.items()})
    else:
        bags = make_view(records, params, "all")
        write_view(out, bags, _view_manifest(bags, params, cfg))
    return 0


def _resolve(cfg, explicit, manifest, bags):
    regime = cfg["regime"] if "regime" in explicit else manifest.get("regime", cfg["regime"])
    if regime is None:
        raise UsageError("no --regime given and the view manifest does not name one")
    if regime not in REGIMES:
        raise UsageError(f"unknown regime {regime!r}")
    pi = cfg["pi_plus"] if "pi_plus" in explicit else (bags.pi_hat if bags.pi_hat is not None else cfg["pi_plus"])
    g1 = cfg["gamma1"] if "gamma1" in explicit else manifest.get("gamma1", cfg["gamma1"])
    g2 = cfg["gamma2"] if "gamma2" in explicit else manifest.get("gamma2", cfg["gamma2"])
    return regime, pi, g1, g2


def _metrics(bags, regime, pi, g1, g2, cfg, eval_pool=None, tau=None):
    spec = make_spec(regime, pi, g1, g2, tau)
    table = corrected_residual(spec, bags, WitnessFamily(bags.m, cfg["bins"]))
    if eval_pool is not None:
        masses, denom = group_mass("eval-pool", eval_pool), "eval-pool"
    else:
        denom = default_mass_source(regime)
        masses = None if denom is None else group_mass(denom, bags, pi, g1, g2)
    return table, report(table, masses, cfg["mu_min"], denom)


def _table_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "bin", "bin_lo", "bin_hi", "moment", "active_mass"])
    for g, b, lo, hi, mom, mass in table.rows():
        w.writerow([g, b, repr(lo), repr(hi), repr(mom), repr(mass)])
    return buf.getvalue()


def cmd_estimate(args, cfg, explicit) -> int:
    out = Path(args.out)
    bags, manifest = read_view(args.view)
    regime, pi, g1, g2 = _resolve(cfg, explicit, manifest, bags)
    pool = read_records(args.eval_pool) if args.eval_pool else None
    table, rep = _metrics(bags, regime, pi, g1, g2, cfg, pool)
    atomic_write(out / "report.json", dump_json(rep.to_dict()))
    atomic_write(out / "residuals.csv", _table_csv(table))
    _write_manifest(out, "estimate", cfg, view=str(args.view), pi_plus=pi,
                    files=["report.json", "residuals.csv"])
    return 0


def _chunk_sampler(bags: WeakBags, n_batches: int, seed: int):
    """Disjoint per-round batches carved from a fixed correction view."""
    chunks = {}
    for tag, recs in bags.sources.items():
        key = "pair-a" if tag == "pair-b" else tag
        perm = child_rng(seed, "fresh-batches", key).permutation(len(recs))
        chunks[tag] = np.array_split(perm, n_batches)

    def sample(t: int) -> WeakBags:
        if t >= n_batches:
            raise StopIteration
        parts = {tag: bags[tag].take(idx[t]) for tag, idx in chunks.items()}
        if any(len(p) == 0 for p in parts.values()):
            raise StopIteration
        return WeakBags(parts, bags.pi_hat, bags.meta)

    return sample


def _fit(method, bags, regime, pi, g1, g2, cfg):
    """Returns (map, fit-info dict, trace csv or None)."""
    tau = cfg["rmin"] if regime == "pconf" else None
    if method == "wlmc":
        spec = make_spec(regime, pi, g1, g2)
        wcfg = WlmcConfig(cfg["eta"], cfg["rounds"], cfg["threshold"], cfg["min_mass"], cfg["rmin"],
                          cfg["bins"], cfg["fresh_batches"])
        family = WitnessFamily(bags.m, cfg["bins"])
        if cfg["fresh_batches"]:
            res = wlmc_fit(None, spec, family, wcfg, sampler=_chunk_sampler(bags, cfg["rounds"] + 1, cfg["seed"]))
        else:
            res = wlmc_fit(bags, spec, family, wcfg)
        info = {"rounds": res.rounds, "stopped_by": res.stopped_by, "final_violation": res.final_violation}
        return res.map, info, res.trace_csv()
    if regime not in NLL_REGIMES:
        raise UsageError(f"{method} scaling supports regimes {', '.join(NLL_REGIMES)}; got {regime!r}")
    objective = WeakNllObjective(regime, pi, g1, g2, tau)
    fit = (fit_temperature if method == "temp" else fit_platt)(objective, bags)
    info = {"params": list(fit.params), "objective": fit.value, "iterations": fit.n_iter,
            "converged": fit.converged, "at_bound": fit.at_bound}
    if not fit.converged:
        print(f"warning: {method} fit did not converge (at_bound={fit.at_bound})", file=sys.stderr)
    return CalibrationMap([fit.step]), info, None


def cmd_calibrate(args, cfg, explicit) -> int:
    out = Path(args.out)
    corr, manifest = read_view(args.view)
    regime, pi, g1, g2 = _resolve(cfg, explicit, manifest, corr)
    test, test_manifest = read_view(args.test)
    t_regime, t_pi, t_g1, t_g2 = _resolve(cfg, explicit, test_manifest, test)

    if cfg["select_best"]:
        if not args.val:
            raise UsageError("--select-best needs a validation view (--val)")
        val, val_manifest = read_view(args.val)
        v_regime, v_pi, v_g1, v_g2 = _resolve(cfg, explicit, val_manifest, val)
        methods = ["wlmc"] + (["temp", "platt"] if regime in NLL_REGIMES else [])
        candidates = {}
        for m in methods:
            cmap, info, trace = _fit(m, corr, regime, pi, g1, g2, cfg)
            vt, _ = _metrics(val.mapped(cmap), v_regime, v_pi, v_g1, v_g2, cfg)
            candidates[m] = (mc(vt)[0], cmap, info, trace)
        method = min(methods, key=lambda m: candidates[m][0])
        _, cmap, info, trace = candidates[method]
        info = dict(info, selection={m: candidates[m][0] for m in methods})
    else:
        method = cfg["method"]
        if method not in ("wlmc", "temp", "platt"):
            raise UsageError(f"unknown method {method!r}")
        cmap, info, trace = _fit(method, corr, regime, pi, g1, g2, cfg)

    _, before = _metrics(test, t_regime, t_pi, t_g1, t_g2, cfg)
    _, after = _metrics(test.mapped(cmap), t_regime, t_pi, t_g1, t_g2, cfg)
    atomic_write(out / "map.json", dump_json(cmap.to_dict()))
    files = ["map.json", "report.json"]
    if trace is not None:
        atomic_write(out / "trace.csv", trace)
        files.append("trace.csv")
    atomic_write(out / "report.json", dump_json({"method": method, "regime": regime, "fit": info,
                                                 "before": before.to_dict(), "after": after.to_dict()}))
    _write_manifest(out, "calibrate", dict(cfg, method=method), files=files)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file (flags override it)")
    p.add_argument("--seed", type=int, help="master seed (default: $WEAKCAL_SEED, else 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bins", type=int, help="number of uniform score bins (default 10)")


def _add_prior(p: argparse.ArgumentParser) -> None:
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--pi-plus", dest="pi_plus", type=float, help="class prior (default: view pi_hat)")
    p.add_argument("--gamma1", type=float, help="UU source-1 negative fraction (default 0.2)")
    p.add_argument("--gamma2", type=float, help="UU source-2 positive fraction (default 0.2)")
    p.add_argument("--mu-min", dest="mu_min", type=float, help="maxECE group-mass floor (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakcal", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__.split("\n\n", 1)[1])
    parser.add_argument("--version", action="version", version=f"weakcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-convergence", help="MC-estimation error vs sample size on the toy world")
    _add_common(p)
    p.add_argument("--sizes", type=_int_list, help="comma-separated sample sizes (default 128..65536)")
    p.add_argument("--reps", type=int, help="Monte Carlo repetitions per size (default 10)")
    p.set_defaults(func=cmd_toy_convergence)

    p = sub.add_parser("weakview", help="simulate a weak view from a labeled records CSV")
    p.add_argument("records")
    _add_common(p)
    p.add_argument("--regime", choices=("pn", "pu", "uu", "pconf"))
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--lambda-p", dest="lambda_p", type=float, help="PU positive-bag rate (default 0.5)")
    p.add_argument("--lambda-u", dest="lambda_u", type=float, help="PU unlabeled-bag rate (default 1.0)")
    p.add_argument("--split", action="store_true", default=None,
                   help="split train/correction/validation/test first and write one view per split")
    p.set_defaults(func=cmd_weakview)

    p = sub.add_parser("estimate", help="ECE / maxECE / MC of a view's scores")
    p.add_argument("view")
    _add_common(p)
    _add_prior(p)
    p.add_argument("--eval-pool", dest="eval_pool", help="feature-only records CSV for maxECE denominators")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="fit a post-hoc correction on a view and evaluate it on a test view")
    p.add_argument("view", help="correction view directory")
    _add_common(p)
    _add_prior(p)
    p.add_argument("--test", required=True, help="test view directory")
    p.add_argument("--val", help="validation view directory (for --select-best)")
    p.add_argument("--method", choices=("wlmc", "temp", "platt"))
    p.add_argument("--select-best", dest="select_best", action="store_true", default=None)
    p.add_argument("--fresh-batches", dest="fresh_batches", action="store_true", default=None,
                   help="use a disjoint slice of the correction view in every WLMC round")
    p.add_argument("--eta", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-mass", dest="min_mass", type=float)
    p.add_argument("--rmin", type=float)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, explicit = effective_config(args)
        return args.func(args, cfg, explicit)
    except WeakcalError as exc:
        print(f"weakcal: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"weakcal: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"weakcal: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
