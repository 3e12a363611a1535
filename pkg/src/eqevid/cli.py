"""
Command-line interface.

    eqevid [--config PATH] [--seed N] [--out DIR] [--deterministic] <command> [options]

Exit status: 0 on success, 1 on usage or input errors, 2 on a numerical failure
(the failure class is printed on stderr).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness, toymodel
from .config import ConfigError, RunConfig
from .ensemble import EnsembleCalibration, calibrate_sigma2, read_manifest, write_manifest
from .errors import NumericalError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SPLITS = ("train", "val", "test_id", "test_ood")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _global_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", metavar="PATH", help="JSON run configuration", **d)
    p.add_argument("--seed", type=int, metavar="N", help="overrides the configured seed", **d)
    p.add_argument("--out", metavar="DIR", help="output directory (default: current directory)", **d)
    p.add_argument("--deterministic", action="store_true", help="fixed-order reductions", **d)
    return p


def build_parser():
    parser = _Parser(prog="eqevid", parents=[_global_flags(False)],
                     description="Equivariant evidential force uncertainty: toy-model pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    common = [_global_flags(True)]

    p = sub.add_parser("gen-data", parents=common, help="generate the synthetic dataset and its splits")
    p.add_argument("--n-configs", type=int)

    p = sub.add_parser("train", parents=common, help="train the evidential toy model")
    _data_arg(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-damper", action="store_true", help="disable spectral damping (ablation)")
    p.add_argument("--tensor-init-scale", type=float, help="multiplier on covariance-head init weights")

    p = sub.add_parser("eval", parents=common, help="evaluate a checkpoint or a calibrated ensemble")
    _data_arg(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", metavar="PATH")
    src.add_argument("--manifest", metavar="PATH", help="ensemble manifest (uses its fitted sigma^2)")
    p.add_argument("--splits", nargs="+", default=["test_id", "test_ood"], choices=SPLITS)

    p = sub.add_parser("verify-equivariance", parents=common, help="random-rotation equivariance check")
    _data_arg(p)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--split", default="test_id", choices=SPLITS)
    p.add_argument("--config-index", type=int, default=0)
    p.add_argument("--n-rotations", type=int)

    p = sub.add_parser("ensemble-train", parents=common, help="train independently seeded members")
    _data_arg(p)
    p.add_argument("--members", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("ensemble-calibrate", parents=common, help="fit the ensemble variance floor on validation data")
    _data_arg(p)
    p.add_argument("--manifest", metavar="PATH")

    sub.add_parser("report", parents=common, help="render figures from the reports in --out")
    return parser


def _data_arg(p):
    p.add_argument("--data", metavar="DIR", help="dataset directory written by gen-data (default: --out)")


# -- helpers ----------------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "deterministic", False):
        cfg = replace(cfg, deterministic=True)
    tc = cfg.train
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("max_steps", "max_steps"),
                      ("tensor_init_scale", "tensor_init_scale")):
        if getattr(args, flag, None) is not None:
            tc = replace(tc, **{key: getattr(args, flag)})
    if getattr(args, "no_damper", False):
        tc = replace(tc, damper_enabled=False)
    cfg = replace(cfg, train=tc)
    if getattr(args, "n_configs", None) is not None:
        cfg = replace(cfg, data=replace(cfg.data, n_configs=args.n_configs))
    if getattr(args, "members", None) is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, members=args.members))
    return cfg.validate()


def _out(args):
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _data_dir(args):
    return getattr(args, "data", None) or _out(args)


def _split(args, name):
    path = os.path.join(_data_dir(args), f"{name}.jsonl")
    if not os.path.exists(path):
        raise UsageError(f"missing split file {path}; run gen-data first")
    return toymodel.read_jsonl(path)


def _checkpoint_path(args):
    return getattr(args, "checkpoint", None) or os.path.join(_out(args), "checkpoint.json")


def _manifest_path(args):
    return getattr(args, "manifest", None) or os.path.join(_out(args), "ensemble.json")


def _need(path, what):
    if not os.path.exists(path):
        raise UsageError(f"missing {what} {path}")
    return path


def _write_uncertainty_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "u_scalar", "error_norm"])
        for split, u, err in rows:
            for a, b in zip(u, err):
                w.writerow([split, repr(float(a)), repr(float(b))])


# -- commands ----------------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig):
    out = _out(args)
    data = toymodel.generate_dataset(cfg.data, np.random.default_rng(cfg.seed))
    parts = toymodel.ood_split(data, cfg.ood)
    toymodel.write_jsonl(data, os.path.join(out, "dataset.jsonl"))
    for name, part in zip(SPLITS, parts):
        toymodel.write_jsonl(part, os.path.join(out, f"{name}.jsonl"))
    cfg.to_json(os.path.join(out, "data_config.json"))
    print(" ".join(f"{n}={len(p)}" for n, p in zip(SPLITS, parts)))


def _save_run(out, params, report, cfg, prefix=""):
    toymodel.save_checkpoint(os.path.join(out, f"{prefix}checkpoint.json"), params, cfg.damper, cfg.loss,
                             cfg.train.damper_enabled, extra={"seed": cfg.seed})
    harness.write_json(os.path.join(out, f"{prefix}run_report.json"),
                       {"config": cfg.to_dict(), **report.to_dict()})
    report.condition_to_csv(os.path.join(out, f"{prefix}condition_ratio.csv"))


def cmd_train(args, cfg: RunConfig):
    out = _out(args)
    train_set, val_set = _split(args, "train"), _split(args, "val")
    try:
        params, report = harness.train(train_set, val_set, cfg)
    except harness.TrainingAborted as exc:
        _save_run(out, exc.params, exc.report, cfg)
        raise exc.cause from None
    _save_run(out, params, report, cfg)
    print(f"epochs={len(report.epochs)} max_condition_ratio={report.max_condition_ratio:.6g}")


def _load_params(path):
    params, damper, weights, damp = toymodel.load_checkpoint(_need(path, "checkpoint"))
    return params, damper, damp


def cmd_eval(args, cfg: RunConfig):
    out = _out(args)
    rng = np.random.default_rng(cfg.seed)
    doc, curves, scatter = {"splits": {}}, {}, []
    if args.manifest:
        members, cal = read_manifest(_need(args.manifest, "manifest"))
        if cal is None:
            raise UsageError("manifest has no fitted sigma^2; run ensemble-calibrate first")
        loaded = [_load_params(m) for m in members]
        damper, damp = loaded[0][1], loaded[0][2]
        doc["ensemble"] = {"members": len(members), "sigma_sq": cal.sigma_sq}
        for name in args.splits:
            rep = harness.evaluate_ensemble(_split(args, name), [p for p, _, _ in loaded], damper,
                                            cal.sigma_sq, rng, damp, cfg.eval.es_samples, cfg.eval.levels)
            doc["splits"][name] = rep.to_dict()
            curves[name] = rep
    else:
        params, damper, damp = _load_params(_checkpoint_path(args))
        for name in args.splits:
            split = _split(args, name)
            rep = harness.evaluate(split, params, damper, rng, damp, cfg.eval.es_samples, cfg.eval.levels)
            rep.extra.update(harness.spearman_shift(split, params, damper, rng, damp))
            doc["splits"][name] = rep.to_dict()
            curves[name] = rep
            p = harness.predict(split, params, damper, damp)
            scatter.append((name, p.u_scalar, np.linalg.norm(p.forces_ref - p.gamma, axis=-1)))
    harness.write_json(os.path.join(out, "report.json"), doc)
    first = args.splits[0]
    curves[first].curve_to_csv(os.path.join(out, "calibration_curve.csv"))
    for name, rep in curves.items():
        rep.curve_to_csv(os.path.join(out, f"calibration_curve_{name}.csv"))
    if scatter:
        _write_uncertainty_csv(os.path.join(out, "uncertainty_error.csv"), scatter)
    for name, rep in curves.items():
        print(f"{name}: mae={rep.force_mae:.4g} ce={rep.ce_l1:.4g} "
              f"cov95={rep.coverage.get('0.95', float('nan')):.4g} nll={rep.nll:.4g} rho={rep.spearman:.4g}")


def cmd_verify(args, cfg: RunConfig):
    out = _out(args)
    params, damper, damp = _load_params(_checkpoint_path(args))
    split = _split(args, args.split)
    if not 0 <= args.config_index < len(split):
        raise UsageError(f"--config-index out of range (split has {len(split)} configurations)")
    n = args.n_rotations if args.n_rotations is not None else cfg.eval.n_rotations
    if n < 1:
        raise UsageError("--n-rotations must be >= 1")
    rec = harness.verify_equivariance(split[args.config_index], params, damper, n,
                                      np.random.default_rng(cfg.seed), damp=damp)
    rec.to_csv(os.path.join(out, "equivariance_dev.csv"))
    harness.histograms_to_csv(rec.histograms(), os.path.join(out, "equivariance_hist.csv"))
    harness.write_json(os.path.join(out, "equivariance.json"), {"n_rotations": n, **rec.summary()})
    print(f"max|dF|={rec.max_force_dev:.3g} max|dU|={rec.max_cov_dev:.3g}")


def cmd_ensemble_train(args, cfg: RunConfig):
    out = _out(args)
    train_set, val_set = _split(args, "train"), _split(args, "val")
    mdir = os.path.join(out, "members")
    os.makedirs(mdir, exist_ok=True)
    paths = []
    for seed in harness.member_seeds(cfg):
        mcfg = replace(cfg, seed=seed)
        try:
            params, report = harness.train(train_set, val_set, mcfg)
        except harness.TrainingAborted as exc:
            raise exc.cause from None
        _save_run(mdir, params, report, mcfg, prefix=f"member_{seed}_")
        paths.append(os.path.join(mdir, f"member_{seed}_checkpoint.json"))
    write_manifest(_manifest_path(args), paths)
    print(f"members={len(paths)}")


def cmd_ensemble_calibrate(args, cfg: RunConfig):
    path = _need(_manifest_path(args), "manifest")
    members, _ = read_manifest(path)
    loaded = [_load_params(m) for m in members]
    ref, mean, cov = harness.ensemble_predict(_split(args, "val"), [p for p, _, _ in loaded],
                                              loaded[0][1], loaded[0][2])
    cal = calibrate_sigma2(ref - mean, cov, EnsembleCalibration(p_target=cfg.ensemble.target,
                                                                tol=cfg.ensemble.tol))
    write_manifest(path, members, cal)
    print(f"sigma_sq={cal.sigma_sq:.6g} val_coverage={cal.achieved:.4f} reached={cal.reached}")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args, cfg: RunConfig):
    from . import plotting

    out = _out(args)
    fig_dir = os.path.join(out, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    made = []

    curves = {}
    for fname in sorted(os.listdir(out)):
        if fname.startswith("calibration_curve_") and fname.endswith(".csv"):
            rows = _read_csv(os.path.join(out, fname))
            curves[fname[len("calibration_curve_"):-4]] = ([float(r["p"]) for r in rows],
                                                           [float(r["obs"]) for r in rows])
    if curves:
        made.append(plotting.reliability_diagram(curves, os.path.join(fig_dir, "reliability.png")))

    cond = os.path.join(out, "condition_ratio.csv")
    if os.path.exists(cond):
        rows = [{k: float(v) for k, v in r.items()} for r in _read_csv(cond)]
        bound = math.exp(2 * cfg.damper.ceiling)
        made.append(plotting.condition_band(rows, os.path.join(fig_dir, "condition_ratio.png"), bound))

    run = os.path.join(out, "run_report.json")
    if os.path.exists(run):
        with open(run) as fh:
            epochs = json.load(fh).get("epochs", [])
        if epochs:
            made.append(plotting.loss_curves(epochs, os.path.join(fig_dir, "loss.png")))

    hist = os.path.join(out, "equivariance_hist.csv")
    if os.path.exists(hist):
        hists = {}
        for r in _read_csv(hist):
            edges, counts = hists.setdefault(r["quantity"], ([], []))
            if not edges:
                edges.append(float(r["bin_lo"]))
            edges.append(float(r["bin_hi"]))
            counts.append(int(r["count"]))
        made.append(plotting.equivariance_histograms(hists, os.path.join(fig_dir, "equivariance.png")))

    unc = os.path.join(out, "uncertainty_error.csv")
    if os.path.exists(unc):
        groups = {}
        for r in _read_csv(unc):
            u, e = groups.setdefault(r["split"], ([], []))
            u.append(float(r["u_scalar"]))
            e.append(float(r["error_norm"]))
        made.append(plotting.uncertainty_scatter(groups, os.path.join(fig_dir, "uncertainty_error.png")))

    if not made:
        raise UsageError(f"no report files found in {out}")
    harness.write_json(os.path.join(out, "figures.json"),
                       {"figures": [os.path.relpath(m, out) for m in made]})
    for m in made:
        print(m)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify-equivariance": cmd_verify,
    "ensemble-train": cmd_ensemble_train,
    "ensemble-calibrate": cmd_ensemble_calibrate,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, FileNotFoundError, toymodel.DataSpecError,
            toymodel.EmptySplitError) as exc:
        print(f"eqevid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"eqevid: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
