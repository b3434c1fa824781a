"""Command-line entry point: ``censalign <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, sublign
from .baselines import kmeans_loss_fit
from .data import LinkSpec, SubLignConfig, load, save
from .harness import ExperimentConfig, render_report, run_experiment
from .ident import IdentificationError, identify
from .metrics import score_fit
from .synth import FAMILIES, GeneratorSpec, apply_missingness, generate


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_generate(args) -> int:
    spec = GeneratorSpec(args.family, n_patients=args.n, n_visits=args.m, noise_var=args.noise_var,
                         t_max=args.tmax, subtype_prob=args.subtype_prob, seed=args.seed)
    ds = generate(spec)
    if args.missing_rate > 0:
        ds = apply_missingness(ds, args.missing_rate, seed=args.seed + 1)
    save(ds, args.out)
    return 0


def cmd_train(args) -> int:
    ds = load(args.data)
    cfg = SubLignConfig.from_dict(_read_json(args.config)) if args.config else SubLignConfig()
    model, tlog = sublign.train(ds, cfg, align=not args.no_align)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out, tlog.to_dict())
    return 0


def cmd_infer(args) -> int:
    model = sublign.SubLign.load(args.model)
    ds = load(args.data)
    curve = _read_json(args.model).get("log", {}).get("elbo", [])
    fit = sublign.infer(model, ds, args.k, seed=args.seed, elbo_curve=curve)
    _write_json(args.out, fit.to_json())
    return 0


def cmd_identify(args) -> int:
    ds = load(args.data)
    link = LinkSpec.parse(args.link, args.degree) if args.link else None
    res = identify(ds, args.k, link=link, degree=args.degree, canonical_dim=args.canonical_dim, strict=not args.lenient)
    _write_json(args.out, res.to_json())
    return 0


def cmd_baseline(args) -> int:
    ds = load(args.data)
    res = kmeans_loss_fit(ds, args.k, seed=args.seed)
    _write_json(args.out, res.to_json())
    if res.warning:
        print("warning: line search failed; the fit is the best point reached", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    ds = load(args.data)
    fit = _read_json(args.fit)
    by_id = {r["id"]: r for r in fit["records"]}
    missing = [tid for tid in ds.ids if tid not in by_id]
    if missing:
        raise ValueError(f"fit has no record for {len(missing)} series, e.g. {missing[0]}")
    trajs = list(ds)
    if any(t.true_subtype is None for t in trajs):
        raise ValueError("dataset has no ground-truth subtypes to score against")
    labels = [by_id[t.id]["label"] for t in trajs]
    deltas = [by_id[t.id].get("delta_hat") for t in trajs]
    have_delta = all(d is not None for d in deltas) and all(t.true_delta is not None for t in trajs)
    scores = score_fit([t.true_subtype for t in trajs], labels,
                       [t.true_delta for t in trajs] if have_delta else None,
                       np.array(deltas, dtype=float) if have_delta else None)
    scores["n"] = len(trajs)
    _write_json(args.out, scores)
    return 0


def cmd_experiment(args) -> int:
    raw = _read_json(args.config)
    if args.fast:
        raw["preset"] = "fast"
    if args.workers is not None:
        raw["workers"] = args.workers
    config = ExperimentConfig.from_dict(raw)
    report = run_experiment(config)
    render_report(report, args.out_dir)
    sys.stdout.write(Path(args.out_dir, "report.txt").read_text())
    dead = report.failed_everywhere()
    if dead:
        print(f"methods failed in every trial: {', '.join(dead)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="censalign", description="Subtype clustering with inferred delayed entry.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--family", choices=FAMILIES, default="sigmoid")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--m", type=int, default=4)
    g.add_argument("--noise-var", type=float, default=0.25)
    g.add_argument("--tmax", type=float, default=10.0)
    g.add_argument("--subtype-prob", type=float, default=0.5)
    g.add_argument("--missing-rate", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a SubLign model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of model settings; omitted fields take defaults")
    t.add_argument("--no-align", action="store_true", help="pin every delay at 0")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="encode, align and cluster a dataset with a trained model")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--k", type=int, default=2)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("identify", help="exact identification from noiseless data")
    d.add_argument("--data", required=True)
    d.add_argument("--link", choices=["sigmoid", "identity"])
    d.add_argument("--degree", type=int)
    d.add_argument("--k", type=int, default=2)
    d.add_argument("--canonical-dim", type=int, default=0)
    d.add_argument("--lenient", action="store_true", help="record assumption violations instead of failing")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_identify)

    b = sub.add_parser("baseline", help="run a baseline method")
    bsub = b.add_subparsers(dest="baseline", required=True)
    kl = bsub.add_parser("kmeans-loss", help="k-means on raw values, then least-squares curves and shifts")
    kl.add_argument("--data", required=True)
    kl.add_argument("--k", type=int, default=2)
    kl.add_argument("--seed", type=int, default=0)
    kl.add_argument("--out", required=True)
    kl.set_defaults(func=cmd_baseline)

    e = sub.add_parser("evaluate", help="score a fit against ground truth")
    e.add_argument("--fit", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="repeated-trial benchmark with report files")
    x.add_argument("--config", required=True)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--fast", action="store_true", help="use the single-point hyperparameter preset")
    x.add_argument("--workers", type=int)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (IdentificationError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"censalign {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
