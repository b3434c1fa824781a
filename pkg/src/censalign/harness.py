"""Repeated-trial experiments: folds, hyperparameter selection, scoring and report files."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import sublign
from .baselines import kmeans_loss_fit, kmeans_loss_predict
from .data import AlignmentGrid, Dataset, RegType, SubLignConfig, Trajectory
from .ident import identify
from .metrics import benjamini_hochberg, paired_ttest, score_fit
from .synth import GeneratorSpec, apply_missingness, drop_visits, front_cut, back_cut, generate

log = logging.getLogger(__name__)

METHODS = ("sublign", "subnolign", "kmeans-loss", "identify")
METRICS = ("ari", "swaps", "pearson")

FULL_GRID = {
    "latent_dim": [2, 5, 10],
    "rnn_hidden": [50, 100, 200],
    "mlp_hidden": [50, 100, 200],
    "learning_rate": [0.001, 0.01, 0.1, 1.0],
    "kl_weight": [1.0, 0.01, 0.001],
    "reg_strength": [0.0, 0.1, 1.0],
    "reg_type": ["l1", "l2"],
}
FAST_GRID = {
    "latent_dim": [5],
    "rnn_hidden": [100],
    "mlp_hidden": [50],
    "learning_rate": [0.01],
    "kl_weight": [0.01],
    "reg_strength": [0.0],
    "reg_type": ["none"],
}


@dataclass
class ExperimentConfig:
    generator: GeneratorSpec = field(default_factory=lambda: GeneratorSpec("sigmoid"))
    methods: list[str] = field(default_factory=lambda: ["sublign", "subnolign", "kmeans-loss"])
    n_trials: int = 5
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2)
    grid: dict[str, list] = field(default_factory=lambda: dict(FAST_GRID))
    base: SubLignConfig = field(default_factory=SubLignConfig)
    k: int = 2
    missing_rate: float = 0.0
    censor_w: float | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if len(self.splits) != 3 or any(f <= 0 for f in self.splits) or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three positive numbers summing to 1, got {self.splits}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        bad = [k for k in self.grid if k not in SubLignConfig.__dataclass_fields__]
        if bad:
            raise ValueError(f"grid names unknown config fields {bad}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        preset = d.pop("preset", "fast")
        if preset not in ("fast", "full"):
            raise ValueError(f"preset must be 'fast' or 'full', got {preset!r}")
        grid = dict(FAST_GRID if preset == "fast" else FULL_GRID)
        grid.update(d.pop("grid", {}))
        gen = GeneratorSpec(**d.pop("generator", {}))
        base = SubLignConfig.from_dict(d.pop("sublign", {}))
        if "splits" in d:
            d["splits"] = tuple(d["splits"])
        return cls(generator=gen, grid=grid, base=base, **d)

    def to_dict(self) -> dict:
        return {
            "generator": asdict(self.generator),
            "methods": list(self.methods),
            "n_trials": self.n_trials,
            "splits": list(self.splits),
            "grid": self.grid,
            "sublign": self.base.to_dict(),
            "k": self.k,
            "missing_rate": self.missing_rate,
            "censor_w": self.censor_w,
            "seed": self.seed,
            "workers": self.workers,
        }


def grid_points(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of the grid, dropping points that differ only in an inactive setting."""
    keys = sorted(grid)
    out, seen = [], set()
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        if point.get("reg_strength", None) == 0 or point.get("reg_type") == "none":
            point["reg_strength"] = 0.0
            point["reg_type"] = "none"
        key = json.dumps(point, sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(point)
    return out


def make_folds(ids, trial_seed: int, splits=(0.6, 0.2, 0.2)) -> dict[str, list[str]]:
    """Random train/validation/test partition; depends only on the seed and the id set."""
    ordered = sorted(ids)
    perm = np.random.default_rng(trial_seed).permutation(len(ordered))
    n = len(ordered)
    n_train = int(round(splits[0] * n))
    n_val = int(round(splits[1] * n))
    shuffled = [ordered[i] for i in perm]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }


def trial_seed(config: ExperimentConfig, trial: int) -> int:
    return int(np.random.SeedSequence([config.seed, trial]).generate_state(1)[0])


def build_dataset(config: ExperimentConfig) -> Dataset:
    ds = generate(config.generator)
    if config.missing_rate > 0:
        ds = apply_missingness(ds, config.missing_rate, seed=config.generator.seed + 1)
    return ds


# --- censor probe ---------------------------------------------------------------


@dataclass
class CensorProbe:
    fraction: float
    n_included: int
    n_excluded: int
    w: float

    def to_dict(self) -> dict:
        return asdict(self)


def matched_cuts(traj: Trajectory, w: float) -> tuple[Trajectory, Trajectory] | None:
    """Front- and back-censored copies with the same number of visits removed.

    Each cut would remove the visits within ``w`` of its end; both are trimmed to
    the smaller count.  ``None`` when that count is zero or a copy has no data.
    """
    f = front_cut(traj, w)
    b = back_cut(traj, w)
    n_front = traj.n_visits - (f.n_visits if f is not None else 0)
    n_back = traj.n_visits - (b.n_visits if b is not None else 0)
    r = min(n_front, n_back)
    if r == 0:
        return None
    front = drop_visits(traj, front=r)
    back = drop_visits(traj, back=r)
    if front is None or back is None or not front.mask.any() or not back.mask.any():
        return None
    return front, back


def run_censor_probe(model: sublign.SubLign, dataset: Dataset, w: float) -> CensorProbe:
    """Fraction of series whose inferred delay is strictly larger after a front cut than after a back cut."""
    fronts, backs = [], []
    excluded = 0
    for traj in dataset:
        pair = matched_cuts(traj, w) if w > 0 else None
        if pair is None:
            excluded += 1
            continue
        fronts.append(pair[0])
        backs.append(pair[1])
    if not fronts:
        return CensorProbe(0.0, 0, excluded, w)
    d_front = model.deltas(sublign.Batch.from_trajectories(fronts, dataset.dim))
    d_back = model.deltas(sublign.Batch.from_trajectories(backs, dataset.dim))
    return CensorProbe(float(np.mean(d_front > d_back)), len(fronts), excluded, w)


# --- per-method runs -------------------------------------------------------------


def _true(ds: Dataset):
    s = [t.true_subtype for t in ds]
    d = [t.true_delta for t in ds]
    return (None if any(v is None for v in s) else s), (None if any(v is None for v in d) else d)


def _scores(ds: Dataset, labels, deltas) -> dict:
    s, d = _true(ds)
    if s is None:
        return {"ari": None, "swaps": None, "pearson": None}
    return score_fit(s, labels, d, deltas)


def _records(ds: Dataset, labels, deltas) -> list[dict]:
    return [
        {"id": tid, "label": int(lab), "delta_hat": None if deltas is None else float(dh)}
        for tid, lab, dh in zip(ds.ids, labels, deltas if deltas is not None else [None] * len(ds))
    ]


def _run_sublign(method, train, val, test, config: ExperimentConfig, seed: int) -> dict:
    align = method == "sublign"
    best = None
    candidates = []
    for point in grid_points(config.grid):
        cfg = replace(config.base, **{**point, "reg_type": RegType(point.get("reg_type", "none"))}, seed=seed)
        model, tlog = sublign.train(train, cfg, align=align)
        crit = sublign.score_elbo(model, val, seed=seed)
        candidates.append({"params": point, "val_elbo": crit})
        if best is None or crit > best[0]:
            best = (crit, point, model, tlog)
    crit, point, model, tlog = best
    fit = sublign.infer(model, test, config.k, seed=seed)
    out = {
        "selected": point,
        "validation": crit,
        "candidates": candidates,
        "best_epoch": tlog.best_epoch,
        "scores": _scores(test, fit.labels, fit.delta_hat),
        "tau": fit.tau.tolist(),
        "records": _records(test, fit.labels, fit.delta_hat),
    }
    if align and config.censor_w is not None:
        out["censor_probe"] = run_censor_probe(model, test, config.censor_w).to_dict()
    return out


def _run_kmeans_loss(train, val, test, config: ExperimentConfig, seed: int) -> dict:
    res = kmeans_loss_fit(train, config.k, grid=config.base.grid, seed=seed)
    _, _, val_obj = kmeans_loss_predict(res, val)
    labels, deltas, _ = kmeans_loss_predict(res, test)
    return {
        "selected": {},
        "validation": val_obj,
        "train_objective": res.objective,
        "warning": res.warning,
        "scores": _scores(test, labels, deltas),
        "theta": res.theta.tolist(),
        "records": _records(test, labels, deltas),
    }


def _run_identify(train, val, test, config: ExperimentConfig, seed: int) -> dict:
    res = identify(test, config.k, strict=False)
    return {
        "selected": {},
        "validation": None,
        "diagnostics": len(res.diagnostics),
        "scores": _scores(test, res.labels, res.deltas),
        "theta": [[[None if not math.isfinite(v) else v for v in row] for row in m] for m in res.theta_hat.tolist()],
        "records": _records(test, res.labels, res.deltas),
    }


def run_method(method: str, dataset: Dataset, folds: dict, config: ExperimentConfig, trial: int) -> dict:
    """One (trial, method) cell.  Failures are captured, never raised."""
    seed = trial_seed(config, trial)
    train, val, test = (dataset.subset(folds[k]) for k in ("train", "val", "test"))
    head = {"trial": trial, "method": method, "seed": seed, "split_sizes": [len(train), len(val), len(test)]}
    try:
        if method in ("sublign", "subnolign"):
            body = _run_sublign(method, train, val, test, config, seed)
        elif method == "kmeans-loss":
            body = _run_kmeans_loss(train, val, test, config, seed)
        else:
            body = _run_identify(train, val, test, config, seed)
        return {**head, "status": "ok", **body}
    except Exception as exc:  # isolate failures per cell
        log.warning("trial %d %s failed: %s", trial, method, exc)
        return {**head, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _cell(args):
    method, dataset, folds, config, trial = args
    return run_method(method, dataset, folds, config, trial)


# --- aggregation -----------------------------------------------------------------


@dataclass
class Report:
    config: dict
    folds: list[dict]
    raw: list[dict]  # one per (trial, method), trial-major
    rows: list[dict] = field(default_factory=list)
    tests: list[dict] = field(default_factory=list)

    def failed_everywhere(self) -> list[str]:
        methods = self.config["methods"]
        return [m for m in methods if all(r["status"] == "failed" for r in self.raw if r["method"] == m)]


def _mean_std(values):
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    mean = float(np.mean(v))
    std = float(np.std(v, ddof=1)) if len(v) > 1 else None
    return mean, std


def summarize(methods, raw: list[dict]) -> list[dict]:
    rows = []
    for m in methods:
        cells = [r for r in raw if r["method"] == m]
        ok = [r for r in cells if r["status"] == "ok"]
        row = {"method": m, "n_ok": len(ok), "n_failed": len(cells) - len(ok)}
        for metric in METRICS:
            row[f"{metric}_mean"], row[f"{metric}_std"] = _mean_std([r["scores"][metric] for r in ok])
        probes = [r["censor_probe"]["fraction"] for r in ok if "censor_probe" in r]
        if probes:
            row["censor_mean"], row["censor_std"] = _mean_std(probes)
        rows.append(row)
    return rows


def significance(methods, raw: list[dict], reference: str = "sublign", alpha: float = 0.05) -> list[dict]:
    """Paired t-tests of each method against ``reference`` per metric, Benjamini-Hochberg adjusted."""
    if reference not in methods:
        return []

    def by_trial(m, metric):
        return {r["trial"]: r["scores"][metric] for r in raw
                if r["method"] == m and r["status"] == "ok" and r["scores"][metric] is not None}

    tests = []
    for m in methods:
        if m == reference:
            continue
        for metric in METRICS:
            a, b = by_trial(reference, metric), by_trial(m, metric)
            common = sorted(set(a) & set(b))
            if len(common) < 2:
                continue
            tt = paired_ttest([a[t] for t in common], [b[t] for t in common])
            tests.append({"reference": reference, "method": m, "metric": metric, "n": len(common),
                          "t": tt.t, "p": tt.p, "degenerate": tt.degenerate})
    if tests:
        adj, reject = benjamini_hochberg([t["p"] for t in tests], alpha)
        for t, a, r in zip(tests, adj, reject):
            t["p_adjusted"] = float(a)
            t["reject"] = bool(r)
    return tests


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> Report:
    dataset = dataset if dataset is not None else build_dataset(config)
    folds = [make_folds(dataset.ids, trial_seed(config, t), config.splits) for t in range(config.n_trials)]
    jobs = [(m, dataset, folds[t], config, t) for t in range(config.n_trials) for m in config.methods]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            raw = list(pool.map(_cell, jobs))
    else:
        raw = [_cell(j) for j in jobs]
    report = Report(config.to_dict(), folds, raw)
    report.rows = summarize(config.methods, raw)
    report.tests = significance(config.methods, raw)
    return report


# --- rendering -------------------------------------------------------------------

CSV_FIELDS = ["method", "n_ok", "n_failed"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r[k] if k in ("method", "n_ok", "n_failed") else _fmt(r[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def _pm(mean, std) -> str:
    if mean is None:
        return "-"
    return f"{mean:.3f} ± {std:.3f}" if std is not None else f"{mean:.3f}"


def report_text(rows: list[dict], tests: list[dict] = ()) -> str:
    header = ["METHOD", "ARI", "SWAPS", "PEARSON", "FAILED"]
    body = [[r["method"], _pm(r["ari_mean"], r["ari_std"]), _pm(r["swaps_mean"], r["swaps_std"]),
             _pm(r["pearson_mean"], r["pearson_std"]), str(r["n_failed"])] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [header] + body]
    probes = [r for r in rows if "censor_mean" in r]
    if probes:
        lines.append("")
        lines += [f"censor probe {r['method']}: {_pm(r['censor_mean'], r['censor_std'])}" for r in probes]
    if tests:
        lines.append("")
        lines.append("paired t-tests (Benjamini-Hochberg adjusted)")
        for t in tests:
            flag = " *" if t["reject"] else ""
            lines.append(f"  {t['reference']} vs {t['method']} {t['metric']}: t={t['t']:.3f} "
                         f"p={t['p']:.4g} p_adj={t['p_adjusted']:.4g}{flag}")
    return "\n".join(lines) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def render_report(report: Report, out_dir) -> None:
    out = Path(out_dir)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    (out / "folds").mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(report.rows))
    (out / "report.txt").write_text(report_text(report.rows, report.tests))
    (out / "config.json").write_text(_dump(report.config))
    if report.tests:
        (out / "tests.json").write_text(_dump(report.tests))
    for t, f in enumerate(report.folds):
        (out / "folds" / f"trial-{t}.json").write_text(_dump(f))
    for r in report.raw:
        (out / "raw" / f"trial-{r['trial']}-{r['method']}.json").write_text(_dump(r))
