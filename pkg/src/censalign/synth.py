"""Synthetic benchmarks: sigmoid, quadratic and spline families, plus censoring and missingness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .data import Dataset, LinkFamily, LinkSpec, Trajectory, _sigmoid

FAMILIES = ("sigmoid", "quad1", "quad2", "quad3", "quad4", "quad5", "quad6", "spline-incr", "spline-any")


@dataclass(frozen=True)
class GeneratorSpec:
    family: str = "sigmoid"
    n_patients: int = 1000
    n_visits: int = 4
    noise_var: float = 0.25
    t_max: float = 10.0
    subtype_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown generator family {self.family!r}; expected one of {FAMILIES}")
        if self.n_visits < 1:
            raise ValueError("n_visits must be >= 1")
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not 0 <= self.subtype_prob <= 1:
            raise ValueError("subtype_prob must lie in [0, 1]")


def sigmoid_subtypes() -> list[Callable[[np.ndarray], np.ndarray]]:
    def f1(t):
        return np.stack([_sigmoid(-4 + t), _sigmoid(-1 + t), _sigmoid(-8 + 8 * t)], axis=-1)

    def f2(t):
        return np.stack([_sigmoid(-1 + t), _sigmoid(-8 + 8 * t), _sigmoid(-25 + 3.5 * t)], axis=-1)

    return [f1, f2]


# (subtype 1, subtype 2) ascending coefficients for each quadratic case
QUADRATIC_CASES: dict[int, tuple[tuple[float, ...], tuple[float, ...]]] = {
    1: ((5.0, -2.2, 0.25), (2.0, 0.0, 0.0)),
    2: ((5.0, -2.2, 0.25), (-2.0, 0.0, 0.0)),
    3: ((5.0, -2.2, 0.25), (0.0, 0.4, 0.0)),
    4: ((5.0, -2.2, 0.25), (-5.0, 0.4, 0.0)),
    5: ((3.0, -2.2, 0.25), (-5.0, 2.2, -0.25)),
    6: ((7.0, -2.2, 0.25), (-5.0, 2.2, -0.25)),
}


def quadratic_subtypes(case: int):
    if case not in QUADRATIC_CASES:
        raise ValueError(f"quadratic case must be in 1..6, got {case}")
    fns = []
    for coef in QUADRATIC_CASES[case]:
        c = np.array(coef)
        fns.append(lambda t, c=c: (c[0] + c[1] * t + c[2] * t**2)[..., None])
    return fns


def spline_subtypes(rng: np.random.Generator, t_max: float, monotone: bool, dim: int = 3, k: int = 2):
    """Natural cubic splines through 5 control points per (subtype, dimension)."""
    knots = np.linspace(0.0, t_max, 5)
    fns, controls = [], []
    for _ in range(k):
        splines = []
        ords = []
        for _ in range(dim):
            y = rng.uniform(0.0, 1.0, size=5)
            if monotone:
                y = np.sort(y)
            ords.append(y)
            splines.append(CubicSpline(knots, y, bc_type="natural"))
        controls.append(np.array(ords))
        fns.append(lambda t, s=tuple(splines): np.stack([sp(t) for sp in s], axis=-1))
    return fns, knots, controls


def _sample_times(rng: np.random.Generator, m: int, t_max: float) -> np.ndarray:
    t = rng.uniform(0.0, t_max, size=m)
    while len(np.unique(t)) < m:
        _, first = np.unique(t, return_index=True)
        dup = np.setdiff1d(np.arange(m), first)
        t[dup] = rng.uniform(0.0, t_max, size=len(dup))
    return np.sort(t)


def _sample(spec: GeneratorSpec, rng: np.random.Generator, subtype_fns, dim: int, link: LinkSpec, extra: dict | None = None) -> Dataset:
    sd = float(np.sqrt(spec.noise_var))
    trajs = []
    width = len(str(max(spec.n_patients - 1, 0)))
    for i in range(spec.n_patients):
        s = int(rng.random() < spec.subtype_prob)
        t = _sample_times(rng, spec.n_visits, spec.t_max)
        mean = subtype_fns[s](t)
        y = mean + sd * rng.standard_normal(mean.shape) if sd > 0 else mean.copy()
        zeta = float(t[0])
        x = t - zeta
        x[0] = 0.0
        trajs.append(
            Trajectory(f"p{i:0{width}d}", x, y, np.ones_like(y, dtype=bool), true_subtype=s, true_delta=zeta)
        )
    prov = {"generator": spec.family, **asdict(spec)}
    if extra:
        prov.update(extra)
    return Dataset(tuple(trajs), dim, link, json.dumps(prov, sort_keys=True))


def gen_sigmoid(spec: GeneratorSpec) -> Dataset:
    if spec.family != "sigmoid":
        raise ValueError("gen_sigmoid needs family 'sigmoid'")
    rng = np.random.default_rng(spec.seed)
    return _sample(spec, rng, sigmoid_subtypes(), 3, LinkSpec(LinkFamily.SIGMOID))


def gen_quadratic(spec: GeneratorSpec) -> Dataset:
    if not spec.family.startswith("quad"):
        raise ValueError("gen_quadratic needs family 'quad1'..'quad6'")
    case = int(spec.family[4:])
    rng = np.random.default_rng(spec.seed)
    return _sample(spec, rng, quadratic_subtypes(case), 1, LinkSpec(LinkFamily.IDENTITY))


def gen_spline(spec: GeneratorSpec) -> Dataset:
    if not spec.family.startswith("spline"):
        raise ValueError("gen_spline needs family 'spline-incr' or 'spline-any'")
    monotone = spec.family == "spline-incr"
    rng = np.random.default_rng(spec.seed)
    fns, knots, controls = spline_subtypes(rng, spec.t_max, monotone)
    link = LinkSpec(LinkFamily.SIGMOID) if monotone else LinkSpec(LinkFamily.IDENTITY)
    extra = {"knots": knots.tolist(), "control_points": [c.tolist() for c in controls]}
    return _sample(spec, rng, fns, 3, link, extra)


def generate(spec: GeneratorSpec) -> Dataset:
    if spec.family == "sigmoid":
        return gen_sigmoid(spec)
    if spec.family.startswith("quad"):
        return gen_quadratic(spec)
    return gen_spline(spec)


def _append_provenance(dataset: Dataset, **items) -> str:
    try:
        prov = json.loads(dataset.provenance) if dataset.provenance else {}
        if not isinstance(prov, dict):
            prov = {"source": prov}
    except json.JSONDecodeError:
        prov = {"source": dataset.provenance}
    prov.setdefault("transforms", []).append(items)
    return json.dumps(prov, sort_keys=True)


def apply_missingness(dataset: Dataset, rate: float, seed: int) -> Dataset:
    """Drop each present cell independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"missingness rate must lie in [0, 1], got {rate}")
    if rate == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    kept, dropped = [], 0
    for traj in dataset.trajectories:
        remove = rng.random(traj.mask.shape) < rate
        mask = traj.mask & ~remove
        if not mask.any():
            dropped += 1
            continue
        values = np.where(mask, traj.values, np.nan)
        kept.append(traj.replace(values=values, mask=mask))
    prov = _append_provenance(dataset, op="missingness", rate=rate, seed=seed, dropped=dropped)
    return dataset.with_trajectories(kept, provenance=prov)


def front_cut(traj: Trajectory, w: float) -> Trajectory | None:
    keep = np.nonzero(traj.times >= w)[0]
    return _rezero(traj.take(keep)) if len(keep) else None


def back_cut(traj: Trajectory, w: float) -> Trajectory | None:
    keep = np.nonzero(traj.times <= traj.times[-1] - w)[0]
    return traj.take(keep) if len(keep) else None


def _rezero(traj: Trajectory) -> Trajectory:
    shift = float(traj.times[0])
    if shift == 0.0:
        return traj
    times = traj.times - shift
    times[0] = 0.0
    true_delta = None if traj.true_delta is None else traj.true_delta + shift
    return traj.replace(times=times, true_delta=true_delta, offset=traj.offset + shift)


def drop_visits(traj: Trajectory, front: int = 0, back: int = 0) -> Trajectory | None:
    """Remove a fixed number of visits from either end, re-zeroing after a front cut."""
    m = traj.n_visits
    if front + back >= m:
        return None
    out = traj.take(np.arange(front, m - back))
    return _rezero(out) if front else out


def censor_window(dataset: Dataset, drop: str, w: float) -> Dataset:
    """Cut ``w`` time units from the front (``"front"``) or back (``"back"``) of each series.

    Series left with no visits (or no observed cells) are dropped.
    """
    if drop not in ("front", "back"):
        raise ValueError(f"drop must be 'front' or 'back', got {drop!r}")
    cut = front_cut if drop == "front" else back_cut
    kept = []
    for traj in dataset.trajectories:
        out = cut(traj, w)
        if out is not None and out.mask.any():
            kept.append(out)
    prov = _append_provenance(dataset, op="censor", drop=drop, w=w, dropped=len(dataset) - len(kept))
    return dataset.with_trajectories(kept, provenance=prov)
