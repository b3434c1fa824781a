"""Data model for censored multivariate time-series.

Trajectories hold already-censored observation times (first visit at 0) and a
value grid with an explicit presence mask.  Datasets serialize to JSON Lines
with a header line.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit


class LinkFamily(str, enum.Enum):
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


DEFAULT_DEGREE = {LinkFamily.SIGMOID: 1, LinkFamily.IDENTITY: 2}


@dataclass(frozen=True)
class LinkSpec:
    """Link function ``f`` together with the polynomial degree ``P`` of ``kappa``."""

    family: LinkFamily = LinkFamily.SIGMOID
    degree: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", LinkFamily(self.family))
        if self.degree is None:
            object.__setattr__(self, "degree", DEFAULT_DEGREE[self.family])
        if self.degree < 1:
            raise ValueError(f"polynomial degree must be positive, got {self.degree}")

    @classmethod
    def parse(cls, name: str, degree: int | None = None) -> "LinkSpec":
        return cls(LinkFamily(name.lower()), degree)

    @property
    def n_coef(self) -> int:
        return self.degree + 1

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is LinkFamily.SIGMOID:
            return _sigmoid(x)
        return x

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.family is LinkFamily.SIGMOID:
            return np.log(y) - np.log1p(-y)
        return y


def _sigmoid(x):
    return expit(x)


def polyval(theta, t):
    """Evaluate ``sum_p theta[..., p] * t**p`` (ascending coefficients)."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(np.broadcast_shapes(theta.shape[:-1], t.shape))
    for p in range(theta.shape[-1] - 1, -1, -1):
        out = out * t + theta[..., p]
    return out


@dataclass(frozen=True)
class AlignmentGrid:
    delta_max: float = 10.0
    step: float = 0.2

    def __post_init__(self):
        if not (self.delta_max > 0 and self.step > 0):
            raise ValueError("delta_max and step must be positive")

    @property
    def size(self) -> int:
        # tolerate float noise such as 10 / 0.2 = 49.999...
        return int(math.floor(self.delta_max / self.step + 1e-9)) + 1

    @property
    def points(self) -> np.ndarray:
        pts = np.arange(self.size) * self.step
        pts[-1] = min(pts[-1], self.delta_max)
        if not math.isclose(pts[-1], self.delta_max, rel_tol=0, abs_tol=1e-9):
            pts = np.append(pts, self.delta_max)
        return pts


class RegType(str, enum.Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class SubLignConfig:
    latent_dim: int = 5
    rnn_hidden: int = 100
    mlp_hidden: int = 50
    learning_rate: float = 0.01
    epochs: int = 1000
    kl_weight: float = 1.0
    reg_type: RegType = RegType.NONE
    reg_strength: float = 0.0
    grid: AlignmentGrid = field(default_factory=AlignmentGrid)
    k_clusters: int = 2
    seed: int = 0
    cell: str = "gru"

    def __post_init__(self):
        object.__setattr__(self, "reg_type", RegType(self.reg_type))
        if isinstance(self.grid, dict):
            object.__setattr__(self, "grid", AlignmentGrid(**self.grid))
        for name in ("latent_dim", "rnn_hidden", "mlp_hidden", "epochs", "k_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.kl_weight < 0 or self.reg_strength < 0:
            raise ValueError("kl_weight and reg_strength must be non-negative")
        if self.cell not in ("gru", "vanilla"):
            raise ValueError(f"unknown recurrent cell {self.cell!r}")

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "rnn_hidden": self.rnn_hidden,
            "mlp_hidden": self.mlp_hidden,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "kl_weight": self.kl_weight,
            "reg_type": self.reg_type.value,
            "reg_strength": self.reg_strength,
            "grid": {"delta_max": self.grid.delta_max, "step": self.grid.step},
            "k_clusters": self.k_clusters,
            "seed": self.seed,
            "cell": self.cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubLignConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One series.  ``values`` is an ``M x D`` float array; ``mask`` marks present cells.

    Missing cells hold NaN in ``values`` but the mask is authoritative.
    ``offset`` accumulates time removed from the front by censoring cuts.
    """

    id: str
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    true_subtype: int | None = None
    true_delta: float | None = None
    offset: float = 0.0

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(len(times), -1) if len(times) else values.reshape(0, 0)
        mask = np.array(self.mask, dtype=bool)
        for arr in (times, values, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_rows(cls, id: str, times: Sequence[float], rows: Sequence[Sequence[float | None]], **kw) -> "Trajectory":
        values = np.array([[np.nan if v is None else float(v) for v in row] for row in rows], dtype=float)
        if values.size == 0:
            values = values.reshape(len(rows), 0)
        mask = np.array([[v is not None for v in row] for row in rows], dtype=bool).reshape(values.shape)
        return cls(id, np.asarray(times, dtype=float), values, mask, **kw)

    @property
    def n_visits(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1] if self.values.ndim == 2 else 0

    def rows(self) -> list[list[float | None]]:
        return [
            [float(v) if m else None for v, m in zip(vrow, mrow)]
            for vrow, mrow in zip(self.values, self.mask)
        ]

    def replace(self, **changes) -> "Trajectory":
        return replace(self, **changes)

    def take(self, idx) -> "Trajectory":
        """Keep only the visits at ``idx`` (times untouched)."""
        idx = np.asarray(idx, dtype=int)
        return self.replace(times=self.times[idx], values=self.values[idx], mask=self.mask[idx])

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and self.true_subtype == other.true_subtype
            and self.true_delta == other.true_delta
            and self.offset == other.offset
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(np.where(self.mask, self.values, 0.0), np.where(other.mask, other.values, 0.0))
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    dim: int
    link: LinkSpec = field(default_factory=LinkSpec)
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.trajectories]

    def with_trajectories(self, trajectories: Iterable[Trajectory], provenance: str | None = None) -> "Dataset":
        return replace(
            self,
            trajectories=tuple(trajectories),
            provenance=self.provenance if provenance is None else provenance,
        )

    def subset(self, ids: Iterable[str]) -> "Dataset":
        by_id = {t.id: t for t in self.trajectories}
        return self.with_trajectories(by_id[i] for i in ids)


def validate(dataset: Dataset) -> list[str]:
    """Return human-readable invariant violations; empty iff the dataset is well formed."""
    problems = []
    seen = set()
    for traj in dataset.trajectories:
        tid = traj.id
        if tid in seen:
            problems.append(f"{tid}: duplicate id")
        seen.add(tid)
        t = traj.times
        if len(t) == 0:
            problems.append(f"{tid}: no visits")
        if np.any(~np.isfinite(t)):
            problems.append(f"{tid}: non-finite times")
        if np.any(t < 0):
            problems.append(f"{tid}: negative times")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            problems.append(f"{tid}: non-increasing times")
        if traj.values.ndim != 2 or traj.values.shape[0] != len(t):
            problems.append(f"{tid}: values length {traj.values.shape[0] if traj.values.ndim else 0} != times length {len(t)}")
        elif traj.values.shape[1] != dataset.dim:
            problems.append(f"{tid}: row width {traj.values.shape[1]} != dim {dataset.dim}")
        if traj.mask.shape != traj.values.shape:
            problems.append(f"{tid}: mask shape {traj.mask.shape} != values shape {traj.values.shape}")
        elif not traj.mask.any():
            problems.append(f"{tid}: no observed values")
        elif np.any(~np.isfinite(traj.values[traj.mask])):
            problems.append(f"{tid}: non-finite observed value")
        if traj.true_subtype is not None and traj.true_subtype < 0:
            problems.append(f"{tid}: negative true_subtype")
        if traj.true_delta is not None and not (traj.true_delta >= 0):
            problems.append(f"{tid}: true_delta must be >= 0")
    return problems


def reverse_time(dataset: Dataset) -> Dataset:
    """Reverse every series in time, turning right-censoring into left-censoring."""
    out = []
    for traj in dataset.trajectories:
        t = traj.times
        new_t = (t[-1] - t)[::-1] if len(t) else t
        out.append(traj.replace(times=new_t, values=traj.values[::-1], mask=traj.mask[::-1]))
    return dataset.with_trajectories(out)


# --- JSON Lines -------------------------------------------------------------


def _traj_record(traj: Trajectory) -> dict:
    rec = {"id": traj.id, "times": [float(x) for x in traj.times], "values": traj.rows()}
    if traj.true_subtype is not None:
        rec["true_subtype"] = int(traj.true_subtype)
    if traj.true_delta is not None:
        rec["true_delta"] = float(traj.true_delta)
    if traj.offset:
        rec["offset"] = float(traj.offset)
    return rec


def dumps(dataset: Dataset) -> str:
    header = {"dim": dataset.dim, "link": dataset.link.family.value, "provenance": dataset.provenance}
    if dataset.link.degree != DEFAULT_DEGREE[dataset.link.family]:
        header["degree"] = dataset.link.degree
    lines = [json.dumps(header)]
    lines.extend(json.dumps(_traj_record(t)) for t in dataset.trajectories)
    return "\n".join(lines) + "\n"


def loads(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty dataset file: missing header line")
    header = json.loads(lines[0])
    if "dim" not in header:
        raise ValueError("first line must be a header with a 'dim' field")
    link = LinkSpec.parse(header.get("link", "sigmoid"), header.get("degree"))
    trajs = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        trajs.append(
            Trajectory.from_rows(
                str(rec["id"]),
                rec["times"],
                rec["values"],
                true_subtype=rec.get("true_subtype"),
                true_delta=rec.get("true_delta"),
                offset=rec.get("offset", 0.0),
            )
        )
    return Dataset(tuple(trajs), int(header["dim"]), link, header.get("provenance", ""))


def save(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps(dataset))


def load(path: str | Path) -> Dataset:
    return loads(Path(path).read_text())
