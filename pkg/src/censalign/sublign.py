"""SubLign: a variational model that clusters series while inferring each series' delayed entry.

The decoder maps a latent ``z`` to per-dimension polynomial coefficients
(ascending order); the mean of dimension ``d`` at time ``x`` with delay
``delta`` is ``f(kappa(x + delta; theta[d]))``.  Training alternates an
exhaustive grid search over ``delta`` with a full-batch Adam step.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import AlignmentGrid, Dataset, LinkFamily, LinkSpec, RegType, SubLignConfig, Trajectory, polyval
from .kmeans import assign, kmeans
from .nn import MLP, Adam, GRUCell, VanillaCell, params_from_json, params_to_json, run_rnn

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
MISSING_FILL = 0.5


def interpolate_missing(traj: Trajectory) -> np.ndarray:
    """Linear interpolation of missing cells along time, per dimension.

    Gaps before the first / after the last observation take the nearest observed
    value; a dimension never observed is filled with 0.5.
    """
    out = np.empty(traj.values.shape, dtype=float)
    for d in range(traj.dim):
        m = traj.mask[:, d]
        if m.any():
            out[:, d] = np.interp(traj.times, traj.times[m], traj.values[m, d])
        else:
            out[:, d] = MISSING_FILL
    return out


@dataclass
class Batch:
    """Padded arrays for a list of trajectories.  Padding visits have zero masks."""

    ids: list[str]
    times: np.ndarray  # (N, M)
    values: np.ndarray  # (N, M, D) with missing cells zeroed
    mask: np.ndarray  # (N, M, D) float
    visit_mask: np.ndarray  # (N, M) float
    enc_input: np.ndarray  # (N, M, 1 + D)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], dim: int) -> "Batch":
        n = len(trajs)
        m_max = max((t.n_visits for t in trajs), default=1)
        times = np.zeros((n, m_max))
        values = np.zeros((n, m_max, dim))
        mask = np.zeros((n, m_max, dim))
        vmask = np.zeros((n, m_max))
        enc = np.zeros((n, m_max, 1 + dim))
        for i, t in enumerate(trajs):
            m = t.n_visits
            times[i, :m] = t.times
            values[i, :m] = np.where(t.mask, t.values, 0.0)
            mask[i, :m] = t.mask
            vmask[i, :m] = 1.0
            enc[i, :m, 0] = t.times
            enc[i, :m, 1:] = interpolate_missing(t)
        return cls([t.id for t in trajs], times, values, mask, vmask, enc)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "Batch":
        return cls.from_trajectories(dataset.trajectories, dataset.dim)

    def __len__(self):
        return len(self.ids)


class SubLign:
    """Encoder (recurrent body + mean/log-variance heads) and polynomial decoder."""

    def __init__(self, dim: int, link: LinkSpec, config: SubLignConfig, align: bool = True):
        self.dim = dim
        self.link = link
        self.config = config
        self.align = align
        rng = np.random.default_rng(config.seed)
        cell_cls = GRUCell if config.cell == "gru" else VanillaCell
        self.cell = cell_cls.init(1 + dim, config.rnn_hidden, rng, "encoder.rnn")
        self.mu_head = MLP.init(config.rnn_hidden, config.mlp_hidden, config.latent_dim, rng, "encoder.mu")
        self.logvar_head = MLP.init(config.rnn_hidden, config.mlp_hidden, config.latent_dim, rng, "encoder.logvar")
        self.decoder = MLP.init(config.latent_dim, config.mlp_hidden, dim * link.n_coef, rng, "decoder")

    # parameters ----------------------------------------------------------------

    def params(self) -> list[Tensor]:
        return self.cell.params() + self.mu_head.params() + self.logvar_head.params() + self.decoder.params()

    def weights(self) -> list[Tensor]:
        return self.cell.weights() + self.mu_head.weights() + self.logvar_head.weights() + self.decoder.weights()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name}")
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}: {state[p.name].shape} vs {p.data.shape}")
            p.data = np.array(state[p.name], dtype=float)

    @property
    def grid(self) -> AlignmentGrid:
        return self.config.grid

    # forward pieces -------------------------------------------------------------

    def encode(self, batch: Batch) -> tuple[Tensor, Tensor]:
        steps = [batch.enc_input[:, m, :] for m in range(batch.enc_input.shape[1])]
        masks = [batch.visit_mask[:, m : m + 1] for m in range(batch.visit_mask.shape[1])]
        h = run_rnn(self.cell, steps, masks)
        return self.mu_head(h), self.logvar_head(h)

    def theta(self, z) -> Tensor:
        """Decoder output reshaped to ``(N, D, P + 1)``."""
        z = ad.as_tensor(z)
        flat = self.decoder(z)
        return flat.reshape(flat.shape[:-1] + (self.dim, self.link.n_coef))

    def theta_np(self, z) -> np.ndarray:
        return self.theta(np.asarray(z, dtype=float)).data

    def mean_values(self, theta: Tensor, shifted_times: np.ndarray) -> Tensor:
        """``f(kappa(t; theta[n, d]))`` for ``t`` in ``shifted_times`` (N, M) -> (N, M, D)."""
        n, m = shifted_times.shape
        kappa = None
        for p in range(self.link.n_coef):
            coef = theta[:, :, p].reshape((n, 1, self.dim))
            term = coef * (shifted_times**p)[:, :, None]
            kappa = term if kappa is None else kappa + term
        if self.link.family is LinkFamily.SIGMOID:
            return ad.sigmoid(kappa)
        return kappa

    # objectives -----------------------------------------------------------------

    def elbo_terms(self, batch: Batch, delta: np.ndarray, eps: np.ndarray | None, kl_weight: float | None = None,
                   encoded: tuple[Tensor, Tensor] | None = None):
        """Per-series ELBO (Tensor of shape (N,)) for one-hot ``delta`` (values, shape (N,)).

        ``eps`` has shape ``(n_mc, N, latent)``; ``None`` scores at the posterior mean.
        """
        beta = self.config.kl_weight if kl_weight is None else kl_weight
        mu, logvar = encoded if encoded is not None else self.encode(batch)
        shifted = batch.times + np.asarray(delta, dtype=float)[:, None]
        if eps is None:
            samples = [mu]
        else:
            std = ad.exp(logvar * 0.5)
            samples = [mu + std * e for e in eps]
        rec = None
        for z in samples:
            yhat = self.mean_values(self.theta(z), shifted)
            resid = yhat - batch.values
            ll = ((resid * resid) * (-0.5) * batch.mask).sum(axis=(1, 2)) - 0.5 * LOG_2PI * batch.mask.sum(axis=(1, 2))
            rec = ll if rec is None else rec + ll
        rec = rec * (1.0 / len(samples))
        kl = (mu * mu + ad.exp(logvar) - logvar - 1.0).sum(axis=1) * 0.5
        return rec - math.log(self.grid.size) - kl * beta

    def penalty(self) -> Tensor | float:
        cfg = self.config
        if cfg.reg_type is RegType.NONE or cfg.reg_strength == 0:
            return 0.0
        total = None
        for w in self.weights():
            term = ad.absolute(w).sum() if cfg.reg_type is RegType.L1 else (w * w).sum()
            total = term if total is None else total + term
        return total * cfg.reg_strength

    def objective(self, batch: Batch, delta: np.ndarray, eps: np.ndarray | None,
                  encoded: tuple[Tensor, Tensor] | None = None) -> Tensor:
        """Training objective to maximise: summed ELBO minus the weight penalty."""
        return self.elbo_terms(batch, delta, eps, encoded=encoded).sum() - self.penalty()

    # delta search ---------------------------------------------------------------

    def delta_scores(self, batch: Batch, z: np.ndarray | None = None) -> np.ndarray:
        """Reconstruction log-likelihood at every grid point, shape (N, S), with z at the posterior mean."""
        if z is None:
            z = self.encode(batch)[0].data
        theta = self.theta_np(z)  # (N, D, C)
        pts = self.grid.points
        t = batch.times[:, None, :] + pts[None, :, None]  # (N, S, M)
        kappa = polyval(theta[:, None, None, :, :], t[..., None])  # (N, S, M, D)
        yhat = self.link.apply(kappa)
        resid = yhat - batch.values[:, None]
        return -0.5 * (resid * resid * batch.mask[:, None]).sum(axis=(2, 3))

    def grid_search_delta(self, batch: Batch, z: np.ndarray | None = None) -> np.ndarray:
        """Index of the best grid point per series; ties go to the smaller delta."""
        if not self.align:
            return np.zeros(len(batch), dtype=int)
        return np.argmax(self.delta_scores(batch, z), axis=1)

    def deltas(self, batch: Batch) -> np.ndarray:
        return self.grid.points[self.grid_search_delta(batch)]

    def decode_trajectory(self, z, times, delta: float) -> np.ndarray:
        """Predicted means (M, D) for a single latent ``z`` at ``times + delta``."""
        if delta < 0:
            raise ValueError("delta must be non-negative")
        theta = self.theta_np(np.asarray(z, dtype=float)[None, :])[0]
        return self.link.apply(polyval(theta[None, :, :], (np.asarray(times, float) + delta)[:, None]))

    # persistence ----------------------------------------------------------------

    def to_json(self, log_: dict | None = None) -> dict:
        return {
            "dim": self.dim,
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "align": self.align,
            "config": self.config.to_dict(),
            "params": params_to_json(self.state_dict()),
            "log": log_ or {},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SubLign":
        link = LinkSpec.parse(obj["link"]["family"], obj["link"]["degree"])
        model = cls(obj["dim"], link, SubLignConfig.from_dict(obj["config"]), obj.get("align", True))
        model.load_state_dict(params_from_json(obj["params"]))
        return model

    def save(self, path, log_: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(log_)))

    @classmethod
    def load(cls, path) -> "SubLign":
        return cls.from_json(json.loads(Path(path).read_text()))


def decode_trajectory(model: SubLign, z, times, delta: float) -> np.ndarray:
    return model.decode_trajectory(z, times, delta)


def elbo(model: SubLign, trajectory: Trajectory | Batch, delta: float, kl_weight: float | None = None,
         n_mc: int = 1, rng: np.random.Generator | None = None) -> Tensor:
    """ELBO of a single series for one-hot ``q(delta)``, as a differentiable scalar."""
    batch = trajectory if isinstance(trajectory, Batch) else Batch.from_trajectories([trajectory], trajectory.dim)
    rng = rng or np.random.default_rng(0)
    eps = rng.standard_normal((n_mc, len(batch), model.config.latent_dim))
    return model.elbo_terms(batch, np.full(len(batch), float(delta)), eps, kl_weight).sum()


def grid_search_delta(model: SubLign, trajectory: Trajectory) -> float:
    batch = Batch.from_trajectories([trajectory], trajectory.dim)
    return float(model.deltas(batch)[0])


# --- training ----------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainLog:
    elbo: list[float] = field(default_factory=list)  # mean per-series ELBO, per epoch
    best_epoch: int = -1
    best_elbo: float = -math.inf

    def to_dict(self) -> dict:
        return {"elbo": self.elbo, "best_epoch": self.best_epoch, "best_elbo": self.best_elbo}


def train(dataset: Dataset, config: SubLignConfig, align: bool = True, link: LinkSpec | None = None):
    """Fit SubLign (or SubNoLign with ``align=False``).  Returns ``(model, log)``.

    The returned parameters are those with the best training ELBO seen.
    """
    model = SubLign(dataset.dim, link or dataset.link, config, align=align)
    batch = Batch.from_dataset(dataset)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.params(), lr=config.learning_rate)
    pts = model.grid.points
    history = TrainLog()
    best_state = model.state_dict()
    n = len(batch)
    for epoch in range(config.epochs):
        encoded = model.encode(batch)
        delta = pts[model.grid_search_delta(batch, encoded[0].data)]
        eps = rng.standard_normal((1, n, config.latent_dim))
        obj = model.objective(batch, delta, eps, encoded)
        value = obj.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"ELBO became non-finite at epoch {epoch}")
        mean_elbo = value / n
        history.elbo.append(mean_elbo)
        if mean_elbo > history.best_elbo:
            history.best_elbo, history.best_epoch = mean_elbo, epoch
            best_state = model.state_dict()
        try:
            grads = ad.grad(-obj, model.params())
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        opt.step(grads)
        if epoch % 100 == 0:
            log.debug("epoch %d mean ELBO %.4f", epoch, mean_elbo)
    model.load_state_dict(best_state)
    return model, history


def subnolign_train(dataset: Dataset, config: SubLignConfig, link: LinkSpec | None = None):
    return train(dataset, config, align=False, link=link)


def score_elbo(model: SubLign, dataset: Dataset, seed: int = 0) -> float:
    """Mean per-series ELBO with grid-searched delta and one fixed-seed z sample."""
    batch = Batch.from_dataset(dataset)
    delta = model.deltas(batch)
    eps = np.random.default_rng(seed).standard_normal((1, len(batch), model.config.latent_dim))
    return float(model.elbo_terms(batch, delta, eps).data.mean())


# --- inference ---------------------------------------------------------------


@dataclass
class FitResult:
    ids: list[str]
    z: np.ndarray  # (N, latent)
    delta_hat: np.ndarray | None  # (N,); None when the model does not align
    labels: np.ndarray  # (N,)
    centers: np.ndarray  # (K, latent)
    tau: np.ndarray  # (K, D, P + 1)
    elbo_curve: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        records = []
        for i, tid in enumerate(self.ids):
            rec = {"id": tid, "z": [float(v) for v in self.z[i]], "label": int(self.labels[i])}
            rec["delta_hat"] = None if self.delta_hat is None else float(self.delta_hat[i])
            records.append(rec)
        return {
            "records": records,
            "centers": self.centers.tolist(),
            "tau": self.tau.tolist(),
            "elbo_curve": list(self.elbo_curve),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FitResult":
        recs = obj["records"]
        deltas = [r.get("delta_hat") for r in recs]
        return cls(
            [r["id"] for r in recs],
            np.array([r["z"] for r in recs], dtype=float),
            None if any(d is None for d in deltas) else np.array(deltas, dtype=float),
            np.array([r["label"] for r in recs], dtype=int),
            np.array(obj["centers"], dtype=float),
            np.array(obj["tau"], dtype=float),
            obj.get("elbo_curve", []),
        )


def infer(model: SubLign, dataset: Dataset, k: int, seed: int = 0, centers: np.ndarray | None = None,
          elbo_curve: Sequence[float] = ()) -> FitResult:
    """Encode, align and cluster ``dataset``.

    With ``centers`` given, series are assigned to the nearest of those centers
    (for scoring held-out data against clusters fitted on training data).
    """
    if centers is None and k > len(dataset):
        raise ValueError(f"cannot form {k} clusters from {len(dataset)} series")
    batch = Batch.from_dataset(dataset)
    z = model.encode(batch)[0].data
    delta = model.grid.points[model.grid_search_delta(batch, z)] if model.align else None
    if centers is None:
        labels, centers = kmeans(z, k, seed=seed)
    else:
        centers = np.asarray(centers, dtype=float)
        labels = assign(z, centers)
    tau = model.theta_np(centers)
    return FitResult(list(batch.ids), z, delta, np.asarray(labels, dtype=int), centers, tau, list(elbo_curve))
