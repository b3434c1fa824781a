"""KMeans+Loss: cluster raw observations first, then fit per-cluster curves and per-series shifts.

Stage 1 runs k-means on a fixed-width embedding of each series (values
resampled onto a 10-point grid over its observed span).  Stage 2 freezes those
labels and minimises the squared residual

    sum_i sum_m sum_d mask * (y[i,m,d] - f(kappa(x[i,m] + delta_i; theta[s_i, d])))**2

over ``theta`` and ``delta`` with a box-projected BFGS.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .data import AlignmentGrid, Dataset, LinkFamily, LinkSpec, Trajectory
from .ident import RankError, polyfit
from .kmeans import assign, kmeans
from .sublign import Batch, interpolate_missing

log = logging.getLogger(__name__)

N_FEATURE_POINTS = 10
LOGIT_CLIP = 0.01


def feature_vector(traj: Trajectory, n_points: int = N_FEATURE_POINTS) -> np.ndarray:
    """Per-dimension values interpolated onto ``n_points`` evenly spaced times, concatenated."""
    filled = interpolate_missing(traj)
    grid = np.linspace(traj.times[0], traj.times[-1], n_points)
    return np.concatenate([np.interp(grid, traj.times, filled[:, d]) for d in range(traj.dim)])


def feature_matrix(dataset: Dataset, n_points: int = N_FEATURE_POINTS) -> np.ndarray:
    return np.stack([feature_vector(t, n_points) for t in dataset])


# --- objective ----------------------------------------------------------------


def _powers(t: np.ndarray, degree: int) -> np.ndarray:
    return t[..., None] ** np.arange(degree + 1)


def _forward(theta, delta, batch: Batch, labels, link: LinkSpec):
    t = batch.times + delta[:, None]  # (N, M)
    pw = _powers(t, link.degree)  # (N, M, P+1)
    th = theta[labels]  # (N, D, P+1)
    kappa = np.einsum("nmp,ndp->nmd", pw, th)
    if link.family is LinkFamily.SIGMOID:
        yhat = link.apply(kappa)
        dy = yhat * (1.0 - yhat)
    else:
        yhat, dy = kappa, np.ones_like(kappa)
    resid = (yhat - batch.values) * batch.mask
    return t, pw, th, resid, dy


def objective(theta, delta, batch: Batch, labels, link: LinkSpec) -> float:
    """Summed squared residual over present cells."""
    _, _, _, resid, _ = _forward(theta, delta, batch, labels, link)
    return float((resid * resid).sum())


def objective_grad(theta, delta, batch: Batch, labels, link: LinkSpec):
    """``(value, d/dtheta, d/ddelta)``, analytic."""
    t, pw, th, resid, dy = _forward(theta, delta, batch, labels, link)
    w = 2.0 * resid * dy  # (N, M, D)
    g_rows = np.einsum("nmd,nmp->ndp", w, pw)
    g_theta = np.zeros_like(theta)
    np.add.at(g_theta, labels, g_rows)
    P = link.degree
    dpw = np.zeros_like(pw)
    if P >= 1:
        dpw[..., 1:] = np.arange(1, P + 1) * pw[..., :-1]
    dkappa = np.einsum("nmp,ndp->nmd", dpw, th)
    g_delta = (w * dkappa).sum(axis=(1, 2))
    return float((resid * resid).sum()), g_theta, g_delta


def per_series_objective(theta, delta, batch: Batch, labels, link: LinkSpec) -> np.ndarray:
    _, _, _, resid, _ = _forward(theta, delta, batch, labels, link)
    return (resid * resid).sum(axis=(1, 2))


# --- optimiser ----------------------------------------------------------------


@dataclass
class BFGSInfo:
    n_iter: int
    converged: bool
    line_search_failed: bool
    history: list[float] = field(default_factory=list)


def bfgs_box(fun_grad, x0, lower, upper, max_iter: int = 500, gtol: float = 1e-6, ftol: float = 1e-12,
             c1: float = 1e-4, max_halvings: int = 50):
    """Minimise with BFGS (dense inverse Hessian) and Armijo backtracking, projecting onto a box.

    Variables pinned at a bound whose gradient points outward are frozen for
    the step.  Returns ``(x, f, BFGSInfo)``; ``history`` holds the objective
    after every accepted step and never increases.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun_grad(x)
    n = x.size
    H = np.eye(n)
    info = BFGSInfo(0, False, False, [f])
    for it in range(max_iter):
        active = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        g_free = np.where(active, 0.0, g)
        if np.max(np.abs(g_free), initial=0.0) < gtol:
            info.converged = True
            break
        p = -(H @ g_free)
        p[active] = 0.0
        if p @ g_free >= 0:
            H = np.eye(n)
            p = -g_free
        alpha = 1.0
        for _ in range(max_halvings):
            x_new = np.clip(x + alpha * p, lower, upper)
            f_new = fun_grad(x_new, value_only=True)
            if f_new <= f + c1 * (g @ (x_new - x)):
                break
            alpha *= 0.5
        else:
            info.line_search_failed = True
            log.warning("line search failed after %d halvings; returning best point so far", max_halvings)
            break
        f_new, g_new = fun_grad(x_new)
        s, y = x_new - x, g_new - g
        sy = s @ y
        if sy > 1e-12:
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        done = abs(f - f_new) <= ftol * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        info.history.append(f)
        info.n_iter = it + 1
        if done:
            info.converged = True
            break
    return x, f, info


# --- fitting ------------------------------------------------------------------


@dataclass
class KMeansLossResult:
    ids: list[str]
    labels: np.ndarray
    theta: np.ndarray  # (K, D, P + 1)
    deltas: np.ndarray
    objective: float
    link: LinkSpec
    centers: np.ndarray  # stage-1 feature centres
    grid: AlignmentGrid
    warning: bool = False
    start_objectives: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "method": "kmeans-loss",
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "objective": self.objective,
            "warning": self.warning,
            "theta": self.theta.tolist(),
            "centers": self.centers.tolist(),
            "grid": {"delta_max": self.grid.delta_max, "step": self.grid.step},
            "records": [
                {"id": tid, "label": int(lab), "delta_hat": float(d)}
                for tid, lab, d in zip(self.ids, self.labels, self.deltas)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KMeansLossResult":
        recs = obj["records"]
        return cls(
            ids=[r["id"] for r in recs],
            labels=np.array([r["label"] for r in recs], dtype=int),
            theta=np.array(obj["theta"], dtype=float),
            deltas=np.array([r["delta_hat"] for r in recs], dtype=float),
            objective=float(obj["objective"]),
            link=LinkSpec(LinkFamily(obj["link"]["family"]), int(obj["link"]["degree"])),
            centers=np.array(obj["centers"], dtype=float),
            grid=AlignmentGrid(**obj["grid"]),
            warning=bool(obj.get("warning", False)),
        )


def _init_theta(batch: Batch, labels, delta, k: int, link: LinkSpec) -> np.ndarray:
    D = batch.values.shape[2]
    theta = np.zeros((k, D, link.n_coef))
    t = batch.times + delta[:, None]
    for c in range(k):
        rows = labels == c
        for d in range(D):
            m = batch.mask[rows, :, d] > 0
            x = t[rows][m]
            y = batch.values[rows, :, d][m]
            if link.family is LinkFamily.SIGMOID:
                y = link.inverse(np.clip(y, LOGIT_CLIP, 1 - LOGIT_CLIP))
            try:
                theta[c, d] = polyfit(x, y, link.degree)
            except RankError:
                theta[c, d, 0] = y.mean() if len(y) else 0.0
    return theta


def _pack(theta, delta):
    return np.concatenate([theta.ravel(), delta])


def _unpack(x, shape):
    n_theta = int(np.prod(shape))
    return x[:n_theta].reshape(shape), x[n_theta:]


def kmeans_loss_fit(dataset: Dataset, k: int, link: LinkSpec | None = None, grid: AlignmentGrid | None = None,
                    seed: int = 0, max_iter: int = 500) -> KMeansLossResult:
    link = link or dataset.link
    grid = grid or AlignmentGrid()
    feats = feature_matrix(dataset)
    labels, centers = kmeans(feats, k, seed=seed)
    batch = Batch.from_dataset(dataset)
    n = len(dataset)
    shape = (k, dataset.dim, link.n_coef)
    lower = np.concatenate([np.full(int(np.prod(shape)), -np.inf), np.zeros(n)])
    upper = np.concatenate([np.full(int(np.prod(shape)), np.inf), np.full(n, grid.delta_max)])

    def fun_grad(x, value_only=False):
        th, de = _unpack(x, shape)
        if value_only:
            return objective(th, de, batch, labels, link)
        f, gt, gd = objective_grad(th, de, batch, labels, link)
        return f, _pack(gt, gd)

    best = None
    starts = []
    warned = False
    for d0 in (0.0, grid.delta_max / 2):
        delta0 = np.full(n, d0)
        theta0 = _init_theta(batch, labels, delta0, k, link)
        x0 = _pack(theta0, delta0)
        starts.append(fun_grad(x0, value_only=True))
        x, f, info = bfgs_box(fun_grad, x0, lower, upper, max_iter=max_iter)
        warned |= info.line_search_failed
        if best is None or f < best[1]:
            best = (x, f)
    theta, delta = _unpack(best[0], shape)
    return KMeansLossResult(dataset.ids, labels, theta.copy(), delta.copy(), float(best[1]), link, centers, grid,
                            warned, starts)


def fit_deltas(theta, labels, dataset: Dataset, link: LinkSpec, grid: AlignmentGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-series delay minimising the residual for fixed curves and labels.

    A grid scan locates the basin; a bounded scalar search refines it.
    Returns ``(deltas, per-series objective)``.
    """
    batch = Batch.from_dataset(dataset)
    n = len(dataset)
    pts = grid.points
    scan = np.stack([per_series_objective(theta, np.full(n, d), batch, labels, link) for d in pts], axis=1)
    start = np.argmin(scan, axis=1)
    deltas = pts[start].copy()
    for i in range(n):
        sub = Batch(batch.ids[i : i + 1], batch.times[i : i + 1], batch.values[i : i + 1], batch.mask[i : i + 1],
                    batch.visit_mask[i : i + 1], batch.enc_input[i : i + 1])
        lo = pts[max(start[i] - 1, 0)]
        hi = pts[min(start[i] + 1, len(pts) - 1)]
        if hi <= lo:
            continue
        res = minimize_scalar(lambda d: objective(theta, np.array([d]), sub, labels[i : i + 1], link),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
        if res.fun < scan[i, start[i]]:
            deltas[i] = res.x
    return deltas, per_series_objective(theta, deltas, batch, labels, link)


def kmeans_loss_predict(result: KMeansLossResult, dataset: Dataset):
    """Labels from the nearest stage-1 centre and re-optimised delays for new series.

    Returns ``(labels, deltas, objective)``.
    """
    labels = assign(feature_matrix(dataset), result.centers)
    deltas, per = fit_deltas(result.theta, labels, dataset, result.link, result.grid)
    return labels, deltas, float(per.sum())
