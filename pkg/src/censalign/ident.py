"""Exact identification of subtypes, delays and coefficients from noiseless data.

Every series is mapped through the inverse link, its canonical biomarker is fit
with a polynomial, and the polynomial is translated so that its smallest root
sits at zero.  Clustering the translated coefficients recovers subtypes; the
root positions recover the delays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .data import Dataset, LinkFamily, LinkSpec
from .kmeans import kmeans_order_invariant


class IdentificationError(ValueError):
    """An assumption needed for exact identification does not hold."""


class RankError(IdentificationError):
    pass


class DegeneratePolynomial(IdentificationError):
    pass


MAX_CONDITION = 1e12


def inverse_link(values, link: LinkSpec, mask=None, ids=None) -> np.ndarray:
    """Apply ``f^-1`` elementwise; missing cells (mask False or NaN) stay NaN."""
    v = np.array(values, dtype=float)
    present = ~np.isnan(v) if mask is None else np.asarray(mask, bool) & ~np.isnan(v)
    out = np.full(v.shape, np.nan)
    if link.family is LinkFamily.SIGMOID:
        bad = present & ((v <= 0) | (v >= 1))
        if bad.any():
            cell = tuple(int(i) for i in np.argwhere(bad)[0])
            where = f"{ids} " if ids is not None else ""
            raise IdentificationError(
                f"{where}cell {cell} = {v[cell]!r} is outside (0, 1); the sigmoid link cannot be inverted"
            )
    out[present] = link.inverse(v[present])
    return out


def polyfit(x, q, degree: int, max_cond: float = MAX_CONDITION) -> np.ndarray:
    """Least-squares polynomial coefficients (ascending) via QR of the Vandermonde matrix."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(np.unique(x)) < degree + 1:
        raise RankError(f"need at least {degree + 1} distinct abscissae, got {len(np.unique(x))}")
    V = np.vander(x, degree + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    cond = np.linalg.cond(R)
    if not cond <= max_cond:
        raise RankError(f"Vandermonde system is ill-conditioned (condition number {cond:.3g})")
    return solve_triangular(R, Q.T @ q)


def effective_degree(theta, rel_tol: float = 1e-12) -> int:
    theta = np.asarray(theta, dtype=float)
    scale = np.linalg.norm(theta)
    for p in range(len(theta) - 1, 0, -1):
        if abs(theta[p]) >= rel_tol * scale and theta[p] != 0:
            return p
    return 0


def durand_kerner(theta, tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """All complex roots of the polynomial with ascending coefficients ``theta``."""
    theta = np.asarray(theta, dtype=float)
    n = len(theta) - 1
    monic = theta / theta[-1]
    coeffs = monic[::-1].astype(complex)  # descending for np.polyval

    def resid(z):
        return np.abs(np.polyval(coeffs, z))

    radius = 1.0 + np.max(np.abs(monic[:-1]))
    roots = radius * (0.4 + 0.9j) ** np.arange(n)
    for _ in range(max_iter):
        prev = roots.copy()
        for i in range(n):
            others = roots[i] - np.delete(roots, i)
            roots[i] = roots[i] - np.polyval(coeffs, roots[i]) / np.prod(others)
        if np.max(resid(roots)) < tol or np.max(np.abs(roots - prev)) <= 1e-15 * (1 + np.max(np.abs(roots))):
            break
    return roots


def poly_roots(theta, degree: int | None = None) -> np.ndarray:
    """Roots of ``sum_p theta[p] x^p``; tiny leading coefficients lower the degree."""
    theta = np.asarray(theta, dtype=float)
    if degree is not None:
        theta = theta[: degree + 1]
    p = effective_degree(theta)
    if p == 0:
        raise DegeneratePolynomial("polynomial is constant; it has no roots")
    theta = theta[: p + 1]
    if p == 1:
        return np.array([complex(-theta[0] / theta[1])])
    if p == 2:
        c, b, a = theta
        disc = b * b - 4 * a * c
        if disc < 0:
            re, im = -b / (2 * a), math.sqrt(-disc) / (2 * a)
            return np.array([complex(re, im), complex(re, -im)])
        qq = -0.5 * (b + math.copysign(math.sqrt(disc), b))
        if qq == 0:
            return np.array([0j, 0j])
        return np.array([complex(qq / a), complex(c / qq)])
    return durand_kerner(theta)


def smallest_root(roots) -> complex:
    """Root with smallest real part; ties broken by smaller |imag|, then smaller imag."""
    roots = list(np.asarray(roots, dtype=complex))
    return min(roots, key=lambda r: (r.real, abs(r.imag), r.imag))


def canonical_refit(x, q, xi: float, degree: int) -> np.ndarray:
    """Refit on ``x - xi`` so the root at ``xi`` moves to the origin."""
    return polyfit(np.asarray(x, dtype=float) - xi, q, degree)


@dataclass
class IdentResult:
    theta_hat: np.ndarray  # (K, D, P + 1)
    link: LinkSpec
    ids: list[str]
    deltas: np.ndarray
    labels: np.ndarray
    xi: np.ndarray  # NaN where undefined
    eta: np.ndarray
    diagnostics: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        def num(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "theta_hat": [[[num(v) for v in row] for row in mat] for mat in self.theta_hat],
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "eta": [num(v) for v in self.eta],
            "records": [
                {"id": tid, "label": int(lab), "delta_hat": float(d), "xi": num(x)}
                for tid, lab, d, x in zip(self.ids, self.labels, self.deltas, self.xi)
            ],
            "diagnostics": list(self.diagnostics),
        }


def identify(dataset: Dataset, k: int, link: LinkSpec | None = None, degree: int | None = None,
             canonical_dim: int = 0, strict: bool = True) -> IdentResult:
    """Recover ``(theta, delta, subtype)`` from noiseless data.

    With ``strict=False`` assumption violations are recorded in ``diagnostics``
    instead of raised: sigmoid values are clipped into (0, 1) and series with
    too few canonical observations fall back to a minimum-norm fit.
    """
    link = link or dataset.link
    if degree is not None:
        link = LinkSpec(link.family, degree)
    P = link.degree
    n = len(dataset)
    if k > n:
        raise IdentificationError(f"cannot form {k} subtypes from {n} series")
    diags: list[str] = []
    qs, xs = [], []
    for traj in dataset:
        vals = traj.values
        if not strict and link.family is LinkFamily.SIGMOID:
            clipped = np.clip(vals, 1e-6, 1 - 1e-6)
            if np.any(clipped[traj.mask] != vals[traj.mask]):
                diags.append(f"{traj.id}: values outside (0, 1) clipped before inversion")
            vals = clipped
        qs.append(inverse_link(vals, link, traj.mask, ids=traj.id))
        xs.append(traj.times)

    thetas_c = np.zeros((n, P + 1))
    xi = np.full(n, np.nan)
    for i, traj in enumerate(dataset):
        q = qs[i][:, canonical_dim]
        ok = ~np.isnan(q)
        x, qq = xs[i][ok], q[ok]
        try:
            theta = polyfit(x, qq, P)
        except RankError as exc:
            if strict:
                raise IdentificationError(f"{traj.id}: {exc}") from exc
            diags.append(f"{traj.id}: {exc}; using a minimum-norm fit")
            theta = np.linalg.lstsq(np.vander(x, P + 1, increasing=True), qq, rcond=None)[0] if len(x) else np.zeros(P + 1)
        try:
            root = smallest_root(poly_roots(theta))
        except DegeneratePolynomial:
            diags.append(f"{traj.id}: canonical biomarker is flat; delay undefined, set to 0")
            thetas_c[i] = theta
            continue
        xi[i] = root.real
        try:
            thetas_c[i] = canonical_refit(x, qq, xi[i], P)
        except RankError:
            # only reachable in non-strict mode; translate the coefficients analytically
            thetas_c[i] = _shift_poly(theta, xi[i])

    labels, _ = kmeans_order_invariant(thetas_c, k)
    # kappa(x + delta) has its root at r - delta, so the undelayed member has the largest xi
    eta = np.full(k, np.nan)
    deltas = np.zeros(n)
    for c in range(k):
        members = (labels == c) & np.isfinite(xi)
        if members.any():
            eta[c] = xi[members].max()
            deltas[members] = eta[c] - xi[members]

    D = dataset.dim
    theta_hat = np.full((k, D, P + 1), np.nan)
    for c in range(k):
        idx = np.nonzero(labels == c)[0]
        for d in range(D):
            x_all, q_all = [], []
            for i in idx:
                q = qs[i][:, d]
                ok = ~np.isnan(q)
                x_all.append(xs[i][ok] + deltas[i])
                q_all.append(q[ok])
            x_all = np.concatenate(x_all) if x_all else np.zeros(0)
            q_all = np.concatenate(q_all) if q_all else np.zeros(0)
            try:
                theta_hat[c, d] = polyfit(x_all, q_all, P)
            except RankError as exc:
                if strict:
                    raise IdentificationError(f"subtype {c}, dimension {d}: {exc}") from exc
                diags.append(f"subtype {c}, dimension {d}: {exc}")
    return IdentResult(theta_hat, link, dataset.ids, deltas, labels, xi, eta, diags)


def _shift_poly(theta, xi: float) -> np.ndarray:
    """Coefficients of ``kappa(x + xi)`` given those of ``kappa(x)``."""
    P = len(theta) - 1
    out = np.zeros(P + 1)
    for p, c in enumerate(theta):
        for j in range(p + 1):
            out[j] += c * math.comb(p, j) * xi ** (p - j)
    return out
