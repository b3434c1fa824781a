"""Clustering and alignment metrics, permutation matching, and paired t-tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(true_labels, pred_labels) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a = np.asarray(true_labels)
    b = np.asarray(pred_labels)
    if a.shape != b.shape:
        raise ValueError(f"label lists differ in length: {a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError("ARI needs at least two samples")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    expected = rows * cols / _comb2(n)
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        # both partitions trivial (all-in-one or all-singletons) and identical in kind
        return 1.0
    return float((index - expected) / (maximum - expected))


def swaps_bruteforce(a, b) -> float:
    """Fraction of discordant pairs, O(N^2).  Ties in either sequence never count."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    n = len(a)
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    discordant = np.triu((da * db) < 0, k=1).sum()
    return float(discordant) / (n * (n - 1) / 2)


def _count_inversions(x: list) -> int:
    """Strict inversions (i < j, x[i] > x[j]) by merge sort."""
    n = len(x)
    if n < 2:
        return 0
    buf = list(x)
    tmp = [0] * n
    count = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[i] <= buf[j]:
                    tmp[k] = buf[i]
                    i += 1
                else:
                    tmp[k] = buf[j]
                    count += mid - i
                    j += 1
                k += 1
            tmp[k : k + mid - i] = buf[i:mid]
            k += mid - i
            tmp[k : k + hi - j] = buf[j:hi]
            buf[lo:hi] = tmp[lo:hi]
        width *= 2
    return count


def swaps_mergesort(a, b) -> float:
    """Same quantity as :func:`swaps_bruteforce` in O(N log N)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    n = len(a)
    # sorting by (a, b) leaves no strict b-inversion inside a tie group of a
    order = np.lexsort((b, a))
    return _count_inversions(b[order].tolist()) / (n * (n - 1) / 2)


def swaps_metric(a, b) -> float:
    return swaps_mergesort(a, b)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"sequences differ in length: {a.shape} vs {b.shape}")
    if a.ndim != 1 or len(a) < 2:
        raise ValueError("need two 1-d sequences of length >= 2")


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt((da * da).sum()), math.sqrt((db * db).sum())
    if sa == 0 or sb == 0:
        raise ValueError("Pearson correlation is undefined for a constant sequence")
    return float(np.clip((da * db).sum() / (sa * sb), -1.0, 1.0))


def match_permutation(theta_true, theta_hat, max_k: int = 6):
    """Row permutation of ``theta_hat`` closest to ``theta_true``.

    Returns ``(perm, err)`` where ``theta_hat[perm[k]]`` pairs with
    ``theta_true[k]`` and ``err`` is the largest row-wise Frobenius distance.
    """
    t = np.asarray(theta_true, dtype=float)
    h = np.asarray(theta_hat, dtype=float)
    if t.shape != h.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {h.shape}")
    k = t.shape[0]
    if k > max_k:
        raise ValueError(f"brute-force matching is limited to K <= {max_k}, got {k}")
    dist = np.sqrt(((t[:, None] - h[None, :]) ** 2).reshape(k, k, -1).sum(axis=-1))
    best_perm, best_err = None, math.inf
    for perm in itertools.permutations(range(k)):
        err = max(dist[i, perm[i]] for i in range(k))
        if err < best_err:
            best_perm, best_err = perm, err
    return tuple(best_perm), float(best_err)


# --- Student t --------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 300, tol: float = 3e-16) -> float:
    # modified Lentz continued fraction for the incomplete beta
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    degenerate: bool = False


def paired_ttest(a, b) -> TTest:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired t-test needs equal trial counts")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two trials")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return TTest(0.0, 1.0, True)
        return TTest(math.copysign(math.inf, mean), 0.0, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(float(t), student_t_sf2(t, n - 1), False)


def benjamini_hochberg(pvalues, alpha: float = 0.05):
    """Step-up FDR control.  Returns ``(adjusted_p, reject)`` arrays in input order."""
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    if m == 0:
        return p.copy(), np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(ranked[::-1])[::-1].clip(max=1.0)
    adj = np.empty(m)
    adj[order] = adj_sorted
    return adj, adj <= alpha


@dataclass
class TrialScores:
    ari: float | None = None
    swaps: float | None = None
    pearson: float | None = None
    trial: int = 0
    split_sizes: tuple[int, int, int] = (0, 0, 0)

    def to_dict(self) -> dict:
        return {
            "ari": self.ari,
            "swaps": self.swaps,
            "pearson": self.pearson,
            "trial": self.trial,
            "split_sizes": list(self.split_sizes),
        }


def score_fit(true_subtype, labels, true_delta=None, delta_hat=None) -> dict:
    """ARI always; swaps and Pearson when delays are available and non-constant."""
    out = {"ari": adjusted_rand_index(true_subtype, labels), "swaps": None, "pearson": None}
    if delta_hat is not None and true_delta is not None:
        out["swaps"] = swaps_metric(true_delta, delta_hat)
        try:
            out["pearson"] = pearson(true_delta, delta_hat)
        except ValueError:
            out["pearson"] = None
    return out
