"""k-means with k-means++ seeding and random restarts."""

from __future__ import annotations

import hashlib

import numpy as np


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx : idx + 1])[:, 0])
    return np.array(centers, dtype=float)


def assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_dists(np.asarray(X, float), np.asarray(centers, float)), axis=1)


def inertia(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    X = np.asarray(X, float)
    return float(((X - centers[labels]) ** 2).sum())


def _lloyd(X, centers, max_iter):
    k = len(centers)
    labels = assign(X, centers)
    for _ in range(max_iter):
        for j in range(k):
            if not np.any(labels == j):
                # hand the empty cluster the point farthest from its own center
                far = int(np.argmax(((X - centers[labels]) ** 2).sum(axis=1)))
                labels[far] = j
                centers[j] = X[far]
        new_centers = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        new_labels = assign(X, new_centers)
        centers = new_centers
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100):
    """Cluster ``points`` into ``k`` groups; keep the restart with lowest inertia.

    Returns ``(labels, centers)``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1 or k > len(X):
        raise ValueError(f"need 1 <= k <= number of points ({len(X)}), got k={k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers = _lloyd(X, kmeans_plusplus(X, k, rng), max_iter)
        score = inertia(X, labels, centers)
        if best is None or score < best[0]:
            best = (score, labels, centers)
    return best[1], best[2]


def content_seed(X: np.ndarray) -> int:
    """Seed derived from the multiset of rows, independent of their order."""
    X = np.asarray(X, dtype=float)
    rows = X[np.lexsort(X.T[::-1])] if X.ndim == 2 and len(X) else X
    return int.from_bytes(hashlib.sha256(np.round(rows, 12).tobytes()).digest()[:4], "little")


def kmeans_order_invariant(points, k: int, n_init: int = 10, max_iter: int = 100):
    """k-means whose result does not depend on the order of ``points``.

    Points are sorted lexicographically before clustering and the seed comes
    from their content; clusters are numbered by their smallest member.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    order = np.lexsort(X.T[::-1])
    labels_sorted, centers = kmeans(X[order], k, seed=content_seed(X), n_init=n_init, max_iter=max_iter)
    labels = np.empty(len(X), dtype=int)
    labels[order] = labels_sorted
    # renumber clusters in order of first appearance along the sorted points
    remap, nxt = {}, 0
    for lab in labels_sorted:
        if lab not in remap:
            remap[lab] = nxt
            nxt += 1
    labels = np.array([remap[l] for l in labels])
    centers = centers[[old for old, _ in sorted(remap.items(), key=lambda kv: kv[1])]]
    return labels, centers
