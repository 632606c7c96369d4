"""Single-linkage clustering of final states in the max norm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import cdist


@dataclass(frozen=True, eq=False)
class Clustering:
    labels: np.ndarray       # cluster index per point
    centers: np.ndarray      # (k, n) cluster means
    sizes: np.ndarray        # points per cluster
    flagged: np.ndarray      # bool per cluster: absorbed a straggler

    @property
    def count(self) -> int:
        return len(self.sizes)

    def diameters(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(self.count)
        for c in range(self.count):
            pts = X[self.labels == c]
            if len(pts) > 1:
                out[c] = float(np.max(np.ptp(pts, axis=0)))
        return out


def single_linkage(X, tol: float, straggler_factor: float = 10.0) -> Clustering:
    """Group points whose chains of max-norm gaps stay within ``tol``.

    A singleton whose nearest other cluster lies within
    ``straggler_factor * tol`` is folded into that cluster and the cluster is
    flagged.  Clusters come out sorted lexicographically by centre.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a nonempty (N, n) array of points")
    if len(X) == 1:
        raw = np.zeros(1, dtype=np.int64)
    else:
        Z = linkage(X, method="single", metric="chebyshev")
        raw = fcluster(Z, t=tol, criterion="distance") - 1
    n_raw = int(raw.max()) + 1
    sizes = np.bincount(raw, minlength=n_raw)
    absorbed = np.zeros(n_raw, dtype=bool)
    if straggler_factor > 1 and n_raw > 1:
        target = np.arange(n_raw)
        for c in np.flatnonzero(sizes == 1):
            p = X[raw == c]
            others = (raw != c) & (sizes[raw] > 1)
            if not others.any():
                continue
            d = cdist(p, X[others], metric="chebyshev")[0]
            best = int(np.argmin(d))
            if d[best] <= straggler_factor * tol:
                host = int(raw[others][best])
                target[c] = host
                absorbed[host] = True
        raw = target[raw]
    # relabel by lexicographic order of centres
    ids = np.unique(raw)
    centers = np.array([X[raw == c].mean(axis=0) for c in ids])
    order = np.lexsort(centers.T[::-1])
    remap = np.empty(int(ids.max()) + 1, dtype=np.int64)
    remap[ids[order]] = np.arange(len(ids))
    labels = remap[raw]
    return Clustering(
        labels=labels,
        centers=centers[order],
        sizes=np.bincount(labels, minlength=len(ids)),
        flagged=absorbed[ids[order]],
    )
