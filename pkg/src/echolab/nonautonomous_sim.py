"""Driven iteration along an input window: cocycle, pullback clouds, ESP test."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .clustering import single_linkage
from .errors import EmptySet, WindowExhausted
from .map_atlas import Box, MapFamily
from .seeding import uniform_points
from .symbolic_inputs import SymbolSequence

ESP_EPS = 1e-6
DEFAULT_ENSEMBLE = 50


def _require(v: SymbolSequence, k0: int, k1: int):
    if not v.covers(k0, k1):
        raise WindowExhausted(
            f"window [{v.first_k}, {v.last_k}] does not cover time steps [{k0}, {k1})"
        )


def _runs(symbols: np.ndarray):
    cut = np.flatnonzero(np.diff(symbols)) + 1
    starts = np.concatenate(([0], cut))
    lens = np.diff(np.concatenate((starts, [symbols.size])))
    return zip(symbols[starts].tolist(), lens.tolist())


def advance(family: MapFamily, v: SymbolSequence, X, from_k: int, steps: int) -> np.ndarray:
    """Phi_{steps, sigma^from_k v}(X) without storing the trajectory."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    _require(v, from_k, from_k + steps)
    X = np.array(X, dtype=float)
    if steps == 0:
        return X
    for s, n in _runs(v.window(from_k, from_k + steps)):
        for _ in range(n):
            X = family.apply(s, X)
    return X


def iterate_cocycle(family: MapFamily, v: SymbolSequence, x0, from_k: int, steps: int) -> np.ndarray:
    """Trajectory x[from_k .. from_k + steps] with x[k+1] = f_{v[k]}(x[k]).

    ``x0`` may be a point or a batch (..., n); the result has a leading
    axis of length ``steps + 1``.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    _require(v, from_k, from_k + steps)
    x = np.array(x0, dtype=float)
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for t, s in enumerate(v.window(from_k, from_k + steps).tolist()):
        x = family.apply(s, x)
        out[t + 1] = x
    return out


def write_trajectory(path, v: SymbolSequence, traj, from_k: int = 0) -> None:
    """CSV with columns k, symbol, x_1..x_n; the last row has an empty symbol
    when the window ends there."""
    traj = np.asarray(traj, dtype=float)
    n = traj.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "symbol"] + [f"x_{d + 1}" for d in range(n)])
        for t, x in enumerate(traj):
            k = from_k + t
            sym = v.at(k) if v.covers(k, k + 1) else ""
            w.writerow([k, sym] + [repr(float(c)) for c in x])


# --------------------------------------------------------------------------
# Ensembles and pullback
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ensemble:
    points: np.ndarray
    seed: int
    count: int
    box: Box

    def __len__(self):
        return len(self.points)

    def provenance(self) -> dict:
        return {"seed": self.seed, "count": self.count, "box": self.box.to_dict()}


def sample_ensemble(box: Box, count: int = DEFAULT_ENSEMBLE, seed: int = 0, corners: bool = True) -> Ensemble:
    """``count`` seeded uniform points, followed by the 2^n box corners."""
    pts = uniform_points(box.lo, box.hi, count, seed)
    if corners:
        pts = np.vstack([pts, box.corners()])
    return Ensemble(pts, int(seed), int(count), box)


def max_diameter(X) -> float:
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        return 0.0
    return float(np.max(np.ptp(X, axis=0)))


@dataclass(frozen=True, eq=False)
class PullbackReport:
    cloud: Ensemble
    diameter: float
    steps: int
    hausdorff_to_reference: Optional[float] = None
    cluster_tol: Optional[float] = None

    def clusters(self, tol: Optional[float] = None):
        return single_linkage(self.cloud.points, tol or self.cluster_tol or 100 * ESP_EPS, straggler_factor=1)

    def to_dict(self) -> dict:
        cl = self.clusters()
        return {
            "steps": self.steps,
            "diameter": self.diameter,
            "hausdorff_to_reference": self.hausdorff_to_reference,
            "ensemble": self.cloud.provenance(),
            "clusters": {
                "tol": self.cluster_tol or 100 * ESP_EPS,
                "count": cl.count,
                "centers": cl.centers.tolist(),
                "sizes": cl.sizes.tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def pullback_cloud(
    family: MapFamily,
    v: SymbolSequence,
    n: int,
    ensemble: Optional[Ensemble] = None,
    reference=None,
) -> PullbackReport:
    """Push the ensemble from time -n to time 0 along ``v``.

    With ``reference`` given, also reports h(cloud, reference).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    ens = ensemble if ensemble is not None else sample_ensemble(family.box)
    X = advance(family, v, ens.points, -n, n)
    cloud = Ensemble(X, ens.seed, ens.count, ens.box)
    h = None if reference is None else hausdorff_semidistance(X, reference)
    return PullbackReport(cloud, max_diameter(X), n, h)


def hausdorff_semidistance(A, B) -> float:
    """sup over a in A of the Euclidean distance from a to B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise EmptySet("both point sets must be nonempty")
    return float(np.max(np.min(cdist(A, B), axis=1)))


# --------------------------------------------------------------------------
# ESP test
# --------------------------------------------------------------------------


class Verdict(str, enum.Enum):
    ESP = "ESP"
    NOT_ESP = "NOT_ESP"
    UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class EspResult:
    verdict: Verdict
    diameter: float
    clusters: int
    n: int
    n_check: Optional[int]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "diameter": self.diameter,
            "clusters": self.clusters,
            "n": self.n,
            "n_check": self.n_check,
        }


def _tight_clusters(X, eps):
    cl = single_linkage(X, 100 * eps, straggler_factor=1)
    tight = bool(np.all(cl.diameters(X) < eps))
    return cl, tight


def esp_test(
    family: MapFamily,
    v: SymbolSequence,
    n: int,
    eps: float = ESP_EPS,
    ensemble_size: int = DEFAULT_ENSEMBLE,
    seed: int = 0,
) -> EspResult:
    """ESP if the pullback cloud from -n shrinks below eps.

    NOT_ESP needs at least two clusters, each tighter than eps and more
    than 100*eps apart, that persist when pulling back from -2n (or from as
    far back as the window reaches, if that is further than n): same count
    and centres within eps of the earlier ones.  Anything else is UNDECIDED.
    """
    _require(v, -n, 0)
    ens = sample_ensemble(family.box, ensemble_size, seed)
    rep = pullback_cloud(family, v, n, ens)
    if rep.diameter < eps:
        return EspResult(Verdict.ESP, rep.diameter, 1, n, None)
    cl, tight = _tight_clusters(rep.cloud.points, eps)
    count = cl.count
    n2 = min(2 * n, -v.first_k)
    if count >= 2 and tight and n2 > n:
        X2 = pullback_cloud(family, v, n2, ens).cloud.points
        cl2, tight2 = _tight_clusters(X2, eps)
        same = (
            cl2.count == count
            and hausdorff_semidistance(cl.centers, cl2.centers) < eps
            and hausdorff_semidistance(cl2.centers, cl.centers) < eps
        )
        if same and tight2:
            return EspResult(Verdict.NOT_ESP, rep.diameter, count, n, n2)
        return EspResult(Verdict.UNDECIDED, rep.diameter, count, n, n2)
    return EspResult(Verdict.UNDECIDED, rep.diameter, count, n, None)
