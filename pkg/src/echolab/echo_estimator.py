"""Echo index estimates: evolve a uniform ensemble along an input window and
count the distinct responses."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clustering import single_linkage
from .errors import WindowTooShort
from .map_atlas import MapFamily
from .nonautonomous_sim import advance
from .seeding import derive_seed, uniform_points
from .symbolic_inputs import RepeatSpec, SymbolSequence, generate_sequence, periodic_sequence

CLUSTER_TOL = 1e-3
N_IC = 50
T_DEFAULT = 2000

CSV_FIELDS = ["index", "T", "n_ic", "seed", "cluster_tol", "n_clusters_flagged", "cluster_sizes"]


@dataclass(frozen=True, eq=False)
class EchoEstimate:
    index: int
    cluster_centers: np.ndarray
    cluster_sizes: tuple
    T: int
    n_ic: int
    seed: int
    cluster_tol: float
    flagged: tuple = ()     # per cluster: absorbed a straggler

    @property
    def n_clusters_flagged(self) -> int:
        return int(sum(self.flagged))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "cluster_centers": np.asarray(self.cluster_centers).tolist(),
            "cluster_sizes": list(self.cluster_sizes),
            "flagged": [bool(f) for f in self.flagged],
            "T": self.T,
            "n_ic": self.n_ic,
            "seed": self.seed,
            "cluster_tol": self.cluster_tol,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def csv_row(self) -> dict:
        return {
            "index": self.index,
            "T": self.T,
            "n_ic": self.n_ic,
            "seed": self.seed,
            "cluster_tol": repr(self.cluster_tol),
            "n_clusters_flagged": self.n_clusters_flagged,
            "cluster_sizes": " ".join(str(s) for s in self.cluster_sizes),
        }


def append_csv(path, estimates: Sequence[EchoEstimate]) -> None:
    """Append one row per estimate, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, CSV_FIELDS, lineterminator="\n")
        if new:
            w.writeheader()
        for est in estimates:
            w.writerow(est.csv_row())


def final_states(family: MapFamily, v: SymbolSequence, n_ic: int, T: int, seed: int) -> np.ndarray:
    if not v.covers(0, T):
        raise WindowTooShort(f"need symbols for steps 0..{T - 1}; window ends at {v.last_k}")
    X0 = uniform_points(family.box.lo, family.box.hi, n_ic, seed)
    return advance(family, v, X0, 0, T)


def estimate_echo_index(
    family: MapFamily,
    v: SymbolSequence,
    n_ic: int = N_IC,
    T: int = T_DEFAULT,
    cluster_tol: float = CLUSTER_TOL,
    seed: int = 0,
) -> EchoEstimate:
    """Evolve ``n_ic`` uniform initial states over steps 0..T-1 of ``v`` and
    count single-linkage clusters of the results."""
    if n_ic < 1 or T < 1:
        raise ValueError("n_ic and T must be positive")
    X = final_states(family, v, n_ic, T, seed)
    cl = single_linkage(X, cluster_tol)
    return EchoEstimate(
        index=cl.count,
        cluster_centers=cl.centers,
        cluster_sizes=tuple(int(s) for s in cl.sizes),
        T=int(T),
        n_ic=int(n_ic),
        seed=int(seed),
        cluster_tol=float(cluster_tol),
        flagged=tuple(bool(f) for f in cl.flagged),
    )


@dataclass(frozen=True)
class ConsistencyReport:
    indices: tuple
    seeds: tuple = ()
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(sorted(Counter(self.indices).items())))

    @property
    def consistent(self) -> bool:
        return len(self.counts) == 1

    def to_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "seeds": list(self.seeds),
            "counts": {str(k): v for k, v in self.counts.items()},
            "consistent": self.consistent,
        }


def realization_seeds(base_seed: int, r: int) -> tuple:
    """(sequence seed, initial-condition seed) for realization r."""
    return derive_seed(base_seed, r, 0), derive_seed(base_seed, r, 1)


def consistency_scan(
    family: MapFamily,
    spec: RepeatSpec,
    R: int,
    n_ic: int = N_IC,
    T: int = T_DEFAULT,
    cluster_tol: float = CLUSTER_TOL,
    base_seed: int = 0,
) -> ConsistencyReport:
    if R < 2:
        raise ValueError("a consistency scan needs R >= 2")
    indices, seeds = [], []
    for r in range(R):
        s_seq, s_ic = realization_seeds(base_seed, r)
        v = generate_sequence(spec, T, s_seq)
        indices.append(estimate_echo_index(family, v, n_ic, T, cluster_tol, s_ic).index)
        seeds.append(s_seq)
    return ConsistencyReport(tuple(indices), tuple(seeds))


def block_probes(m: int, T: int, R: int, base_seed: int, p: float = 0.5) -> list:
    """Sequences whose runs all have length >= m.

    R random ones (minimum m, no maximum, extension probability p) plus the
    periodic words 0^a 1^a for a = m..2m-1, which tend to be the worst case.
    """
    spec = RepeatSpec((m, m), (None, None), (p, p))
    out = [generate_sequence(spec, T, realization_seeds(base_seed, r)[0]) for r in range(R)]
    for a in range(m, 2 * m):
        out.append(periodic_sequence([(0, a), (1, a)], T))
    return out


def min_block_length(
    family: MapFamily,
    max_m: int = 10,
    R: int = 5,
    T: int = T_DEFAULT,
    n_ic: int = N_IC,
    cluster_tol: float = CLUSTER_TOL,
    base_seed: int = 0,
    periodic: bool = True,
) -> Optional[int]:
    """Smallest m such that every probe with runs >= m gives index 1.

    Returns None if no m up to ``max_m`` qualifies.  With ``periodic=False``
    only random sequences are probed.
    """
    for m in range(1, max_m + 1):
        probes = block_probes(m, T, R, base_seed)
        if not periodic:
            probes = probes[:R]
        ok = all(
            estimate_echo_index(family, v, n_ic, T, cluster_tol, derive_seed(base_seed, m, q)).index == 1
            for q, v in enumerate(probes)
        )
        if ok:
            return m
    return None
