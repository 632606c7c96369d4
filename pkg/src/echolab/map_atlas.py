"""Finite map families, their fixed points and basins, and the transition table.

A family holds M self-maps f_0..f_{M-1} of a compact box.  All maps act on
batches: ``family.apply(i, X)`` takes an array of shape (..., n).
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BoundaryStraddle,
    ConfigError,
    HorizonExceeded,
    InvalidSeed,
    NoStablePoints,
    NotFunneling,
    OutOfDomain,
)
from .pgm import write_pgm

FP_TOL = 1e-10
HYPERBOLICITY_TOL = 1e-6
UNRESOLVED = -1
ACCEPT_UNRESOLVED = 0.01


# --------------------------------------------------------------------------
# Domain and families
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("every interval needs lo < hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, dim: int, lo: float = -1.0, hi: float = 1.0) -> "Box":
        return cls(np.full(dim, lo), np.full(dim, hi))

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        """Max-norm diameter."""
        return float(np.max(self.hi - self.lo))

    def contains(self, x, tol: float = 1e-12):
        x = np.asarray(x, dtype=float)
        ok = (x >= self.lo - tol) & (x <= self.hi + tol)
        return np.all(ok, axis=-1)

    def corners(self) -> np.ndarray:
        bits = np.array(np.meshgrid(*[[0, 1]] * self.dim, indexing="ij")).reshape(self.dim, -1).T
        return np.where(bits == 1, self.hi, self.lo)

    def axes_lattice(self, res: int) -> list:
        return [np.linspace(a, b, res) for a, b in zip(self.lo, self.hi)]

    def axes_centers(self, res: int) -> list:
        return [a + (np.arange(res) + 0.5) * (b - a) / res for a, b in zip(self.lo, self.hi)]

    def lattice(self, res: int) -> np.ndarray:
        """``res`` evenly spaced points per axis, endpoints included."""
        return _mesh(self.axes_lattice(res))

    def cell_centers(self, res: int) -> np.ndarray:
        return _mesh(self.axes_centers(res))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def _mesh(axes) -> np.ndarray:
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


class MapFamily:
    """Base class: M maps on a common box, each with a Jacobian."""

    box: Box
    name: str = "custom"

    @property
    def alphabet_size(self) -> int:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.box.dim

    def apply(self, i: int, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_at(self, i: int, X: np.ndarray) -> np.ndarray:
        return _fd_jacobian(functools.partial(self.apply, i), X)

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"name": self.name, "box": self.box.to_dict(), "params": self.params()}


def _fd_jacobian(fun, X, h=1e-6):
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    cols = []
    for c in range(n):
        e = np.zeros(n)
        e[c] = h
        cols.append((fun(X + e) - fun(X - e)) / (2 * h))
    return np.stack(cols, axis=-1)


class EsnFamily(MapFamily):
    """Leaky tanh maps  x -> (1 - alpha) x + alpha tanh(W_r x + W_in u_i)."""

    def __init__(self, W_r, W_in, alpha, inputs, name="esn"):
        self.W_r = np.array(W_r, dtype=float)
        self.W_in = np.array(W_in, dtype=float)
        self.inputs = np.array(inputs, dtype=float)
        self.alpha = float(alpha)
        r = self.W_r.shape[0]
        if self.W_r.shape != (r, r):
            raise ConfigError("W_r must be square")
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.W_in.shape != (r, self.inputs.shape[1]):
            raise ConfigError(f"W_in must be {r}x{self.inputs.shape[1]}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if len(self.inputs) < 1:
            raise ConfigError("an ESN family needs at least one input value")
        self.drive = self.inputs @ self.W_in.T
        self.box = Box.cube(r)
        self.name = name

    @property
    def alphabet_size(self) -> int:
        return len(self.inputs)

    def apply(self, i, X):
        X = np.asarray(X, dtype=float)
        return (1.0 - self.alpha) * X + self.alpha * np.tanh(X @ self.W_r.T + self.drive[i])

    def jacobian_at(self, i, X):
        X = np.asarray(X, dtype=float)
        t = np.tanh(X @ self.W_r.T + self.drive[i])
        n = self.dim
        return (1.0 - self.alpha) * np.eye(n) + self.alpha * (1.0 - t * t)[..., :, None] * self.W_r

    def params(self):
        return {
            "W_r": self.W_r.tolist(),
            "W_in": self.W_in.tolist(),
            "alpha": self.alpha,
            "inputs": self.inputs.tolist(),
        }


class CallableFamily(MapFamily):
    """Maps given as vectorized callables on (..., n) arrays.

    ``jacobians`` are optional; missing ones fall back to central
    differences with step 1e-6.  Use module-level functions (or partials of
    them) if the family has to cross process boundaries.
    """

    def __init__(self, maps: Sequence[Callable], box: Box, jacobians=None, name="custom", params=None):
        self.maps = tuple(maps)
        self.jacobians = tuple(jacobians) if jacobians is not None else (None,) * len(self.maps)
        self.box = box
        self.name = name
        self._params = dict(params or {})

    @property
    def alphabet_size(self):
        return len(self.maps)

    def apply(self, i, X):
        return self.maps[i](np.asarray(X, dtype=float))

    def jacobian_at(self, i, X):
        jac = self.jacobians[i]
        if jac is None:
            return _fd_jacobian(self.maps[i], X)
        return jac(np.asarray(X, dtype=float))

    def params(self):
        return self._params


def _affine(A, b, X):
    return X @ A.T + b


def _affine_jac(A, X):
    return np.broadcast_to(A, X.shape[:-1] + A.shape).copy()


def affine_family(matrices, offsets=None, box: Optional[Box] = None, name="affine") -> CallableFamily:
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    n = mats[0].shape[0]
    offs = [np.zeros(n) if offsets is None else np.asarray(o, dtype=float) for o in (offsets or [None] * len(mats))]
    return CallableFamily(
        [functools.partial(_affine, A, b) for A, b in zip(mats, offs)],
        box or Box.cube(n),
        [functools.partial(_affine_jac, A) for A in mats],
        name=name,
        params={"matrices": [A.tolist() for A in mats], "offsets": [o.tolist() for o in offs]},
    )


class ComposedFamily(MapFamily):
    """Single map: the maps of ``base`` applied in the order given by ``word``."""

    def __init__(self, base: MapFamily, word: Sequence[int], box: Optional[Box] = None):
        self.base = base
        self.word = tuple(int(s) for s in word)
        self.box = box or base.box
        self.name = f"{base.name}[{''.join(map(str, self.word))}]"

    @property
    def alphabet_size(self):
        return 1

    def apply(self, i, X):
        for s in self.word:
            X = self.base.apply(s, X)
        return X

    def jacobian_at(self, i, X):
        X = np.asarray(X, dtype=float)
        J = np.broadcast_to(np.eye(self.dim), X.shape[:-1] + (self.dim, self.dim))
        for s in self.word:
            J = self.base.jacobian_at(s, X) @ J
            X = self.base.apply(s, X)
        return J

    def params(self):
        return {"base": self.base.name, "word": list(self.word)}


def compose(family: MapFamily, word: Sequence[int], box: Optional[Box] = None) -> ComposedFamily:
    """f_{word[-1]} o ... o f_{word[0]}; ``word`` lists maps in time order.

    ``compose(fam, [0, 1])`` is f_1 o f_0.
    """
    return ComposedFamily(family, word, box)


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------


def esn2d(alpha: float = 0.25) -> EsnFamily:
    return EsnFamily(
        W_r=[[0.5, 0.0], [0.0, 1.75]],
        W_in=np.eye(2),
        alpha=alpha,
        inputs=[[0.25, 0.05], [-0.25, -0.5]],
        name="esn2d",
    )


def oscillating_core(x):
    """F(x) = x + x^2 sin(pi/x) with F(0) = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, 0.0, x + x * x * np.sin(np.pi / safe))


def diabolic_f(x):
    """F on [-1, 1] (where |F| <= 1), continued with slope 1/2 through (+-1, +-1)."""
    x = np.asarray(x, dtype=float)
    inner = oscillating_core(np.clip(x, -1.0, 1.0))
    return np.where(x > 1.0, 1.0 + 0.5 * (x - 1.0), np.where(x < -1.0, -1.0 + 0.5 * (x + 1.0), inner))


def diabolic_df(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    core = 1.0 + 2.0 * safe * np.sin(np.pi / safe) - np.pi * np.cos(np.pi / safe)
    core = np.where(x == 0.0, 1.0, core)
    return np.where(np.abs(x) > 1.0, 0.5, core)


def _diabolic_f0(X):
    return diabolic_f(X) + 1.0


def _diabolic_f1(X):
    return diabolic_f(X - 1.0)


def _diabolic_j0(X):
    return diabolic_df(X)[..., None]


def _diabolic_j1(X):
    return diabolic_df(X - 1.0)[..., None]


def diabolic() -> CallableFamily:
    """f_0 = f + 1 and f_1 = f(. - 1) on [-4, 4]."""
    return CallableFamily(
        [_diabolic_f0, _diabolic_f1],
        Box([-4.0], [4.0]),
        [_diabolic_j0, _diabolic_j1],
        name="diabolic",
        params={"tail_slope": 0.5},
    )


PRESETS = {"esn2d": esn2d, "diabolic": diabolic}


def get_preset(name: str, **kwargs) -> MapFamily:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _matrix(values, rows: Optional[int] = None):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        return arr
    if rows is None:
        side = math.isqrt(arr.size)
        if side * side != arr.size:
            raise ConfigError("flat W_r must have a square number of entries")
        rows = side
    return arr.reshape(rows, -1)


def family_from_config(cfg: dict) -> MapFamily:
    """Preset by ``{"preset": name}`` or custom ESN via W_r, W_in, alpha, inputs."""
    if "W_r" in cfg:
        try:
            W_r = _matrix(cfg["W_r"])
            inputs = np.atleast_2d(np.asarray(cfg["inputs"], dtype=float))
            W_in = _matrix(cfg.get("W_in", np.eye(W_r.shape[0])), rows=W_r.shape[0])
            if inputs.shape[0] == 1 and W_in.shape[1] == 1:
                inputs = inputs.T
            return EsnFamily(W_r, W_in, cfg.get("alpha", 1.0), inputs, name=cfg.get("name", "esn"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad ESN config: {exc}") from None
    name = cfg.get("preset", "esn2d")
    kwargs = {"alpha": cfg["alpha"]} if "alpha" in cfg and name == "esn2d" else {}
    return get_preset(name, **kwargs)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _check_symbol(family, i):
    if not 0 <= i < family.alphabet_size:
        raise ValueError(f"map index {i} outside 0..{family.alphabet_size - 1}")


def evaluate(family: MapFamily, i: int, x) -> np.ndarray:
    _check_symbol(family, i)
    x = np.asarray(x, dtype=float)
    if not np.all(family.box.contains(x)):
        raise OutOfDomain(f"{x} lies outside the state box")
    return family.apply(i, x)


def jacobian(family: MapFamily, i: int, x) -> np.ndarray:
    _check_symbol(family, i)
    x = np.asarray(x, dtype=float)
    if not np.all(family.box.contains(x)):
        raise OutOfDomain(f"{x} lies outside the state box")
    return family.jacobian_at(i, x)


# --------------------------------------------------------------------------
# Fixed points
# --------------------------------------------------------------------------


class Kind(str, enum.Enum):
    STABLE = "STABLE"
    SADDLE = "SADDLE"
    UNSTABLE = "UNSTABLE"
    NONHYPERBOLIC = "NONHYPERBOLIC"


def classify(eigenvalues, hyperbolicity_tol: float = HYPERBOLICITY_TOL) -> Kind:
    mods = np.abs(np.asarray(eigenvalues))
    if np.any(np.abs(mods - 1.0) <= hyperbolicity_tol):
        return Kind.NONHYPERBOLIC
    if np.all(mods < 1.0):
        return Kind.STABLE
    if np.all(mods > 1.0):
        return Kind.UNSTABLE
    return Kind.SADDLE


@dataclass(frozen=True, eq=False)
class FixedPoint:
    location: np.ndarray
    eigenvalues: np.ndarray
    kind: Kind
    residual: float

    def to_dict(self) -> dict:
        return {
            "location": self.location.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "kind": self.kind.value,
            "residual": self.residual,
        }


class FixedPointList(list):
    """List of fixed points that also records how many seeds failed."""

    dropped: int = 0


def _newton(family, i, X, fp_tol, max_newton):
    X = X.copy()
    n = X.shape[-1]
    eye = np.eye(n)
    for _ in range(max_newton):
        with np.errstate(all="ignore"):
            G = family.apply(i, X) - X
            res = np.linalg.norm(G, axis=-1)
            todo = np.isfinite(res) & (res >= fp_tol * 1e-3)
            if not todo.any():
                break
            J = family.jacobian_at(i, X[todo]) - eye
            det = np.linalg.det(J)
            good = np.isfinite(det) & (np.abs(det) > 1e-300)
            idx = np.flatnonzero(todo)[good]
            X[idx] -= np.linalg.solve(J[good], G[todo][good][..., None])[..., 0]
            X[np.flatnonzero(todo)[~good]] = np.nan
    with np.errstate(all="ignore"):
        res = np.linalg.norm(family.apply(i, X) - X, axis=-1)
    return X, res


def _dedupe(points, radius):
    order = np.lexsort(points.T[::-1])
    points = points[order]
    tree = cKDTree(points)
    taken = np.zeros(len(points), dtype=bool)
    keep = []
    for idx in range(len(points)):
        if taken[idx]:
            continue
        group = tree.query_ball_point(points[idx], radius)
        taken[group] = True
        keep.append(idx)
    return points[keep]


def find_fixed_points(
    family: MapFamily,
    i: int,
    seeds_per_dim: int = 21,
    fp_tol: float = FP_TOL,
    hyperbolicity_tol: float = HYPERBOLICITY_TOL,
    max_newton: int = 60,
    fallback_iter: int = 5000,
) -> FixedPointList:
    """Newton from a regular seed lattice; failed seeds are iterated forward
    and polished again.  Duplicates within 10*fp_tol are merged.
    """
    if seeds_per_dim < 2:
        raise ValueError("seeds_per_dim must be at least 2")
    _check_symbol(family, i)
    box = family.box
    seeds = box.lattice(seeds_per_dim)
    X, res = _newton(family, i, seeds, fp_tol, max_newton)
    ok = np.isfinite(res) & (res < fp_tol) & box.contains(X)
    if not ok.all():
        Y = seeds[~ok]
        for _ in range(fallback_iter):
            Y = family.apply(i, Y)
        Y, res_y = _newton(family, i, Y, fp_tol, max_newton)
        X[~ok], res[~ok] = Y, res_y
        ok = np.isfinite(res) & (res < fp_tol) & box.contains(X)
    found = FixedPointList()
    found.dropped = int((~ok).sum())
    if not ok.any():
        return found
    for loc in _dedupe(X[ok], 10 * fp_tol):
        eig = np.linalg.eigvals(family.jacobian_at(i, loc))
        r = float(np.linalg.norm(family.apply(i, loc) - loc))
        found.append(FixedPoint(loc, eig, classify(eig, hyperbolicity_tol), r))
    return found


def stable_points(points: Sequence[FixedPoint]) -> list:
    return [fp for fp in points if fp.kind is Kind.STABLE]


# --------------------------------------------------------------------------
# Basins
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BasinGrid:
    """Attractor label of each grid cell (``UNRESOLVED`` = -1).

    ``labels[i_0, i_1, ...]`` belongs to the cell whose centre has
    coordinate ``axes[d][i_d]`` along dimension d.
    """

    labels: np.ndarray
    axes: list
    box: Box

    @property
    def unresolved_fraction(self) -> float:
        return float(np.mean(self.labels == UNRESOLVED))

    def cell_index(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        res = np.array(self.labels.shape)
        idx = np.floor((x - self.box.lo) / (self.box.hi - self.box.lo) * res).astype(int)
        return tuple(np.clip(idx, 0, res - 1))

    def label_of(self, x) -> int:
        return int(self.labels[self.cell_index(x)])

    def image(self) -> np.ndarray:
        """Gray levels for PGM export (label + 1; 0 = unresolved).

        Rows run from the top of the second axis downward, columns along the
        first axis; one-dimensional grids become a single row.
        """
        lab = self.labels + 1
        if lab.ndim == 1:
            return lab[None, :]
        if lab.ndim == 2:
            return lab.T[::-1]
        raise ValueError("only one- and two-dimensional grids render as images")


def _first_entry(family, i, X, centres, radius, max_iter):
    labels = np.full(len(X), UNRESOLVED, dtype=np.int64)
    active = np.arange(len(X))
    Y = X.copy()
    for _ in range(max_iter + 1):
        d = np.linalg.norm(Y[:, None, :] - centres[None, :, :], axis=-1)
        hit = d < radius
        landed = hit.any(axis=1)
        labels[active[landed]] = np.argmax(hit[landed], axis=1)
        active, Y = active[~landed], Y[~landed]
        if active.size == 0:
            break
        Y = family.apply(i, Y)
    return labels


def estimate_basins(
    family: MapFamily,
    i: int,
    grid_res: int = 200,
    max_iter: int = 2000,
    ball_radius: float = 1e-3,
    stable: Optional[Sequence] = None,
) -> BasinGrid:
    """Label each grid cell by the first stable point whose ball its orbit enters."""
    if stable is None:
        stable = [fp.location for fp in stable_points(find_fixed_points(family, i))]
    if len(stable) == 0:
        raise NoStablePoints(f"map {i} has no stable fixed points")
    centres = np.array([np.asarray(getattr(s, "location", s), dtype=float) for s in stable])
    X = family.box.cell_centers(grid_res)
    labels = _first_entry(family, i, X, centres, ball_radius, max_iter)
    shape = (grid_res,) * family.dim
    return BasinGrid(labels.reshape(shape), family.box.axes_centers(grid_res), family.box)


# --------------------------------------------------------------------------
# Atlas and transition table
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransitionTable:
    """P(i, j, k): attractor of f_k whose basin holds attractor j of f_i.

    ``table[i, j, k] == -1`` marks either j >= L(i) or a straddle.
    """

    table: np.ndarray
    L: tuple
    straddles: tuple = ()

    def __call__(self, i, j, k) -> int:
        if not 0 <= j < self.L[i]:
            raise InvalidSeed(f"map {i} has no attractor {j}")
        p = int(self.table[i, j, k])
        if p < 0:
            raise BoundaryStraddle(i, j, k)
        return p

    def to_list(self) -> list:
        return [[[int(self.table[i, j, k]) for k in range(len(self.L))] for j in range(self.L[i])] for i in range(len(self.L))]


@dataclass(frozen=True, eq=False)
class AttractorAtlas:
    family: MapFamily
    fixed_points: tuple
    basins: tuple = ()
    table: Optional[TransitionTable] = None
    settings: dict = field(default_factory=dict)

    @property
    def unresolved_fraction(self) -> float:
        return max((b.unresolved_fraction for b in self.basins), default=0.0)

    @property
    def accepted(self) -> bool:
        """Basins cover all but under 1% of every grid."""
        return self.unresolved_fraction < ACCEPT_UNRESOLVED

    def stable(self, i: int) -> list:
        return [fp.location for fp in stable_points(self.fixed_points[i])]

    @property
    def L(self) -> tuple:
        return tuple(len(self.stable(i)) for i in range(self.family.alphabet_size))

    def to_dict(self) -> dict:
        maps = []
        for i, fps in enumerate(self.fixed_points):
            entry = {
                "map": i,
                "fixed_points": [fp.to_dict() for fp in fps],
                "stable_indices": [n for n, fp in enumerate(fps) if fp.kind is Kind.STABLE],
                "newton_failures": getattr(fps, "dropped", 0),
            }
            if self.basins:
                entry["unresolved_fraction"] = self.basins[i].unresolved_fraction
            maps.append(entry)
        return {
            "family": self.family.describe(),
            "settings": self.settings,
            "maps": maps,
            "accepted": self.accepted,
            "transition_table": None if self.table is None else self.table.to_list(),
            "straddles": [] if self.table is None else [list(c) for c in self.table.straddles],
        }

    def write(self, out_dir, stem: str = "atlas") -> list:
        """Write ``<stem>.json`` plus one ``<stem>_basin_<i>.pgm`` per map."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        for i, grid in enumerate(self.basins):
            img = grid.image()
            p = out / f"{stem}_basin_{i}.pgm"
            write_pgm(p, img, maxval=max(1, self.L[i]))
            paths.append(p)
        return paths


def transition_table(atlas: AttractorAtlas, max_iter: int = 5000, ball_radius: float = 1e-3) -> TransitionTable:
    family = atlas.family
    M = family.alphabet_size
    L = atlas.L
    table = np.full((M, max(L + (1,)), M), -1, dtype=np.int64)
    straddles = []
    for k in range(M):
        centres = np.array(atlas.stable(k))
        for i in range(M):
            pts = np.array(atlas.stable(i))
            if not len(pts) or not len(centres):
                continue
            labels = _first_entry(family, k, pts, centres, ball_radius, max_iter)
            for j, lab in enumerate(labels):
                table[i, j, k] = lab
                if lab == UNRESOLVED:
                    straddles.append((i, j, k))
    return TransitionTable(table, L, tuple(straddles))


def build_atlas(
    family: MapFamily,
    seeds_per_dim: int = 21,
    fp_tol: float = FP_TOL,
    hyperbolicity_tol: float = HYPERBOLICITY_TOL,
    grid_res: Optional[int] = 200,
    max_iter: int = 2000,
    ball_radius: float = 1e-3,
) -> AttractorAtlas:
    """Fixed points, basins (skipped when ``grid_res`` is None) and P table."""
    fps = tuple(
        find_fixed_points(family, i, seeds_per_dim, fp_tol, hyperbolicity_tol)
        for i in range(family.alphabet_size)
    )
    atlas = AttractorAtlas(
        family,
        fps,
        settings={
            "seeds_per_dim": seeds_per_dim,
            "fp_tol": fp_tol,
            "hyperbolicity_tol": hyperbolicity_tol,
            "grid_res": grid_res,
            "max_iter": max_iter,
            "ball_radius": ball_radius,
        },
    )
    if grid_res is not None:
        basins = tuple(
            estimate_basins(family, i, grid_res, max_iter, ball_radius, atlas.stable(i))
            for i in range(family.alphabet_size)
        )
        atlas = replace(atlas, basins=basins)
    return replace(atlas, table=transition_table(atlas, max_iter, ball_radius))


# --------------------------------------------------------------------------
# Attractor sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AttractorSequence:
    indices: np.ndarray
    origin: int = 0

    def at(self, k: int) -> int:
        return int(self.indices[k + self.origin])


def forward_attractor_sequence(P: TransitionTable, v, A0: int) -> AttractorSequence:
    """A[k] = P(v[k-1], A[k-1], v[k]) across the whole window of ``v``."""
    syms = v.symbols
    if not 0 <= A0 < P.L[syms[0]]:
        raise InvalidSeed(f"map {syms[0]} has no attractor {A0}")
    out = np.empty(syms.size, dtype=np.int64)
    out[0] = A0
    for n in range(1, syms.size):
        out[n] = P(int(syms[n - 1]), int(out[n - 1]), int(syms[n]))
    return AttractorSequence(out, v.origin)


def count_attractor_sequences(P: TransitionTable, v) -> tuple:
    """(distinct full-window sequences, distinct final attractors) over all seeds."""
    seqs = [forward_attractor_sequence(P, v, a).indices for a in range(P.L[v.symbols[0]])]
    e_window = len({s.tobytes() for s in seqs})
    e_tail = len({int(s[-1]) for s in seqs})
    return e_window, e_tail


# --------------------------------------------------------------------------
# Contraction horizons and funnelling times
# --------------------------------------------------------------------------


def _ball_samples(centre, radius, count, rng):
    n = centre.size
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    return centre + d * r[:, None]


def contraction_horizon(
    family: MapFamily,
    i: int,
    j,
    rho: float,
    ball_radius: float = 1e-3,
    n_pairs: int = 1000,
    max_n: int = 10_000,
    seed: int = 0,
) -> int:
    """Smallest n with f_i^n contracting sampled pairs near x_i^j by < rho
    and mapping the sampled ball into itself.

    ``j`` is an attractor index of f_i or the point itself.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if np.ndim(j) == 0:
        pts = stable_points(find_fixed_points(family, i))
        if not 0 <= int(j) < len(pts):
            raise InvalidSeed(f"map {i} has no attractor {j}")
        centre = pts[int(j)].location
    else:
        centre = np.asarray(j, dtype=float)
    rng = np.random.default_rng(seed)
    X = _ball_samples(centre, ball_radius, n_pairs, rng)
    Y = _ball_samples(centre, ball_radius, n_pairs, rng)
    gap0 = np.linalg.norm(X - Y, axis=1)
    for n in range(1, max_n + 1):
        X = family.apply(i, X)
        Y = family.apply(i, Y)
        lip = np.max(np.linalg.norm(X - Y, axis=1) / gap0)
        reach = max(np.max(np.linalg.norm(X - centre, axis=1)), np.max(np.linalg.norm(Y - centre, axis=1)))
        if lip < rho and reach <= ball_radius:
            return n
    raise HorizonExceeded(f"no contraction by {rho} within {max_n} iterates")


def half_box(box: Box, axis: int, threshold: float, upper: bool = True) -> Box:
    lo, hi = box.lo.copy(), box.hi.copy()
    if upper:
        lo[axis] = threshold
    else:
        hi[axis] = threshold
    return Box(lo, hi)


def below(axis: int, threshold: float) -> Callable:
    """Predicate: coordinate ``axis`` strictly below ``threshold``."""
    return functools.partial(_below, axis, threshold)


def _below(axis, threshold, X):
    return X[..., axis] < threshold


def estimate_mmin(
    family: MapFamily,
    i: int,
    target,
    region: Box,
    eps: Optional[float] = None,
    grid_res: int = 100,
    inside: Optional[Callable] = None,
    max_m: int = 10_000,
) -> int:
    """Smallest m >= 1 such that f_i^m sends every lattice point of ``region``
    into the target set.

    The target set is ``inside`` (a predicate on (N, n) arrays) if given,
    else the open eps-ball around ``target`` (a point, or an attractor index
    of f_i).
    """
    if inside is None:
        if target is None or eps is None:
            raise ValueError("give either a predicate or a target point with eps")
        if np.ndim(target) == 0:
            pts = stable_points(find_fixed_points(family, i))
            if not 0 <= int(target) < len(pts):
                raise InvalidSeed(f"map {i} has no attractor {target}")
            target = pts[int(target)].location
        t = np.asarray(target, dtype=float)
        inside = functools.partial(_in_ball, t, eps)
    X = region.lattice(grid_res)
    for m in range(1, max_m + 1):
        X = family.apply(i, X)
        if np.all(inside(X)):
            return m
    raise NotFunneling(f"region not funnelled within {max_m} iterates")


def _in_ball(centre, eps, X):
    return np.linalg.norm(X - centre, axis=-1) < eps


def saddle_points(points: Sequence[FixedPoint]) -> list:
    return [fp for fp in points if fp.kind is Kind.SADDLE]


def esn_funnel_mmin(family: Optional[EsnFamily] = None, grid_res: int = 100, max_m: int = 10_000) -> int:
    """Iterates of f_1 needed to push the upper half-box below the saddle of f_0.

    The upper half is everything on the saddle's side of x^* including the
    saddle line x_2 = s, and the target is x_2 < s.
    """
    family = family or esn2d()
    saddle = saddle_points(find_fixed_points(family, 0))
    if len(saddle) != 1:
        raise NotFunneling(f"expected one saddle of f_0, found {len(saddle)}")
    s = float(saddle[0].location[-1])
    region = half_box(family.box, family.dim - 1, s)
    return estimate_mmin(family, 1, None, region, inside=below(family.dim - 1, s), grid_res=grid_res, max_m=max_m)


def attractor_sequence_mmin(atlas: AttractorAtlas, k: int, eps: float = 0.05, grid_res: int = 5, max_m: int = 10_000) -> int:
    """Iterates of f_k taking eps-cubes around every other map's attractors
    into the eps-ball of their P-successor attractor of f_k.
    """
    worst = 1
    for i in range(atlas.family.alphabet_size):
        if i == k:
            continue
        for j, x in enumerate(atlas.stable(i)):
            target = atlas.stable(k)[atlas.table(i, j, k)]
            region = Box(x - eps, x + eps)
            m = estimate_mmin(atlas.family, k, target, region, eps=eps, grid_res=grid_res, max_m=max_m)
            worst = max(worst, m)
    return worst
