"""Min-max repetition subshifts: forbidden words, state graphs, sampling.

Words are tuples of ints.  Bi-infinite inputs are stood in for by finite
windows (:class:`SymbolSequence`) that carry the array position of time
index k = 0.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import EmptyOverlap, InvalidSpec, NotMinMaxForm

Word = tuple
UNBOUNDED = None

__all__ = [
    "UNBOUNDED",
    "RepeatSpec",
    "ForbiddenWordSet",
    "SymbolSequence",
    "StateGraph",
    "Edge",
    "word",
    "build_forbidden_set",
    "infer_minmax",
    "validate_sequence",
    "run_lengths",
    "runs_as_arrays",
    "build_state_graph",
    "generate_sequence",
    "periodic_sequence",
    "sample_runs",
    "sequence_metric",
    "read_sequence",
    "write_sequence",
    "load_spec",
    "save_spec",
]


def word(text: str) -> Word:
    """Parse a digit string such as ``"0110"`` into a word tuple."""
    return tuple(int(c) for c in text)


def _word_str(w: Word) -> str:
    if all(s < 10 for s in w):
        return "".join(str(s) for s in w)
    return ",".join(str(s) for s in w)


# --------------------------------------------------------------------------
# RepeatSpec
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RepeatSpec:
    """Per-symbol minimum/maximum run lengths and optional repeat probabilities.

    ``m_plus[i] is None`` means the run length of symbol i is unbounded.
    ``p[i]`` is the probability of each further repeat once the minimum is
    reached; 0 and 1 give the deterministic extremes.
    """

    m_minus: tuple
    m_plus: tuple
    p: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "m_minus", tuple(int(m) for m in self.m_minus))
        object.__setattr__(
            self, "m_plus", tuple(None if m is None else int(m) for m in self.m_plus)
        )
        if self.p is not None:
            object.__setattr__(self, "p", tuple(float(q) for q in self.p))
        M = len(self.m_minus)
        if M < 2:
            raise InvalidSpec("alphabet must have at least two symbols")
        if M > 256:
            raise InvalidSpec("alphabet larger than 256 symbols is not supported")
        if len(self.m_plus) != M or (self.p is not None and len(self.p) != M):
            raise InvalidSpec("m_minus, m_plus and p must have one entry per symbol")
        for i in range(M):
            lo, hi = self.m_minus[i], self.m_plus[i]
            if lo < 1:
                raise InvalidSpec(f"m_minus[{i}] = {lo} < 1")
            if hi is not None and hi < lo:
                raise InvalidSpec(f"m_plus[{i}] = {hi} < m_minus[{i}] = {lo}")
            if self.p is not None:
                q = self.p[i]
                if not 0.0 <= q <= 1.0:
                    raise InvalidSpec(f"p[{i}] = {q} outside [0, 1]")
                if q == 1.0 and hi is None:
                    raise InvalidSpec(f"p[{i}] = 1 needs a finite m_plus[{i}]")

    @property
    def alphabet_size(self) -> int:
        return len(self.m_minus)

    @classmethod
    def two_symbol(cls, m0_minus, m0_plus, m1_minus, m1_plus, p0=None, p1=None):
        p = None if p0 is None and p1 is None else (p0, p1)
        return cls((m0_minus, m1_minus), (m0_plus, m1_plus), p)

    def with_p(self, p) -> "RepeatSpec":
        return RepeatSpec(self.m_minus, self.m_plus, tuple(p))

    def to_dict(self) -> dict:
        return {
            "alphabet": self.alphabet_size,
            "m_minus": list(self.m_minus),
            "m_plus": list(self.m_plus),
            "p": None if self.p is None else list(self.p),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RepeatSpec":
        try:
            spec = cls(d["m_minus"], d["m_plus"], d.get("p"))
        except KeyError as exc:
            raise InvalidSpec(f"missing key {exc}") from None
        if "alphabet" in d and int(d["alphabet"]) != spec.alphabet_size:
            raise InvalidSpec("alphabet does not match the length of m_minus")
        return spec


def load_spec(path: Union[str, PathLike]) -> RepeatSpec:
    with open(path) as fh:
        return RepeatSpec.from_dict(json.load(fh))


def save_spec(spec: RepeatSpec, path: Union[str, PathLike]) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# Forbidden words
# --------------------------------------------------------------------------


def _contains(big: Word, small: Word) -> bool:
    n, m = len(big), len(small)
    return any(big[s : s + m] == small for s in range(n - m + 1))


@dataclass(frozen=True)
class ForbiddenWordSet:
    alphabet_size: int
    words: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        words = frozenset(tuple(int(s) for s in w) for w in self.words)
        object.__setattr__(self, "words", words)
        if self.alphabet_size < 2:
            raise InvalidSpec("alphabet must have at least two symbols")
        for w in words:
            if not w:
                raise InvalidSpec("forbidden words must be nonempty")
            if any(s < 0 or s >= self.alphabet_size for s in w):
                raise InvalidSpec(f"word {w} uses symbols outside the alphabet")

    @classmethod
    def from_strings(cls, alphabet_size: int, words: Iterable[str]):
        return cls(alphabet_size, frozenset(word(w) for w in words))

    def minimal(self) -> "ForbiddenWordSet":
        """Drop every word that contains another forbidden word."""
        keep = {
            w
            for w in self.words
            if not any(v != w and _contains(w, v) for v in self.words)
        }
        return ForbiddenWordSet(self.alphabet_size, frozenset(keep))

    def as_strings(self) -> list:
        return sorted((_word_str(w) for w in self.words), key=lambda s: (len(s), s))

    def __len__(self):
        return len(self.words)

    def __contains__(self, w):
        return tuple(w) in self.words


def build_forbidden_set(spec: RepeatSpec) -> ForbiddenWordSet:
    M = spec.alphabet_size
    words = set()
    for i in range(M):
        others = [j for j in range(M) if j != i]
        for m in range(1, spec.m_minus[i]):
            for j, k in itertools.product(others, others):
                words.add((j,) + (i,) * m + (k,))
        if spec.m_plus[i] is not None:
            words.add((i,) * (spec.m_plus[i] + 1))
    return ForbiddenWordSet(M, frozenset(words)).minimal()


def infer_minmax(fws: ForbiddenWordSet) -> RepeatSpec:
    """Recover the min-max repetitions encoded by ``fws``.

    Raises :class:`NotMinMaxForm` when no :class:`RepeatSpec` reproduces the
    (minimal) word set exactly.
    """
    fws = fws.minimal()
    M = fws.alphabet_size
    m_minus = [1] * M
    m_plus = [None] * M
    for w in fws.words:
        if len(set(w)) == 1:
            i = w[0]
            cap = len(w) - 1
            if cap < 1:
                raise NotMinMaxForm(f"symbol {i} is forbidden outright")
            m_plus[i] = cap if m_plus[i] is None else min(m_plus[i], cap)
        elif len(w) >= 3 and len(set(w[1:-1])) == 1 and w[1] not in (w[0], w[-1]):
            i = w[1]
            m_minus[i] = max(m_minus[i], len(w) - 1)
        else:
            raise NotMinMaxForm(f"word {_word_str(w)} is not a run-length constraint")
    try:
        spec = RepeatSpec(tuple(m_minus), tuple(m_plus))
    except InvalidSpec as exc:
        raise NotMinMaxForm(str(exc)) from None
    if build_forbidden_set(spec).words != fws.words:
        raise NotMinMaxForm("word set is not the complete min-max family")
    return spec


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymbolSequence:
    """Finite window of a symbol sequence; ``symbols[origin]`` is u[0]."""

    symbols: np.ndarray
    origin: int = 0
    alphabet_size: int = 2

    def __post_init__(self):
        arr = np.asarray(self.symbols)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("a sequence needs at least one symbol")
        if arr.min() < 0 or arr.max() >= self.alphabet_size:
            raise ValueError("symbols outside the alphabet")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "symbols", arr)
        if not 0 <= self.origin < arr.size:
            raise ValueError(f"origin {self.origin} outside window of length {arr.size}")

    @classmethod
    def from_string(cls, text: str, origin: int = 0, alphabet_size: int = 2):
        return cls(np.array(word(text.strip()), dtype=np.uint8), origin, alphabet_size)

    @classmethod
    def constant(cls, symbol: int, length: int, origin: int = 0, alphabet_size: int = 2):
        return cls(np.full(length, symbol, dtype=np.uint8), origin, alphabet_size)

    def __len__(self):
        return self.symbols.size

    def __eq__(self, other):
        if not isinstance(other, SymbolSequence):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.alphabet_size == other.alphabet_size
            and np.array_equal(self.symbols, other.symbols)
        )

    def __str__(self):
        return _word_str(tuple(int(s) for s in self.symbols))

    @property
    def first_k(self) -> int:
        return -self.origin

    @property
    def last_k(self) -> int:
        return self.symbols.size - 1 - self.origin

    def covers(self, k0: int, k1: int) -> bool:
        """True when every time index in [k0, k1) lies in the window."""
        return k1 <= k0 or (k0 >= self.first_k and k1 - 1 <= self.last_k)

    def at(self, k: int) -> int:
        return int(self.symbols[k + self.origin])

    def window(self, k0: int, k1: int) -> np.ndarray:
        """Symbols for time indices k0 <= k < k1."""
        return self.symbols[k0 + self.origin : k1 + self.origin]

    def shifted(self, n: int = 1) -> "SymbolSequence":
        """The shift sigma^n: the returned window has v'[k] = v[k + n]."""
        return SymbolSequence(self.symbols, self.origin + n, self.alphabet_size)

    def crop(self, k0: int, k1: int) -> "SymbolSequence":
        """Sub-window over time indices [k0, k1); k = 0 must stay inside."""
        return SymbolSequence(self.window(k0, k1), -k0, self.alphabet_size)


def read_sequence(source, alphabet_size: int = 2) -> SymbolSequence:
    """Read the plain-text format: ``#origin=<k>`` header, then symbol digits."""
    if isinstance(source, (str, PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    origin = 0
    digits = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "origin":
                origin = int(value)
            continue
        digits.append(line)
    return SymbolSequence.from_string("".join(digits), origin, alphabet_size)


def write_sequence(seq: SymbolSequence, dest) -> None:
    if seq.alphabet_size > 10:
        raise ValueError("text format holds one character per symbol (alphabet <= 10)")
    text = f"#origin={seq.origin}\n" + str(seq) + "\n"
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w") as fh:
            fh.write(text)
    else:
        dest.write(text)


def validate_sequence(seq: SymbolSequence, fws: ForbiddenWordSet) -> list:
    """All (window position, word) occurrences of forbidden words.

    A minimum-length word needs its delimiters on both sides, so a run cut
    off by the window edge can never trigger one; maximum-length words are
    caught anywhere.
    """
    if seq.alphabet_size != fws.alphabet_size:
        raise ValueError("sequence and forbidden set use different alphabets")
    data = seq.symbols.tobytes()
    found = []
    for w in fws.words:
        pattern = bytes(w)
        start = data.find(pattern)
        while start != -1:
            found.append((start, w))
            start = data.find(pattern, start + 1)
    found.sort(key=lambda t: (t[0], len(t[1]), t[1]))
    return found


def runs_as_arrays(seq: SymbolSequence):
    """(symbols, lengths) of maximal runs, in order, as numpy arrays."""
    s = seq.symbols
    starts = np.concatenate(([0], np.flatnonzero(s[1:] != s[:-1]) + 1))
    lengths = np.diff(np.append(starts, s.size))
    return s[starts].astype(np.int64), lengths


def run_lengths(seq: SymbolSequence) -> list:
    """Maximal runs as ``(symbol, length, is_boundary)``; edge runs are boundary."""
    syms, lengths = runs_as_arrays(seq)
    last = len(lengths) - 1
    return [
        (int(s), int(n), r == 0 or r == last)
        for r, (s, n) in enumerate(zip(syms, lengths))
    ]


def sequence_metric(u: SymbolSequence, v: SymbolSequence) -> float:
    """sum_k d(u[k], v[k]) / 2^|k| over the shared window, discrete d."""
    k0 = max(u.first_k, v.first_k)
    k1 = min(u.last_k, v.last_k) + 1
    if k1 <= k0:
        raise EmptyOverlap("windows share no time index")
    diff = u.window(k0, k1) != v.window(k0, k1)
    ks = np.arange(k0, k1)[diff]
    return float(np.sum(np.ldexp(1.0, -np.abs(ks))))


# --------------------------------------------------------------------------
# State graph
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    label: int
    prob: Optional[float] = None


@dataclass(frozen=True)
class StateGraph:
    """Run-progress graph.

    Vertex ``(i, c)`` means the last c emitted symbols were i.  For an
    unbounded symbol the vertex ``(i, m_minus[i])`` stands for every count
    at or past the minimum and carries a self-loop.
    """

    vertices: tuple
    edges: tuple
    alphabet_size: int

    def out_edges(self, v: int) -> list:
        return [e for e in self.edges if e.src == v]

    def index(self, vertex) -> int:
        return self.vertices.index(tuple(vertex))

    def words(self, length: int) -> set:
        """Label sequences of every walk with ``length`` edges."""
        succ = [[] for _ in self.vertices]
        for e in self.edges:
            succ[e.src].append((e.dst, e.label))
        frontier = {(v, ()) for v in range(len(self.vertices))}
        for _ in range(length):
            frontier = {(d, w + (lab,)) for v, w in frontier for d, lab in succ[v]}
        return {w for _, w in frontier}

    def transition_matrix(self) -> np.ndarray:
        n = len(self.vertices)
        P = np.zeros((n, n))
        for e in self.edges:
            if e.prob is None:
                raise ValueError("graph carries no probabilities")
            P[e.src, e.dst] += e.prob
        return P


def build_state_graph(spec: RepeatSpec) -> StateGraph:
    M = spec.alphabet_size
    top = []
    for i in range(M):
        top.append(spec.m_plus[i] if spec.m_plus[i] is not None else spec.m_minus[i])
    vertices = tuple((i, c) for i in range(M) for c in range(1, top[i] + 1))
    index = {v: n for n, v in enumerate(vertices)}
    edges = []
    for (i, c), src in index.items():
        p = None if spec.p is None else spec.p[i]
        at_min = c >= spec.m_minus[i]
        at_max = spec.m_plus[i] is not None and c == spec.m_plus[i]
        if not at_min:
            edges.append(Edge(src, index[(i, c + 1)], i, None if p is None else 1.0))
            continue
        if not at_max:
            nxt = (i, c + 1) if spec.m_plus[i] is not None else (i, c)
            edges.append(Edge(src, index[nxt], i, p))
        leave = None
        if p is not None:
            leave = 1.0 / (M - 1) if at_max else (1.0 - p) / (M - 1)
        for j in range(M):
            if j != i:
                edges.append(Edge(src, index[(j, 1)], j, leave))
    return StateGraph(vertices, tuple(edges), M)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

_RUNS_PER_CHUNK = 256


def _check_sampling(spec: RepeatSpec):
    if spec.p is None:
        raise InvalidSpec("sampling needs a repeat probability for every symbol")
    for i, q in enumerate(spec.p):
        if q == 1.0 and spec.m_plus[i] is None:
            raise InvalidSpec(f"p[{i}] = 1 needs a finite m_plus[{i}]")


def _run_chunks(spec: RepeatSpec, rng: np.random.Generator, current: int):
    """Yield (symbols, lengths) for successive blocks of runs.

    Blocks have a fixed size, so a longer request only appends runs; shorter
    sequences from the same seed are prefixes of longer ones.
    """
    M = spec.alphabet_size
    m_lo = np.array(spec.m_minus, dtype=np.int64)
    extra_cap = np.array(
        [np.iinfo(np.int64).max if hi is None else hi - lo for lo, hi in zip(spec.m_minus, spec.m_plus)],
        dtype=np.int64,
    )
    p = np.array(spec.p, dtype=float)
    always_max = p == 1.0
    q = np.where(always_max, 0.5, 1.0 - p)
    n = _RUNS_PER_CHUNK
    while True:
        if M == 2:
            syms = (current + np.arange(n + 1)) % 2
        else:
            steps = rng.integers(1, M, size=n)
            syms = (current + np.concatenate(([0], np.cumsum(steps)))) % M
        body = syms[:n]
        extra = rng.geometric(q[body]) - 1
        extra = np.where(always_max[body], extra_cap[body], np.minimum(extra, extra_cap[body]))
        yield body, m_lo[body] + extra
        current = int(syms[n])


def sample_runs(spec: RepeatSpec, n_runs: int, seed: int, start_symbol: Optional[int] = None):
    """First ``n_runs`` (symbol, length) pairs of the generator's run stream."""
    _check_sampling(spec)
    rng = np.random.default_rng(seed)
    if start_symbol is None:
        start_symbol = int(rng.integers(spec.alphabet_size))
    syms, lens, have = [], [], 0
    for s, n in _run_chunks(spec, rng, start_symbol):
        syms.append(s)
        lens.append(n)
        have += s.size
        if have >= n_runs:
            break
    return np.concatenate(syms)[:n_runs], np.concatenate(lens)[:n_runs]


def generate_sequence(
    spec: RepeatSpec,
    length: int,
    seed: int,
    start_symbol: Optional[int] = None,
    origin: int = 0,
) -> SymbolSequence:
    """Sample ``length`` symbols from the repeat-Markov measure on ``spec``.

    Starts at a run boundary; the first symbol is uniform over the alphabet
    unless ``start_symbol`` is given.  After the minimum, each further repeat
    of symbol i happens with probability ``p[i]`` up to ``m_plus[i]``; a new
    run picks uniformly among the other symbols.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    _check_sampling(spec)
    rng = np.random.default_rng(seed)
    if start_symbol is None:
        start_symbol = int(rng.integers(spec.alphabet_size))
    syms, lens, total = [], [], 0
    for s, n in _run_chunks(spec, rng, start_symbol):
        syms.append(s)
        lens.append(n)
        total += int(n.sum())
        if total >= length:
            break
    out = np.repeat(np.concatenate(syms).astype(np.uint8), np.concatenate(lens))[:length]
    return SymbolSequence(out, origin, spec.alphabet_size)


def periodic_sequence(blocks: Sequence, length: int, origin: int = 0, alphabet_size: int = 2):
    """Repeat the block pattern ``[(symbol, run), ...]`` out to ``length``."""
    unit = np.concatenate([np.full(n, s, dtype=np.uint8) for s, n in blocks])
    reps = math.ceil(length / unit.size)
    return SymbolSequence(np.tile(unit, reps)[:length], origin, alphabet_size)

