"""Exact search for fixed points and k-cycles of the piecewise-linear map.

A candidate k-cycle is fixed by a sequence of k region codes. Within that
sequence the k-fold map is affine, so its fixed point is one linear solve.
The candidate is a true cycle when the solution points actually lie in the
regions that were assumed. Otherwise the search restarts from the observed
regions of the (virtual) solution.

Internally a region code is an int bitmask over the *active* units only
(units whose ``W`` column is nonzero). Units with a zero column never change
the local affine map, so enumerating their signs would only duplicate work.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .core import PlrnnParams, canonical_rotation, region_of

POINT_TOL = 1e-9
SINGULAR_TOL = 1e-12
STAB_TOL = 1e-9
ORACLE_GUARD = 24
DRAW_BATCH = 4096


class BudgetGuardError(RuntimeError):
    """Raised when an exhaustive enumeration would exceed the size guard."""


# --- region bookkeeping ------------------------------------------------------

class RegionIndexer:
    """Translate between effective masks and per-unit code bits for one parameter set."""

    def __init__(self, params: PlrnnParams, active=None):
        self.params = params
        if active is None:
            active = params.active_units
        self.active = np.flatnonzero(np.asarray(active, dtype=bool))
        self.n_active = len(self.active)
        self.n_codes = 1 << self.n_active
        self._mats: dict[int, np.ndarray] = {}
        self._A = params.A_matrix
        self._weights = 1 << np.arange(self.n_active)

    def matrix(self, mask: int) -> np.ndarray:
        S = self._mats.get(mask)
        if S is None:
            d = np.zeros(self.params.M)
            for j, m in enumerate(self.active):
                if (mask >> j) & 1:
                    d[m] = 1.0
            S = self._A + self.params.W * d[None, :]
            self._mats[mask] = S
        return S

    def masks_of(self, points: np.ndarray) -> tuple[int, ...]:
        """Effective mask of each row of ``points`` (strict ``z > 0`` rule)."""
        if self.n_active == 0:
            return (0,) * len(points)
        pos = points[:, self.active] > 0
        return tuple(int(v) for v in pos @ self._weights)

    def full_bits(self, mask: int) -> tuple[int, ...]:
        bits = [0] * self.params.M
        for j, m in enumerate(self.active):
            bits[m] = (mask >> j) & 1
        return tuple(bits)


class Candidate(NamedTuple):
    """Outcome of solving one region sequence.

    ``points`` is None when the linear system is degenerate.
    """

    seq: tuple
    points: np.ndarray | None
    observed: tuple | None
    consistent: bool
    degenerate: bool
    rcond: float


def _solve(ix: RegionIndexer, seq: tuple, singular_tol: float) -> Candidate:
    M = ix.params.M
    h = ix.params.h
    P = np.eye(M)
    q = np.zeros(M)
    for mask in seq:
        S = ix.matrix(mask)
        P = S @ P
        q = S @ q + h
    X = np.eye(M) - P
    try:
        Xinv = np.linalg.inv(X)
    except np.linalg.LinAlgError:
        return Candidate(seq, None, None, False, True, 0.0)
    nx = np.abs(X).sum(axis=0).max()
    ni = np.abs(Xinv).sum(axis=0).max()
    rcond = 0.0 if nx == 0 or not np.isfinite(ni) else 1.0 / (nx * ni)
    if rcond < singular_tol:
        return Candidate(seq, None, None, False, True, rcond)
    pts = np.empty((len(seq), M))
    z = Xinv @ q
    for l, mask in enumerate(seq):
        pts[l] = z
        z = ix.matrix(mask) @ z + h
    if not np.all(np.isfinite(pts)):
        return Candidate(seq, None, None, False, True, rcond)
    observed = ix.masks_of(pts)
    return Candidate(seq, pts, observed, observed == seq, False, rcond)


def solve_cycle_candidate(params: PlrnnParams, seq, singular_tol: float = SINGULAR_TOL) -> Candidate:
    """Solve ``(I - P) z = q`` for the affine composition along ``seq``.

    Parameters
    ----------
    params : PlrnnParams
    seq : sequence of region codes
        Each entry is a length-M bit sequence (or ``RegionCode``). ``seq[l]``
        is the region of the l-th periodic point.
    singular_tol : float
        Reciprocal 1-norm condition threshold below which the solve is
        reported as degenerate.

    Returns
    -------
    Candidate
        ``seq`` and ``observed`` are given as tuples of full bit tuples.
    """
    ix = RegionIndexer(params)
    masks = []
    for code in seq:
        bits = getattr(code, "bits", code)
        bits = tuple(int(b) for b in bits)
        if len(bits) != params.M:
            raise ValueError(f"region code has {len(bits)} bits, expected {params.M}")
        masks.append(sum(1 << j for j, m in enumerate(ix.active) if bits[m]))
    cand = _solve(ix, tuple(masks), singular_tol)
    full_seq = tuple(tuple(int(b) for b in getattr(c, "bits", c)) for c in seq)
    if cand.degenerate:
        return cand._replace(seq=full_seq)
    observed = tuple(region_of(p).bits for p in cand.points)
    # consistency is judged on the units that matter; inert units are free
    return cand._replace(seq=full_seq, observed=observed)


# --- cycle objects and libraries --------------------------------------------

@dataclass(frozen=True, eq=False)
class CycleObject:
    """A verified k-cycle (k = 1 is a fixed point).

    Points are stored starting from the canonical rotation of the region
    sequence, so two objects describing the same orbit compare point-by-point.
    """

    order: int
    points: np.ndarray
    region_seq: tuple
    eigenvalues: np.ndarray
    stability: str
    max_abs_eig: float
    key: tuple = ()

    @property
    def is_stable(self) -> bool:
        return self.stability == "stable"

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "points": self.points.tolist(),
            "codes": [list(c) for c in self.region_seq],
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "stability": self.stability,
            "max_abs_eig": float(self.max_abs_eig),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CycleObject":
        ev = np.array([complex(re, im) for re, im in d["eigenvalues"]])
        codes = tuple(tuple(int(b) for b in c) for c in d["codes"])
        return cls(
            order=int(d["order"]),
            points=np.asarray(d["points"], dtype=float),
            region_seq=codes,
            eigenvalues=ev,
            stability=d["stability"],
            max_abs_eig=float(d["max_abs_eig"]),
            key=codes,
        )


def classify_stability(max_abs_eig: float, stab_tol: float = STAB_TOL) -> str:
    if max_abs_eig < 1 - stab_tol:
        return "stable"
    if max_abs_eig > 1 + stab_tol:
        return "unstable"
    return "marginal"


def _sort_eigs(ev: np.ndarray) -> np.ndarray:
    ev = np.asarray(ev, dtype=complex)
    order = np.lexsort((np.round(ev.imag, 12), np.round(ev.real, 12)))
    return ev[order]


def _build_object(ix: RegionIndexer, seq: tuple, points: np.ndarray,
                  stab_tol: float = STAB_TOL) -> CycleObject:
    key, shift = canonical_rotation(seq)
    pts = np.roll(points, -shift, axis=0)
    P = np.eye(ix.params.M)
    for mask in key:
        P = ix.matrix(mask) @ P
    ev = _sort_eigs(np.linalg.eigvals(P))
    mx = float(np.max(np.abs(ev)))
    codes = tuple(region_of(p).bits for p in pts)
    return CycleObject(len(seq), pts, codes, ev, classify_stability(mx, stab_tol), mx, key)


def _points_scale(points: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(points))))


def _is_minimal(points: np.ndarray, tol: float) -> bool:
    k = len(points)
    if k == 1:
        return True
    scale = _points_scale(points)
    for i in range(k):
        d = np.max(np.abs(points[i + 1:] - points[i]), axis=1) if i + 1 < k else np.array([np.inf])
        if np.any(d <= tol * scale):
            return False
    return True


def _contains_all(big: np.ndarray, small: np.ndarray, tol: float) -> bool:
    scale = max(_points_scale(big), _points_scale(small))
    for p in small:
        if not np.any(np.max(np.abs(big - p), axis=1) <= tol * scale):
            return False
    return True


@dataclass
class CycleLibrary:
    """Deduplicated store of cycles for one parameter set, keyed by order."""

    by_order: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)
    point_tol: float = POINT_TOL

    def cycles(self, k: int | None = None) -> list[CycleObject]:
        if k is not None:
            return list(self.by_order.get(k, []))
        return [c for kk in sorted(self.by_order) for c in self.by_order[kk]]

    def __iter__(self):
        return iter(self.cycles())

    def __len__(self):
        return sum(len(v) for v in self.by_order.values())

    def stable(self) -> list[CycleObject]:
        return [c for c in self.cycles() if c.is_stable]

    def has_key(self, k: int, key: tuple) -> bool:
        return any(c.key == key for c in self.by_order.get(k, []))

    def blocks(self, points: np.ndarray, k: int) -> bool:
        """True if a stored cycle of order <= k has its points inside ``points``.

        Covers both the lower-order subset filter and same-order duplicates.
        """
        for j in sorted(self.by_order):
            if j > k:
                break
            for c in self.by_order[j]:
                if _contains_all(points, c.points, self.point_tol):
                    return True
        return False

    def add(self, obj: CycleObject) -> bool:
        if self.has_key(obj.order, obj.key) or self.blocks(obj.points, obj.order):
            return False
        self.by_order.setdefault(obj.order, []).append(obj)
        return True

    def summary(self) -> dict:
        out = {}
        for k in sorted(self.by_order):
            objs = self.by_order[k]
            out[k] = {
                "stable": sum(c.stability == "stable" for c in objs),
                "unstable": sum(c.stability == "unstable" for c in objs),
                "marginal": sum(c.stability == "marginal" for c in objs),
            }
        return out

    def inventory(self) -> tuple:
        """Hashable (order, key, stability) description used for comparisons."""
        return tuple(sorted((c.order, c.key, c.stability) for c in self.cycles()))

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for c in self.cycles():
                fh.write(json.dumps(c.to_dict()) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "CycleLibrary":
        lib = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                c = CycleObject.from_dict(json.loads(line))
                lib.by_order.setdefault(c.order, []).append(c)
        return lib


def libraries_match(a: CycleLibrary, b: CycleLibrary, tol: float = 1e-8) -> bool:
    """Same objects in both libraries, points and eigenvalues within ``tol``."""
    if {k for k, v in a.by_order.items() if v} != {k for k, v in b.by_order.items() if v}:
        return False
    for k in a.by_order:
        ca, cb = a.cycles(k), b.cycles(k)
        if len(ca) != len(cb):
            return False
        used = set()
        for x in ca:
            hit = None
            for j, y in enumerate(cb):
                if j in used or x.points.shape != y.points.shape:
                    continue
                if _rotation_distance(x.points, y.points) <= tol and \
                        np.max(np.abs(x.eigenvalues - y.eigenvalues)) <= tol:
                    hit = j
                    break
            if hit is None:
                return False
            used.add(hit)
    return True


def _rotation_distance(p: np.ndarray, q: np.ndarray) -> float:
    return min(float(np.max(np.abs(np.roll(p, s, axis=0) - q))) for s in range(len(p)))


# --- search ------------------------------------------------------------------

@dataclass(frozen=True)
class SearchBudget:
    n_out: int
    n_in: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_out < 1 or self.n_in < 1:
            raise ValueError("n_out and n_in must be >= 1")


def required_initializations(M: int, k: int, eps: float) -> int:
    """Random initializations needed to have drawn every sequence with probability ``1 - eps``."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if eps == 1:
        return 0
    p = 2.0 ** (-M * k)
    return int(math.ceil(math.log(eps) / math.log1p(-p)))


def default_budget(M: int, k: int, eps: float = 1e-3, seed: int = 0,
                   n_in: int = 100, cap: int = 10**6) -> SearchBudget:
    return SearchBudget(max(1, min(cap, required_initializations(M, k, eps))), n_in, seed)


class SearchContext:
    """Per-parameter-set state shared across orders: region indexer and solve cache."""

    def __init__(self, params: PlrnnParams, singular_tol: float = SINGULAR_TOL,
                 stab_tol: float = STAB_TOL, point_tol: float = POINT_TOL, active=None):
        self.params = params
        self.ix = RegionIndexer(params, active)
        self.singular_tol = singular_tol
        self.stab_tol = stab_tol
        self.point_tol = point_tol
        self._cache: dict[tuple, Candidate] = {}

    def solve(self, seq: tuple) -> Candidate:
        c = self._cache.get(seq)
        if c is None:
            c = _solve(self.ix, seq, self.singular_tol)
            self._cache[seq] = c
        return c

    def accept(self, cand: Candidate, library: CycleLibrary) -> CycleObject | None:
        """Turn a consistent candidate into a stored object, or None if it is filtered."""
        k = len(cand.seq)
        if not _is_minimal(cand.points, self.point_tol):
            return None
        key, _ = canonical_rotation(cand.seq)
        if library.has_key(k, key) or library.blocks(cand.points, k):
            return None
        obj = _build_object(self.ix, cand.seq, cand.points, self.stab_tol)
        library.add(obj)
        return obj

    def object_for(self, seq: tuple) -> CycleObject | None:
        """The true minimal cycle living on ``seq``, if there is one."""
        cand = self.solve(tuple(seq))
        if cand.degenerate or not cand.consistent or not _is_minimal(cand.points, self.point_tol):
            return None
        return _build_object(self.ix, cand.seq, cand.points, self.stab_tol)

    def raw_object(self, seq: tuple) -> CycleObject | None:
        """Object built from the solution on ``seq`` whether or not it is consistent."""
        cand = self.solve(tuple(seq))
        if cand.degenerate:
            return None
        return _build_object(self.ix, cand.seq, cand.points, self.stab_tol)


def _draw_sequences(rng: np.random.Generator, n_bits: int, k: int):
    """Endless stream of uniformly drawn k-sequences packed into ints.

    Code ``l`` occupies bits ``l*n_bits .. (l+1)*n_bits - 1``. Constant
    sequences are rejected for k >= 2.
    """
    total = n_bits * k
    repunit = sum(1 << (l * n_bits) for l in range(k))
    if total <= 62:
        while True:
            block = rng.integers(0, 1 << total, size=DRAW_BATCH, dtype=np.int64)
            if k >= 2:
                block = block[block % repunit != 0]
            yield from block.tolist()
    else:
        weights = [1 << j for j in range(total)]
        while True:
            bits = rng.integers(0, 2, size=(DRAW_BATCH, total), dtype=np.int8).tolist()
            for row in bits:
                s = sum(w for w, b in zip(weights, row) if b)
                if k == 1 or s % repunit:
                    yield s


def _unpack(s: int, n_bits: int, k: int) -> tuple:
    mask = (1 << n_bits) - 1
    return tuple((s >> (l * n_bits)) & mask for l in range(k))


def _follow(ctx: "SearchContext", seq: tuple, n_in: int, trace=None, draw_index=0):
    """Run the flip iteration from ``seq``.

    Returns ``(evaluations, outcome, final_seq)`` with outcome one of
    "consistent", "degenerate" or None (cycle of flips or ``n_in`` exhausted).
    """
    visited = {seq}
    evals = 0
    for c in range(n_in):
        cand = ctx.solve(seq)
        evals += 1
        if trace is not None:
            trace.append((draw_index, seq, c == 0))
        if cand.degenerate:
            return evals, "degenerate", seq
        if cand.consistent:
            # a consistent sequence maps to itself: nothing left to flip to
            return evals, "consistent", seq
        seq = cand.observed
        if seq in visited:
            return evals, None, seq
        visited.add(seq)
    return evals, None, seq


def scyfi_find_k(params: PlrnnParams, k: int, library: CycleLibrary | None = None,
                 budget: SearchBudget | None = None, *, context: SearchContext | None = None,
                 stop: Callable[[CycleObject], bool] | None = None,
                 trace: list | None = None) -> CycleLibrary:
    """Heuristic search for all k-cycles.

    Parameters
    ----------
    params : PlrnnParams
    k : int
        Cycle order.
    library : CycleLibrary, optional
        Library holding the lower orders already searched; updated in place.
    budget : SearchBudget, optional
        Defaults to ``default_budget(n_active, k)``.
    context : SearchContext, optional
        Reuse a solve cache across calls.
    stop : callable, optional
        Called with every newly stored object; returning True ends the search.
    trace : list, optional
        If given, receives ``(draw_index, seq, is_initial)`` for every examined
        sequence.

    Returns
    -------
    CycleLibrary
        The same library, with ``evaluations[k]`` increased by the number of
        region sequences examined (repeat visits included) and
        ``degenerate[k]`` listing the canonical forms of degenerate sequences
        that were met.

    Notes
    -----
    The flip iteration is deterministic, so its outcome from a given start
    sequence is memoized. Only the acceptance step depends on the library,
    and it is re-run for every terminal sequence not yet settled.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ctx = context or SearchContext(params)
    lib = library if library is not None else CycleLibrary(point_tol=ctx.point_tol)
    if budget is None:
        budget = default_budget(max(1, ctx.ix.n_active), k)
    evals = 0
    degen = set(lib.degenerate.get(k, ()))
    n_bits = ctx.ix.n_active
    if k >= 2 and n_bits == 0:
        lib.evaluations[k] = lib.evaluations.get(k, 0)
        return lib
    rng = np.random.default_rng(np.random.SeedSequence([budget.rng_seed, k]))
    draws = _draw_sequences(rng, n_bits, k)
    chains: dict[int, tuple] = {}
    settled: set = set()
    i = 0
    n_draw = 0
    while i < budget.n_out:
        s = next(draws)
        n_draw += 1
        res = chains.get(s) if trace is None else None
        if res is None:
            res = _follow(ctx, _unpack(s, n_bits, k), budget.n_in, trace, n_draw)
            if trace is None:
                chains[s] = res
        n, outcome, seq = res
        evals += n
        i += 1
        if outcome is None or seq in settled:
            continue
        settled.add(seq)
        if outcome == "degenerate":
            degen.add(canonical_rotation(seq)[0])
            continue
        obj = ctx.accept(ctx.solve(seq), lib)
        if obj is not None:
            i = 0
            if stop is not None and stop(obj):
                break
    lib.evaluations[k] = lib.evaluations.get(k, 0) + evals
    lib.degenerate[k] = sorted(degen)
    return lib


def scyfi_find_all(params: PlrnnParams, k_max: int, budget: SearchBudget | None = None,
                   *, eps: float = 1e-3, seed: int = 0,
                   context: SearchContext | None = None) -> CycleLibrary:
    """Run the search for k = 1 .. k_max, threading one library through.

    When ``budget`` is None every order gets ``default_budget(n_active, k, eps, seed)``;
    a given budget is used for every order.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ctx = context or SearchContext(params)
    lib = CycleLibrary(point_tol=ctx.point_tol)
    n_eff = max(1, ctx.ix.n_active)
    for k in range(1, k_max + 1):
        b = budget
        if b is None:
            b = default_budget(n_eff, k, eps, seed)
        scyfi_find_k(params, k, lib, b, context=ctx)
    return lib


# --- exhaustive enumeration --------------------------------------------------

def necklaces(n_codes: int, k: int) -> Iterable[tuple]:
    """Canonical (lexicographically smallest) rotations of all non-constant k-sequences.

    For k = 1 every single code is returned.
    """
    if k == 1:
        for a in range(n_codes):
            yield (a,)
        return
    for seq in itertools.product(range(n_codes), repeat=k):
        if seq[0] != min(seq):
            continue
        if all(s == seq[0] for s in seq):
            continue
        if canonical_rotation(seq)[0] == seq:
            yield seq


def exhaustive_oracle(params: PlrnnParams, k_max: int, guard: int = ORACLE_GUARD,
                      context: SearchContext | None = None) -> CycleLibrary:
    """Ground-truth library by solving every region sequence up to rotation.

    Raises
    ------
    BudgetGuardError
        If ``n_active * k_max`` exceeds ``guard``.
    """
    ctx = context or SearchContext(params)
    if ctx.ix.n_active * k_max > guard:
        raise BudgetGuardError(
            f"exhaustive enumeration of 2^{ctx.ix.n_active * k_max} sequences exceeds guard 2^{guard}")
    lib = CycleLibrary(point_tol=ctx.point_tol)
    for k in range(1, k_max + 1):
        n = 0
        degen = []
        for seq in necklaces(ctx.ix.n_codes, k):
            cand = ctx.solve(seq)
            n += 1
            if cand.degenerate:
                degen.append(seq)
            elif cand.consistent:
                ctx.accept(cand, lib)
        lib.evaluations[k] = n
        lib.degenerate[k] = degen
    return lib
