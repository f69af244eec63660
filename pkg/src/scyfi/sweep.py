"""Parameter sweeps: cycle libraries on a grid, library diffs and bifurcation events.

Between two neighbouring parameter values every object of either library is
followed along the straight parameter path joining them. Objects are matched
by their canonical region sequence. An object present on one side only is
traced by bisection to the point where its region sequence stops carrying a
true cycle, and the evidence there (point norm, distance to the border,
eigenvalues) decides between a DTB and a BCB. A matched object whose
stability flips is traced the same way to the flip, where the crossing
eigenvalue decides between a DFB and a CB.
"""

from __future__ import annotations

import csv
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import PlrnnParams
from .search import (
    CycleLibrary,
    CycleObject,
    SearchBudget,
    SearchContext,
    scyfi_find_all,
)

DTB_NORM = 1e6
EIG_TOL = 5e-2
BCB_TOL = 1e-6
REFINE_STEPS = 20

EVENT_KINDS = ("DTB", "BCB", "DFB", "CB", "appear", "disappear", "stability_change")


# --- parameter coordinates ---------------------------------------------------

_TARGET_RE = re.compile(r"^\s*([AaWwHh])\s*\[\s*(\d+)\s*(?:,\s*(\d+)\s*)?\]\s*$")


def parse_target(target) -> tuple:
    """Parse ``"A[i]"``, ``"A[i,j]"``, ``"W[i,j]"`` or ``"h[i]"`` into a coordinate tuple."""
    if isinstance(target, tuple):
        return target
    m = _TARGET_RE.match(str(target))
    if not m:
        raise ValueError(f"bad parameter coordinate {target!r}")
    name = m.group(1).upper() if m.group(1) in "aAwW" else "h"
    idx = (int(m.group(2)),) if m.group(3) is None else (int(m.group(2)), int(m.group(3)))
    if name == "W" and len(idx) != 2:
        raise ValueError(f"W needs two indices: {target!r}")
    if name == "h" and len(idx) != 1:
        raise ValueError(f"h needs one index: {target!r}")
    return (name,) + idx


def format_target(coord: tuple) -> str:
    return f"{coord[0]}[{','.join(str(i) for i in coord[1:])}]"


def get_param(params: PlrnnParams, target) -> float:
    name, *idx = parse_target(target)
    if name == "A":
        if len(idx) == 1:
            return float(params.A_matrix[idx[0], idx[0]])
        return float(params.A_matrix[idx[0], idx[1]])
    if name == "W":
        return float(params.W[idx[0], idx[1]])
    return float(params.h[idx[0]])


def set_param(params: PlrnnParams, target, value: float) -> PlrnnParams:
    name, *idx = parse_target(target)
    if name == "A":
        if len(idx) == 1 and params.A.ndim == 1:
            A = params.A.copy()
            A[idx[0]] = value
        else:
            A = params.A_matrix.copy()
            i, j = (idx[0], idx[0]) if len(idx) == 1 else idx
            A[i, j] = value
        return params.replace(A=A)
    if name == "W":
        W = params.W.copy()
        W[idx[0], idx[1]] = value
        return params.replace(W=W)
    h = params.h.copy()
    h[idx[0]] = value
    return params.replace(h=h)


def interpolate(p: PlrnnParams, q: PlrnnParams, s: float) -> PlrnnParams:
    """Point ``(1 - s) p + s q`` on the straight path between two parameter sets."""
    if p.A.ndim != q.A.ndim:
        A = (1 - s) * p.A_matrix + s * q.A_matrix
    else:
        A = (1 - s) * p.A + s * q.A
    return PlrnnParams(A, (1 - s) * p.W + s * q.W, (1 - s) * p.h + s * q.h)


# --- events ------------------------------------------------------------------

@dataclass
class BifurcationEvent:
    loc: tuple
    kind: str
    order: int
    key: tuple
    evidence: dict = field(default_factory=dict)
    interval: tuple = ()

    def to_dict(self) -> dict:
        return {
            "loc": [list(l) if isinstance(l, tuple) else l for l in self.loc],
            "kind": self.kind,
            "order": self.order,
            "key": list(self.key),
            "interval": list(self.interval),
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BifurcationEvent":
        loc = tuple(tuple(l) if isinstance(l, list) else l for l in d["loc"])
        return cls(loc, d["kind"], int(d["order"]), tuple(d["key"]),
                   dict(d.get("evidence", {})), tuple(d.get("interval", ())))


def _evidence(obj: CycleObject) -> dict:
    pts = obj.points
    ev = obj.eigenvalues
    near1 = ev[np.argmin(np.abs(ev - 1))]
    nearm1 = ev[np.argmin(np.abs(ev + 1))]
    near_circle = ev[np.argmin(np.abs(np.abs(ev) - 1))]
    return {
        "max_point_norm": float(np.max(np.linalg.norm(pts, axis=1))),
        "min_abs_component": float(np.min(np.abs(pts))),
        "point_scale": max(1.0, float(np.max(np.abs(pts)))),
        "eig_near": [float(near_circle.real), float(near_circle.imag)],
        "eig_near_plus1": [float(near1.real), float(near1.imag)],
        "eig_near_minus1": [float(nearm1.real), float(nearm1.imag)],
        "max_abs_eig": float(obj.max_abs_eig),
        "stability": obj.stability,
    }


def _is_dtb(obj: CycleObject, dtb_norm: float, eig_tol: float) -> bool:
    big = float(np.max(np.linalg.norm(obj.points, axis=1))) > dtb_norm
    return big and bool(np.any(np.abs(obj.eigenvalues - 1) <= eig_tol))


def _is_bcb(obj: CycleObject, bcb_tol: float, active=None) -> bool:
    pts = obj.points if active is None else obj.points[:, active]
    if pts.size == 0:
        return False
    scale = max(1.0, float(np.max(np.abs(obj.points))))
    return bool(np.min(np.abs(pts)) <= bcb_tol * scale)


def _has_eig_near_minus1(obj: CycleObject, eig_tol: float) -> bool:
    ev = obj.eigenvalues
    return bool(np.any((np.abs(ev.imag) <= eig_tol) & (np.abs(ev.real + 1) <= eig_tol)))


def _has_unit_complex_pair(obj: CycleObject, eig_tol: float) -> bool:
    ev = obj.eigenvalues
    return bool(np.any((np.abs(ev.imag) > eig_tol) & (np.abs(np.abs(ev) - 1) <= eig_tol)))


def classify_event(before: CycleObject | None, after: CycleObject | None, *,
                   dtb_norm: float = DTB_NORM, eig_tol: float = EIG_TOL,
                   bcb_tol: float = BCB_TOL, active=None) -> str:
    """Kind of the topological change between two observations of one object.

    With one side absent the surviving side is tested for DTB, then BCB,
    falling back to ``"appear"``/``"disappear"``. With both present a
    stability flip is refined to DFB or CB, else ``"stability_change"``;
    ``"none"`` means nothing changed. ``active`` restricts the border test to
    the given unit indices.

    Raises
    ------
    ValueError
        If both sides are absent.
    """
    if before is None and after is None:
        raise ValueError("at least one side must be present")
    if before is None or after is None:
        obj = before if after is None else after
        if _is_dtb(obj, dtb_norm, eig_tol):
            return "DTB"
        if _is_bcb(obj, bcb_tol, active):
            return "BCB"
        return "disappear" if after is None else "appear"
    if before.stability == after.stability:
        return "none"
    if _has_eig_near_minus1(before, eig_tol) or _has_eig_near_minus1(after, eig_tol):
        return "DFB"
    if _has_unit_complex_pair(before, eig_tol) or _has_unit_complex_pair(after, eig_tol):
        return "CB"
    return "stability_change"


# --- library diffs -----------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    dtb_norm: float = DTB_NORM
    eig_tol: float = EIG_TOL
    bcb_tol: float = BCB_TOL
    refine_steps: int = REFINE_STEPS
    match_tol: float = 1e-4


def _bisect(pred: Callable[[float], bool], lo: float, hi: float, steps: int) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` keeping ``pred(lo)`` True and ``pred(hi)`` False."""
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def _point_set_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Smallest max-norm distance between two orbits over cyclic shifts."""
    if p.shape != q.shape:
        return np.inf
    return min(float(np.max(np.abs(np.roll(p, s, axis=0) - q))) for s in range(p.shape[0]))


def diff_libraries(lib_a: CycleLibrary, lib_b: CycleLibrary,
                   path: Callable[[float], PlrnnParams], active, loc: tuple = (0, 1),
                   th: Thresholds = Thresholds(), t_a: float = 0.0,
                   t_b: float = 1.0) -> list[BifurcationEvent]:
    """Events between ``lib_a`` at ``path(0)`` and ``lib_b`` at ``path(1)``.

    Intervals are reported in the coordinate ``t_a + s (t_b - t_a)``.
    Objects are matched by canonical region sequence. An object that ends at
    a border while another of the same order starts there (a point crossing
    a switching boundary) is matched by point-set distance instead and
    reported once, as a BCB carrying both keys.
    """
    def value(s):
        return t_a + s * (t_b - t_a)

    ctxs: dict[float, SearchContext] = {}

    def obj_at(s: float, key: tuple) -> CycleObject | None:
        c = ctxs.get(s)
        if c is None:
            c = ctxs[s] = SearchContext(path(s), active=active)
        return c.object_for(key)

    act_idx = np.flatnonzero(np.asarray(active, dtype=bool))
    kw = dict(dtb_norm=th.dtb_norm, eig_tol=th.eig_tol, bcb_tol=th.bcb_tol, active=act_idx)
    a_objs = {(c.order, c.key): c for c in lib_a.cycles()}
    b_objs = {(c.order, c.key): c for c in lib_b.cycles()}
    events: list[BifurcationEvent] = []
    ends, starts = [], []   # (event, boundary object) for BCB fallback matching

    def make(kind, order, key, lo_obj, hi_obj, lo, hi):
        present = lo_obj if lo_obj is not None else hi_obj
        ev = _evidence(present)
        if lo_obj is not None and hi_obj is not None:
            ev["before"] = _evidence(lo_obj)
            ev["after"] = _evidence(hi_obj)
        return BifurcationEvent(loc, kind, order, key, ev, (value(lo), value(hi)))

    for (k, key), oa in a_objs.items():
        ob = b_objs.get((k, key))
        if ob is None:
            if obj_at(1.0, key) is not None:
                continue  # missed by the search on the far side, not a change
            lo, hi = _bisect(lambda s: obj_at(s, key) is not None, 0.0, 1.0, th.refine_steps)
            last = obj_at(lo, key)
            e = make(classify_event(last, None, **kw), k, key, last, None, lo, hi)
            events.append(e)
            if e.kind == "BCB":
                ends.append((e, last))
        elif oa.stability != ob.stability:
            def same_as_a(s, key=key, st=oa.stability):
                o = obj_at(s, key)
                return o is not None and o.stability == st
            lo, hi = _bisect(same_as_a, 0.0, 1.0, th.refine_steps)
            o_lo, o_hi = obj_at(lo, key), obj_at(hi, key)
            if o_lo is None or o_hi is None:
                continue
            events.append(make(classify_event(o_lo, o_hi, **kw), k, key, o_lo, o_hi, lo, hi))
    for (k, key), ob in b_objs.items():
        if (k, key) in a_objs or obj_at(0.0, key) is not None:
            continue
        lo, hi = _bisect(lambda s: obj_at(s, key) is None, 0.0, 1.0, th.refine_steps)
        first = obj_at(hi, key)
        e = make(classify_event(None, first, **kw), k, key, None, first, lo, hi)
        events.append(e)
        if e.kind == "BCB":
            starts.append((e, first))

    # fallback match: an orbit sliding across a border changes its sequence
    drop = set()
    for ea, oa in ends:
        for eb, ob in starts:
            if id(eb) in drop or ea.order != eb.order:
                continue
            if abs(ea.interval[0] - eb.interval[0]) > abs(t_b - t_a) * 2.0 ** (1 - th.refine_steps):
                continue
            scale = max(1.0, float(np.max(np.abs(oa.points))))
            if _point_set_distance(oa.points, ob.points) <= th.match_tol * scale:
                ea.evidence["continued_as"] = list(eb.key)
                ea.evidence["after"] = eb.evidence
                drop.add(id(eb))
                break
    return [e for e in events if id(e) not in drop]


# --- grid sweeps -------------------------------------------------------------

@dataclass(frozen=True)
class SweepAxis:
    target: str
    lo: float
    hi: float
    n_steps: int

    def __post_init__(self):
        parse_target(self.target)
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_steps)


@dataclass(frozen=True)
class SweepSpec:
    base_params: PlrnnParams
    axes: tuple
    k_max: int = 3
    budget: SearchBudget | None = None
    eps: float = 1e-3
    seed: int = 0
    thresholds: Thresholds = Thresholds()

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("a sweep has one or two axes")
        coords = [parse_target(a.target) for a in self.axes]
        if len(set(coords)) != len(coords):
            raise ValueError("sweep axes must target distinct parameters")

    @property
    def shape(self) -> tuple:
        return tuple(a.n_steps for a in self.axes)

    def params_at(self, idx: tuple) -> PlrnnParams:
        p = self.base_params
        for ax, i in zip(self.axes, idx):
            p = set_param(p, ax.target, float(ax.values[i]))
        return p

    def cell_seed(self, idx: tuple) -> int:
        flat = int(np.ravel_multi_index(idx, self.shape))
        return int(np.random.SeedSequence([self.seed, flat]).generate_state(1)[0])


@dataclass
class SweepResult:
    spec: SweepSpec
    libraries: dict            # grid index -> CycleLibrary
    events: list
    on_manifold: list          # grid indices with degenerate solves
    active: np.ndarray

    @property
    def _manifold_set(self) -> set:
        return set(self.on_manifold)

    def inventory_rows(self) -> list[dict]:
        rows = []
        for idx in sorted(self.libraries):
            lib = self.libraries[idx]
            row = {f"i{d}": i for d, i in enumerate(idx)}
            row.update({ax.target: float(ax.values[i]) for ax, i in zip(self.spec.axes, idx)})
            row["on_manifold"] = int(idx in self._manifold_set)
            row["n_stable"] = sum(c.stability == "stable" for c in lib.cycles())
            row["n_unstable"] = sum(c.stability == "unstable" for c in lib.cycles())
            row["orders"] = " ".join(str(k) for k in sorted(lib.by_order) if lib.by_order[k])
            row["stable_keys"] = " ".join(
                "".join(str(m) for m in c.key) for c in sorted(lib.stable(), key=lambda c: (c.order, c.key)))
            rows.append(row)
        return rows


def _search_cell(args):
    params, k_max, budget, eps, seed, active = args
    ctx = SearchContext(params, active=active)
    b = budget
    if b is not None:
        b = SearchBudget(b.n_out, b.n_in, seed)
    return scyfi_find_all(params, k_max, b, eps=eps, seed=seed, context=ctx)


def sweep_active_units(spec: SweepSpec) -> np.ndarray:
    """Units whose sign matters anywhere on the grid; fixed for the whole sweep."""
    act = spec.base_params.active_units.copy()
    for idx in np.ndindex(*spec.shape):
        act |= spec.params_at(idx).active_units
    return act


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("SCYFI_THREADS", "1") or 1)
    return max(1, int(threads))


def run_sweep(spec: SweepSpec, threads: int | None = None) -> SweepResult:
    """Search every grid cell and classify the changes between neighbours."""
    active = sweep_active_units(spec)
    idxs = list(np.ndindex(*spec.shape))
    jobs = [(spec.params_at(i), spec.k_max, spec.budget, spec.eps, spec.cell_seed(i), active) for i in idxs]
    n = resolve_threads(threads)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            libs = list(ex.map(_search_cell, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    else:
        libs = [_search_cell(j) for j in jobs]
    libraries = dict(zip(idxs, libs))
    on_manifold = [i for i in idxs if any(libraries[i].degenerate.get(k) for k in libraries[i].degenerate)]
    events = []
    for d, ax in enumerate(spec.axes):
        vals = ax.values
        for idx in idxs:
            if idx[d] + 1 >= spec.shape[d]:
                continue
            nxt = idx[:d] + (idx[d] + 1,) + idx[d + 1:]
            pa, pb = spec.params_at(idx), spec.params_at(nxt)
            events.extend(diff_libraries(
                libraries[idx], libraries[nxt], lambda s, pa=pa, pb=pb: interpolate(pa, pb, s),
                active, loc=(idx, nxt), th=spec.thresholds,
                t_a=float(vals[idx[d]]), t_b=float(vals[idx[d] + 1])))
    return SweepResult(spec, libraries, events, on_manifold, active)


# --- training traces ---------------------------------------------------------

@dataclass
class TraceAnalysis:
    libraries: list
    events: list
    diagram: list


def analyze_training_trace(snapshots: Sequence[PlrnnParams], k_max: int = 3,
                           budget: SearchBudget | None = None, *, eps: float = 1e-3,
                           seed: int = 0, direction=None,
                           thresholds: Thresholds = Thresholds(),
                           threads: int | None = None) -> TraceAnalysis:
    """Treat consecutive training snapshots as a 1-D sweep.

    Between epochs the parameters are interpolated linearly for refinement,
    so event intervals are reported in fractional epochs. ``direction``
    optionally projects every cycle point onto a state-space direction for
    bifurcation-diagram export.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    active = snapshots[0].active_units.copy()
    for p in snapshots:
        active |= p.active_units
    jobs = [(p, k_max, budget, eps, int(np.random.SeedSequence([seed, e]).generate_state(1)[0]), active)
            for e, p in enumerate(snapshots)]
    n = resolve_threads(threads)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            libs = list(ex.map(_search_cell, jobs))
    else:
        libs = [_search_cell(j) for j in jobs]
    events = []
    for e in range(len(snapshots) - 1):
        pa, pb = snapshots[e], snapshots[e + 1]
        events.extend(diff_libraries(libs[e], libs[e + 1],
                                     lambda s, pa=pa, pb=pb: interpolate(pa, pb, s),
                                     active, loc=(e, e + 1), th=thresholds,
                                     t_a=float(e), t_b=float(e + 1)))
    return TraceAnalysis(libs, events, diagram_rows(libs, direction))


def diagram_rows(libraries: Sequence[CycleLibrary], direction=None,
                 values: Sequence[float] | None = None) -> list[dict]:
    """One row per cycle point per epoch (or sweep value)."""
    u = None
    if direction is not None:
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
    rows = []
    for e, lib in enumerate(libraries):
        x = e if values is None else values[e]
        for c in lib.cycles():
            for j, pt in enumerate(c.points):
                row = {"value": x, "order": c.order, "key": "".join(str(m) for m in c.key),
                       "point": j, "stable": int(c.is_stable)}
                for m, v in enumerate(pt):
                    row[f"z{m}"] = float(v)
                row["projection"] = float(pt @ u) if u is not None else ""
                rows.append(row)
    return rows


# --- export ------------------------------------------------------------------

def write_events_jsonl(events, path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


def read_events_jsonl(path) -> list[BifurcationEvent]:
    with open(path) as fh:
        return [BifurcationEvent.from_dict(json.loads(l)) for l in fh if l.strip()]


def write_rows_csv(rows: list[dict], path) -> None:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
