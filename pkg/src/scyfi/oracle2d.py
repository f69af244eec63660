"""Closed-form fixed points, 2-cycles and 3-cycles of the one-border 2-D map.

The map is affine on each side of the border z1 = 0::

    T_L(z) = [[a_l, c], [b_l, d]] z + h    for z1 <= 0
    T_R(z) = [[a_r, c], [b_r, d]] z + h    for z1 >  0

Everything here is written out with explicit 2x2 algebra and does not use
the general composition machinery of the search, so it can serve as an
independent reference for it.
"""

from __future__ import annotations

import cmath
import csv
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .core import PlrnnParams

KINDS = ("fixed_L", "fixed_R", "cycle_RL", "cycle_RL2", "cycle_R2L")
# sides visited along each orbit, starting from the first periodic point
ITINERARY = {
    "fixed_L": "L",
    "fixed_R": "R",
    "cycle_RL": "RL",
    "cycle_RL2": "RLL",
    "cycle_R2L": "LRR",
}
ORDER = {k: len(v) for k, v in ITINERARY.items()}
# canonical region sequence of each orbit on the first unit (0 = L, 1 = R)
CANONICAL_KEY = {"fixed_L": (0,), "fixed_R": (1,), "cycle_RL": (0, 1),
                 "cycle_RL2": (0, 0, 1), "cycle_R2L": (0, 1, 1)}
BORDER_TOL = 1e-12


@dataclass(frozen=True)
class Pwl2dParams:
    a_l: float
    a_r: float
    b_l: float
    b_r: float
    c: float
    d: float
    h1: float
    h2: float

    def replace(self, **kw) -> "Pwl2dParams":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return Pwl2dParams(**vals)

    def side(self, s: str) -> tuple[float, float]:
        """(a, b) of side ``"L"`` or ``"R"``."""
        return (self.a_l, self.b_l) if s == "L" else (self.a_r, self.b_r)

    def to_plrnn(self) -> PlrnnParams:
        """Equivalent generalized PLRNN: ``A = A_L`` and ``W`` carries the jump across the border."""
        A = [[self.a_l, self.c], [self.b_l, self.d]]
        W = [[self.a_r - self.a_l, 0.0], [self.b_r - self.b_l, 0.0]]
        return PlrnnParams(A, W, [self.h1, self.h2])

    @classmethod
    def from_restricted_plrnn(cls, a11: float, w11: float, w21: float, a22: float,
                              h1: float, h2: float) -> "Pwl2dParams":
        """2-unit PLRNN with ``W = [[w11, 0], [w21, 0]]`` and diagonal ``A``."""
        return cls(a11, a11 + w11, 0.0, w21, 0.0, a22, h1, h2)

    @classmethod
    def from_leaky_plrnn(cls, A, W, alpha: float, beta: float, h) -> "Pwl2dParams":
        """2-unit network ``z' = A z + W phi(z) + h`` with ``phi(z) = (leaky(z1), beta * z2)``.

        ``A`` is the diagonal (length 2) and ``leaky`` has slope ``alpha`` below zero.
        """
        A = np.asarray(A, dtype=float)
        a11, a22 = (A[0, 0], A[1, 1]) if A.ndim == 2 else (A[0], A[1])
        W = np.asarray(W, dtype=float)
        return cls(
            a_l=float(a11) + alpha * W[0, 0],
            a_r=float(a11) + W[0, 0],
            b_l=alpha * W[1, 0],
            b_r=W[1, 0],
            c=beta * W[0, 1],
            d=float(a22) + beta * W[1, 1],
            h1=float(h[0]),
            h2=float(h[1]),
        )


class RegionVerdict(NamedTuple):
    object_kind: str
    exists: bool | None          # None: a point lies on the border (on a BCB curve)
    stable: bool
    points: np.ndarray | None    # (k, 2), first point first along the itinerary
    eigenvalues: tuple | None
    degenerate: bool = False


class CurveValues(NamedTuple):
    p_at_1: float
    p_at_minus1: float
    det: float
    complex_pair: bool
    border_fn: float
    border_terms: tuple


# --- 2x2 helpers ----------------------------------------------------------

def _mat(p: Pwl2dParams, s: str) -> tuple:
    a, b = p.side(s)
    return (a, p.c, b, p.d)


def _mul(X: tuple, Y: tuple) -> tuple:
    x11, x12, x21, x22 = X
    y11, y12, y21, y22 = Y
    return (x11 * y11 + x12 * y21, x11 * y12 + x12 * y22,
            x21 * y11 + x22 * y21, x21 * y12 + x22 * y22)


def _apply(X: tuple, v: tuple) -> tuple:
    return (X[0] * v[0] + X[1] * v[1], X[2] * v[0] + X[3] * v[1])


def _cycle_jacobian(p: Pwl2dParams, itinerary: str) -> tuple:
    J = (1.0, 0.0, 0.0, 1.0)
    for s in itinerary:
        J = _mul(_mat(p, s), J)
    return J


def _char(J: tuple) -> tuple[float, float]:
    """(trace, determinant)."""
    return J[0] + J[3], J[0] * J[3] - J[1] * J[2]


def _eigs(T: float, D: float) -> tuple:
    disc = cmath.sqrt(T * T - 4 * D)
    return ((T + disc) / 2, (T - disc) / 2)


def _orbit_numerators(p: Pwl2dParams, itinerary: str) -> tuple[list, float]:
    """Orbit points scaled by ``det(I - J)``: polynomial in the parameters, no division.

    With ``Q = det(I - J)`` the first point is ``adj(I - J) q / Q``; the
    scaled points then follow ``n' = M n + h Q``.
    """
    J = _cycle_jacobian(p, itinerary)
    h = (p.h1, p.h2)
    q = (0.0, 0.0)
    for s in itinerary:
        v = _apply(_mat(p, s), q)
        q = (v[0] + h[0], v[1] + h[1])
    T, D = _char(J)
    Q = 1.0 - T + D
    # adjugate of (I - J)
    adj = (1.0 - J[3], J[1], J[2], 1.0 - J[0])
    n = _apply(adj, q)
    nums = [n]
    for s in itinerary[:-1]:
        v = _apply(_mat(p, s), n)
        n = (v[0] + h[0] * Q, v[1] + h[1] * Q)
        nums.append(n)
    return nums, Q


def _verdict(p: Pwl2dParams, kind: str, nums: list, Q: float, T: float, D: float,
             points: np.ndarray | None = None) -> RegionVerdict:
    eig = _eigs(T, D)
    scale = max(1.0, max(abs(v) for n in nums for v in n))
    if abs(Q) <= 1e-14 * scale:
        return RegionVerdict(kind, None, False, None, eig, True)
    if points is None:
        points = np.array([[n[0] / Q, n[1] / Q] for n in nums])
    itin = ITINERARY[kind]
    pscale = max(1.0, float(np.max(np.abs(points))))
    exists: bool | None = True
    for s, z in zip(itin, points):
        if abs(z[0]) <= BORDER_TOL * pscale:
            exists = None
            break
        if (s == "R") != (z[0] > 0):
            exists = False
    P1 = 1.0 - T + D
    Pm1 = 1.0 + T + D
    stable = bool(exists) and abs(D) < 1 and P1 > 0 and Pm1 > 0
    return RegionVerdict(kind, exists, stable, points, eig, False)


# --- objects ---------------------------------------------------------------

def fixed_point(p: Pwl2dParams, side: str) -> RegionVerdict:
    """Fixed point of ``T_L`` (side ``"L"``) or ``T_R`` (side ``"R"``)."""
    if side not in ("L", "R"):
        raise ValueError("side must be 'L' or 'R'")
    a, b = p.side(side)
    den = (1 - p.d) * (1 - a) - b * p.c
    num1 = (1 - p.d) * p.h1 + p.c * p.h2
    num2 = b * p.h1 + (1 - a) * p.h2
    T, D = a + p.d, a * p.d - b * p.c
    kind = "fixed_" + side
    return _verdict(p, kind, [(num1, num2)], den, T, D)


def _cycle2_points(p: Pwl2dParams) -> tuple[np.ndarray | None, float]:
    al, ar, bl, br, c, d, h1, h2 = p.a_l, p.a_r, p.b_l, p.b_r, p.c, p.d, p.h1, p.h2
    den = (ar * d - br * c) * (al * d - bl * c) - c * (bl + br) - d * d - al * ar + 1
    N = (1 - d) * h1 + c * h2
    if den == 0:
        return None, den
    z11 = N * (al + d + al * d - bl * c + 1) / den
    z12 = (h2 * (1 + d - al * ar - br * c - al * ar * d + ar * bl * c)
           + h1 * (bl + ar * bl + br * d + al * br * d - bl * br * c)) / den
    z21 = N * (ar + d + ar * d - br * c + 1) / den
    z22 = (h2 * (1 + d - al * ar - bl * c - al * ar * d + al * br * c)
           + h1 * (br + al * br + bl * d + ar * bl * d - bl * br * c)) / den
    return np.array([[z11, z12], [z21, z22]]), den


def cycle2(p: Pwl2dParams) -> RegionVerdict:
    """The 2-cycle visiting R then L: first point in ``z1 > 0``, second in ``z1 < 0``."""
    nums, Q = _orbit_numerators(p, "RL")
    T, D = _char(_cycle_jacobian(p, "RL"))
    pts, den = _cycle2_points(p)
    return _verdict(p, "cycle_RL", nums, Q, T, D, points=pts)


def cycle2_eigenvalues(p: Pwl2dParams) -> tuple:
    """Explicit eigenvalue pair of the 2-cycle Jacobian ``J_L J_R``."""
    al, ar, bl, br, c, d = p.a_l, p.a_r, p.b_l, p.b_r, p.c, p.d
    mid = (al * ar + c * (bl + br) + d * d) / 2
    rad = cmath.sqrt((al * ar + bl * c) ** 2 + (br * c + d * d) ** 2
                     + 2 * (al * ar - bl * c) * (br * c - d * d)
                     + 4 * c * d * (al * br + ar * bl))
    return (mid + rad / 2, mid - rad / 2)


def cycle3(p: Pwl2dParams, kind: str) -> RegionVerdict:
    """3-cycles: ``"RL2"`` (z1 signs +, -, -) or ``"R2L"`` (signs -, +, +)."""
    name = {"RL2": "cycle_RL2", "R2L": "cycle_R2L"}.get(kind, kind)
    if name not in ("cycle_RL2", "cycle_R2L"):
        raise ValueError("kind must be 'RL2' or 'R2L'")
    itin = ITINERARY[name]
    nums, Q = _orbit_numerators(p, itin)
    T, D = _char(_cycle_jacobian(p, itin))
    return _verdict(p, name, nums, Q, T, D)


def verdict(p: Pwl2dParams, kind: str) -> RegionVerdict:
    if kind == "fixed_L":
        return fixed_point(p, "L")
    if kind == "fixed_R":
        return fixed_point(p, "R")
    if kind == "cycle_RL":
        return cycle2(p)
    return cycle3(p, kind)


def all_verdicts(p: Pwl2dParams) -> dict:
    return {k: verdict(p, k) for k in KINDS}


def curve_values(p: Pwl2dParams, kind: str) -> CurveValues:
    """Scalar functions whose zero sets are the bifurcation curves of one object.

    ``p_at_1`` vanishes on the DTB curve, ``p_at_minus1`` on the DFB curve,
    ``det - 1`` (with ``complex_pair``) on the CB curve, and ``border_fn`` on
    the BCB curves. ``border_fn`` is the product of ``border_terms``, the
    first coordinates of the orbit points scaled by ``p_at_1``.
    """
    if kind not in ITINERARY:
        raise ValueError(f"unknown object kind {kind!r}")
    itin = ITINERARY[kind]
    nums, Q = _orbit_numerators(p, itin)
    T, D = _char(_cycle_jacobian(p, itin))
    terms = tuple(n[0] for n in nums)
    bf = 1.0
    for t in terms:
        bf *= t
    return CurveValues(1.0 - T + D, 1.0 + T + D, D, T * T - 4 * D < 0, bf, terms)


# --- grid scans --------------------------------------------------------------

class ScanCell(NamedTuple):
    a_l: float
    a_r: float
    verdicts: dict

    @property
    def stable_kinds(self) -> tuple:
        return tuple(k for k in KINDS if self.verdicts[k].stable)

    @property
    def n_stable(self) -> int:
        return len(self.stable_kinds)


def scan_grid(base: Pwl2dParams, a_l_values, a_r_values) -> list[ScanCell]:
    cells = []
    for ar in a_r_values:
        for al in a_l_values:
            p = base.replace(a_l=float(al), a_r=float(ar))
            cells.append(ScanCell(float(al), float(ar), all_verdicts(p)))
    return cells


def multistability_scan(base: Pwl2dParams, a_l_values, a_r_values) -> list[ScanCell]:
    """Grid cells where at least two stable objects coexist."""
    return [c for c in scan_grid(base, a_l_values, a_r_values) if c.n_stable >= 2]


def stable_inventory(p: Pwl2dParams) -> tuple:
    """Canonical region sequences of the stable objects, sorted."""
    return tuple(sorted(CANONICAL_KEY[k] for k, v in all_verdicts(p).items() if v.stable))


def write_scan_csv(cells, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_l", "a_r", "object_kind", "exists", "stable", "n_coexisting_stable"])
        for cell in cells:
            n = cell.n_stable
            for k in KINDS:
                v = cell.verdicts[k]
                ex = "on_curve" if v.exists is None else int(bool(v.exists))
                w.writerow([repr(cell.a_l), repr(cell.a_r), k, ex, int(v.stable), n])


def read_scan_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
