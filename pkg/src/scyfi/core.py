"""Piecewise-linear RNN map: parameters, region codes, step matrices, iteration.

The map is ``z -> A z + W relu(z) + h``. Inside the orthant selected by the
binary code ``d`` (``d_m = 1`` iff ``z_m > 0``) it is affine with matrix
``A + W diag(d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

BORDER_EPS = 1e-12
DIVERGENCE_THRESHOLD = 1e100


class ParamsError(ValueError):
    """Raised for malformed or inconsistent parameter sets."""


@dataclass(frozen=True, eq=False)
class PlrnnParams:
    """Parameters of the map ``z -> A z + W relu(z) + h``.

    ``A`` is normally the length-M diagonal of the auto-regression matrix and
    ``W`` has a zero diagonal. Two generalizations are accepted because the
    one-border 2-D and 1-D maps need them: ``A`` may be a full M x M matrix,
    and ``W`` may carry diagonal (self-coupling) terms. ``is_standard`` tells
    the two apart.
    """

    A: np.ndarray
    W: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        W = np.array(self.W, dtype=float)
        h = np.array(self.h, dtype=float).reshape(-1)
        M = h.shape[0]
        if M < 1:
            raise ParamsError("h: dimension must be at least 1")
        if W.shape != (M, M):
            raise ParamsError(f"W: expected shape ({M}, {M}), got {W.shape}")
        if A.shape not in ((M,), (M, M)):
            raise ParamsError(f"A: expected shape ({M},) or ({M}, {M}), got {A.shape}")
        for name, arr in (("A", A), ("W", W), ("h", h)):
            if not np.all(np.isfinite(arr)):
                raise ParamsError(f"{name}: non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "h", h)

    @property
    def M(self) -> int:
        return self.h.shape[0]

    @property
    def A_matrix(self) -> np.ndarray:
        if self.A.ndim == 1:
            return np.diag(self.A)
        return self.A

    @property
    def is_standard(self) -> bool:
        """Diagonal ``A`` and zero-diagonal ``W``."""
        return self.A.ndim == 1 and not np.any(np.diag(self.W))

    @property
    def active_units(self) -> np.ndarray:
        """Units whose sign changes the local affine map (nonzero ``W`` column).

        A unit with an all-zero ``W`` column never enters ``W relu(z)``, so its
        sign does not split the state space.
        """
        return np.any(self.W != 0.0, axis=0)

    @property
    def n_active(self) -> int:
        return int(self.active_units.sum())

    def replace(self, A=None, W=None, h=None) -> "PlrnnParams":
        return PlrnnParams(
            self.A if A is None else A,
            self.W if W is None else W,
            self.h if h is None else h,
        )

    def __eq__(self, other):
        if not isinstance(other, PlrnnParams):
            return NotImplemented
        return (
            self.A.shape == other.A.shape
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.h, other.h)
        )

    __hash__ = None


class RegionCode(NamedTuple):
    bits: tuple[int, ...]
    on_border: tuple[bool, ...]


class AffineComposition(NamedTuple):
    P: np.ndarray
    q: np.ndarray


class Trajectory(NamedTuple):
    states: np.ndarray
    diverged: bool
    last_finite: int


def region_of(z, border_eps: float = BORDER_EPS) -> RegionCode:
    z = np.asarray(z, dtype=float)
    bits = tuple(int(v) for v in (z > 0))
    on_border = tuple(bool(v) for v in (np.abs(z) <= border_eps))
    return RegionCode(bits, on_border)


def code_bits(code, M: int) -> np.ndarray:
    """Normalize a region code (bit sequence, ``RegionCode`` or int mask) to a 0/1 array."""
    if isinstance(code, RegionCode):
        code = code.bits
    if isinstance(code, (int, np.integer)):
        return np.array([(int(code) >> m) & 1 for m in range(M)], dtype=float)
    bits = np.asarray(code, dtype=float).reshape(-1)
    if bits.shape[0] != M:
        raise ValueError(f"region code has {bits.shape[0]} bits, expected {M}")
    return bits


def bits_to_mask(bits) -> int:
    return sum(1 << m for m, b in enumerate(bits) if b)


def step_matrix(params: PlrnnParams, code) -> np.ndarray:
    return params.A_matrix + params.W * code_bits(code, params.M)[None, :]


def apply_step(params: PlrnnParams, z, code=None) -> np.ndarray:
    """One application of the map; with ``code`` given, of that region's affine piece."""
    z = np.asarray(z, dtype=float)
    if code is None:
        return params.A_matrix @ z + params.W @ np.maximum(z, 0.0) + params.h
    return step_matrix(params, code) @ z + params.h


def iterate(params: PlrnnParams, z0, t: int,
            divergence_threshold: float = DIVERGENCE_THRESHOLD) -> Trajectory:
    if t < 0:
        raise ValueError("t must be non-negative")
    A = params.A_matrix
    states = np.empty((t + 1, params.M))
    states[0] = np.asarray(z0, dtype=float)
    z = states[0]
    for i in range(1, t + 1):
        z = A @ z + params.W @ np.maximum(z, 0.0) + params.h
        if not np.all(np.abs(z) < divergence_threshold):
            return Trajectory(states[:i], True, i - 1)
        states[i] = z
    return Trajectory(states, False, t)


def compose(params: PlrnnParams, seq: Sequence) -> AffineComposition:
    """Affine map obtained by applying the pieces ``seq[0], seq[1], ...`` in order.

    ``seq[l]`` is the region of the l-th point, i.e. the input to step l.
    An empty sequence gives the identity map.
    """
    M = params.M
    P = np.eye(M)
    q = np.zeros(M)
    for code in seq:
        S = step_matrix(params, code)
        P = S @ P
        q = S @ q + params.h
    return AffineComposition(P, q)


def canonical_rotation(seq: Sequence) -> tuple:
    """Lexicographically smallest cyclic rotation and the shift that produces it."""
    seq = tuple(seq)
    best, shift = seq, 0
    for s in range(1, len(seq)):
        rot = seq[s:] + seq[:s]
        if rot < best:
            best, shift = rot, s
    return best, shift


# --- serialization -----------------------------------------------------------

def params_to_dict(params: PlrnnParams) -> dict:
    d = {
        "M": params.M,
        "A": params.A.tolist(),
        "W": params.W.tolist(),
        "h": params.h.tolist(),
    }
    if not params.is_standard:
        d["generalized"] = True
    return d


def params_from_dict(d: dict) -> PlrnnParams:
    """Parse the JSON object ``{"M", "A", "W", "h"}``.

    A nonzero ``W`` diagonal or a full ``A`` matrix is rejected unless the
    object carries ``"generalized": true``.
    """
    if not isinstance(d, dict):
        raise ParamsError("params: expected a JSON object")
    for key in ("M", "A", "W", "h"):
        if key not in d:
            raise ParamsError(f"{key}: missing field")
    M = d["M"]
    if not isinstance(M, int) or isinstance(M, bool) or M < 1:
        raise ParamsError("M: must be a positive integer")
    try:
        A = np.asarray(d["A"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParamsError(f"A: not numeric ({exc})") from None
    try:
        W = np.asarray(d["W"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParamsError(f"W: not numeric ({exc})") from None
    try:
        h = np.asarray(d["h"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParamsError(f"h: not numeric ({exc})") from None
    if h.shape != (M,):
        raise ParamsError(f"h: expected {M} entries, got shape {h.shape}")
    if W.shape != (M, M):
        raise ParamsError(f"W: expected {M}x{M}, got shape {W.shape}")
    generalized = bool(d.get("generalized", False))
    if A.shape == (M, M):
        if not generalized:
            raise ParamsError("A: full matrix requires \"generalized\": true")
    elif A.shape != (M,):
        raise ParamsError(f"A: expected {M} entries, got shape {A.shape}")
    if np.any(np.diag(W)) and not generalized:
        raise ParamsError("W: nonzero diagonal (set \"generalized\": true to allow)")
    return PlrnnParams(A, W, h)


def load_params(path) -> PlrnnParams:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParamsError(f"invalid JSON: {exc}") from None
    return params_from_dict(d)


def save_params(params: PlrnnParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)) + "\n")
