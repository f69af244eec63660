"""Gradient-based training of the map with optional generalized teacher forcing.

The model state is forced towards the data before every step,
``z~_{t-1} = (1 - alpha) z_{t-1} + alpha x_{t-1}``, then propagated,
``z_t = A z~ + W relu(z~) + h``. The loss is the squared error summed over
components and over t = 2 .. T. Gradients are exact reverse-mode
derivatives of that loss; the per-step Jacobian is ``(1 - alpha) W_Omega``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DIVERGENCE_THRESHOLD, PlrnnParams, params_to_dict, step_matrix
from .search import CycleObject, SearchBudget, SearchContext, scyfi_find_all
from .sweep import (
    Thresholds,
    diff_libraries,
    interpolate,
    parse_target,
)


@dataclass(frozen=True)
class LossSpec:
    """Full-state targets ``x_1 .. x_T`` (rows)."""

    targets: np.ndarray

    def __post_init__(self):
        x = np.array(self.targets, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("targets must have shape (T, M) with T >= 2")
        if not np.all(np.isfinite(x)):
            raise ValueError("targets must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "targets", x)

    @property
    def T(self) -> int:
        return self.targets.shape[0]


@dataclass(frozen=True)
class GtfConfig:
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class GradientResult:
    loss: float
    dA: np.ndarray
    dW: np.ndarray
    dh: np.ndarray
    states: np.ndarray
    finite: bool = True
    first_bad: int | None = None

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.dA ** 2) + np.sum(self.dW ** 2) + np.sum(self.dh ** 2)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dA.ravel(), self.dW.ravel(), self.dh.ravel()])


def _forward(params: PlrnnParams, z0, x: np.ndarray, alpha: float):
    """States z_1..z_T and forced inputs z~_1..z~_{T-1}; stops at divergence."""
    A, W, h = params.A_matrix, params.W, params.h
    T, M = x.shape
    z = np.empty((T, M))
    zt = np.empty((T - 1, M))
    z[0] = np.asarray(z0, dtype=float)
    for t in range(1, T):
        zt[t - 1] = (1 - alpha) * z[t - 1] + alpha * x[t - 1]
        z[t] = A @ zt[t - 1] + W @ np.maximum(zt[t - 1], 0.0) + h
        if not np.all(np.abs(z[t]) < DIVERGENCE_THRESHOLD):
            return z, zt, t
    return z, zt, None


def trajectory_loss(params: PlrnnParams, z0, loss: LossSpec, gtf: GtfConfig | None = None) -> float:
    alpha = 0.0 if gtf is None else gtf.alpha
    z, _, bad = _forward(params, z0, loss.targets, alpha)
    if bad is not None:
        return float("inf")
    return float(np.sum((z[1:] - loss.targets[1:]) ** 2))


def bptt_gradient(params: PlrnnParams, z0, loss: LossSpec,
                  gtf: GtfConfig | None = None) -> GradientResult:
    """Loss and its exact gradient with respect to every entry of A, W and h.

    ``dA`` has the shape of ``params.A`` (diagonal or full). ``dW`` covers
    every entry including the diagonal; masking structural zeros is left to
    the optimizer. On divergence the result is flagged non-finite with the
    first offending step and the gradient is NaN.
    """
    alpha = 0.0 if gtf is None else gtf.alpha
    x = loss.targets
    if np.asarray(z0).shape != (params.M,) or x.shape[1] != params.M:
        raise ValueError("state dimension mismatch")
    z, zt, bad = _forward(params, z0, x, alpha)
    if bad is not None:
        return GradientResult(float("inf"), np.full(params.A.shape, np.nan),
                              np.full(params.W.shape, np.nan), np.full(params.h.shape, np.nan),
                              z[:bad + 1], False, bad)
    T = x.shape[0]
    A, W = params.A_matrix, params.W
    err = z[1:] - x[1:]
    value = float(np.sum(err ** 2))
    dA = np.zeros((params.M, params.M))
    dW = np.zeros_like(W)
    dh = np.zeros(params.M)
    delta = np.zeros(params.M)
    for t in range(T - 1, 0, -1):
        delta = delta + 2.0 * err[t - 1]
        u = zt[t - 1]
        dA += np.outer(delta, u)
        dW += np.outer(delta, np.maximum(u, 0.0))
        dh += delta
        # back through z_t = F(z~_{t-1}), z~_{t-1} = (1-alpha) z_{t-1} + ...
        J = A + W * (u > 0)[None, :]
        delta = (1 - alpha) * (J.T @ delta)
    if params.A.ndim == 1:
        dA = np.diag(dA).copy()
    return GradientResult(value, dA, dW, dh, z)


# --- attractor gradients -----------------------------------------------------

def _immediate_partial(params: PlrnnParams, z: np.ndarray, coord: tuple) -> np.ndarray:
    name, *idx = coord
    out = np.zeros(params.M)
    if name == "h":
        out[idx[0]] = 1.0
    elif name == "A":
        n, m = (idx[0], idx[0]) if len(idx) == 1 else idx
        out[n] = z[m]
    else:
        n, m = idx
        out[n] = max(z[m], 0.0)
    return out


def cycle_gradient(params: PlrnnParams, cycle: CycleObject, theta) -> np.ndarray:
    """Derivative of every cycle point with respect to one parameter.

    ``theta`` is a coordinate such as ``"W[0,1]"``, ``"A[0]"`` or ``"h[1]"``.
    Returns an array of shape ``(k, M)``, row r being the derivative of the
    r-th stored point. When ``I - prod J`` is singular (the object sits on a
    DTB locus) the derivative is unbounded and every entry is ``inf``.
    """
    coord = parse_target(theta)
    pts = np.asarray(cycle.points, dtype=float)
    k, M = pts.shape
    Js = [step_matrix(params, (p > 0).astype(int)) for p in pts]
    # derivative of F^k at point 0: sum of propagated immediate partials
    P = np.eye(M)
    acc = np.zeros(M)
    for r in range(k):
        acc = Js[r] @ acc + _immediate_partial(params, pts[r], coord)
        P = Js[r] @ P
    lhs = np.eye(M) - P
    if np.linalg.cond(lhs, 1) > 1e14:
        return np.full((k, M), np.inf)
    out = np.empty((k, M))
    out[0] = np.linalg.solve(lhs, acc)
    for r in range(1, k):
        out[r] = Js[r - 1] @ out[r - 1] + _immediate_partial(params, pts[r - 1], coord)
    return out


# --- GTF stability bound -----------------------------------------------------

@dataclass(frozen=True)
class AlphaBound:
    r: float
    alpha_star: float


def gtf_alpha_bound(params: PlrnnParams) -> AlphaBound:
    """``r = ||A||_2 + ||W||_2`` and the smallest forcing that contracts every product."""
    r = float(np.linalg.norm(params.A_matrix, 2) + np.linalg.norm(params.W, 2))
    return AlphaBound(r, max(0.0, 1.0 - 1.0 / r) if r > 0 else 0.0)


def gtf_product_radii(params: PlrnnParams, alpha: float, n_products: int = 200,
                      max_len: int = 50, rng=None) -> np.ndarray:
    """Spectral radii of random n-fold products of ``(1 - alpha) W_Omega``.

    Lengths are drawn from 1..max_len and region codes uniformly.
    """
    rng = np.random.default_rng(rng)
    M = params.M
    out = np.empty(n_products)
    for i in range(n_products):
        n = int(rng.integers(1, max_len + 1))
        P = np.eye(M)
        for code in rng.integers(0, 2, size=(n, M)):
            P = (1 - alpha) * step_matrix(params, code) @ P
        out[i] = float(np.max(np.abs(np.linalg.eigvals(P))))
    return out


# --- training loop -----------------------------------------------------------

@dataclass(frozen=True)
class SgdConfig:
    lr: float = 1e-2
    epochs: int = 100
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1:
            raise ValueError("lr must be positive and epochs >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


def default_trainable(params: PlrnnParams) -> dict:
    """Masks allowing every entry except the structural zeros of standard params."""
    W = np.ones(params.W.shape, dtype=bool)
    if params.is_standard:
        np.fill_diagonal(W, False)
    return {"A": np.ones(params.A.shape, dtype=bool), "W": W,
            "h": np.ones(params.h.shape, dtype=bool)}


def trainable_from_targets(params: PlrnnParams, targets: Sequence[str]) -> dict:
    """Masks freeing only the listed coordinates."""
    masks = {"A": np.zeros(params.A.shape, dtype=bool), "W": np.zeros(params.W.shape, dtype=bool),
             "h": np.zeros(params.h.shape, dtype=bool)}
    for t in targets:
        name, *idx = parse_target(t)
        if name == "A" and params.A.ndim == 1:
            if len(idx) == 2 and idx[0] != idx[1]:
                raise ValueError(f"{t}: off-diagonal entry of a diagonal A")
            masks["A"][idx[0]] = True
        else:
            masks[name][tuple(idx)] = True
    return masks


@dataclass
class TrainingTrace:
    snapshots: list = field(default_factory=list)   # params before each update, plus final
    losses: list = field(default_factory=list)
    free_losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    stopped: str | None = None

    def loss_jumps(self, which: str = "free") -> np.ndarray:
        """Increase of the loss from each epoch to the next."""
        v = np.asarray(self.free_losses if which == "free" else self.losses, dtype=float)
        return np.diff(v)

    def write(self, run_dir) -> None:
        """Write ``trace.jsonl`` plus one parameter file per snapshot into ``run_dir``."""
        run_dir = Path(run_dir)
        (run_dir / "snapshots").mkdir(parents=True, exist_ok=True)
        with open(run_dir / "trace.jsonl", "w") as fh:
            for e, p in enumerate(self.snapshots):
                ref = f"snapshots/epoch_{e:05d}.json"
                (run_dir / ref).write_text(json.dumps(params_to_dict(p)) + "\n")
                row = {"epoch": e, "params": ref}
                if e < len(self.losses):
                    row.update(loss=self.losses[e], free_loss=self.free_losses[e],
                               grad_norm=self.grad_norms[e], alpha=self.alphas[e])
                fh.write(json.dumps(row) + "\n")
            if self.stopped:
                fh.write(json.dumps({"stopped": self.stopped}) + "\n")


def read_trace(run_dir) -> TrainingTrace:
    from .core import load_params
    run_dir = Path(run_dir)
    tr = TrainingTrace()
    for line in (run_dir / "trace.jsonl").read_text().splitlines():
        row = json.loads(line)
        if "stopped" in row:
            tr.stopped = row["stopped"]
            continue
        tr.snapshots.append(load_params(run_dir / row["params"]))
        if "loss" in row:
            tr.losses.append(row["loss"])
            tr.free_losses.append(row["free_loss"])
            tr.grad_norms.append(row["grad_norm"])
            tr.alphas.append(row["alpha"])
    return tr


def train(params: PlrnnParams, loss: LossSpec, optimizer: SgdConfig = SgdConfig(),
          gtf: GtfConfig | None = None, annealing: str = "none", z0=None,
          trainable: dict | None = None) -> TrainingTrace:
    """Plain SGD on the forced loss.

    ``annealing="linear"`` decays alpha as ``alpha_0 (1 - epoch / epochs)``.
    Each epoch records the forced loss, the free-running loss (alpha = 0)
    and the gradient norm after masking and before clipping. A non-finite
    loss truncates the trace.
    """
    if annealing not in ("none", "linear"):
        raise ValueError("annealing must be 'none' or 'linear'")
    alpha0 = 0.0 if gtf is None else gtf.alpha
    z0 = loss.targets[0] if z0 is None else np.asarray(z0, dtype=float)
    masks = trainable or default_trainable(params)
    trace = TrainingTrace()
    p = params
    for epoch in range(optimizer.epochs):
        alpha = alpha0 * (1 - epoch / optimizer.epochs) if annealing == "linear" else alpha0
        g = bptt_gradient(p, z0, loss, GtfConfig(alpha))
        trace.snapshots.append(p)
        if not g.finite:
            trace.stopped = f"non-finite loss at epoch {epoch} (step {g.first_bad})"
            trace.snapshots.pop()
            break
        dA, dW, dh = g.dA * masks["A"], g.dW * masks["W"], g.dh * masks["h"]
        norm = float(np.sqrt(np.sum(dA ** 2) + np.sum(dW ** 2) + np.sum(dh ** 2)))
        trace.losses.append(g.loss)
        trace.free_losses.append(g.loss if alpha == 0 else trajectory_loss(p, z0, loss))
        trace.grad_norms.append(norm)
        trace.alphas.append(alpha)
        scale = optimizer.lr
        if optimizer.grad_clip is not None and norm > optimizer.grad_clip:
            scale *= optimizer.grad_clip / norm
        p = p.replace(A=p.A - scale * dA, W=p.W - scale * dW, h=p.h - scale * dh)
    else:
        trace.snapshots.append(p)
    return trace


# --- skew-tent cycle task ----------------------------------------------------

def skew_tent(a_l: float, a_r: float, h: float = 1.0) -> PlrnnParams:
    """1-D map with slope ``a_l`` left and ``a_r`` right of the border.

    Uses the generalized form (``A`` as a 1x1 matrix, self-coupling in
    ``W``) so that both slopes are free coordinates ``A[0,0]`` and ``W[0,0]``.
    """
    return PlrnnParams(np.array([[a_l]]), np.array([[a_r - a_l]]), np.array([h]))


@dataclass(frozen=True)
class CycleTask:
    teacher: PlrnnParams
    loss: LossSpec
    trainable: dict

    def init_params(self, seed: int) -> PlrnnParams:
        """Random start: left slope in U(-0.5, 0.9), right slope in U(-0.9, 0.9)."""
        rng = np.random.default_rng(seed)
        a_l, a_r = rng.uniform(-0.5, 0.9), rng.uniform(-0.9, 0.9)
        return skew_tent(a_l, a_r, float(self.teacher.h[0]))


def tent_cycle_task(a_l: float = 0.6, a_r: float = -1.5, h: float = 1.0, T: int = 40,
                    burn_in: int = 1000, z0: float = 0.3) -> CycleTask:
    """Two-parameter task: learn both slopes from T steps of the teacher's attractor.

    The default teacher has a stable 2-cycle.
    """
    teacher = skew_tent(a_l, a_r, h)
    states = np.empty((burn_in + T, 1))
    z = np.array([z0])
    for t in range(burn_in + T):
        states[t] = z
        z = teacher.A_matrix @ z + teacher.W @ np.maximum(z, 0.0) + teacher.h
    loss = LossSpec(states[burn_in:])
    return CycleTask(teacher, loss, trainable_from_targets(teacher, ["A[0,0]", "W[0,0]"]))


# --- look-ahead --------------------------------------------------------------

@dataclass(frozen=True)
class ProbeResult:
    would_bifurcate: bool
    kinds: tuple
    events: tuple = ()


def lookahead_probe(params: PlrnnParams, gradient, scale: float = 10.0, k_max: int = 1,
                    budget: SearchBudget | None = None, *, seed: int = 0,
                    thresholds: Thresholds = Thresholds()) -> ProbeResult:
    """Would a step of ``scale`` times the gradient change the attractor landscape?

    ``gradient`` is a ``GradientResult`` or a ``(dA, dW, dh)`` triple.
    """
    if isinstance(gradient, GradientResult):
        dA, dW, dh = gradient.dA, gradient.dW, gradient.dh
    else:
        dA, dW, dh = gradient
    stepped = params.replace(A=params.A - scale * np.asarray(dA), W=params.W - scale * np.asarray(dW),
                             h=params.h - scale * np.asarray(dh))
    if stepped == params:
        return ProbeResult(False, ())
    active = params.active_units | stepped.active_units
    libs = [scyfi_find_all(p, k_max, budget, seed=seed, context=SearchContext(p, active=active))
            for p in (params, stepped)]
    events = diff_libraries(libs[0], libs[1], lambda s: interpolate(params, stepped, s),
                            active, th=thresholds)
    kinds = tuple(sorted({e.kind for e in events}))
    return ProbeResult(bool(events), kinds, tuple(events))


__all__ = [
    "AlphaBound", "GradientResult", "GtfConfig", "LossSpec", "ProbeResult", "SgdConfig",
    "CycleTask", "TrainingTrace", "bptt_gradient", "cycle_gradient", "default_trainable",
    "gtf_alpha_bound", "gtf_product_radii", "lookahead_probe", "read_trace",
    "skew_tent", "tent_cycle_task", "train", "trainable_from_targets", "trajectory_loss",
]
