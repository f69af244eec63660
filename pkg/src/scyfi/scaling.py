"""Search-cost accounting: exhaustive-search baseline, constructed benchmark
systems with known fixed-point structure, and evaluation-count runners."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PlrnnParams
from .search import (
    CycleLibrary,
    SearchBudget,
    SearchContext,
    exhaustive_oracle,
    required_initializations,
    scyfi_find_k,
    solve_cycle_candidate,
)


@dataclass(frozen=True)
class ExhaustiveCost:
    expected: float
    median: int


def _log_comb(n: int, r: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)


def exhaustive_expectation(M: int, k: int, m: int) -> ExhaustiveCost:
    """Draws without replacement until the first of ``m`` hits among ``2**(M*k)`` sequences.

    Returns the expectation ``(N + 1) / (m + 1)`` and the median, the smallest
    ``n`` with ``C(N - n, m) <= C(N, m) / 2``.
    """
    N = 2 ** (M * k)
    if not 1 <= m <= N:
        raise ValueError(f"m must lie in [1, {N}], got {m}")
    expected = (N + 1) / (m + 1)
    if m <= 64:
        full = math.comb(N, m)

        def above_half(n):  # P(first hit > n) > 1/2
            return 2 * math.comb(N - n, m) > full
    else:
        half = _log_comb(N, m) - math.log(2.0)

        def above_half(n):
            if N - n < m:
                return False
            return _log_comb(N - n, m) > half + 1e-12
    lo, hi = 0, N - m + 1  # above_half(lo) holds, above_half(hi) fails
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if above_half(mid):
            lo = mid
        else:
            hi = mid
    return ExhaustiveCost(expected, hi)


def first_hit_samples(N: int, m: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo draws of the 1-based index of the first hit when drawing without replacement."""
    if not 1 <= m <= N:
        raise ValueError("need 1 <= m <= N")
    # hit positions in a random ordering: a uniform m-subset of 1..N
    out = np.empty(trials, dtype=np.int64)
    todo = np.arange(trials)
    while todo.size:
        pos = rng.integers(1, N + 1, size=(todo.size, m))
        srt = np.sort(pos, axis=1)
        ok = np.all(np.diff(srt, axis=1) > 0, axis=1) if m > 1 else np.ones(todo.size, bool)
        out[todo[ok]] = srt[ok, 0]
        todo = todo[~ok]
    return out


def empirical_median(samples: np.ndarray) -> int:
    """Smallest value whose empirical CDF reaches one half."""
    return int(np.quantile(samples, 0.5, method="inverted_cdf"))


# --- constructed systems -----------------------------------------------------

def _spectral(X: np.ndarray) -> float:
    return float(np.linalg.norm(X, 2))


def generate_case1_params(M: int, eps: float = 0.1, rng_seed: int = 0,
                          h: np.ndarray | None = None) -> PlrnnParams:
    """Nonnegative coupling scaled so that ``||A|| + ||W|| < 1``.

    Every fixed-point candidate, true or virtual, then lies in the positive
    orthant. ``h`` defaults to uniform (0, 1] entries.
    """
    if M < 1 or eps <= 0:
        raise ValueError("need M >= 1 and eps > 0")
    rng = np.random.default_rng(rng_seed)
    R = rng.uniform(0.0, 1.0, size=(M, M))
    s = 2.0 + _spectral(R) + eps
    A = np.diag(R).copy() / s
    W = (R - np.diag(np.diag(R))) / s
    if h is None:
        h = 1.0 - rng.uniform(0.0, 1.0, size=M)
    return PlrnnParams(A, W, h)


def generate_case2_params(M: int, card_s: int, eps: float = 1.0, rng_seed: int = 0) -> PlrnnParams:
    """Weak inhibitory coupling with ``card_s`` units forced positive.

    The units in the constrained set S get self-weights in ``(r* - 1, 0)``,
    which keeps them positive at every fixed-point candidate, so candidates
    fall into at most ``2**(M - card_s)`` regions.
    """
    if M < 2 or not 0 <= card_s <= M:
        raise ValueError("need M >= 2 and 0 <= card_s <= M")
    rng = np.random.default_rng(rng_seed)
    h = 1.0 - rng.uniform(0.0, 1.0, size=M)
    b_min, b_max = h.min(), h.max()
    R1 = -rng.uniform(0.0, 1.0, size=(M, M))
    nR1 = _spectral(R1)
    W = b_min / (M + nR1 + eps) * (R1 - np.diag(np.diag(R1)))
    a_max = np.abs(W).max()
    r_star = (M - 1) * a_max * b_max / b_min
    S = rng.choice(M, size=card_s, replace=False)
    r = rng.uniform(-1.0, 1.0, size=M)
    r[S] = rng.uniform(r_star - 1.0, 0.0, size=card_s)
    A = r / (2.0 + nR1 + eps)
    return PlrnnParams(A, W, h)


@dataclass(frozen=True)
class EmbeddingResult:
    params: PlrnnParams
    residual: float
    converged: bool
    iterations: int


def embed_fixed_point(z_star, rng_seed: int = 0, init_scale: float = 1.0,
                      tol: float = 1e-8, max_iters: int = 10_000,
                      init: PlrnnParams | None = None) -> EmbeddingResult:
    """Fit ``A`` (diagonal), ``W`` (zero diagonal) and ``h`` so that ``z_star`` is a fixed point.

    Starting from ``A = diag(R)``, ``W = R - diag(R)`` with ``R`` uniform in
    ``(-init_scale, init_scale)`` and ``h = 0``, plain gradient descent is run
    on the squared residual ``|z* - ((A + W D(z*)) z* + h)|^2``.
    """
    z = np.asarray(z_star, dtype=float)
    M = z.shape[0]
    if init is None:
        rng = np.random.default_rng(rng_seed)
        R = rng.uniform(-init_scale, init_scale, size=(M, M))
        a = np.diag(R).copy()
        W = R - np.diag(np.diag(R))
        h = np.zeros(M)
    else:
        a = np.diag(init.A_matrix).copy()
        W = np.array(init.W, dtype=float)
        h = np.array(init.h, dtype=float)
    dz = z * (z > 0)
    offdiag = 1.0 - np.eye(M)
    # Lipschitz constant of the gradient, row by row the model is linear in (h_i, a_ii, w_i.)
    L = float(np.max(1.0 + z ** 2 + (dz ** 2).sum() - dz ** 2))
    lr = 1.0 / L
    res = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        r = z - (a * z + W @ dz + h)
        res = float(np.max(np.abs(r)))
        if res < tol:
            break
        # descent on 0.5 * |r|^2
        h = h + lr * r
        a = a + lr * r * z
        W = W + lr * np.outer(r, dz) * offdiag
    r = z - (a * z + W @ dz + h)
    res = float(np.max(np.abs(r)))
    return EmbeddingResult(PlrnnParams(a, W, h), res, res < tol, it)


# --- evaluation counts -------------------------------------------------------

def evaluations_until_first(params: PlrnnParams, k: int, seed: int,
                            lower: CycleLibrary | None = None,
                            n_out: int | None = None, n_in: int = 100,
                            target=None, target_tol: float = 1e-6,
                            context: SearchContext | None = None) -> int | None:
    """Region sequences examined until the first k-cycle (or ``target`` point) is stored.

    ``lower`` supplies the already-known lower-order cycles for the subset
    filter. Returns None if the budget runs out first.
    """
    ctx = context or SearchContext(params)
    lib = CycleLibrary(point_tol=ctx.point_tol)
    if lower is not None:
        for j, objs in lower.by_order.items():
            if j < k:
                lib.by_order[j] = list(objs)
    if n_out is None:
        n_out = min(10**6, required_initializations(max(1, ctx.ix.n_active), k, 1e-3))
    found = []
    if target is None:
        def stop(obj):
            found.append(obj)
            return True
    else:
        tgt = np.asarray(target, dtype=float)

        def stop(obj):
            if np.min(np.max(np.abs(obj.points - tgt), axis=1)) <= target_tol * max(1.0, np.abs(tgt).max()):
                found.append(obj)
                return True
            return False
    scyfi_find_k(params, k, lib, SearchBudget(n_out, n_in, seed), context=ctx, stop=stop)
    return lib.evaluations[k] if found else None


def random_cycle_rich_system(M: int, k_max: int, rng: np.random.Generator,
                             a_range: float = 3.0, scale: float = 3.0,
                             max_tries: int = 10_000) -> tuple[PlrnnParams, CycleLibrary]:
    """Draw random systems until one has at least one k-cycle for every k <= k_max."""
    for _ in range(max_tries):
        A = rng.uniform(-a_range, a_range, size=M)
        W = rng.normal(0.0, scale, size=(M, M))
        np.fill_diagonal(W, 0.0)
        h = rng.normal(0.0, 1.0, size=M)
        p = PlrnnParams(A, W, h)
        lib = exhaustive_oracle(p, k_max)
        if all(lib.cycles(k) for k in range(1, k_max + 1)):
            return p, lib
    raise RuntimeError("no system with cycles of every order found")


def order_scaling(M: int, k_max: int, n_systems: int, n_seeds: int, seed: int = 0) -> list[dict]:
    """Median evaluations until the first k-cycle, against the exhaustive baseline.

    The baseline uses ``m = k * (number of k-cycles)``: every rotation of a
    cycle's region sequence is a hit for a blind search.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, M, k_max]))
    systems = [random_cycle_rich_system(M, k_max, rng) for _ in range(n_systems)]
    rows = []
    for k in range(1, k_max + 1):
        counts = []
        base_medians = []
        for si, (p, lib) in enumerate(systems):
            ctx = SearchContext(p)
            for s in range(n_seeds):
                n = evaluations_until_first(p, k, seed=int(np.random.SeedSequence([seed, si, s]).generate_state(1)[0]),
                                            lower=lib, context=ctx)
                if n is not None:
                    counts.append(n)
            base_medians.append(exhaustive_expectation(M, k, k * len(lib.cycles(k))).median)
        rows.append({
            "k": k,
            "M": M,
            "scyfi_median": float(np.median(counts)) if counts else float("nan"),
            "scyfi_mad": float(np.median(np.abs(np.array(counts) - np.median(counts)))) if counts else float("nan"),
            "exhaustive_median": float(np.median(base_medians)),
            "n_runs": len(counts),
        })
    return rows


def case1_scaling(dims, n_seeds: int, seed: int = 0) -> list[dict]:
    rows = []
    for M in dims:
        p = generate_case1_params(M, rng_seed=int(np.random.SeedSequence([seed, M]).generate_state(1)[0]))
        ctx = SearchContext(p)
        counts = [evaluations_until_first(p, 1, seed=s, n_out=1000, context=ctx) for s in range(n_seeds)]
        counts = [c for c in counts if c is not None]
        rows.append({"M": M, "scyfi_median": float(np.median(counts)), "n_runs": len(counts),
                     "exhaustive_median": float(exhaustive_expectation(M, 1, 1).median)})
    return rows


def embedding_scaling(dims, n_systems: int, n_seeds: int, init_scale: float,
                      seed: int = 0, n_out: int = 100_000) -> list[dict]:
    """Median evaluations until an embedded fixed point is recovered."""
    rows = []
    for M in dims:
        counts = []
        for si in range(n_systems):
            ss = np.random.SeedSequence([seed, M, si])
            rng = np.random.default_rng(ss)
            z = rng.normal(size=M)
            emb = embed_fixed_point(z, rng_seed=int(ss.generate_state(1)[0]), init_scale=init_scale)
            if not emb.converged:
                continue
            ctx = SearchContext(emb.params)
            for s in range(n_seeds):
                n = evaluations_until_first(emb.params, 1, seed=s, n_out=n_out, target=z, context=ctx)
                if n is not None:
                    counts.append(n)
        rows.append({"M": M, "init_scale": init_scale,
                     "scyfi_median": float(np.median(counts)) if counts else float("nan"),
                     "n_runs": len(counts),
                     "exhaustive_median": float(exhaustive_expectation(M, 1, 1).median)})
    return rows


def embedded_point_is_fixed(params: PlrnnParams, z_star) -> bool:
    """Solve at the region of ``z_star`` and check the solution is ``z_star`` itself."""
    z = np.asarray(z_star, dtype=float)
    cand = solve_cycle_candidate(params, [tuple(int(v) for v in (z > 0))])
    return (not cand.degenerate and cand.consistent
            and np.allclose(cand.points[0], z, atol=1e-8, rtol=1e-8))
