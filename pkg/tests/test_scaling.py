import math

import numpy as np
import pytest

from scyfi.scaling import (
    case1_scaling,
    embed_fixed_point,
    embedded_point_is_fixed,
    empirical_median,
    evaluations_until_first,
    exhaustive_expectation,
    first_hit_samples,
    generate_case1_params,
    generate_case2_params,
    order_scaling,
)
from scyfi.search import exhaustive_oracle, solve_cycle_candidate


def brute_median(N, m):
    # P(first hit > n) = C(N-n, m) / C(N, m); median = first n where this drops to <= 1/2
    for n in range(N + 1):
        if 2 * math.comb(N - n, m) <= math.comb(N, m):
            return n


def test_expectation_single_hit_in_four():
    c = exhaustive_expectation(2, 1, 1)
    assert c.expected == 2.5
    assert c.median == 2


def test_all_hits_needs_one_draw():
    c = exhaustive_expectation(2, 2, 16)
    assert c.expected == 1.0 and c.median == 1


@pytest.mark.parametrize("M,k,m", [(1, 3, 1), (2, 3, 5), (3, 2, 7), (4, 3, 8), (2, 6, 3)])
def test_median_matches_brute_force(M, k, m):
    assert exhaustive_expectation(M, k, m).median == brute_median(2 ** (M * k), m)


def test_expectation_rejects_bad_m():
    with pytest.raises(ValueError):
        exhaustive_expectation(1, 1, 3)


def test_monte_carlo_first_hit_matches_formula():
    rng = np.random.default_rng(0)
    s = first_hit_samples(64, 3, 100_000, rng)
    assert s.min() >= 1 and s.max() <= 62
    assert s.mean() == pytest.approx(65 / 4, rel=0.02)
    assert empirical_median(s) == exhaustive_expectation(3, 2, 3).median


def test_case1_norm_and_positive_candidates():
    p = generate_case1_params(6, rng_seed=3)
    assert np.linalg.norm(p.A_matrix, 2) + np.linalg.norm(p.W, 2) < 1
    rng = np.random.default_rng(0)
    for _ in range(20):
        code = tuple(int(b) for b in rng.integers(0, 2, 6))
        c = solve_cycle_candidate(p, [code])
        assert np.all(c.points[0] > 0)


def test_case1_found_within_two_evaluations():
    rows = case1_scaling([2, 8, 16], n_seeds=10)
    assert all(r["scyfi_median"] <= 2 for r in rows)


def test_case2_has_forced_positive_units():
    p = generate_case2_params(5, 3, rng_seed=1)
    assert p.is_standard
    lib = exhaustive_oracle(p, 1)
    assert len(lib.cycles(1)) >= 1


def test_embedding_trivial_point():
    emb = embed_fixed_point(np.zeros(3), rng_seed=0)
    assert emb.converged


def test_embedding_recovers_point():
    z = np.array([0.7, -1.2, 0.4, -0.1])
    emb = embed_fixed_point(z, rng_seed=2, init_scale=0.2)
    assert emb.converged
    assert emb.params.is_standard
    assert embedded_point_is_fixed(emb.params, z)
    n = evaluations_until_first(emb.params, 1, seed=0, target=z, n_out=10_000)
    assert n is not None and n >= 1


def test_order_scaling_rows_shape():
    rows = order_scaling(2, 3, n_systems=1, n_seeds=3, seed=1)
    assert [r["k"] for r in rows] == [1, 2, 3]
    assert all(r["n_runs"] == 3 for r in rows)
    assert all(r["scyfi_median"] >= 1 for r in rows)
