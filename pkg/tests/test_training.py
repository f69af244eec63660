import json

import numpy as np
import pytest

from conftest import coexist_params, tent
from gradcheck import fd_gradient, random_case, relative_error
from scyfi.core import PlrnnParams
from scyfi.search import scyfi_find_all
from scyfi.training import (
    GtfConfig,
    LossSpec,
    SgdConfig,
    bptt_gradient,
    cycle_gradient,
    default_trainable,
    gtf_alpha_bound,
    gtf_product_radii,
    lookahead_probe,
    read_trace,
    skew_tent,
    tent_cycle_task,
    train,
    trainable_from_targets,
    trajectory_loss,
)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec([[1.0]])
    assert LossSpec([1.0, 2.0]).targets.shape == (2, 1)
    with pytest.raises(ValueError):
        GtfConfig(1.5)


def test_one_step_gradient_is_exact():
    p = PlrnnParams([0.0, 0.0], np.zeros((2, 2)), [0.3, -0.7])
    x = np.array([[0.5, 0.5], [1.0, 2.0]])
    g = bptt_gradient(p, x[0], LossSpec(x))
    np.testing.assert_array_equal(g.dh, 2 * (p.h - x[1]))
    assert g.loss == pytest.approx(np.sum((p.h - x[1]) ** 2))


@pytest.mark.parametrize("alpha", [0.0, 0.5])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(alpha, seed):
    p, z0, loss, gtf = random_case(np.random.default_rng(seed), alpha)
    g = bptt_gradient(p, z0, loss, gtf)
    assert relative_error(g.flat(), fd_gradient(p, z0, loss, gtf)) < 1e-5


def test_full_forcing_keeps_only_immediate_partials():
    p, z0, loss, _ = random_case(np.random.default_rng(3), 1.0)
    g = bptt_gradient(p, z0, loss, GtfConfig(1.0))
    x = loss.targets
    # with alpha = 1 every input is the data point, so each step is independent
    dh = np.zeros(p.M)
    dA = np.zeros(p.M)
    dW = np.zeros((p.M, p.M))
    for t in range(1, loss.T):
        u = x[t - 1]
        r = 2 * (p.A * u + p.W @ np.maximum(u, 0) + p.h - x[t])
        dh += r
        dA += r * u
        dW += np.outer(r, np.maximum(u, 0))
    np.testing.assert_allclose(g.dh, dh, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(g.dA, dA, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(g.dW, dW, rtol=1e-12, atol=1e-12)


def test_zero_forcing_is_plain_bptt_bit_for_bit():
    p, z0, loss, _ = random_case(np.random.default_rng(4), 0.0)
    a = bptt_gradient(p, z0, loss)
    b = bptt_gradient(p, z0, loss, GtfConfig(0.0))
    assert np.array_equal(a.flat(), b.flat()) and a.loss == b.loss


def test_divergence_flags_non_finite():
    p = PlrnnParams([3.0], [[0.0]], [1.0])
    g = bptt_gradient(p, [1.0], LossSpec(np.zeros((300, 1))))
    assert not g.finite and g.first_bad is not None
    assert np.all(np.isnan(g.flat()))
    assert trajectory_loss(p, [1.0], LossSpec(np.zeros((300, 1)))) == float("inf")


# --- attractor gradients --------------------------------------------------------

def _fixed_point(p, k_max=1):
    lib = scyfi_find_all(p, k_max)
    return lib.cycles(1)[0]


def test_fixed_point_gradient_closed_form():
    a, h = 0.6, 1.5
    p = PlrnnParams([0.0], [[0.0]], [h]).replace(A=np.array([[0.0]]), W=np.array([[a]]))
    fp = _fixed_point(p)
    z = h / (1 - a)
    assert fp.points[0, 0] == pytest.approx(z)
    assert cycle_gradient(p, fp, "W[0,0]")[0, 0] == pytest.approx(z / (1 - a), rel=1e-12)
    assert cycle_gradient(p, fp, "h[0]")[0, 0] == pytest.approx(1 / (1 - a), rel=1e-12)


def test_cycle_gradient_matches_finite_differences_on_two_cycle():
    p = coexist_params().to_plrnn()
    two = [c for c in scyfi_find_all(p, 2).cycles(2)][0]
    g = cycle_gradient(p, two, "A[0,1]")
    eps = 1e-7

    def pts(delta):
        A = p.A.copy()
        A[0, 1] += delta
        lib = scyfi_find_all(p.replace(A=A), 2)
        return [c for c in lib.cycles(2) if c.key == two.key][0].points

    np.testing.assert_allclose(g, (pts(eps) - pts(-eps)) / (2 * eps), rtol=1e-6, atol=1e-6)


def test_gradient_blows_up_towards_dtb():
    norms = []
    for a_r in (0.9, 0.99, 0.999):
        p = skew_tent(0.5, a_r)
        norms.append(np.abs(cycle_gradient(p, _fixed_point(p), "W[0,0]")).max())
        assert norms[-1] == pytest.approx((1 - a_r) ** -2, rel=1e-6)
    assert norms[0] < norms[1] < norms[2]


def test_singular_cycle_reports_unbounded():
    p = skew_tent(0.5, 0.9)
    fp = _fixed_point(p)
    assert np.all(np.isinf(cycle_gradient(skew_tent(0.5, 1.0), fp, "h[0]")))


def test_border_component_coordinates_vanish():
    # fixed point exactly on the border of unit 0: partials w.r.t. W[:,0] and A[0] vanish
    # z2 = 1.25 when z1 = 0, and h1 = -0.3 * 1.25 keeps z1 at 0
    p = PlrnnParams([0.5, 0.2], [[0.0, 0.3], [0.7, 0.0]], [-0.375, 1.0])
    fp = _fixed_point(p)
    assert abs(fp.points[0, 0]) < 1e-15
    assert np.all(np.abs(cycle_gradient(p, fp, "W[1,0]")) < 1e-14)
    assert np.all(np.abs(cycle_gradient(p, fp, "A[0]")) < 1e-14)
    assert np.any(cycle_gradient(p, fp, "h[0]") != 0.0)


# --- GTF bound ------------------------------------------------------------------

def test_alpha_bound_examples():
    assert gtf_alpha_bound(PlrnnParams([0.5, 0.3], [[0, 0.3], [0, 0]], [0, 0])).alpha_star == 0.0
    b = gtf_alpha_bound(PlrnnParams([1.2, 0.1], [[0, 0.8], [0, 0]], [0, 0]))
    assert b.r == pytest.approx(2.0) and b.alpha_star == pytest.approx(0.5)


def test_alpha_above_bound_contracts_products():
    p = PlrnnParams([1.4, -0.3], [[0, 0.5], [-0.6, 0]], [0.0, 0.0])
    b = gtf_alpha_bound(p)
    assert b.r > 1
    assert gtf_product_radii(p, b.alpha_star + 0.01, rng=0).max() < 1
    assert gtf_product_radii(p, 0.0, rng=0).max() > 1


# --- training loop --------------------------------------------------------------

def test_training_at_fixed_point_stays_put():
    p = PlrnnParams([0.5, 0.3], [[0, 0.2], [0.1, 0]], [1.0, 0.5])
    fp = _fixed_point(p).points[0]
    loss = LossSpec(np.tile(fp, (10, 1)))
    tr = train(p, loss, SgdConfig(lr=0.01, epochs=5))
    assert max(tr.losses) < 1e-20
    assert len(tr.snapshots) == 6
    assert all(np.allclose(s.W, p.W) for s in tr.snapshots)


def test_default_trainable_masks_structural_zeros():
    p = PlrnnParams([0.5, 0.3], [[0, 0.2], [0.1, 0]], [1.0, 0.5])
    assert not default_trainable(p)["W"][0, 0]
    m = trainable_from_targets(p, ["W[0,1]", "h[1]"])
    assert m["W"].sum() == 1 and m["h"].sum() == 1 and m["A"].sum() == 0
    with pytest.raises(ValueError):
        trainable_from_targets(p, ["A[0,1]"])


def test_two_parameter_training_moves_only_free_entries():
    task = tent_cycle_task()
    p0 = task.init_params(0)
    tr = train(p0, task.loss, SgdConfig(lr=0.01, epochs=10, grad_clip=10), trainable=task.trainable)
    assert np.array_equal(tr.snapshots[-1].h, p0.h)
    assert not np.array_equal(tr.snapshots[-1].W, p0.W)


def test_linear_annealing_schedule():
    task = tent_cycle_task()
    tr = train(task.init_params(1), task.loss, SgdConfig(lr=0.01, epochs=4, grad_clip=10),
               GtfConfig(0.2), annealing="linear", trainable=task.trainable)
    assert tr.alphas == pytest.approx([0.2, 0.15, 0.1, 0.05])
    with pytest.raises(ValueError):
        train(task.init_params(1), task.loss, annealing="cosine")


def test_divergent_training_is_truncated():
    p = PlrnnParams([3.0], [[0.0]], [1.0])
    tr = train(p, LossSpec(np.zeros((300, 1))), SgdConfig(epochs=3))
    assert tr.stopped and tr.losses == [] and tr.snapshots == []


def test_trace_round_trip(tmp_path):
    task = tent_cycle_task()
    tr = train(task.init_params(2), task.loss, SgdConfig(lr=0.01, epochs=3), GtfConfig(0.1),
               trainable=task.trainable)
    tr.write(tmp_path)
    back = read_trace(tmp_path)
    assert back.losses == tr.losses and back.grad_norms == tr.grad_norms
    assert all(a == b for a, b in zip(back.snapshots, tr.snapshots))
    first = json.loads((tmp_path / "trace.jsonl").read_text().splitlines()[0])
    assert set(first) >= {"epoch", "loss", "grad_norm", "params"}


def test_cycle_task_teacher_has_stable_two_cycle():
    task = tent_cycle_task()
    lib = scyfi_find_all(task.teacher, 2)
    assert [c.is_stable for c in lib.cycles(2)] == [True]
    x = task.loss.targets[:, 0]
    assert np.allclose(x[2:], x[:-2])


# --- look-ahead -----------------------------------------------------------------

def test_probe_zero_gradient():
    p = tent(0.5, 0.5)
    z = (np.zeros_like(p.A), np.zeros_like(p.W), np.zeros_like(p.h))
    assert not lookahead_probe(p, z).would_bifurcate


def test_probe_step_across_dtb():
    p = skew_tent(0.5, 0.95)
    grad = (np.zeros((1, 1)), np.array([[-0.01]]), np.zeros(1))  # a_r -> 1.05
    res = lookahead_probe(p, grad)
    assert res.would_bifurcate and res.kinds == ("DTB",)


def test_probe_step_inside_stability_region():
    from scyfi.oracle2d import stable_inventory
    base = coexist_params()
    p = base.to_plrnn()
    grad = (np.zeros((2, 2)), np.array([[-0.001, 0], [0, 0]]), np.zeros(2))
    assert stable_inventory(base) == stable_inventory(base.replace(a_r=base.a_r + 0.01))
    assert not lookahead_probe(p, grad, k_max=3).would_bifurcate
