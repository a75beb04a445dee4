import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoclip import (
    AutoclipConfig,
    BisectionParams,
    ObjectiveKind,
    aggregate_max,
    aggregate_mean,
    autoclip_classify,
    batch_classify,
    entropy_bits,
    grad_fd,
    grad_rho,
    logsumexp,
    objective_value,
    pairwise_similarities,
    solve_step_size,
)
from autoclip.exceptions import ConfigError, SampleError, ShapeError
from autoclip.synthetic import ControlledConfig, sample_controlled

from oracles import autoclip_straight_line, entropy_bits_list, softmax_list

KINDS = list(ObjectiveKind)


def rand_instance(seed, K=4, C=3, d=16):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(K, C, d)), rng.normal(size=d)


# logsumexp


def test_logsumexp_examples():
    assert logsumexp(np.zeros(5)) == pytest.approx(math.log(5), abs=1e-12)
    assert logsumexp([3.7]) == 3.7
    assert logsumexp([1000.0, 0.0]) == pytest.approx(1000.0, abs=1e-12)
    with pytest.raises(ShapeError):
        logsumexp([])


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=20))
def test_logsumexp_bounds(xs):
    v = logsumexp(xs)
    assert max(xs) - 1e-9 <= v <= max(xs) + math.log(len(xs)) + 1e-9


# objective


def test_objective_constant_scores():
    S = np.full((3, 4), 0.3)
    assert objective_value(S, np.zeros(3), "logsumexp", 10.0) == pytest.approx(3.0 + math.log(4), abs=1e-12)


def test_objective_mean_kind_matches_mean_aggregation():
    S = np.random.default_rng(0).uniform(-1, 1, (3, 4))
    assert objective_value(S, np.zeros(3), "mean") == pytest.approx(aggregate_mean(S).mean(), abs=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_objective_matches_definition(kind):
    rng = np.random.default_rng(9)
    S = rng.uniform(-1, 1, (3, 4))
    rho = rng.normal(size=3)
    tau = 7.0
    w = softmax_list(rho.tolist())
    s = [sum(w[i] * S[i, j] for i in range(3)) for j in range(4)]
    if kind is ObjectiveKind.LOGSUMEXP:
        expected = math.log(sum(math.exp(tau * x) for x in s))
    elif kind is ObjectiveKind.MEAN:
        expected = sum(s) / 4
    elif kind is ObjectiveKind.MAX:
        expected = max(s)
    else:
        p = softmax_list([tau * x for x in s])
        expected = -entropy_bits_list(p) * math.log(2)
    assert objective_value(S, rho, kind, tau) == pytest.approx(expected, abs=1e-12)


# gradients


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_vanishes_for_constant_similarities(kind):
    S = np.full((5, 3), -0.2)
    np.testing.assert_allclose(grad_rho(S, np.zeros(5), kind, 10.0), 0.0, atol=1e-15)
    np.testing.assert_allclose(grad_fd(S, np.zeros(5), kind, 10.0), 0.0, atol=1e-6)


def test_gradient_single_class_hand_value():
    # one class: softmax over classes is 1, u = (1, 0), g = w * (u - w.u) = (0.25, -0.25)
    S = np.array([[1.0], [0.0]])
    np.testing.assert_allclose(grad_rho(S, np.zeros(2), "logsumexp", 1.0), [0.25, -0.25], atol=1e-15)
    np.testing.assert_allclose(grad_fd(S, np.zeros(2), "logsumexp", 1.0), [0.25, -0.25], atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("tau", [1.0, 10.0, 100.0])
def test_gradient_matches_finite_differences(kind, tau):
    rng = np.random.default_rng(21)
    S = pairwise_similarities(rng.normal(size=(4, 3, 12)), rng.normal(size=12))
    rho = rng.normal(size=4)
    assert np.max(np.abs(grad_rho(S, rho, kind, tau) - grad_fd(S, rho, kind, tau, 1e-5))) <= 1e-4


def test_fd_is_step_independent_for_mean_objective():
    rng = np.random.default_rng(4)
    S = rng.uniform(-1, 1, (5, 3))
    rho = rng.normal(size=5)
    # linear in w, so only the softmax curvature enters the O(h^2) truncation term
    a = grad_fd(S, rho, "mean", 1.0, 1e-4)
    b = grad_fd(S, rho, "mean", 1.0, 1e-5)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_misindexed_formula_collapses_to_zero():
    # sum_k (sum_j softmax(s)_j S_ij) w_i (delta_ik - w_k) is zero for every instance
    rng = np.random.default_rng(5)
    S = rng.uniform(-1, 1, (4, 3))
    w = np.full(4, 0.25)
    s = S.T @ w
    p = np.exp(s) / np.exp(s).sum()
    inner = S @ p
    misindexed = np.array([sum(inner[i] * w[i] * ((i == k) - w[k]) for k in range(4)) for i in range(4)])
    np.testing.assert_allclose(misindexed, 0.0, atol=1e-15)
    fd = grad_fd(S, np.zeros(4), "logsumexp", 1.0)
    assert np.max(np.abs(misindexed - fd)) > 1e-4
    assert np.max(np.abs(grad_rho(S, np.zeros(4), "logsumexp", 1.0) - fd)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(KINDS))
def test_ascent_direction_at_origin(seed, kind):
    desc, img = rand_instance(seed)
    S = pairwise_similarities(desc, img)
    g = grad_rho(S, np.zeros(4), kind, 10.0)
    # directional derivative along g equals g.g
    h = 1e-6
    deriv = (objective_value(S, h * g, kind, 10.0) - objective_value(S, -h * g, kind, 10.0)) / (2 * h)
    assert deriv == pytest.approx(g @ g, abs=1e-7)
    assert g @ g >= 0


# step size


def test_step_size_beta_one():
    sol = solve_step_size([0.3, -0.1, 0.5], 1.0)
    assert sol.alpha == 0.0 and sol.iterations == 0
    assert sol.achieved_entropy_bits == pytest.approx(math.log2(3))


def test_step_size_binary_example():
    # dense-scan oracle: alpha = 4.1809, weights (0.88997, 0.11003)
    sol = solve_step_size([0.25, -0.25], 0.5)
    assert abs(sol.alpha - 4.1809) <= 0.05
    assert abs(sol.achieved_entropy_bits - 0.5) <= 0.05
    assert not sol.degenerate and sol.converged
    assert sol.iterations <= 100


@pytest.mark.parametrize("g", [[0.0, 0.0], [0.4, 0.4, 0.4]])
def test_step_size_degenerate(g):
    sol = solve_step_size(g, 0.5)
    assert sol.degenerate and sol.alpha == 0.0


def test_step_size_target_outside_bracket():
    # two tied maxima keep at least one bit of entropy for every alpha
    sol = solve_step_size([1.0, 1.0, 0.0, 0.0], 0.2)
    assert not sol.converged and sol.alpha == 1e10
    assert sol.achieved_entropy_bits == pytest.approx(1.0, abs=1e-9)


def test_step_size_maxiter_exhaustion_is_flagged():
    sol = solve_step_size([0.25, -0.25], 0.5, BisectionParams(maxiter=3))
    assert sol.iterations == 3 and not sol.converged


def test_bisection_params_validation():
    with pytest.raises(ConfigError):
        BisectionParams(lo=1.0, hi=0.5)
    with pytest.raises(ConfigError):
        BisectionParams(maxiter=0)
    with pytest.raises(ConfigError):
        solve_step_size([0.1, 0.2], 0.0)


# classification


def test_single_template_matches_baselines():
    desc, img = rand_instance(1, K=1)
    res = autoclip_classify(desc, img)
    S = pairwise_similarities(desc, img)
    np.testing.assert_array_equal(res.prediction.weights, [1.0])
    assert res.prediction.predicted_class == np.argmax(aggregate_mean(S)) == np.argmax(aggregate_max(S))


def test_beta_one_reproduces_mean():
    desc, img = rand_instance(2, K=8, C=5)
    res = autoclip_classify(desc, img, AutoclipConfig(beta=1.0))
    mean = aggregate_mean(pairwise_similarities(desc, img))
    np.testing.assert_allclose(res.prediction.scores, mean, rtol=0, atol=1e-9)
    assert res.prediction.predicted_class == np.argmax(mean)


def test_result_invariants():
    desc, img = rand_instance(3, K=6, C=4)
    res = autoclip_classify(desc, img, AutoclipConfig(tau=10.0))
    w = res.prediction.weights
    np.testing.assert_allclose(w, np.exp(res.logits) / np.exp(res.logits).sum(), atol=1e-9)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-9
    assert abs(entropy_bits(w) - 0.85 * math.log2(6)) <= 0.05
    assert res.objective_after >= res.objective_before


def test_image_scale_invariance_is_exact_for_power_of_two():
    desc, img = rand_instance(4, K=6, C=4)
    a = autoclip_classify(desc, img)
    b = autoclip_classify(desc, 4.0 * img)
    assert np.array_equal(a.prediction.scores, b.prediction.scores)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
def test_image_scale_invariance(seed, c):
    desc, img = rand_instance(seed, K=5, C=4)
    a = autoclip_classify(desc, img)
    b = autoclip_classify(desc, c * img)
    assert a.prediction.predicted_class == b.prediction.predicted_class
    np.testing.assert_allclose(a.prediction.scores, b.prediction.scores, atol=1e-12)


def test_matches_straight_line_oracle_on_controlled_instances():
    inst = sample_controlled(ControlledConfig(entanglement=0.8, instance_noise=0.5, seed=7))
    desc = inst.descriptors.tolist()
    for n in range(40):
        res = autoclip_classify(inst.descriptors, inst.images[n])
        pred, w, alpha = autoclip_straight_line(desc, inst.images[n].tolist(), tau=100.0)
        assert res.prediction.predicted_class == pred
        assert res.step.alpha == pytest.approx(alpha, rel=2e-2, abs=2e-2)


def test_fixed_alpha_mode():
    desc, img = rand_instance(6, K=5)
    res = autoclip_classify(desc, img, AutoclipConfig(fixed_alpha=3.0, tau=10.0))
    assert res.step.alpha == 3.0 and res.step.iterations == 0
    zero = autoclip_classify(desc, img, AutoclipConfig(fixed_alpha=0.0))
    np.testing.assert_allclose(zero.prediction.scores, aggregate_mean(pairwise_similarities(desc, img)), atol=1e-9)


# batches


def test_batch_edge_cases():
    desc, img = rand_instance(7)
    assert batch_classify(desc, []) == []
    single = batch_classify(desc, [img])[0]
    ref = autoclip_classify(desc, img)
    assert np.array_equal(single.prediction.scores, ref.prediction.scores)
    assert single.step == ref.step


def test_batch_worker_count_is_irrelevant():
    rng = np.random.default_rng(8)
    desc = rng.normal(size=(10, 5, 32))
    imgs = list(rng.normal(size=(150, 32)))
    a = batch_classify(desc, imgs, workers=1)
    b = batch_classify(desc, imgs, workers=8)
    for x, y in zip(a, b):
        assert np.array_equal(x.prediction.scores, y.prediction.scores)
        assert np.array_equal(x.prediction.weights, y.prediction.weights)
        assert x.step == y.step
    for n in (0, 70, 149):
        assert np.array_equal(a[n].prediction.scores, autoclip_classify(desc, imgs[n]).prediction.scores)


def test_batch_error_carries_index():
    desc, img = rand_instance(9)
    with pytest.raises(SampleError) as info:
        batch_classify(desc, [img, img, np.zeros_like(img)])
    assert info.value.sample_index == 2
