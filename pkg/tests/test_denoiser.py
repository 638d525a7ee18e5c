import numpy as np
import pytest

from dagpo.denoiser import (AdamW, DenoiserDims, DimensionMismatch, apply_update, average_grads,
                            forward, forward_batch, freeze_fraction, init_params, loss_and_grad,
                            loss_and_grad_batch)
from dagpo.diffusion import NoisyGraph

from gradcheck import gradient_check, random_instance, random_params

DIMS = DenoiserDims(3, 3, 3, 50, hidden=16, layers=2, pe_dim=4)


def test_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = random_params(rng, DIMS)
    inst = random_instance(rng, DIMS, batch=5)
    out = forward_batch(p, inst["nodes"], inst["edges"], inst["t"])
    np.testing.assert_allclose(out.node_probs.sum(-1), 1, atol=1e-6)
    np.testing.assert_allclose(out.edge_probs.sum(-1), 1, atol=1e-6)
    assert np.all(out.node_probs > 0) and np.all(out.edge_probs > 0)


def test_zero_heads_uniform():
    p = init_params(DIMS, np.random.default_rng(0))
    g = NoisyGraph(np.array([0, 1, 2]), np.array([1, 0, 2]), 7, 3, 3)
    out = forward(p, g)
    np.testing.assert_allclose(out.node_probs, 1 / 3)
    np.testing.assert_allclose(out.edge_probs, 1 / 3)


def test_forward_deterministic():
    rng = np.random.default_rng(1)
    p = random_params(rng, DIMS)
    inst = random_instance(rng, DIMS)
    a = forward_batch(p, inst["nodes"], inst["edges"], inst["t"])
    b = forward_batch(p, inst["nodes"], inst["edges"], inst["t"])
    assert a.node_probs.tobytes() == b.node_probs.tobytes()
    assert a.edge_probs.tobytes() == b.edge_probs.tobytes()


def test_dimension_mismatch():
    p = init_params(DIMS, np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        forward_batch(p, np.zeros((1, 4), dtype=int), np.zeros((1, 3), dtype=int), 1)
    with pytest.raises(DimensionMismatch):
        loss_and_grad_batch(p, np.zeros((1, 3), dtype=int), np.zeros((1, 3), dtype=int), 1,
                            np.zeros((1, 2), dtype=int), np.zeros((1, 3), dtype=int), 1.0, 1.0)


def test_loss_uniform_output():
    n = 4
    dims = DenoiserDims(n, 5, 2, 10, hidden=8, layers=1, pe_dim=2)
    p = init_params(dims, np.random.default_rng(0))
    g = NoisyGraph(np.zeros(n, dtype=int), np.zeros(dims.m, dtype=int), 3, 5, 2)
    loss, _ = loss_and_grad(p, g, np.arange(n) % 5, np.zeros(dims.m, dtype=int), lam=0.0)
    assert loss == pytest.approx(n * np.log(5), rel=1e-12)


def test_loss_zero_for_point_mass():
    dims = DenoiserDims(2, 2, 2, 10, hidden=4, layers=1, pe_dim=2)
    p = init_params(dims, np.random.default_rng(0))
    # huge output biases on the target classes saturate the softmax
    target_nodes, target_edges = np.array([1, 0]), np.array([1])
    bias = np.full(dims.out_dim, -800.0)
    bias[[1, 2, 5]] = 800.0
    p.biases[-1] = bias
    g = NoisyGraph(np.array([0, 0]), np.array([0]), 1, 2, 2)
    loss, grads = loss_and_grad(p, g, target_nodes, target_edges, lam=5.0)
    assert loss == 0.0
    assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in grads)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lam", [0.0, 1.0, 5.0])
def test_gradient_matches_finite_differences(seed, lam):
    assert gradient_check(seed, lam) < 1e-4


def test_frozen_layers_get_zero_grad():
    rng = np.random.default_rng(2)
    p = random_params(rng, DIMS)
    p.frozen = [True, False, False]
    inst = random_instance(rng, DIMS)
    _, grads = loss_and_grad_batch(p, inst["nodes"], inst["edges"], inst["t"], inst["target_nodes"],
                                   inst["target_edges"], 5.0, inst["scale"])
    assert np.all(grads[0][0] == 0) and np.all(grads[0][1] == 0)
    assert np.any(grads[1][0] != 0)
    p.frozen = [True, True, True]
    _, grads = loss_and_grad_batch(p, inst["nodes"], inst["edges"], inst["t"], inst["target_nodes"],
                                   inst["target_edges"], 5.0, inst["scale"])
    assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in grads)


def test_adamw_zero_gradient_is_pure_decay():
    rng = np.random.default_rng(3)
    p = random_params(rng, DIMS)
    before = p.copy()
    zeros = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(p.weights, p.biases)]
    apply_update(p, zeros, AdamW(weight_decay=0.01), lr=0.1)
    for w0, w1 in zip(before.weights, p.weights):
        np.testing.assert_allclose(w1, w0 * (1 - 0.1 * 0.01), rtol=0, atol=1e-15)


def test_adamw_frozen_layer_unchanged():
    rng = np.random.default_rng(4)
    p = random_params(rng, DIMS)
    p.frozen = [True, False, False]
    before = p.copy()
    opt = AdamW()
    for _ in range(3):
        grads = [(rng.normal(size=w.shape), rng.normal(size=b.shape)) for w, b in zip(p.weights, p.biases)]
        apply_update(p, grads, opt, lr=1e-2)
    assert p.weights[0].tobytes() == before.weights[0].tobytes()
    assert p.biases[0].tobytes() == before.biases[0].tobytes()
    assert not np.array_equal(p.weights[1], before.weights[1])


def test_accumulation_equals_full_batch():
    rng = np.random.default_rng(5)
    p = random_params(rng, DIMS)
    inst = random_instance(rng, DIMS, batch=8)
    keys = ("nodes", "edges", "t", "target_nodes", "target_edges")

    def grad(sl, denom):
        args = [inst[k][sl] for k in keys]
        return loss_and_grad_batch(p, *args, 5.0, 1.0 / denom)[1]

    full = grad(slice(0, 8), 8)
    halves = [grad(slice(0, 4), 4), grad(slice(4, 8), 4)]
    p1, p2 = p.copy(), p.copy()
    apply_update(p1, full, AdamW(), lr=1e-3)
    apply_update(p2, halves, AdamW(), lr=1e-3, accumulation=2)
    for a, b in zip(p1.weights + p1.biases, p2.weights + p2.biases):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
    for (fa, fb), (ha, hb) in zip(full, average_grads(halves)):
        np.testing.assert_allclose(fa, ha, atol=1e-12)


def test_freeze_fraction():
    dims = DenoiserDims(5, 2, 3, 800, hidden=64, layers=4, pe_dim=8)
    p = init_params(dims, np.random.default_rng(0))
    assert freeze_fraction(p, 0.0) == 0.0 and not any(p.frozen)
    assert freeze_fraction(p, 1.0) == 1.0 and all(p.frozen)
    achieved = freeze_fraction(p, 0.75)
    sizes = p.layer_sizes()
    prefix = np.cumsum(sizes) / sum(sizes)
    k = sum(p.frozen)
    assert p.frozen == [True] * k + [False] * (len(sizes) - k)
    assert achieved == pytest.approx(prefix[k - 1]) and achieved >= 0.75
    assert k == 1 or prefix[k - 2] < 0.75
    assert p.frozen_fraction() == pytest.approx(achieved)


def test_outputs_finite_for_all_one_hot_inputs():
    rng = np.random.default_rng(6)
    p = random_params(rng, DIMS, w_std=3.0)
    nodes = np.array(np.meshgrid(*[range(3)] * 3)).reshape(3, -1).T
    edges = np.tile([0, 1, 2], (nodes.shape[0], 1))
    out = forward_batch(p, nodes, edges, 50)
    assert np.isfinite(out.node_probs).all() and np.isfinite(out.edge_probs).all()
