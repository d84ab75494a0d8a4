import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference

from gridexplore.neuralnet import (
    Categorical,
    backward,
    checkpoint_bytes,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    param_shapes,
    parse_checkpoint,
    save_checkpoint,
)


def random_obs(rng, n):
    maps = rng.choice([0.0, 128 / 255, 1.0], size=(n, 2, 24, 24))
    aux = rng.random((n, 32))
    return maps, aux


def test_shapes_and_count():
    p = init_params(0)
    assert {k: v.shape for k, v in p.items()} == param_shapes()
    assert param_count(p) == 174_708


def test_zero_network_is_uniform():
    p = {k: np.zeros_like(v) for k, v in init_params(0).items()}
    maps, aux = random_obs(np.random.default_rng(0), 5)
    logits, values, _ = forward(p, maps, aux)
    assert np.all(logits == 0) and np.all(values == 0)
    assert np.allclose(Categorical(logits).probs, 1 / 3)


def test_batching_and_duplicates():
    p = init_params(1)
    maps, aux = random_obs(np.random.default_rng(1), 6)
    maps[3], aux[3] = maps[0], aux[0]
    logits, values, _ = forward(p, maps, aux)
    assert logits.shape == (6, 3) and values.shape == (6,)
    assert np.array_equal(logits[0], logits[3]) and values[0] == values[3]
    perm = np.array([5, 2, 0, 4, 1, 3])
    pl, pv, _ = forward(p, maps[perm], aux[perm])
    assert np.allclose(pl, logits[perm], rtol=0, atol=1e-12) and np.allclose(pv, values[perm], rtol=0, atol=1e-12)
    for i in range(6):
        li, vi, _ = forward(p, maps[i : i + 1], aux[i : i + 1])
        assert np.allclose(li[0], logits[i], atol=1e-12) and abs(vi[0] - values[i]) < 1e-12


def test_shape_mismatch():
    p = init_params(0)
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 2, 20, 20)), np.zeros((2, 32)))
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 2, 24, 24)), np.zeros((2, 31)))
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 2, 24, 24)), np.zeros((3, 32)))


def test_value_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    p = init_params(rng)
    maps, aux = random_obs(rng, 1)
    _, values, cache = forward(p, maps, aux)
    g = backward(p, cache, np.zeros((1, 3)), np.ones(1))
    for name, arr in p.items():
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            num = central_difference(lambda: float(forward(p, maps, aux)[1][0]), arr, idx)
            assert abs(num - g[name][idx]) <= 1e-4 * max(abs(num), abs(g[name][idx]), 1e-6), name


def test_loss_independent_of_block_has_zero_gradient():
    rng = np.random.default_rng(4)
    p = init_params(rng)
    maps, aux = random_obs(rng, 4)
    _, _, cache = forward(p, maps, aux)
    g = backward(p, cache, np.zeros((4, 3)), np.ones(4))
    assert not g["pi_w"].any() and not g["pi_b"].any()
    g = backward(p, cache, rng.normal(size=(4, 3)), np.zeros(4))
    assert not g["v_w"].any() and not g["v_b"].any()


def test_batch_gradient_is_sum_of_sample_gradients():
    rng = np.random.default_rng(5)
    p = init_params(rng)
    maps, aux = random_obs(rng, 3)
    dl, dv = rng.normal(size=(3, 3)), rng.normal(size=3)
    _, _, cache = forward(p, maps, aux)
    total = backward(p, cache, dl, dv)
    parts = []
    for i in range(3):
        _, _, c = forward(p, maps[i : i + 1], aux[i : i + 1])
        parts.append(backward(p, c, dl[i : i + 1], dv[i : i + 1]))
    for k in p:
        assert np.allclose(total[k], sum(q[k] for q in parts), rtol=1e-10, atol=1e-12)


def test_categorical_examples():
    d = Categorical(np.zeros(3))
    assert d.entropy()[0] == pytest.approx(math.log(3), abs=1e-12)
    d = Categorical(np.array([10.0, 0.0, 0.0]))
    assert d.probs[0, 0] == pytest.approx(math.exp(10) / (math.exp(10) + 2), abs=1e-12)
    rng = np.random.default_rng(0)
    n = 200_000
    big = Categorical(np.tile([10.0, 0.0, 0.0], (n, 1)))
    freq = (big.sample(rng) == 0).mean()
    assert abs(freq - 0.99991) < 5 * math.sqrt(0.99991 * 0.00009 / n)


def test_sampling_deterministic_and_unbiased():
    logits = np.tile([0.3, -1.0, 1.2], (50_000, 1))
    a = Categorical(logits).sample(np.random.default_rng(9))
    b = Categorical(logits).sample(np.random.default_rng(9))
    assert np.array_equal(a, b)
    p = Categorical(logits[:1]).probs[0]
    freq = np.bincount(a, minlength=3) / len(a)
    assert np.all(np.abs(freq - p) < 5 * np.sqrt(p * (1 - p) / len(a)))


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-100, 100), st.integers(0, 2))
def test_log_prob_shift_invariant(logits, c, a):
    x = np.array(logits)
    assert Categorical(x).log_prob([a])[0] == pytest.approx(Categorical(x + c).log_prob([a])[0], abs=1e-9)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_numerically_stable(logits):
    d = Categorical(np.array(logits))
    assert np.isfinite(d.log_prob([0])).all()
    assert np.all(np.isfinite(d.log_probs)) and np.isfinite(d.entropy()).all()
    assert abs(d.probs.sum() - 1) < 1e-6


def test_init_deterministic():
    a, b = init_params(7), init_params(7)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert all(not v.any() for k, v in a.items() if k.endswith("_b"))


def test_orthogonal_init():
    p = init_params(11)
    gains = {"pi_w": 0.01, "v_w": 1.0}
    for k, w in p.items():
        if k.endswith("_b"):
            continue
        m = w.reshape(-1, w.shape[-1]) / gains.get(k, math.sqrt(2))
        gram = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
        assert np.allclose(gram, np.eye(gram.shape[0]), atol=1e-6), k


def test_initial_policy_near_uniform():
    p = init_params(12)
    maps, aux = random_obs(np.random.default_rng(12), 1000)
    logits, _, _ = forward(p, maps, aux)
    assert Categorical(logits).probs.max() < 0.40


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dtype=st.sampled_from(["float64", "float32"]))
def test_checkpoint_round_trip(seed, dtype, tmp_path_factory):
    p = {k: v.astype(dtype) for k, v in init_params(seed).items()}
    path = tmp_path_factory.mktemp("ckpt") / "a.ckpt"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert list(q) == list(p) and all(np.array_equal(p[k], q[k]) and q[k].dtype == p[k].dtype for k in p)
    assert checkpoint_bytes(q) == path.read_bytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        parse_checkpoint(b"not a checkpoint")
    good = checkpoint_bytes(init_params(0))
    with pytest.raises(ValueError):
        parse_checkpoint(good + b"x")
