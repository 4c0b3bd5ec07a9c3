"""Property-based checks of the bias statistics, group arithmetic and conv kernel."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from insidebias.data import group_counts
from insidebias.detect import activation_ratio, verdict
from insidebias.probe import ActivationProfile, batch_layer_activation, layer_activation, normalize_profiles
from insidebias.tensor_core.ops import conv2d_forward
from oracles import conv2d_loops, layer_max_loops

positive = st.floats(0.01, 100, allow_nan=False)
lam_lists = st.lists(positive, min_size=2, max_size=6)


@given(lam_lists, st.floats(0.1, 10), st.randoms())
def test_ratio_bounded_scale_and_order_invariant(values, scale, rnd):
    r = activation_ratio({i: v for i, v in enumerate(values)})
    assert 0 < r <= 1
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert np.isclose(activation_ratio({i: v * scale for i, v in enumerate(shuffled)}), r, rtol=1e-12)


@given(positive, st.integers(2, 5))
def test_equal_groups_give_one(v, k):
    assert activation_ratio({i: v for i in range(k)}) == 1.0


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(0, 10)))
def test_layer_activation_matches_loops(maps):
    assert abs(layer_activation(maps) - layer_max_loops(maps)) <= 1e-7


@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(0, 5, width=32)))
def test_batched_statistic_matches_single_image(block):
    batched = batch_layer_activation(block)
    for i in range(len(block)):
        assert abs(batched[i] - layer_activation(block[i].transpose(2, 0, 1))) <= 1e-6


@given(st.lists(st.lists(positive, min_size=3, max_size=3), min_size=2, max_size=4))
def test_model_scope_normalization(curves):
    layers = ["l1", "l2", "l3"]
    profiles = [ActivationProfile("m", f"g{i}", layers, dict(zip(layers, c)), 1) for i, c in enumerate(curves)]
    normed = normalize_profiles(profiles)
    assert max(max(p.lam_norm.values()) for p in normed) == 1.0
    # one shared divisor leaves the ratio unchanged
    a = verdict(normed, normalized=True).ratio
    b = verdict(normed).ratio
    assert np.isclose(a, b, rtol=1e-12)


@given(st.integers(3, 100_000), st.sampled_from(["A", "B", "C"]))
def test_group_counts_sum_and_floor(total, favored):
    counts = group_counts(["A", "B", "C"], favored, [0.9, 0.05, 0.05], total)
    assert sum(counts.values()) == total
    for g, c in counts.items():
        if g != favored:
            assert c == int(np.floor(0.05 * total + 1e-9))
    balanced = group_counts(["A", "B", "C"], None, "balanced", total)
    assert sum(balanced.values()) == total and max(balanced.values()) - min(balanced.values()) <= 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.sampled_from([1, 3]), st.integers(1, 2),
       st.integers(0, 1), st.integers(0, 2 ** 31))
def test_conv_matches_loops(cin, cout, size, k, stride, padding, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(cin, size, size))
    w = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=cout)
    out, _ = conv2d_forward(x.transpose(1, 2, 0)[None], w, b, stride, padding)
    np.testing.assert_allclose(out[0].transpose(2, 0, 1), conv2d_loops(x, w, b, stride, padding), atol=1e-9)
