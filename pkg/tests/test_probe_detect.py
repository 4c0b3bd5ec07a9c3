import json

import numpy as np
import pytest
from oracles import layer_max_loops, map_mean_loops

from insidebias.data import GroupedDataset
from insidebias.detect import (
    BiasReport, activation_ratio, audit, bootstrap_ratio, few_shot_ratios, report_tables, resolve_layers, verdict,
)
from insidebias.errors import ConfigurationError, DegenerateModelError, DimensionError, InputError
from insidebias.probe import (
    ActivationProfile, group_profile, image_activations, layer_activation, mean_map_activation, normalize_profiles,
    profiles_to_csv, profiles_to_json,
)
from insidebias.tensor_core import Conv2D, Dense, Flatten, MaxPool2D, Model, Tensor
from insidebias.zoo import build_resnet, build_vgg


def profile(group, lam, model="m", n=5):
    layers = [f"l{i}" for i in range(len(lam))]
    return ActivationProfile(model, group, layers, dict(zip(layers, map(float, lam))), n)


def table2(a, b, c):
    return [profile("A", [a]), profile("B", [b]), profile("C", [c])]


# per-map and per-layer statistics

def test_mean_map_activation_hand_values(rng):
    assert mean_map_activation(np.zeros((4, 4))) == 0
    assert mean_map_activation(np.array([[1.0, 3.0], [5.0, 7.0]])) == 4
    m = rng.random((7, 7))
    assert abs(mean_map_activation(Tensor(m, dtype=np.float64)) - map_mean_loops(m)) <= 1e-7
    with pytest.raises(DimensionError):
        mean_map_activation(np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        mean_map_activation(np.zeros((2, 2, 2)))


def test_layer_activation(rng):
    maps = np.stack([np.full((3, 3), 0.2), np.full((3, 3), 0.7)])
    assert layer_activation(maps) == pytest.approx(0.7)
    single = rng.random((1, 5, 5))
    assert layer_activation(single) == pytest.approx(mean_map_activation(single[0]), abs=1e-12)
    eight = rng.random((8, 6, 5))
    assert abs(layer_activation(eight) - layer_max_loops(eight)) <= 1e-7
    assert layer_activation(eight, "mean") == pytest.approx(np.mean([map_mean_loops(a) for a in eight]))


def naive_group_lambda(model, images):
    """Loop over images and layers; one image at a time."""
    sums = {name: 0.0 for name in model.probe_points}
    for img in images:
        _, trace = model.forward(img[None], capture=True)
        for name in model.probe_points:
            maps = trace.maps(name)[0]
            sums[name] += layer_max_loops(maps)
    return {k: v / len(images) for k, v in sums.items()}


def test_group_profile_matches_naive_loops(rng):
    m = build_vgg(seed=2)
    images = rng.random((5, 28, 28, 3)).astype(np.float32)
    p = group_profile(m, images, "A", batch_size=2)
    ref = naive_group_lambda(m, images)
    for name in m.probe_points:
        assert abs(p.lam[name] - ref[name]) <= 1e-7 * max(1.0, ref[name]) + 1e-6


def test_group_profile_mean_of_one_and_duplicates(rng):
    m = build_resnet((32, 32, 3), 2, seed=1)
    img = rng.random((1, 32, 32, 3)).astype(np.float32)
    one = group_profile(m, img)
    names, values = image_activations(m, img)
    assert [one.lam[n] for n in names] == values[0].tolist()
    two = group_profile(m, np.concatenate([img, img]))
    assert two.lam == one.lam
    with pytest.raises(InputError):
        group_profile(m, img[:0])


def test_lambda_batch_invariant(rng):
    m = build_vgg(seed=4)
    images = rng.random((6, 28, 28, 3)).astype(np.float32)
    _, together = image_activations(m, images, batch_size=6)
    _, alone = image_activations(m, images, batch_size=1)
    np.testing.assert_allclose(together, alone, atol=1e-6, rtol=0)
    assert np.all(together >= 0)


def test_positive_homogeneity_bias_free():
    layers = [Conv2D("c1", 3, 4), MaxPool2D("p1"), Conv2D("c2", 4, 4), Flatten("f"), Dense("d", 4 * 4 * 4, 2, None)]
    m = Model(layers, (8, 8, 3), 2, "toy").init(0)
    for name, t in m.parameters():
        if name.endswith("bias"):
            t.data[...] = 0
    x = np.random.default_rng(0).random((3, 8, 8, 3))
    m64 = m.clone(np.float64)
    _, base = image_activations(m64, x)
    _, scaled = image_activations(m64, 2.5 * x)
    np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12)


def test_dense_probes_are_optional(rng):
    m = build_vgg(seed=0)
    names, _ = image_activations(m, rng.random((1, 28, 28, 3)), dense=True)
    assert names[-1] == "fc1" and names[:8] == m.probe_points


# normalization

def test_normalize_hand_cases():
    (p,) = normalize_profiles([profile("A", [1, 2, 4])])
    assert p.curve(True) == [0.25, 0.5, 1.0]
    (p,) = normalize_profiles([profile("A", [3, 3, 3])])
    assert p.curve(True) == [1.0, 1.0, 1.0]
    a, b = normalize_profiles([profile("A", [2, 4]), profile("B", [1, 4])])
    assert a.curve(True) == [0.5, 1.0] and b.curve(True) == [0.25, 1.0]


def test_normalize_shared_scope_and_errors():
    a, b = normalize_profiles([profile("A", [1, 2]), profile("B", [1, 4])])
    assert a.curve(True) == [0.25, 0.5] and max(b.curve(True)) == 1.0
    ga, gb = normalize_profiles([profile("A", [1, 2]), profile("B", [1, 4])], scope="group")
    assert ga.curve(True) == [0.5, 1.0]
    with pytest.raises(DegenerateModelError):
        normalize_profiles([profile("A", [0, 0])])
    with pytest.raises(InputError):
        normalize_profiles([profile("A", [1]), profile("B", [1], model="other")])
    with pytest.raises(ConfigurationError):
        normalize_profiles([profile("A", [1])], scope="layer")


def test_normalize_idempotent():
    once = normalize_profiles([profile("A", [2, 5]), profile("B", [1, 3])])
    twice = normalize_profiles(once)
    assert [p.lam_norm for p in once] == [p.lam_norm for p in twice]


def test_profile_serialization():
    ps = normalize_profiles([profile("A", [1, 2]), profile("B", [2, 2])])
    text = profiles_to_csv(ps)
    assert text.splitlines()[0] == "layer,group,lambda,lambda_norm,n"
    assert text.splitlines()[1] == "l0,A,1.0,0.5,5"
    assert json.loads(profiles_to_json(ps))[1]["lam_norm"] == {"l0": 1.0, "l1": 1.0}


# activation ratio and verdict

@pytest.mark.parametrize("lam, expected", [
    ((2.24, 3.25, 2.61), 0.69),  # VGG biased (B)
    ((2.49, 2.67, 2.51), 0.93),  # VGG unbiased
    ((2.33, 2.32, 2.34), 0.99),  # ResNet unbiased
    ((2.90, 2.89, 2.41), 0.83),
    ((2.82, 2.65, 2.53), 0.90),
    ((2.11, 2.47, 2.35), 0.85),
])
def test_published_ratios(lam, expected):
    assert abs(activation_ratio(dict(zip("ABC", lam))) - expected) <= 0.005


def test_ratio_edges():
    assert activation_ratio({"A": 2.0, "B": 2.0}) == 1.0
    with pytest.raises(DegenerateModelError):
        activation_ratio({"A": 0.0, "B": 0.0})
    with pytest.raises(InputError):
        activation_ratio({"A": 1.0})
    with pytest.raises(InputError):
        activation_ratio({"A": 1.0, "B": -1.0})


def test_verdict_table_rows():
    v = verdict(table2(2.49, 2.67, 2.51), tau=0.9)
    assert abs(v.ratio - 0.93) <= 0.005 and not v.biased
    assert v.min_group == "A" and v.max_group == "B"
    v = verdict(table2(2.24, 3.25, 2.61), tau=0.9)
    assert abs(v.ratio - 0.69) <= 0.005 and v.biased
    assert v.margin == pytest.approx(v.ratio - 0.9)
    assert not verdict(table2(2.24, 3.25, 2.61), tau=0.0).biased
    with pytest.raises(ConfigurationError):
        verdict(table2(1, 2, 3), tau=1.5)


def test_verdict_raw_equals_normalized():
    ps = normalize_profiles([profile("A", [1.0, 2.24]), profile("B", [3.0, 3.25]), profile("C", [0.5, 2.61])])
    raw = verdict(ps)
    norm = verdict(ps, normalized=True)
    assert abs(raw.ratio - norm.ratio) <= 1e-12


def test_layer_selectors():
    layers = ["c1", "c2", "c3"]
    assert resolve_layers(layers, "last") == ["c3"]
    assert resolve_layers(layers, "final-2") == ["c2", "c3"]
    assert resolve_layers(layers, "c1") == ["c1"]
    for bad in ("final-4", "final-0", "fc9"):
        with pytest.raises(ConfigurationError):
            resolve_layers(layers, bad)
    ps = [profile("A", [1, 2, 2]), profile("B", [2, 1, 4])]
    v = verdict(ps, layer="final-2")
    assert v.ratio == pytest.approx((0.5 + 0.5) / 2)
    assert set(v.per_layer) == {"l1", "l2"}


def test_ratio_properties():
    lam = {"A": 2.2, "B": 3.1, "C": 2.7}
    base = activation_ratio(lam)
    assert activation_ratio({k: 7.0 * v for k, v in lam.items()}) == base or abs(
        activation_ratio({k: 7.0 * v for k, v in lam.items()}) - base) <= 1e-15
    assert activation_ratio({"A": 2.2, "C": 2.7}) >= base
    assert activation_ratio({"B": 3.1, "C": 2.7}) >= base


# audit and reports

def grouped_toy(rng, n_per_group=4):
    images = (rng.random((3 * n_per_group, 32, 32, 3)) * 255).astype(np.uint8)
    groups = np.repeat(["A", "B", "C"], n_per_group)
    return GroupedDataset(images, np.arange(len(images)) % 2, [f"i{i}" for i in range(len(images))],
                          {"group": groups})


def test_audit_report_complete_and_deterministic(rng):
    m = build_resnet((32, 32, 3), 2, seed=0)
    ds = grouped_toy(rng)
    r1 = audit(m, ds, "group", tau=0.9, model_id="toy", n_bootstrap=20)
    r2 = audit(m, ds, "group", tau=0.9, model_id="toy", n_bootstrap=20)
    assert r1.to_json() == r2.to_json()
    d = json.loads(r1.to_json())
    assert d["schema"] == "insidebias.bias_report/1"
    assert [g["group"] for g in d["groups"]] == ["A", "B", "C"]
    assert all(g["n"] == 4 for g in d["groups"])
    assert d["verdict"]["layer"] == "block3"
    assert 0 < d["verdict"]["ratio"] <= 1
    assert BiasReport.from_dict(d).to_json() == r1.to_json()
    for g in r1.groups:
        assert 0 <= g.confidence <= 1 and 0 <= g.accuracy <= 1


def test_audit_groups_of_one(rng):
    m = build_vgg((32, 32, 3), 2, seed=0)
    r = audit(m, grouped_toy(rng, 1), n_bootstrap=0)
    assert [g.n for g in r.groups] == [1, 1, 1]
    assert r.bootstrap is None


def test_audit_needs_two_groups(rng):
    ds = grouped_toy(rng)
    one = ds.subset(np.flatnonzero(ds.criteria["group"] == "A"))
    with pytest.raises(InputError):
        audit(build_resnet((32, 32, 3), 2), one)


def test_report_tables_stable(rng):
    r = audit(build_resnet((32, 32, 3), 2, seed=0), grouped_toy(rng), n_bootstrap=0)
    t1, t2 = report_tables(r), report_tables(BiasReport.from_dict(json.loads(r.to_json())))
    assert t1 == t2
    assert t1["summary"].splitlines()[0] == "group,n,accuracy,confidence,lambda,activation_ratio"
    assert len(t1["curves"].splitlines()) == 1 + 3 * len(r.layers)


def test_few_shot_draws_disjoint_and_shared():
    labels = np.repeat(np.array(["red", "green", "blue"]), 60)
    values = np.arange(len(labels), dtype=float)[:, None] + 1
    ratios = few_shot_ratios(["c"], values, labels, ["red", "green", "blue"], 5, 10, seed=3)
    assert len(ratios) == 10 and all(0 < r <= 1 for r in ratios)
    assert ratios == few_shot_ratios(["c"], values, labels, ["red", "green", "blue"], 5, 10, seed=3)
    with pytest.raises(Exception):
        few_shot_ratios(["c"], values[:100], labels[:100], ["red", "green", "blue"], 5, 10)


def test_bootstrap_spread():
    vals = {"A": np.full((20, 1), 2.0), "B": np.full((20, 1), 4.0)}
    out = bootstrap_ratio(vals, 0, 50, seed=1)
    assert out["mean"] == pytest.approx(0.5) and out["std"] == pytest.approx(0.0)
