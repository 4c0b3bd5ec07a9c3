import json

import numpy as np
import pytest

from insidebias.data import GroupedDataset, generate_grouped, write_manifest
from insidebias.errors import ConfigurationError
from insidebias.harness import evaluate, load_config
from insidebias.harness.cli import main
from insidebias.harness.config import config_from_dict
from insidebias.harness.evaluate import summarize
from insidebias.harness.study import digit_runs, grouped_runs, parse_digit_bias, run_grouped_study

TINY = """
[study]
task = "grouped_binary"
name = "tiny"
seed = 3
[grouped]
archs = ["vgg_small"]
favored = ["A"]
total_n = 60
test_per_group = 50
[train]
epochs = 1
batch_size = 20
[eval]
n_bootstrap = 10
"""


def balanced(n_per_group=10):
    groups = np.repeat(["A", "B", "C"], n_per_group)
    task = np.tile([0, 1], len(groups) // 2)
    return GroupedDataset(np.zeros((len(groups), 2, 2, 3), np.uint8), task, [f"x{i}" for i in range(len(groups))],
                          {"group": groups}, {"group": ["A", "B", "C"]})


def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


# evaluation arithmetic

def test_perfect_stub():
    ds = balanced()
    ev = evaluate(ds.task.copy(), ds, "group")
    assert ev.per_group == {"A": 1.0, "B": 1.0, "C": 1.0}
    assert ev.std == 0 and ev.avg == 1 and ev.overall == 1


def test_constant_class_stub():
    ds = balanced()
    ev = evaluate(np.zeros(len(ds), int), ds, "group")
    assert all(v == 0.5 for v in ev.per_group.values())
    assert ev.confusion["A"] == [[5, 0], [5, 0]]


def test_table_row_recomputed():
    avg, std = summarize({"A": 95.72, "B": 94.16, "C": 94.68})
    assert round(avg, 2) == 94.85
    assert round(std, 2) == 0.65  # population std


def test_empty_group_warns():
    ds = balanced()
    keep = ds.criteria["group"] != "C"
    sub = GroupedDataset(ds.images[keep], ds.task[keep], ds.ids[keep], {"group": ds.criteria["group"][keep]},
                         {"group": ["A", "B", "C"]})
    ev = evaluate(sub.task.copy(), sub, "group")
    assert set(ev.per_group) == {"A", "B"}
    assert any("'C'" in w for w in ev.warnings)


# config

def test_config_defaults_and_errors(tmp_path):
    cfg = config_from_dict({})
    assert cfg.task == "digit" and cfg.train.epochs == 5 and cfg.eval.tau == 0.9
    grouped = config_from_dict({"study": {"task": "grouped_binary"}})
    assert grouped.train.epochs == 16 and grouped.train.batch_size == 32
    with pytest.raises(ConfigurationError):
        config_from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"bogus": {}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"study": {"scale": "huge"}})
    bad = tmp_path / "bad.toml"
    bad.write_text("[study\n")
    with pytest.raises(ConfigurationError):
        load_config(bad)
    assert cfg.digest() == config_from_dict({}).digest()
    assert cfg.replace(seed=1).digest() != cfg.digest()


def test_run_lists():
    assert parse_digit_bias("7:blue") == (7, "blue")
    with pytest.raises(ConfigurationError):
        parse_digit_bias("7-blue")
    full = config_from_dict({"digit": {"biased": "all"}})
    ids = [s.run_id for s in digit_runs(full)]
    assert len(ids) == 31 and ids[-1] == "unbiased" and "digit9-blue-0.9" in ids
    g = config_from_dict({"study": {"task": "grouped_binary"}})
    assert [s.run_id for s in grouped_runs(g)] == [
        f"{a}-{b}" for a in ("vgg_small", "resnet_small") for b in ("biased-A", "biased-B", "biased-C", "unbiased")
    ]


# CLI

def test_missing_config_is_usage_error(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["train", "--config", "missing.toml"]) == 2
    assert "does not exist" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_bad_arguments_exit_2(capsys):
    assert main(["audit"]) == 2
    assert main(["study", "colored-mnist", "--scale", "huge"]) == 2


@pytest.fixture(scope="module")
def tiny_study(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("study")
    path = tiny_config(tmp)
    assert main(["study", "grouped", "--config", str(path), "--output-dir", str(tmp / "out")]) == 0
    return tmp, path


def test_cli_study_artifacts(tiny_study):
    tmp, _ = tiny_study
    root = tmp / "out" / "tiny"
    assert (root / "manifest.json").is_file()
    for run in ("vgg_small-biased-A", "vgg_small-unbiased"):
        names = sorted(p.name for p in (root / run).iterdir())
        assert names == ["bias_report.json", "curves.csv", "eval.json", "manifest.json", "weights.bin"]
        manifest = json.loads((root / run / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert str(tmp) not in (root / run / "manifest.json").read_text()


def test_cli_study_reuses(tiny_study, capsys):
    tmp, path = tiny_study
    weights = tmp / "out" / "tiny" / "vgg_small-unbiased" / "weights.bin"
    before = weights.stat().st_mtime_ns
    assert main(["study", "grouped", "--config", str(path), "--runs", "vgg_small-unbiased",
                 "--output-dir", str(tmp / "out")]) == 0
    assert weights.stat().st_mtime_ns == before
    assert main(["study", "grouped", "--config", str(path), "--runs", "nope"]) == 2


def test_cli_report_stable(tiny_study, capsys):
    tmp, _ = tiny_study
    report = tmp / "out" / "tiny" / "vgg_small-biased-A" / "bias_report.json"
    a, b = tmp / "a.csv", tmp / "b.csv"
    assert main(["report", "--in", str(report), "--out", str(a)]) == 0
    assert main(["report", "--in", str(report), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "group,n,accuracy,confidence,lambda,activation_ratio"
    assert main(["report", "--in", str(report), "--format", "json", "--out", str(a)]) == 0
    assert a.read_text() == report.read_text()
    assert main(["report", "--in", str(tmp / "nothing.json")]) == 2


def test_cli_audit_and_evaluate(tiny_study, capsys):
    tmp, path = tiny_study
    test = generate_grouped(10, "test", 0, id_offset=10 ** 6)
    manifest = write_manifest(test, tmp / "manifest")
    model = tmp / "out" / "tiny" / "vgg_small-unbiased" / "weights.bin"
    out = tmp / "audit.json"
    code = main(["audit", "--config", str(path), "--model", str(model), "--manifest", str(manifest), "--out", str(out)])
    report = json.loads(out.read_text())
    assert code == (3 if report["verdict"]["biased"] else 0)
    for tau, expected in ((0.0, 0), (1.0, 3)):
        assert main(["audit", "--model", str(model), "--manifest", str(manifest), "--tau", str(tau),
                     "--out", str(out)]) == expected
    assert main(["audit", "--model", str(model), "--manifest", str(manifest), "--tau", "1.5"]) == 2
    ev_out = tmp / "eval.json"
    assert main(["evaluate", "--model", str(model), "--manifest", str(manifest), "--out", str(ev_out)]) == 0
    assert set(json.loads(ev_out.read_text())["per_group"]) == {"A", "B", "C"}


def test_study_in_process_matches_cli(tiny_study):
    tmp, path = tiny_study
    result = run_grouped_study(load_config(path).replace(output_dir=str(tmp / "out")))
    assert all(r.reused for r in result.runs)
    assert result["vgg_small-unbiased"].evaluation.best_group() in {"A", "B", "C"}


def test_cli_defaults_follow_task():
    from insidebias.harness.cli import _config, build_parser

    args = build_parser().parse_args(["study", "grouped", "--seed", "4"])
    cfg = _config(args, "grouped_binary")
    assert cfg.task == "grouped_binary" and cfg.seed == 4 and cfg.train.epochs == 16
