import json
import re

import numpy as np
import pytest

from ilseg import cli
from ilseg.ildist import LikelihoodModel, likelihood_volume
from ilseg.volgrid import read_svol

SMALL_SPEC = {"shape": [32, 32, 32]}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SMALL_SPEC))
    assert run("gen-phantoms", "--out", root / "data", "--spec", root / "spec.json", "--n", 10) == 0
    (root / "cfg.json").write_text(json.dumps({"steps": 2}))
    return root


def _outputs_match(run_dir):
    manifest = json.loads((run_dir / "run.json").read_text())
    for rel, entry in manifest["outputs"].items():
        assert cli.sha256(run_dir / rel) == entry["sha256"]
    return {rel: e["sha256"] for rel, e in manifest["outputs"].items()}


def test_help_documents_every_flag(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"gen-phantoms", "build-likelihood", "train", "predict", "evaluate", "compare",
                                "plot-likelihood"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)
        for flag in ("--out", "--config", "--seed", "--threads", "--precision", "--force"):
            assert flag in text


def test_gen_phantoms_deterministic_and_append_only(dataset, tmp_path):
    first = _outputs_match(dataset / "data")
    assert len([k for k in first if k.endswith(".svol")]) == 20
    assert run("gen-phantoms", "--out", tmp_path / "again", "--spec", dataset / "spec.json", "--n", 10) == 0
    assert _outputs_match(tmp_path / "again") == first
    assert run("gen-phantoms", "--out", tmp_path / "again", "--spec", dataset / "spec.json", "--n", 10) == 2
    assert run("gen-phantoms", "--out", tmp_path / "again", "--spec", dataset / "spec.json", "--n", 10,
               "--force") == 0


def test_build_likelihood_and_plot(dataset, tmp_path):
    out = tmp_path / "lik"
    assert run("build-likelihood", "--out", out, "--data", dataset / "data", "--fold", 0) == 0
    model = LikelihoodModel.load(out / "model.json")
    rows = (out / "likelihood.csv").read_text().strip().split("\n")
    assert rows[0] == "intensity,likelihood" and len(rows) > 10
    assert (out / "intensities.csv").read_text().startswith("bin_left,bin_right,count")
    manifest = json.loads((out / "run.json").read_text())
    assert len(manifest["model"]["cases"]) == 8 and manifest["inputs"]["manifest"]["sha256"]
    _outputs_match(out)

    plot = tmp_path / "plot"
    assert run("plot-likelihood", "--out", plot, "--model", out / "model.json", "--data", dataset / "data") == 0
    svg = (plot / "likelihood.svg").read_text()
    assert "<polyline" in svg and "<rect x=" in svg
    assert "Voxel count" in svg and "Likelihood" in svg
    value = re.search(r'id="max-annotation"[^>]*>max = ([0-9.]+)', svg).group(1)
    assert value == "1.0"
    assert model.bandwidth > 0


def test_train_predict_evaluate(dataset, tmp_path):
    tr = tmp_path / "train"
    assert run("train", "--out", tr, "--data", dataset / "data", "--config", dataset / "cfg.json",
               "--variant", "seg", "--fold", 1, "--preset", "desk") == 0
    _outputs_match(tr)
    ckpt = tr / "seg_fold1.snet"
    loss_lines = (tr / "seg_fold1_loss.csv").read_text().strip().split("\n")
    assert loss_lines[0] == "step,total,seg,il" and len(loss_lines) == 3

    vol = dataset / "data" / "case000_volume.svol"
    assert run("predict", "--out", tmp_path / "p_seg", "--ckpt", ckpt, "--in", vol) == 0
    assert run("predict", "--out", tmp_path / "p_pp", "--ckpt", ckpt, "--in", vol, "--variant", "seg_pp") == 0
    seg = read_svol(tmp_path / "p_seg" / "case000_volume_prob.svol").data
    pp = read_svol(tmp_path / "p_pp" / "case000_volume_prob.svol").data
    model = LikelihoodModel.load(tr / "likelihood_fold1.json")
    y_il = likelihood_volume(read_svol(vol), model).data
    np.testing.assert_array_equal(pp, seg * y_il)
    assert run("predict", "--out", tmp_path / "bad", "--ckpt", ckpt, "--in", vol, "--variant", "seg_il") == 2

    ev = tmp_path / "eval"
    assert run("evaluate", "--out", ev, "--data", dataset / "data", "--predictions", tmp_path / "p_seg",
               "--allow-missing", "--variant", "seg") == 0
    header = (ev / "metrics.csv").read_text().split("\n")[0]
    assert header.split(",") == cli.metrics.REPORT_COLUMNS
    assert "p-value" not in (ev / "metrics.md").read_text()
    assert run("evaluate", "--out", tmp_path / "ev2", "--data", dataset / "data", "--predictions",
               tmp_path / "p_seg") == 3


def test_compare_table_shape(dataset, tmp_path):
    out = tmp_path / "cmp"
    assert run("compare", "--out", out, "--data", dataset / "data", "--config", dataset / "cfg.json",
               "--preset", "desk") == 0
    lines = (out / "metrics.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    assert len(lines) == 6
    assert [c for c in header if c.startswith("p_")] == ["p_per_case", "p_per_tumor", "p_per_tumor_large"]
    assert [l.split(",")[0] for l in lines[1:]] == ["seg", "seg_pp", "seg_il_in", "seg_il", "seg_il_shifted"]
    split = json.loads((out / "split.json").read_text())["folds"]
    assert sorted(c for f in split for c in f) == [f"case{i:03d}" for i in range(10)]
    _outputs_match(out)


def test_exit_codes(dataset, tmp_path):
    assert run("train", "--out", tmp_path / "a", "--data", tmp_path / "missing") == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert run("train", "--out", tmp_path / "b", "--data", dataset / "data", "--config", bad) == 2
    bad.write_text(json.dumps({"subvolume": [30, 32, 32]}))
    assert run("train", "--out", tmp_path / "c", "--data", dataset / "data", "--config", bad) == 2
    assert run("train", "--out", tmp_path / "d", "--data", dataset / "data", "--fold", 9) == 2
    with pytest.raises(SystemExit) as exc:
        run("train", "--out", tmp_path / "e", "--precision", "f16")
    assert exc.value.code == 2

    corrupt = tmp_path / "corrupt.svol"
    corrupt.write_bytes(b"JUNKJUNKJUNK")
    ckpt_dir = tmp_path / "ck"
    assert run("train", "--out", ckpt_dir, "--data", dataset / "data", "--config", dataset / "cfg.json",
               "--variant", "seg", "--preset", "desk") == 0
    assert run("predict", "--out", tmp_path / "f", "--ckpt", ckpt_dir / "seg_fold0.snet", "--in", corrupt) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(dataset, tmp_path):
    cfg = tmp_path / "nan.json"
    cfg.write_text(json.dumps({"steps": 2, "intensity_scale": 1e-300}))
    out = tmp_path / "nan"
    assert run("train", "--out", out, "--data", dataset / "data", "--config", cfg, "--variant", "seg",
               "--preset", "desk") == 4
    snapshot = json.loads((out / "failure.json").read_text())
    assert "step" in snapshot
    assert json.loads((out / "run.json").read_text())["status"] == "numerical-failure"
