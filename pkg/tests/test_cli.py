import json
import subprocess
import sys

import numpy as np
import pytest

from reidspace import cli
from reidspace.corpus import load_corpus
from reidspace.subspace import apply_selection, load_selection

SYNTH_FLAGS = ["--dim", "32", "--identities", "30", "--gallery", "6", "--probes", "2",
               "--id-dim", "12", "--nuis-var", "8.0", "--nuis-dim", "3",
               "--noise-var", "0.001", "--attr", "tag:2:0.8", "--offset-norm", "1.0",
               "--dataset", "demo", "--seed", "3"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth corpus pushed through every subcommand."""
    root = tmp_path_factory.mktemp("cli")
    steps = {}

    def run(name, argv):
        code = cli.main(argv)
        assert code == 0, f"{name} exited {code}"

    synth_dir = root / "synth"
    run("synth", ["synth", *SYNTH_FLAGS, "--out", str(synth_dir)])
    corpus_path = synth_dir / "corpus.emb1"
    steps["corpus"] = corpus_path

    eval_dir = root / "eval"
    run("eval", ["eval", "--corpus", str(corpus_path), "--ks", "1,5",
                 "--far", "0.05", "--out", str(eval_dir)])
    steps["eval"] = eval_dir

    pca_dir = root / "pca"
    run("pca-eval", ["pca-eval", "--corpus", str(corpus_path), "--fit-on", "templates",
                     "--templated", "--out", str(pca_dir)])
    steps["pca"] = pca_dir

    sweep_dir = root / "sweep"
    run("oracle-sweep", ["oracle-sweep", "--corpus", str(corpus_path), "--far", "0.05",
                         "--workers", "2", "--out", str(sweep_dir)])
    steps["sweep"] = sweep_dir

    select_dir = root / "select"
    run("select", ["select", "--corpus", str(corpus_path), "--out", str(select_dir)])
    steps["select"] = select_dir

    applied_dir = root / "applied"
    run("eval --selection", ["eval", "--corpus", str(corpus_path),
                             "--selection", str(select_dir / "selection.json"),
                             "--out", str(applied_dir)])
    steps["applied"] = applied_dir

    probe_dir = root / "probe"
    run("probe", ["probe", "--corpus", str(corpus_path), "--attribute", "tag",
                  "--out", str(probe_dir)])
    steps["probe"] = probe_dir
    return steps


def test_pipeline_writes_expected_files(pipeline):
    expected = {
        "corpus": [],
        "eval": ["report.json", "report.csv", "report.png"],
        "pca": ["report.json", "report.csv", "report.png"],
        "sweep": ["sweep.csv", "sweep.json", "sweep.png"],
        "select": ["selection.json", "selection.png"],
        "applied": ["report.json", "report.csv", "report.png"],
        "probe": ["probe.json", "probe.png", "model.emb1"],
    }
    for step, names in expected.items():
        base = pipeline[step] if step != "corpus" else pipeline["corpus"].parent
        for name in names:
            assert (base / name).is_file(), f"{step}/{name} missing"
    assert pipeline["corpus"].is_file()
    assert (pipeline["corpus"].parent / "ground_truth.json").is_file()


def test_synth_honors_flags(pipeline):
    corpus = load_corpus(pipeline["corpus"])
    assert corpus.dimension == 32
    assert len(corpus.records) == 30 * 8
    assert corpus.records[0].dataset == "demo"
    assert corpus.records[0].attributes.keys() == {"tag"}
    truth = json.loads((pipeline["corpus"].parent / "ground_truth.json").read_text(encoding="utf-8"))
    assert truth["config"]["seed"] == 3
    assert truth["config"]["nuisance_dim"] == 3


def test_eval_report_embeds_config(pipeline):
    report = json.loads((pipeline["eval"] / "report.json").read_text(encoding="utf-8"))
    assert report["config"]["command"] == "eval"
    assert report["config"]["ks"] == [1, 5]
    assert report["config"]["far_targets"] == [0.05]
    assert report["config"]["corpus"] == str(pipeline["corpus"])
    assert not report["templated"]
    assert 0.0 <= report["auc"] <= 1.0
    csv_lines = (pipeline["eval"] / "report.csv").read_text(encoding="utf-8").splitlines()
    assert csv_lines[0] == "metric,value"
    assert any(line.startswith("rank5,") for line in csv_lines)


def test_sweep_curve_has_interior_maximum(pipeline):
    lines = (pipeline["sweep"] / "sweep.csv").read_text(encoding="utf-8").strip().splitlines()
    assert lines[0].startswith("k,rank1,map,tar_far_0.05,auc")
    ks = [int(line.split(",")[0]) for line in lines[1:]]
    rank1 = [float(line.split(",")[1]) for line in lines[1:]]
    assert ks == list(range(len(ks)))
    best = int(np.argmax(rank1))
    assert 0 < best < len(rank1) - 1  # the inverted U: interior peak
    assert max(rank1) > rank1[0]
    assert max(rank1) > rank1[-1]

    blob = json.loads((pipeline["sweep"] / "sweep.json").read_text(encoding="utf-8"))
    assert blob["kind"] == "oracle_sweep"
    assert blob["raw_baseline"]["rank1"] <= max(rank1)
    assert [row["rank1"] for row in blob["rows"]] == rank1


def test_cli_selection_matches_library_apply(pipeline):
    corpus = load_corpus(pipeline["corpus"])
    selection = load_selection(pipeline["select"] / "selection.json")
    expected = apply_selection(selection, corpus, "cosine", (1, 20), (1e-3,))
    got = json.loads((pipeline["applied"] / "report.json").read_text(encoding="utf-8"))
    assert got["map"] == expected.mean_ap
    assert got["auc"] == expected.auc
    assert dict(map(tuple, got["cmc"])) == dict(expected.cmc)
    assert got["subspace_descriptor"] == f"alg2-k={selection.k_star}"
    sel_blob = json.loads((pipeline["select"] / "selection.json").read_text(encoding="utf-8"))
    assert sel_blob["kind"] == "subspace_selection"
    assert sel_blob["config"]["command"] == "select"


def test_probe_outputs(pipeline):
    blob = json.loads((pipeline["probe"] / "probe.json").read_text(encoding="utf-8"))
    assert blob["kind"] == "probe_report"
    assert blob["attribute"] == "tag"
    assert 0.0 <= blob["accuracy"] <= 1.0
    assert blob["config"]["command"] == "probe"
    from reidspace.probes import load_probe_model
    model = load_probe_model(pipeline["probe"] / "model.emb1")
    assert model.classes == ("0", "1")


def test_exit_codes(pipeline, tmp_path):
    corpus = str(pipeline["corpus"])
    sel = str(pipeline["select"] / "selection.json")
    out = str(tmp_path / "x")
    assert cli.main(["eval", "--corpus", str(tmp_path / "missing.emb1"), "--out", out]) == 2
    assert cli.main(["eval", "--corpus", corpus, "--selection", sel,
                     "--exclude-same-dataset", "--out", out]) == 2
    assert cli.main(["eval", "--corpus", corpus, "--templated",
                     "--exclude-same-dataset", "--out", out]) == 2
    # reading EMB1 bytes as csv is a parse failure
    assert cli.main(["eval", "--corpus", corpus, "--format", "csv", "--out", out]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--corpus", corpus, "--ks", "0,5", "--out", out])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--attr", "bad-spec", "--out", out])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 2


def test_help_smoke(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for command in ("synth", "eval", "pca-eval", "oracle-sweep", "select", "probe"):
        assert command in text


def test_invalid_measure_rejected(pipeline, tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["eval", "--corpus", str(pipeline["corpus"]), "--measure", "dot",
                  "--out", str(tmp_path / "x")])


def test_subprocess_rerun_is_byte_identical(tmp_path):
    def synth_into(name):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "reidspace.cli", "synth", *SYNTH_FLAGS, "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        return out

    a, b = synth_into("a"), synth_into("b")
    for name in ("corpus.emb1", "corpus.emb1.meta.jsonl", "ground_truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
