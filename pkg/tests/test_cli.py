import csv
import json
import shutil

import numpy as np
import pytest
import yaml

from pcl_ensemble.cli import main
from pcl_ensemble.corpus import write_task_tsv
from pcl_ensemble.ensemble import PredictionSet, evaluate_at, optimize_threshold
from pcl_ensemble.text_prep import write_text_vectors
from toy import toy_separable


def write_config(root, **overrides):
    cfg = {
        "seed": 0,
        "output_root": "out",
        "data": {"corpus": "corpus.tsv", "test": "test.tsv", "test_schema": {"label": None}},
        "splits": {"mode": "stratified", "fractions": {"train": 0.75, "dev": 0.25}, "seed": 0},
        "text": {"max_len": 16},
        "embeddings": {"random_dim": 16,
                       "sources": {"glove_word": {"path": "vectors.txt", "format": "text-vec"},
                                   "google_news": {"format": "word2vec-binary"},
                                   "glove_twitter": {}, "fasttext": {}}},
        "grid": {
            "cnn": {"seeds": [0, 1], "embeddings": ["glove_word"], "max_epochs": 3, "batch_size": 8},
            "bilstm": {"seeds": [0, 1], "embeddings": ["glove_word"], "hidden_sizes": [8],
                       "max_epochs": 3, "batch_size": 8},
            "transformer": None,
        },
        "ensembles": {"solo": {"top": 1}, "pair": {"top": 2}, "huge": {"top": 9}},
        "sweep": {"n_max": 3},
    }
    cfg.update(overrides)
    (root / "config.yaml").write_text(yaml.safe_dump(cfg))
    return root / "config.yaml"


def make_project(root):
    root.mkdir(parents=True, exist_ok=True)
    write_task_tsv(toy_separable(48, seed=3).records, root / "corpus.tsv")
    with (root / "test.tsv").open("w") as fh:
        for r in toy_separable(8, seed=9).records:
            fh.write(f"t{r.par_id}\t{r.art_id}\t{r.keyword}\t{r.country_code}\t{r.text}\n")
    rng = np.random.default_rng(0)
    write_text_vectors({w: rng.normal(size=16).tolist() for w in ["poor", "souls", "city", "the"]},
                       root / "vectors.txt")
    return write_config(root)


def run(config, *args):
    return main([*args, "--config", str(config)])


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    root = tmp_path_factory.mktemp("proj")
    config = make_project(root)
    assert run(config, "prepare") == 0
    assert run(config, "grid") == 0
    return root, config


def test_prepare_writes_splits_and_coverage(project):
    root, _ = project
    data = root / "out" / "data"
    assert {p.name for p in data.iterdir()} >= {"train.tsv", "dev.tsv", "test.tsv", "vocab.txt",
                                                 "coverage.json", "splits.json"}
    coverage = json.loads((data / "coverage.json").read_text())
    assert set(coverage) == {"google_news", "glove_word", "glove_twitter", "fasttext"}
    assert 0 < coverage["glove_word"]["coverage"] < 1
    assert coverage["fasttext"]["coverage"] is None
    splits = json.loads((data / "splits.json").read_text())["splits"]
    assert (splits["train"]["records"], splits["dev"]["records"], splits["test"]["records"]) == (36, 12, 8)
    assert splits["test"]["positives"] is None


def test_prepare_is_byte_identical_on_rerun(tmp_path):
    config = make_project(tmp_path)
    assert run(config, "prepare") == 0
    data = tmp_path / "out" / "data"
    before = {p.name: p.read_bytes() for p in data.iterdir()}
    assert run(config, "prepare") == 0
    assert {p.name: p.read_bytes() for p in data.iterdir()} == before


def test_prepare_missing_corpus_exits_2(tmp_path, capsys):
    config = make_project(tmp_path)
    (tmp_path / "corpus.tsv").unlink()
    assert run(config, "prepare") == 2
    assert "corpus.tsv" in capsys.readouterr().err


def test_invalid_config_key_exits_2(tmp_path, capsys):
    make_project(tmp_path)
    config = write_config(tmp_path, text={"max_len": 0})
    assert run(config, "prepare") == 2
    assert "text.max_len" in capsys.readouterr().err


def test_grid_list(project, capsys):
    _, config = project
    assert run(config, "grid", "--list") == 0
    assert capsys.readouterr().out.split() == [
        "cnn-glove_word-lr0.001-s0", "cnn-glove_word-lr0.001-s1",
        "bilstm-glove_word-h8-lr0.001-s0", "bilstm-glove_word-h8-lr0.001-s1"]


def test_desk_grid_registers_four_runs(project):
    root, _ = project
    lines = (root / "out" / "runs" / "registry.jsonl").read_text().splitlines()
    assert len(lines) == 4
    for line in lines:
        rec = json.loads(line)
        run_dir = root / "out" / "runs" / rec["run_id"]
        assert (run_dir / "checkpoint.pt").is_file() and (run_dir / "metrics.csv").is_file()


def test_grid_resume_trains_nothing(project, capsys):
    root, config = project
    registry = root / "out" / "runs" / "registry.jsonl"
    before = registry.read_text()
    assert run(config, "grid", "--resume") == 0
    assert "trained 0 runs" in capsys.readouterr().out
    assert registry.read_text() == before


def test_train_unknown_run_exits_2(project):
    _, config = project
    assert run(config, "train", "--run", "nope") == 2


def test_ensemble_of_one_equals_member_tuned_metrics(project):
    root, config = project
    assert run(config, "ensemble", "solo") == 0
    out = root / "out" / "ensembles" / "solo"
    spec = json.loads((out / "spec.json").read_text())
    (member,) = spec["members"]
    dev_labels = {}
    with (root / "out" / "data" / "dev.tsv").open() as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            dev_labels[row["par_id"]] = int(int(row["label"]) >= 2)
    member_preds = PredictionSet.read_tsv(root / "out" / "runs" / member / "dev_predictions.tsv", member, "dev")
    t, f1 = optimize_threshold(member_preds, dev_labels)
    assert spec["threshold"] == t
    metrics = json.loads((out / "dev_metrics.json").read_text())
    expected = evaluate_at(member_preds, dev_labels, t)
    assert (metrics["precision"], metrics["recall"], metrics["f1"]) == (
        expected.precision, expected.recall, f1)
    # test labels are absent: predictions only
    assert (out / "test_predictions.tsv").is_file() and not (out / "test_metrics.json").exists()


def test_ensemble_pair_members_csv(project):
    root, config = project
    assert run(config, "ensemble", "pair") == 0
    rows = list(csv.DictReader((root / "out" / "ensembles" / "pair" / "members.csv").open()))
    assert len(rows) == 2
    assert float(rows[0]["best_dev_f1"]) >= float(rows[1]["best_dev_f1"])


def test_ensemble_registry_too_small_exits_3(project, capsys):
    _, config = project
    assert run(config, "ensemble", "huge") == 3
    assert "registry holds 4" in capsys.readouterr().err


def test_unknown_ensemble_exits_2(project):
    _, config = project
    assert run(config, "ensemble", "nope") == 2


def test_sweep_writes_csv_and_figure(project):
    root, config = project
    assert run(config, "sweep") == 0
    out = root / "out" / "sweep"
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "n,precision,recall,f1" and [ln.split(",")[0] for ln in lines[1:]] == ["1", "2", "3"]
    assert (out / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_sweep_too_large_exits_3(project):
    _, config = project
    assert run(config, "sweep", "--n-max", "10") == 3


def test_analyze_dev(project):
    root, config = project
    assert run(config, "ensemble", "solo") == 0
    assert run(config, "analyze", "solo", "--split", "dev") == 0
    out = root / "out" / "analysis" / "solo-dev"
    rows = list(csv.DictReader((out / "errors_by_keyword.csv").open()))
    total = rows[-1]
    assert total["keyword"] == "TOTAL"
    assert sum(int(r["fp"]) for r in rows[:-1]) == int(total["fp"])
    assert sum(int(r["total"]) for r in rows[:-1]) == int(total["total"]) == 12
    metrics = json.loads((out / "metrics.json").read_text())
    n_fp = len((out / "false_positives.tsv").read_text().splitlines()) - 1
    n_fn = len((out / "false_negatives.tsv").read_text().splitlines()) - 1
    assert (n_fp, n_fn) == (metrics["fp"], metrics["fn"]) == (int(total["fp"]), int(total["fn"]))


def test_analyze_run_id_source(project):
    root, config = project
    assert run(config, "analyze", "cnn-glove_word-lr0.001-s0") == 0
    assert (root / "out" / "analysis" / "cnn-glove_word-lr0.001-s0-dev" / "errors_by_keyword.csv").is_file()


def test_analyze_unlabelled_test_exits_4(project, capsys):
    _, config = project
    assert run(config, "analyze", "solo", "--split", "test") == 4
    assert "no gold labels" in capsys.readouterr().err


def test_predict_test_split(project):
    root, config = project
    assert run(config, "predict", "--split", "test", "--family", "cnn") == 0
    preds = PredictionSet.read_tsv(
        root / "out" / "runs" / "cnn-glove_word-lr0.001-s0" / "test_predictions.tsv", "m", "test")
    assert len(preds.par_ids) == 8


def test_report(project):
    root, config = project
    assert run(config, "report") == 0
    out = root / "out" / "report"
    rows = list(csv.DictReader((out / "variant_summary.csv").open()))
    assert [(r["family"], r["variant"], r["runs"]) for r in rows] == [
        ("cnn", "glove_word", "2"), ("bilstm", "glove_word", "2")]
    assert set(json.loads((out / "thresholds.json").read_text())) == {"cnn", "bilstm"}
    assert (out / "variant_summary.png").is_file()


def test_out_flag_redirects_output_root(project, tmp_path):
    root, config = project
    assert main(["prepare", "--config", str(config), "--out", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "data" / "train.tsv").is_file()


def test_commands_before_prepare_exit_2(tmp_path, capsys):
    config = make_project(tmp_path)
    assert run(config, "grid") == 2
    assert "prepare" in capsys.readouterr().err


def test_grid_with_two_workers(tmp_path):
    config = make_project(tmp_path)
    cfg = yaml.safe_load(config.read_text())
    cfg["grid"]["bilstm"] = None
    cfg["grid"]["cnn"]["max_epochs"] = 1
    config.write_text(yaml.safe_dump(cfg))
    assert run(config, "prepare") == 0
    assert main(["grid", "--config", str(config), "--jobs", "2"]) == 0
    assert len((tmp_path / "out" / "runs" / "registry.jsonl").read_text().splitlines()) == 2
    shutil.rmtree(tmp_path / "out")
