import json
import re

import numpy as np
import pytest

from kinship import io
from kinship.cli import main
from kinship.data import toy_path
from kinship.metric_head import ProjectionHead

EMB = str(toy_path("embeddings.csv"))
PAIRS = str(toy_path("pairs.csv"))
PROBES = str(toy_path("probes.csv"))
GALLERY = str(toy_path("gallery.csv"))
FAMILIES = str(toy_path("families.csv"))

ERROR_LINE = re.compile(r"^ERROR [A-Za-z]+: \S.*$")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_calibrate_verify_eval(tmp_path, capsys):
    cal, pred, report = tmp_path / "cal.csv", tmp_path / "pred.csv", tmp_path / "rep.json"
    assert run(capsys, "calibrate", "--embeddings", EMB, "--pairs", PAIRS, "--output", cal)[0] == 0
    assert len(io.load_calibration(cal)) == 30
    for scorer in ("raw_cosine", "cd", "idw"):
        code, out, _ = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--scorer", scorer,
                           "--calibration", cal, "--output", pred)
        assert code == 0
        assert len(io.load_predictions(pred)) == 30
    code, out, _ = run(capsys, "eval-verification", "--predictions", pred, "--pairs", PAIRS, "--output", report)
    assert code == 0 and "overall accuracy" in out
    data = json.loads(report.read_text())
    assert 0.0 <= data["overall_accuracy"] <= 1.0
    assert sum(data["counts"].values()) == 30


def test_verify_threshold_and_idw_flags(tmp_path, capsys):
    pred = tmp_path / "pred.csv"
    code, out, _ = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--output", pred)
    assert "threshold 0.6" in out
    code, _, _ = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--threshold", "-1", "--output", pred)
    assert all(p.label == 1 for p in io.load_predictions(pred))
    cal = tmp_path / "cal.csv"
    run(capsys, "calibrate", "--embeddings", EMB, "--pairs", PAIRS, "--output", cal)
    code, out, _ = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--scorer", "idw",
                       "--idw-k", "3", "--idw-power", "1", "--calibration", cal, "--output", pred)
    assert code == 0 and "threshold 0.5" in out


def test_retrieve_and_eval(tmp_path, capsys):
    rank, rep = tmp_path / "rank.csv", tmp_path / "map.json"
    for agg in ("mean", "max_sim"):
        code, _, _ = run(capsys, "retrieve", "--embeddings", EMB, "--probes", PROBES, "--gallery", GALLERY,
                         "--aggregate", agg, "--output", rank)
        assert code == 0
        m = io.load_rank_matrix(rank)
        for row in m.rows:
            assert sorted(row.tolist()) == list(range(m.rows.shape[1]))
    code, out, _ = run(capsys, "eval-retrieval", "--rank-matrix", rank, "--probes", PROBES, "--gallery", GALLERY,
                       "--families", FAMILIES, "--output", rep)
    assert code == 0 and out.startswith("MAP:")
    assert 0.0 < json.loads(rep.read_text())["map"] <= 1.0
    code, _, _ = run(capsys, "eval-retrieval", "--rank-matrix", rank, "--probes", PROBES, "--gallery", GALLERY,
                     "--families", FAMILIES, "--map-cutoff", "2")
    assert code == 0


def test_training_commands_print_seed(tmp_path, capsys):
    head, clf, pred, feats = (tmp_path / n for n in ("head.csv", "clf.csv", "pred.csv", "f.csv"))
    code, out, _ = run(capsys, "train-head", "--embeddings", EMB, "--families", FAMILIES, "--dim-out", "4",
                       "--epochs", "3", "--batch-size", "12", "--output", head)
    assert code == 0 and out.splitlines()[0] == "seed: 42"
    assert io.load_head(head).matrix.shape == (4, 8)
    code, out, _ = run(capsys, "train-head", "--embeddings", EMB, "--families", FAMILIES, "--loss", "arcface",
                       "--scale", "16", "--margin", "0.3", "--epochs", "2", "--seed", "7", "--output", head)
    assert code == 0 and out.splitlines()[0] == "seed: 7"

    code, out, _ = run(capsys, "train-pair-classifier", "--embeddings", EMB, "--pairs", PAIRS,
                       "--descriptor", "fused", "--epochs", "5", "--output", clf)
    assert code == 0 and out.startswith("seed: 42")
    assert io.load_classifier(clf).weights.shape == (40,)
    code, _, _ = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--scorer", "pair_classifier",
                     "--classifier", clf, "--descriptor", "fused", "--symmetrize", "--output", pred)
    assert code == 0

    code, _, _ = run(capsys, "fuse", "--embeddings", EMB, "--embeddings-b", EMB, "--pairs", PAIRS, "--output", feats)
    ids, matrix = io.load_features(feats)
    assert code == 0 and matrix.shape == (30, 80) and ids[0] == "p00"


def test_head_option_projects_embeddings(tmp_path, capsys):
    head = tmp_path / "head.csv"
    io.write_head(head, ProjectionHead(np.eye(8)))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--output", a)
    run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--head", head, "--output", b)
    plain, projected = io.load_predictions(a), io.load_predictions(b)
    np.testing.assert_allclose([p.score for p in plain], [p.score for p in projected], atol=1e-15)


def test_gradcheck_command(tmp_path, capsys):
    code, out, _ = run(capsys, "gradcheck", "--configs", "5", "--output", tmp_path / "g.csv")
    assert code == 0 and "seed: 42" in out
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 11


def test_error_lines(tmp_path, capsys):
    code, _, err = run(capsys, "verify", "--embeddings", tmp_path / "missing.csv", "--pairs", PAIRS,
                       "--output", tmp_path / "p.csv")
    assert code == 1 and ERROR_LINE.match(err.strip()) and err.startswith("ERROR IoFailure:")
    assert len(err.strip().splitlines()) == 1

    code, _, err = run(capsys, "verify", "--embeddings", EMB, "--pairs", PAIRS, "--scorer", "cd",
                       "--output", tmp_path / "p.csv")
    assert code == 1 and err.startswith("ERROR MissingCalibration:")

    unlabeled = tmp_path / "u.csv"
    unlabeled.write_text("pair_id,image_id_1,image_id_2,ptype\nq,F0001/F,ghost,F-S\n")
    code, _, err = run(capsys, "verify", "--embeddings", EMB, "--pairs", unlabeled, "--output", tmp_path / "p.csv")
    assert code == 1 and err.startswith("ERROR UnknownImageId:") and "ghost" in err
    code, _, err = run(capsys, "calibrate", "--embeddings", EMB, "--pairs", unlabeled, "--output", tmp_path / "c.csv")
    assert code == 1 and err.startswith("ERROR MissingLabel:")


def test_missing_required_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--pairs", PAIRS])
    assert exc.value.code != 0
