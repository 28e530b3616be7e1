import json

import numpy as np
import pytest

from visualtts.cli import run
from visualtts.data import read_manifest
from visualtts.tensorfile import read_tensor, write_tensor
from visualtts.toy import make_toy_dataset, toy_utterance


def test_missing_flag_exit_1(capsys):
    assert run(["make-toy-data", "--seed", "1"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_rejected():
    assert run(["grad-check", "--component", "tva", "--bogus"]) == 1


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["eval", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--manifest", "--synth-dir", "--report", "--max-offset"):
        assert flag in out


def test_make_toy_data_echoes_config(tmp_path, capsys):
    assert run(["make-toy-data", "--seed", "3", "--n-utts", "2", "--n-speakers", "2", "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[0])["seed"] == 3
    assert len(read_manifest(tmp_path / "manifest.jsonl")) == 2


def test_eval_identical_mels_fd_zero(tmp_path):
    manifest = make_toy_dataset(5, 2, 1, tmp_path / "data")
    synth = tmp_path / "synth"
    synth.mkdir()
    for rec in read_manifest(manifest):
        write_tensor(read_tensor(tmp_path / "data" / rec.mel_path), synth / f"{rec.utt_id}.mel.vtts")
    report = tmp_path / "report.jsonl"
    assert run(["eval", "--manifest", str(manifest), "--synth-dir", str(synth), "--report", str(report)]) == 0
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert [list(r)[:5] for r in rows[:-1]] == [["utt_id", "fd", "distance_like", "confidence_like", "best_offset"]] * 2
    assert all(r["fd"] == 0.0 and r["best_offset"] == 0 for r in rows[:-1])
    assert rows[-1]["utt_id"] == "__summary__" and rows[-1]["fd"] == 0.0


def test_eval_exit_reflects_worst_failure(tmp_path):
    manifest = make_toy_dataset(6, 3, 1, tmp_path / "data")
    recs = read_manifest(manifest)
    synth = tmp_path / "synth"
    synth.mkdir()
    # first utterance missing (validation-level), second fine, third constant (zero variance)
    write_tensor(read_tensor(tmp_path / "data" / recs[1].mel_path), synth / f"{recs[1].utt_id}.mel.vtts")
    write_tensor(np.zeros((4 * recs[2].num_video_frames, 80)), synth / f"{recs[2].utt_id}.mel.vtts")
    report = tmp_path / "r.jsonl"
    code = run(["eval", "--manifest", str(manifest), "--synth-dir", str(synth), "--report", str(report)])
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert code == 1
    assert "error" in rows[0] and "error" not in rows[1] and "error" in rows[2]
    assert rows[-1]["n_failed"] == 2


def test_train_bad_config_exit_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model_variant": "nope"}))
    manifest = make_toy_dataset(1, 1, 1, tmp_path / "d")
    assert run(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(tmp_path / "o")]) == 1


def test_grad_check_cli(capsys):
    assert run(["grad-check", "--component", "fusion"]) == 0
    assert capsys.readouterr().out.startswith("fusion\t")


def test_synth_fourteen_frame_utterance(tmp_path):
    from visualtts.data import UtteranceRecord, write_manifest
    from visualtts.training import TrainConfig, build_model
    from visualtts.model import save_checkpoint

    u = toy_utterance(0, 0, 1, symbols="aba")
    data = tmp_path / "d"
    data.mkdir()
    write_tensor(u.lips, data / "aba.vtts")
    manifest = write_manifest(
        [UtteranceRecord("aba", 0, "aba", "aba.vtts", None, 14)], data / "manifest.jsonl"
    )
    model = build_model(TrainConfig(toy_scale=True), 1)
    save_checkpoint(model, tmp_path / "ck")
    out = tmp_path / "out"
    assert run(["synth", "--checkpoint", str(tmp_path / "ck"), "--manifest", str(manifest), "--out", str(out), "--griffin-lim-iters", "2"]) == 0
    assert read_tensor(out / "aba.mel.vtts").shape == (56, 80)
    assert read_tensor(out / "aba.tva.vtts").shape == (2, 4, 14)
    assert read_tensor(out / "aba.align.vtts").shape == (28, 4)
    assert (out / "aba.wav").stat().st_size == 44 + 2 * (55 * 240 + 960)
