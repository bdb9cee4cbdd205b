import json
import os

import numpy as np
import pytest

from sesqa.cli import (EXIT_CHECKPOINT, EXIT_OK, EXIT_USAGE, UsageError,
                       main, resolve_option)
from sesqa.audio import write_wav

from conftest import speechlike


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Clean pool, MOS manifest, and a generated quadruple set."""
    root = tmp_path_factory.mktemp("cli")
    pool = root / "pool"
    pool.mkdir()
    for i in range(4):
        write_wav(speechlike(seed=60 + i, seconds=1.3), pool / ("p%d.wav" % i))

    mos_dir = root / "mos"
    mos_dir.mkdir()
    recs = []
    for i in range(4):
        p = mos_dir / ("m%d.wav" % i)
        write_wav(speechlike(seed=70 + i, seconds=1.05), p)
        recs.append({"path": str(p), "mos": 1.0 + i,
                     "listener_scores": [1.0 + i, 1.5 + i]})
    mos_manifest = root / "mos.jsonl"
    mos_manifest.write_text("\n".join(json.dumps(r) for r in recs) + "\n")

    quad_dir = root / "quads"
    manifest = root / "quads.jsonl"
    rc = main(["generate", "--pool", str(pool), "--out", str(quad_dir),
               "--manifest", str(manifest), "--n", "12", "--seed", "5"])
    assert rc == EXIT_OK
    return {"root": root, "pool": pool, "manifest": manifest,
            "quad_dir": quad_dir, "mos_manifest": mos_manifest}


@pytest.fixture(scope="module")
def checkpoint(workdir):
    ckpt = workdir["root"] / "model.ckpt"
    rc = main(["train", "--quadruples", str(workdir["manifest"]),
               "--mos", str(workdir["mos_manifest"]),
               "--out", str(ckpt), "--epochs", "1", "--batch-size", "6",
               "--channels", "0.25", "--loss-mask", "mos", "--seed", "1"])
    assert rc == EXIT_OK
    return ckpt


def test_generate_writes_manifest_and_wavs(workdir):
    lines = [l for l in workdir["manifest"].read_text().splitlines() if l]
    assert len(lines) == 12
    rec = json.loads(lines[0])
    wavs = list(workdir["quad_dir"].glob("*.wav"))
    assert len(wavs) == 48    # four cuts per quadruple


def test_generate_deterministic(workdir, tmp_path):
    manifest2 = tmp_path / "again.jsonl"
    rc = main(["generate", "--pool", str(workdir["pool"]),
               "--out", str(tmp_path / "q"), "--manifest", str(manifest2),
               "--n", "12", "--seed", "5"])
    assert rc == EXIT_OK
    a = [json.loads(l) for l in
         workdir["manifest"].read_text().splitlines() if l]
    b = [json.loads(l) for l in manifest2.read_text().splitlines() if l]
    for ra, rb in zip(a, b):
        assert ra["chain_i"] == rb["chain_i"]
        assert ra["chain_j"] == rb["chain_j"]
        assert ra["delay_ms"] == rb["delay_ms"]
    # and the audio itself is bit-exact
    for name in sorted(os.listdir(workdir["quad_dir"]))[:8]:
        assert (workdir["quad_dir"] / name).read_bytes() == \
            (tmp_path / "q" / name).read_bytes()


def test_generate_usage_errors(tmp_path):
    assert main(["generate", "--pool", str(tmp_path / "missing"),
                 "--n", "2"]) == EXIT_USAGE
    assert main(["generate", "--pool", str(tmp_path), "--n", "0"]) \
        == EXIT_USAGE


def test_resolve_option_precedence(monkeypatch):
    file_cfg = {"epochs": 5}
    assert resolve_option("epochs", None, {}, default=3, cast=int) == 3
    assert resolve_option("epochs", None, file_cfg, default=3, cast=int) == 5
    monkeypatch.setenv("SESQA_EPOCHS", "7")
    assert resolve_option("epochs", None, file_cfg, default=3, cast=int) == 7
    assert resolve_option("epochs", 9, file_cfg, default=3, cast=int) == 9
    with pytest.raises(UsageError):
        resolve_option("epochs", "many", file_cfg, cast=int)


def test_config_precedence_integration(workdir, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 2, "seed": 5}))
    m1 = tmp_path / "m1.jsonl"
    rc = main(["--config", str(cfg), "generate", "--pool",
               str(workdir["pool"]), "--out", str(tmp_path / "g1"),
               "--manifest", str(m1)])
    assert rc == EXIT_OK
    assert len(m1.read_text().splitlines()) == 2
    # environment overrides the file
    monkeypatch.setenv("SESQA_N", "3")
    m2 = tmp_path / "m2.jsonl"
    rc = main(["--config", str(cfg), "generate", "--pool",
               str(workdir["pool"]), "--out", str(tmp_path / "g2"),
               "--manifest", str(m2)])
    assert rc == EXIT_OK
    assert len(m2.read_text().splitlines()) == 3
    # flag overrides both
    m3 = tmp_path / "m3.jsonl"
    rc = main(["--config", str(cfg), "generate", "--pool",
               str(workdir["pool"]), "--out", str(tmp_path / "g3"),
               "--manifest", str(m3), "--n", "4"])
    assert rc == EXIT_OK
    assert len(m3.read_text().splitlines()) == 4


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2, 3]")
    assert main(["--config", str(bad), "generate", "--pool", str(tmp_path),
                 "--n", "1"]) == EXIT_USAGE


def test_train_deterministic(workdir, checkpoint, tmp_path):
    again = tmp_path / "again.ckpt"
    rc = main(["train", "--quadruples", str(workdir["manifest"]),
               "--mos", str(workdir["mos_manifest"]),
               "--out", str(again), "--epochs", "1", "--batch-size", "6",
               "--channels", "0.25", "--loss-mask", "mos", "--seed", "1"])
    assert rc == EXIT_OK
    assert again.read_bytes() == checkpoint.read_bytes()


def test_train_bad_loss_mask(workdir, tmp_path):
    rc = main(["train", "--quadruples", str(workdir["manifest"]),
               "--out", str(tmp_path / "x.ckpt"), "--epochs", "1",
               "--channels", "0.25", "--loss-mask", "mos,bogus"])
    assert rc == EXIT_USAGE


def test_eval_random_baseline(workdir, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main(["eval", "--random-baseline", "--quadruples",
               str(workdir["manifest"]), "--mos",
               str(workdir["mos_manifest"]), "--kfold", "2",
               "--seed", "0", "--out", str(out)])
    assert rc == EXIT_OK
    report = json.loads(out.read_text())
    assert {"r_rank", "l_cons", "l_mos", "e_total",
            "human_baseline"} <= set(report)
    assert np.isclose(report["e_total"], 0.5 * report["l_mos"]
                      + report["r_rank"] + report["l_cons"])
    assert len(report["l_mos_folds"]) == 2


def test_eval_with_checkpoint(workdir, checkpoint, capsys):
    rc = main(["eval", "--checkpoint", str(checkpoint),
               "--quadruples", str(workdir["manifest"])])
    assert rc == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert 0.0 <= report["r_rank"] <= 1.0
    assert report["l_cons"] >= 0.0


def test_corrupt_checkpoint_exit_code(workdir, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    rc = main(["eval", "--checkpoint", str(bad),
               "--quadruples", str(workdir["manifest"])])
    assert rc == EXIT_CHECKPOINT


def test_score_command(workdir, checkpoint, tmp_path, capsys):
    wav = tmp_path / "x.wav"
    write_wav(speechlike(seed=80, seconds=1.0), wav)
    rc = main(["score", "--checkpoint", str(checkpoint), str(wav)])
    assert rc == EXIT_OK
    line = capsys.readouterr().out.strip()
    path, score = line.split("\t")
    assert path == str(wav) and 1.0 < float(score) < 5.0
    # reference mode
    rc = main(["score", "--checkpoint", str(checkpoint),
               "--reference", str(wav), "--variant", "diff-linear",
               str(wav)])
    assert rc == EXIT_OK
    # unreadable input
    rc = main(["score", "--checkpoint", str(checkpoint),
               str(tmp_path / "missing.wav")])
    assert rc == EXIT_USAGE


def test_analyze_modes(workdir, checkpoint, tmp_path, capsys):
    rc = main(["analyze", "--checkpoint", str(checkpoint),
               "--mode", "sweep"])      # missing --clean
    assert rc == EXIT_USAGE

    out = tmp_path / "dist.json"
    rc = main(["analyze", "--checkpoint", str(checkpoint),
               "--mode", "distances", "--quadruples",
               str(workdir["manifest"]), "--out", str(out)])
    assert rc == EXIT_OK
    stats = json.loads(out.read_text())
    assert {"same_condition", "different_degradation",
            "different_utterance"} <= set(stats)

    lat = tmp_path / "latents.jsonl"
    rc = main(["analyze", "--checkpoint", str(checkpoint),
               "--mode", "latents", "--quadruples",
               str(workdir["manifest"]), "--out", str(lat)])
    assert rc == EXIT_OK
    rows = [json.loads(l) for l in lat.read_text().splitlines() if l]
    assert len(rows) == 12
    assert len(rows[0]["latent"]) == 200
