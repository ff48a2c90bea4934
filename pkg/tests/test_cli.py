import json

import numpy as np
import pytest

from xmodal.checkpoint import load_checkpoint
from xmodal.cli import main
from xmodal.model import init_model_params
from xmodal.synthdata import load_corpus, read_stream_tensor
from xmodal.training import _init_rng


def _synth(tmp_path, name="corpus", seed="5", extra=()):
    out = tmp_path / name
    rc = main(
        [
            "synth-data",
            "--out",
            str(out),
            "--seed",
            seed,
            "--num-train",
            "4",
            "--num-test",
            "2",
            "--t",
            "4",
            "--height",
            "16",
            "--width",
            "16",
            "--audio-dim",
            "4",
            *extra,
        ]
    )
    assert rc == 0
    return out / "manifest.json"


def _tiny_train_config(tmp_path):
    cfg = {
        "model": {
            "latent_dim": 2,
            "frame_hidden_dim": 16,
            "audio_hidden_dim": 16,
            "recurrent_hidden_dim": 16,
            "enc_channels": [8, 16],
        },
        "train": {
            "learning_rate": 1e-3,
            "batch_size": 2,
            "max_steps": 6,
            "eval_every": 3,
        },
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_synth_data_deterministic(tmp_path):
    m1 = _synth(tmp_path, "one")
    m2 = _synth(tmp_path, "two")
    assert m1.read_bytes() == m2.read_bytes()
    assert (m1.parent / "data.bin").read_bytes() == (m2.parent / "data.bin").read_bytes()
    assert (m1.parent / "run_config.json").exists()


def test_synth_data_env_seed(tmp_path, monkeypatch):
    m1 = _synth(tmp_path, "flagged", seed="9")
    monkeypatch.setenv("XMODAL_SEED", "9")
    out = tmp_path / "env"
    rc = main(
        [
            "synth-data", "--out", str(out), "--num-train", "4", "--num-test", "2",
            "--t", "4", "--height", "16", "--width", "16", "--audio-dim", "4",
        ]
    )
    assert rc == 0
    assert (out / "data.bin").read_bytes() == (m1.parent / "data.bin").read_bytes()


def test_synth_data_rejects_t1(tmp_path, capsys):
    rc = main(["synth-data", "--out", str(tmp_path / "x"), "--t", "1"])
    assert rc == 2
    assert "T" in capsys.readouterr().err


def test_train_and_artifacts(tmp_path):
    manifest = _synth(tmp_path)
    out = tmp_path / "run"
    rc = main(
        [
            "train",
            "--corpus",
            str(manifest),
            "--out",
            str(out),
            "--config",
            str(_tiny_train_config(tmp_path)),
            "--seed",
            "3",
        ]
    )
    assert rc == 0
    assert (out / "checkpoint.xmck").exists()
    assert (out / "run_config.json").exists()
    lines = (out / "train_log.jsonl").read_text().splitlines()
    records = [json.loads(l) for l in lines if l]
    assert any("total" in r for r in records)
    assert any("val_kl" in r for r in records)


def test_train_lr_zero_leaves_init(tmp_path):
    manifest = _synth(tmp_path)
    out = tmp_path / "run0"
    rc = main(
        [
            "train", "--corpus", str(manifest), "--out", str(out),
            "--config", str(_tiny_train_config(tmp_path)),
            "--seed", "3", "--lr", "0", "--max-steps", "1",
        ]
    )
    assert rc == 0
    params, cfg = load_checkpoint(out / "checkpoint.xmck")
    ref = init_model_params(cfg, _init_rng(3), np.float32)
    for name in ref.names():
        assert np.array_equal(params.arrays[name], ref.arrays[name]), name


def test_train_resume_matches_unbroken(tmp_path):
    manifest = _synth(tmp_path)
    cfg_path = _tiny_train_config(tmp_path)
    full = tmp_path / "full"
    rc = main(
        ["train", "--corpus", str(manifest), "--out", str(full),
         "--config", str(cfg_path), "--seed", "4", "--max-steps", "6"]
    )
    assert rc == 0
    part = tmp_path / "part"
    rc = main(
        ["train", "--corpus", str(manifest), "--out", str(part),
         "--config", str(cfg_path), "--seed", "4", "--max-steps", "3"]
    )
    assert rc == 0
    resumed = tmp_path / "resumed"
    rc = main(
        ["train", "--corpus", str(manifest), "--out", str(resumed),
         "--config", str(cfg_path), "--seed", "4", "--max-steps", "6",
         "--resume", str(part / "checkpoint.xmck")]
    )
    assert rc == 0
    assert (resumed / "checkpoint.xmck").read_bytes() == (
        full / "checkpoint.xmck"
    ).read_bytes()

    def series(p):
        return [
            (json.loads(l)["step"], json.loads(l)["total"])
            for l in (p / "train_log.jsonl").read_text().splitlines()
            if "total" in l
        ]

    assert series(resumed) == series(full)[3:]


def test_generate_outputs_and_determinism(tmp_path):
    manifest = _synth(tmp_path)
    run = tmp_path / "run"
    main(
        ["train", "--corpus", str(manifest), "--out", str(run),
         "--config", str(_tiny_train_config(tmp_path)), "--seed", "3"]
    )
    ckpt = run / "checkpoint.xmck"
    g1, g2 = tmp_path / "g1", tmp_path / "g2"
    for out in (g1, g2):
        rc = main(
            ["generate", "--checkpoint", str(ckpt), "--corpus", str(manifest),
             "--sequence-index", "4", "--num-samples", "1", "--seed", "7",
             "--out", str(out)]
        )
        assert rc == 0
    assert (g1 / "sample_000.bin").read_bytes() == (g2 / "sample_000.bin").read_bytes()
    kl_lines = (g1 / "per_step_kl.jsonl").read_text().splitlines()
    assert len(kl_lines) == 4

    g3 = tmp_path / "g3"
    rc = main(
        ["generate", "--checkpoint", str(ckpt), "--corpus", str(manifest),
         "--sequence-index", "4", "--num-samples", "3", "--seed", "8",
         "--out", str(g3)]
    )
    assert rc == 0
    streams = [read_stream_tensor(g3 / f"sample_{k:03d}.bin") for k in range(3)]
    assert all(s.shape == (4, 16, 16, 1) for s in streams)


def test_generate_missing_checkpoint_exit2(tmp_path, capsys):
    manifest = _synth(tmp_path)
    rc = main(
        ["generate", "--checkpoint", str(tmp_path / "absent.xmck"),
         "--corpus", str(manifest), "--sequence-index", "0",
         "--out", str(tmp_path / "g")]
    )
    assert rc == 2
    assert "absent.xmck" in capsys.readouterr().err


def test_evaluate_report(tmp_path, capsys):
    manifest = _synth(tmp_path)
    run = tmp_path / "run"
    main(
        ["train", "--corpus", str(manifest), "--out", str(run),
         "--config", str(_tiny_train_config(tmp_path)), "--seed", "3"]
    )
    capsys.readouterr()
    rc = main(
        ["evaluate", "--checkpoint", str(run / "checkpoint.xmck"),
         "--corpus", str(manifest), "--num-sequences", "2", "--seed", "1",
         "--out", str(tmp_path / "eval")]
    )
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["num_sequences"] == 2
    assert (tmp_path / "eval" / "eval_report.json").exists()
    assert (tmp_path / "eval" / "per_sequence.jsonl").exists()


def test_gradcheck_command(capsys):
    rc = main(
        ["gradcheck", "--t", "3", "--num-coordinates", "30", "--seed", "0",
         "--hidden-dim", "16"]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "PASS" in out


def test_diversity_command(tmp_path, capsys):
    from xmodal.synthdata import write_stream_tensor

    d = tmp_path / "streams"
    d.mkdir()
    arr = np.random.default_rng(0).uniform(0, 1, (3, 16, 16, 1)).astype(np.float32)
    write_stream_tensor(d / "sample_000.bin", arr)
    write_stream_tensor(d / "sample_001.bin", arr)
    rc = main(["diversity", "--inputs", str(d)])
    assert rc == 0
    assert "0.000000" in capsys.readouterr().out

    single = tmp_path / "one"
    single.mkdir()
    write_stream_tensor(single / "sample_000.bin", arr)
    assert main(["diversity", "--inputs", str(single)]) == 2


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["synth-data"])  # missing --out
    assert e.value.code == 2


def test_corpus_loadable_by_library(tmp_path):
    manifest = _synth(tmp_path)
    corpus = load_corpus(manifest)
    assert len(corpus) == 6
