"""Command-line entry point binding all modules into reproducible workflows.

Subcommands: synth-data, train, generate, evaluate, gradcheck, diversity.
Exit codes: 0 success, 1 a check failed or a numerical failure occurred,
2 usage or input error. Every command echoes its fully resolved
configuration into the output directory, and the seed comes from the flag,
then the XMODAL_SEED environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .errors import CheckpointError, ContractViolation, NumericalFailure
from .evaluate import evaluate_model
from .metrics import diversity_score
from .model import ModelConfig, default_enc_channels, generate
from .synthdata import generate_corpus, load_corpus, read_stream_tensor, write_stream_tensor
from .training import TrainConfig, finite_difference_gradcheck, train


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("XMODAL_SEED")
    return int(env) if env else 0


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {p} must hold a JSON object")
    return cfg


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n"
    )


def cmd_synth_data(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.t < 2:
        raise ValueError("sequence length T must be >= 2")
    out_dir = Path(args.out)
    _echo_config(
        out_dir,
        {
            "command": "synth-data",
            "seed": seed,
            "corpus": {
                "num_train": args.num_train,
                "num_test": args.num_test,
                "T": args.t,
                "H": args.height,
                "W": args.width,
                "A": args.audio_dim,
            },
        },
    )
    manifest = generate_corpus(
        seed=seed,
        num_train=args.num_train,
        num_test=args.num_test,
        t_len=args.t,
        h=args.height,
        w=args.width,
        a_dim=args.audio_dim,
        out_dir=out_dir,
    )
    print(
        f"corpus written: {manifest} "
        f"({args.num_train} train + {args.num_test} test, "
        f"T={args.t}, {args.height}x{args.width}, A={args.audio_dim})"
    )
    return 0


def _merged_train_configs(args, corpus):
    file_cfg = _load_config_file(args.config)
    seed = _resolve_seed(args.seed)

    m = corpus.meta
    model_d = {
        "height": m["H"],
        "width": m["W"],
        "channels": m["C"],
        "audio_dim": m["A"],
        "enc_channels": list(default_enc_channels(m["H"])),
    }
    model_d.update(file_cfg.get("model", {}))
    for key, val in (("height", m["H"]), ("width", m["W"]),
                     ("channels", m["C"]), ("audio_dim", m["A"])):
        if model_d[key] != val:
            raise ValueError(
                f"config model.{key}={model_d[key]} conflicts with corpus value {val}"
            )
    if args.kl_weight is not None:
        model_d["kl_weight"] = args.kl_weight
    if args.recon_weight is not None:
        model_d["recon_weight"] = args.recon_weight

    train_d = dict(file_cfg.get("train", {}))
    train_d["rng_seed"] = seed
    if args.max_steps is not None:
        train_d["max_steps"] = args.max_steps
    if args.lr is not None:
        train_d["learning_rate"] = args.lr
    if args.batch_size is not None:
        train_d["batch_size"] = args.batch_size
    if args.optimizer is not None:
        train_d["optimizer"] = args.optimizer
    if args.precision is not None:
        train_d["precision"] = args.precision
    return ModelConfig.from_dict(model_d), TrainConfig.from_dict(train_d), seed


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    model_cfg, train_cfg, seed = _merged_train_configs(args, corpus)
    out_dir = Path(args.out)
    _echo_config(
        out_dir,
        {
            "command": "train",
            "seed": seed,
            "corpus_manifest": str(args.corpus),
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "resume_from": str(args.resume) if args.resume else None,
        },
    )
    if args.resume is not None and not Path(args.resume).exists():
        raise ValueError(f"resume checkpoint not found: {args.resume}")
    ckpt_path = out_dir / "checkpoint.xmck"
    resume_state = str(args.resume) + ".state" if args.resume else None
    params, report = train(
        model_cfg,
        train_cfg,
        corpus.train_view(),
        val_dataset=corpus.test_view(),
        log_path=out_dir / "train_log.jsonl",
        checkpoint_path=ckpt_path,
        resume_from=resume_state,
    )
    final = report.total[-1] if report.total else float("nan")
    print(
        f"trained {len(report.steps)} steps in {report.wall_clock_s:.1f}s; "
        f"final loss {final:.4f}; checkpoint: {ckpt_path}"
    )
    return 0


def cmd_generate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ValueError(f"checkpoint not found: {ckpt}")
    params, cfg = load_checkpoint(ckpt)
    corpus = load_corpus(args.corpus)
    if not 0 <= args.sequence_index < len(corpus):
        raise ValueError(
            f"sequence index {args.sequence_index} out of range [0, {len(corpus)})"
        )
    seed = _resolve_seed(args.seed)
    rec = corpus[args.sequence_index]
    result = generate(
        rec.frames[0],
        rec.audio,
        params,
        cfg,
        num_samples=args.num_samples,
        noise_source=seed,
    )
    out_dir = Path(args.out)
    _echo_config(
        out_dir,
        {
            "command": "generate",
            "seed": seed,
            "checkpoint": str(ckpt),
            "corpus_manifest": str(args.corpus),
            "sequence_index": args.sequence_index,
            "num_samples": args.num_samples,
        },
    )
    for k in range(args.num_samples):
        write_stream_tensor(out_dir / f"sample_{k:03d}.bin", result.samples[k])
    with open(out_dir / "per_step_kl.jsonl", "w") as f:
        for t, v in enumerate(result.per_step_kl):
            f.write(json.dumps({"t": t, "kl": float(v)}) + "\n")
    print(
        f"wrote {args.num_samples} stream(s) of shape "
        f"{tuple(result.samples.shape[1:])} to {out_dir}"
    )
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ValueError(f"checkpoint not found: {ckpt}")
    corpus = load_corpus(args.corpus)
    seed = _resolve_seed(args.seed)
    report = evaluate_model(
        str(ckpt), corpus, num_sequences=args.num_sequences, seed=seed
    )
    print(report.to_json())
    if args.out:
        out_dir = Path(args.out)
        _echo_config(
            out_dir,
            {
                "command": "evaluate",
                "seed": seed,
                "checkpoint": str(ckpt),
                "corpus_manifest": str(args.corpus),
                "num_sequences": args.num_sequences,
            },
        )
        (out_dir / "eval_report.json").write_text(report.to_json() + "\n")
        with open(out_dir / "per_sequence.jsonl", "w") as f:
            for rec in report.per_sequence:
                f.write(json.dumps(rec) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args.seed)
    cfg = ModelConfig(
        latent_dim=args.latent_dim,
        frame_hidden_dim=args.hidden_dim,
        audio_hidden_dim=args.hidden_dim,
        recurrent_hidden_dim=args.hidden_dim,
        height=args.height,
        width=args.width,
        channels=1,
        audio_dim=args.audio_dim,
        recon_weight=1.0,
        kl_weight=args.kl_weight,
        enc_channels=default_enc_channels(args.height),
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 19]))
    frames = rng.uniform(0.0, 1.0, size=(args.t, cfg.height, cfg.width, 1))
    audio = rng.standard_normal((args.t, cfg.audio_dim))
    result = finite_difference_gradcheck(
        cfg,
        (frames, audio),
        epsilon=args.epsilon,
        num_coordinates=args.num_coordinates,
        rng_seed=seed,
    )
    for group, err in sorted(result.per_group.items()):
        print(f"{group:16s} max rel error {err:.3e}")
    verdict = "PASS" if result.passed else "FAIL"
    print(
        f"gradcheck {verdict}: max relative error {result.max_rel_error:.3e} "
        f"over {result.num_coordinates} coordinates (threshold 1e-4)"
    )
    return 0 if result.passed else 1


def cmd_diversity(args) -> int:
    in_dir = Path(args.inputs)
    if not in_dir.is_dir():
        raise ValueError(f"input directory not found: {in_dir}")
    files = sorted(in_dir.glob(args.pattern))
    if len(files) < 2:
        raise ValueError(
            f"need at least two streams matching {args.pattern!r} in {in_dir}"
        )
    streams = [read_stream_tensor(f) for f in files]
    shapes = {s.shape for s in streams}
    if len(shapes) != 1:
        raise ValueError(f"streams disagree on shape: {sorted(shapes)}")
    score = diversity_score(np.stack(streams))
    print(f"diversity over {len(files)} streams: {score:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xmodal",
        description="Audio-driven stochastic video sequence model: data, "
        "training, generation, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-train", type=int, default=500)
    p.add_argument("--num-test", type=int, default=64)
    p.add_argument("--t", type=int, default=16, help="sequence length")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--audio-dim", type=int, default=8)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True, help="path to manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON run config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=None)
    p.add_argument("--precision", choices=["float32", "float64"], default=None)
    p.add_argument("--kl-weight", type=float, default=None)
    p.add_argument("--recon-weight", type=float, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate streams from audio + first frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sequence-index", type=int, required=True)
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="SSIM/PSNR/diversity on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--num-sequences", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--t", type=int, default=3)
    p.add_argument("--audio-dim", type=int, default=4)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--num-coordinates", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("diversity", help="pairwise diversity of stored streams")
    p.add_argument("--inputs", required=True, help="directory of stream files")
    p.add_argument("--pattern", default="sample_*.bin")
    p.set_defaults(func=cmd_diversity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, CheckpointError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericalFailure, ContractViolation) as e:
        print(f"failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
