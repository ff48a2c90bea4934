"""Model evaluation protocol: SSIM/PSNR against held-out ground truth, plus
per-sequence diversity from repeated generation.

Frame 1 is excluded from all metrics (it is copied input, not a prediction);
multi-channel SSIM averages per channel. Deterministic in the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .metrics import diversity_score, psnr, ssim
from .model import ModelConfig, ModelParams, generate
from .synthdata import Corpus


@dataclass(frozen=True)
class EvalReport:
    mean_ssim: float
    std_ssim: float
    mean_psnr: float
    std_psnr: float
    diversity: float
    num_sequences: int
    seed: int
    model_config: dict
    per_sequence: list = field(default_factory=list, repr=False)

    def to_dict(self, include_per_sequence: bool = False) -> dict:
        d = {
            "mean_ssim": self.mean_ssim,
            "std_ssim": self.std_ssim,
            "mean_psnr": self.mean_psnr,
            "std_psnr": self.std_psnr,
            "diversity": self.diversity,
            "num_sequences": self.num_sequences,
            "seed": self.seed,
            "model_config": self.model_config,
        }
        if include_per_sequence:
            d["per_sequence"] = self.per_sequence
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _resolve_model(checkpoint) -> tuple[ModelParams, ModelConfig]:
    if isinstance(checkpoint, (str, Path)):
        return load_checkpoint(checkpoint)
    params, cfg = checkpoint
    return params, cfg


def evaluate_model(
    checkpoint,
    corpus: Corpus,
    num_sequences: int | None = None,
    seed: int = 0,
    samples_per_sequence: int = 5,
) -> EvalReport:
    """Generate on the corpus test split and score against ground truth.

    For each selected test sequence: generate samples_per_sequence streams
    from the first frame + audio, score sample 0 with SSIM/PSNR over frames
    2..T, and score all samples with the pairwise diversity metric.
    checkpoint may be a path or a (params, config) pair.
    """
    params, cfg = _resolve_model(checkpoint)
    if corpus.num_test < 1:
        raise ValueError("corpus has no test split")
    m = corpus.meta
    if (m["H"], m["W"], m["C"], m["A"]) != (
        cfg.height,
        cfg.width,
        cfg.channels,
        cfg.audio_dim,
    ):
        raise ValueError(
            f"checkpoint expects {(cfg.height, cfg.width, cfg.channels, cfg.audio_dim)} "
            f"(H, W, C, A) but corpus provides "
            f"{(m['H'], m['W'], m['C'], m['A'])}"
        )
    if corpus.t_len < 2:
        raise ValueError("evaluation needs sequences with T >= 2")

    available = corpus.num_test
    n = min(256 if num_sequences is None else num_sequences, available)
    if n < 1:
        raise ValueError("num_sequences must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 701]))
    test_indices = np.arange(corpus.num_train, corpus.num_train + available)
    chosen = np.sort(rng.choice(test_indices, size=n, replace=False))

    ssims, psnrs, divs, per_sequence = [], [], [], []
    for idx in chosen:
        rec = corpus[int(idx)]
        gen_seed = int(
            np.random.SeedSequence([int(seed), 809, int(idx)]).generate_state(1)[0]
        )
        result = generate(
            rec.frames[0],
            rec.audio,
            params,
            cfg,
            num_samples=samples_per_sequence,
            noise_source=gen_seed,
        )
        pred = result.samples[0]
        seq_ssim = float(
            np.mean([ssim(pred[t], rec.frames[t]) for t in range(1, corpus.t_len)])
        )
        seq_psnr = psnr(pred[1:], rec.frames[1:])
        seq_div = diversity_score(result.samples[:, 1:])
        ssims.append(seq_ssim)
        psnrs.append(seq_psnr)
        divs.append(seq_div)
        per_sequence.append(
            {
                "sequence": int(idx),
                "ssim": seq_ssim,
                "psnr": seq_psnr,
                "diversity": seq_div,
            }
        )

    return EvalReport(
        mean_ssim=float(np.mean(ssims)),
        std_ssim=float(np.std(ssims)),
        mean_psnr=float(np.mean(psnrs)),
        std_psnr=float(np.std(psnrs)),
        diversity=float(np.mean(divs)),
        num_sequences=n,
        seed=int(seed),
        model_config=cfg.to_dict(),
        per_sequence=per_sequence,
    )
