"""Audio-driven generation and its evaluation, end to end at toy scale.

Trains briefly on a small corpus, then generates several videos from one
audio input and scores them: SSIM/PSNR for fidelity against ground truth,
and the pairwise diversity score over repeated samples, which concentrates
in the blink region because audio determines the mouth but not the eyes.
"""

import tempfile

import numpy as np

from xmodal import (
    ModelConfig,
    TrainConfig,
    diversity_score,
    evaluate_model,
    generate,
    generate_corpus,
    load_corpus,
    train,
)
from xmodal.synthdata import face_region_masks

with tempfile.TemporaryDirectory() as tmp:
    corpus = load_corpus(
        generate_corpus(seed=1, num_train=40, num_test=8, t_len=16, h=32, w=32, a_dim=8, out_dir=tmp)
    )
    cfg = ModelConfig(kl_weight=1e-3)
    train_cfg = TrainConfig(learning_rate=1e-3, optimizer="adam", max_steps=1200, eval_every=400)
    print("training briefly (a few minutes at toy scale)...")
    params, report = train(cfg, train_cfg, corpus.train_view(), val_dataset=corpus.test_view())
    print(f"loss {report.total[0]:.1f} -> {report.total[-1]:.2f}; "
          f"validation KL series {np.round(report.val_kl, 2)}")

    rec = corpus.test_view()[0]
    result = generate(rec.frames[0], rec.audio, params, cfg, num_samples=5, noise_source=3)
    print(f"\ngenerated {result.samples.shape[0]} streams of shape {result.samples.shape[1:]}")
    print(f"diversity over the 5 samples: {diversity_score(result.samples[:, 1:]):.4f}")

    var = result.samples[:, 1:].var(axis=0).mean(axis=0)[..., 0]
    masks = face_region_masks(32, 32, rec.dx, rec.dy)
    print("cross-sample variance by region (skip connections pin the background;")
    print("after a full desk-scale run the blink region dominates the mouth too):")
    for name in ("eyes", "mouth", "background"):
        print(f"  {name:10s} {var[masks[name]].mean():.2e}")

    report = evaluate_model((params, cfg), corpus, num_sequences=8, seed=0)
    print(f"\nevaluation: SSIM {report.mean_ssim:.3f} +- {report.std_ssim:.3f}, "
          f"PSNR {report.mean_psnr:.1f} dB, diversity {report.diversity:.4f}")
