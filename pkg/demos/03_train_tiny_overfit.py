"""Train end to end on one sequence until it is memorized.

A correct implementation must be able to drive the reconstruction error of
a single sequence to ~zero; this is the cheapest full test of the model,
gradients, and optimizer together. Runs in about a minute.
"""

import numpy as np

from xmodal import ModelConfig, TrainConfig, elbo_loss, train
from xmodal.synthdata import lift_matrix, make_sequence

cfg = ModelConfig(height=16, width=16, kl_weight=1e-3)
rec = make_sequence(11, 12, lift_matrix(123, 8), t_len=8, h=16, w=16)
dataset = [(rec.frames, rec.audio)]

train_cfg = TrainConfig(
    learning_rate=1e-3, batch_size=1, max_steps=1500, optimizer="adam", eval_every=500
)
params, report = train(cfg, train_cfg, dataset)

print(f"loss: {report.total[0]:.2f} (step 1) -> {report.total[-1]:.5f} (step {report.steps[-1]})")
rep = elbo_loss(rec.frames, rec.audio, params, cfg, noise_source=0)
mse = 2 * rep.recon_total / rec.frames.size
print(f"reconstruction MSE over the sequence: {mse:.2e}")
print(f"per-step KL between the two posterior chains: {rep.kl_per_t.round(3)}")
