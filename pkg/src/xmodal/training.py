"""Gradient training with verification oracles and checkpointing.

The reference optimizer is stochastic gradient descent with momentum and
global-norm clipping; adam is available behind the config. Batch order and
per-step sampling noise are derived from (seed, step) alone, so a run can be
resumed from a checkpoint + state sidecar and continue the loss series
bit-exactly, and two runs with the same seed are identical.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint, save_train_state, load_train_state
from .errors import ContractViolation, NumericalFailure
from .model import (
    ModelConfig,
    ModelParams,
    PARAM_GROUPS,
    _as_tensors,
    _chain_graph,
    _encode_audio_graph,
    _encode_frames_graph,
    batch_elbo_graph,
    init_model_params,
)

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    batch_size: int = 4
    max_steps: int = 20000
    rng_seed: int = 0
    eval_every: int = 500
    gradient_clip_norm: float = 5.0
    precision: str = "float32"
    optimizer: str = "sgd"
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.precision not in _PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "rng_seed": self.rng_seed,
            "eval_every": self.eval_every,
            "gradient_clip_norm": self.gradient_clip_norm,
            "precision": self.precision,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainReport:
    steps: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    val_kl_steps: list[int] = field(default_factory=list)
    val_kl: list[float] = field(default_factory=list)
    wall_clock_s: float = 0.0
    checkpoint_path: str | None = None


def _sequence_pair(item):
    if hasattr(item, "frames") and hasattr(item, "audio"):
        return np.asarray(item.frames), np.asarray(item.audio)
    frames, audio = item[0], item[1]
    return np.asarray(frames), np.asarray(audio)


def _order_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1000003, epoch]))

def _noise_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2000003, step]))

def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 3000003]))


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for 1-based `step`, a pure function of (seed, step)."""
    per_epoch = math.ceil(n / batch_size)
    epoch = (step - 1) // per_epoch
    k = (step - 1) % per_epoch
    perm = _order_rng(seed, epoch).permutation(n)
    return perm[k * batch_size : (k + 1) * batch_size]


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


class _Sgd:
    def __init__(self, params: ModelParams, momentum: float):
        self.momentum = momentum
        self.v = {n: np.zeros_like(a) for n, a in params.arrays.items()}

    def step(self, params: ModelParams, grads, lr: float):
        for n, arr in params.arrays.items():
            self.v[n] = self.momentum * self.v[n] + grads[n]
            arr -= (lr * self.v[n]).astype(arr.dtype, copy=False)

    def slots(self):
        return {"v": self.v}

    def load_slots(self, slots):
        self.v = dict(slots["v"])


class _Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        self.s = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        self.t = 0

    def step(self, params: ModelParams, grads, lr: float):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for n, arr in params.arrays.items():
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1 - self.beta1) * g
            self.s[n] = self.beta2 * self.s[n] + (1 - self.beta2) * np.square(g)
            update = (self.m[n] / b1c) / (np.sqrt(self.s[n] / b2c) + self.eps)
            arr -= (lr * update).astype(arr.dtype, copy=False)

    def slots(self):
        t_arr = np.array([self.t], dtype=np.int64)
        return {"m": self.m, "s": self.s, "t": {"t": t_arr}}

    def load_slots(self, slots):
        self.m = dict(slots["m"])
        self.s = dict(slots["s"])
        self.t = int(slots["t"]["t"][0])


def _make_optimizer(train_cfg: TrainConfig, params: ModelParams):
    if train_cfg.optimizer == "sgd":
        return _Sgd(params, train_cfg.momentum)
    return _Adam(params)


def validation_kl(
    params: ModelParams,
    cfg: ModelConfig,
    dataset,
    max_sequences: int | None = None,
) -> float:
    """Mean per-step KL between the two posterior chains over a dataset.

    Forward-only (encoders + chains; no decode), used to track how well the
    audio posterior shadows the frame posterior on held-out data.
    """
    n = len(dataset) if max_sequences is None else min(len(dataset), max_sequences)
    if n == 0:
        raise ValueError("validation dataset is empty")
    p = _as_tensors(params, trainable=False)
    kls = []
    for i in range(n):
        frames, audio = _sequence_pair(dataset[i])
        frames = frames.astype(params.dtype, copy=False)
        audio = audio.astype(params.dtype, copy=False)
        t_len = frames.shape[0]
        emb_f, _ = _encode_frames_graph(ad.constant(frames), p, cfg)
        emb_a = _encode_audio_graph(ad.constant(audio), p)
        embs_f = [ad.getitem(emb_f, (slice(t, t + 1),)) for t in range(t_len)]
        embs_a = [ad.getitem(emb_a, (slice(t, t + 1),)) for t in range(t_len)]
        mus_f, lvs_f, _ = _chain_graph(embs_f, "frame_chain", p, cfg)
        mus_a, lvs_a, _ = _chain_graph(embs_a, "audio_chain", p, cfg)
        for t in range(t_len):
            mq, lq = mus_f[t].data[0], lvs_f[t].data[0]
            mp, lp = mus_a[t].data[0], lvs_a[t].data[0]
            kls.append(
                0.5
                * float(
                    np.sum(
                        lp - lq + np.exp(lq - lp) + np.square(mq - mp) * np.exp(-lp) - 1.0
                    )
                )
            )
    return float(np.mean(kls))


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset,
    val_dataset=None,
    log_path=None,
    checkpoint_path=None,
    resume_from=None,
) -> tuple[ModelParams, TrainReport]:
    """Run the training loop; returns final parameters and a step-series report.

    dataset items provide .frames (T, H, W, C) and .audio (T, A) (tuples also
    accepted); all sequences must share shapes. Fully deterministic given
    train_cfg.rng_seed. A NaN/Inf loss aborts with the step index and the last
    finite checkpoint in the error message.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("training dataset is empty")
    shapes = {(_sequence_pair(dataset[i])[0].shape, _sequence_pair(dataset[i])[1].shape) for i in range(n)}
    if len(shapes) != 1:
        raise ValueError("all training sequences must share (T, H, W, C) and (T, A)")
    (fshape, ashape) = next(iter(shapes))
    if fshape[0] < 2:
        raise ValueError("training sequences need T >= 2")
    if fshape[0] != ashape[0]:
        raise ValueError("frame and audio streams must share T")

    dtype = train_cfg.dtype
    start_step = 0
    if resume_from is not None:
        params, start_step, opt_name, slots = load_train_state(resume_from)
        if opt_name != train_cfg.optimizer:
            raise ValueError(
                f"resume state used optimizer {opt_name!r}, config says "
                f"{train_cfg.optimizer!r}"
            )
        params = params if params.dtype == dtype else params.astype(dtype)
        optimizer = _make_optimizer(train_cfg, params)
        optimizer.load_slots(slots)
    else:
        params = init_model_params(model_cfg, _init_rng(train_cfg.rng_seed), dtype)
        optimizer = _make_optimizer(train_cfg, params)

    report = TrainReport()
    log_file = open(log_path, "a") if log_path else None
    last_ckpt = None
    t0 = time.time()

    def save_all(step):
        nonlocal last_ckpt
        if checkpoint_path is None:
            return
        save_checkpoint(params, model_cfg, checkpoint_path)
        save_train_state(
            str(checkpoint_path) + ".state",
            params,
            step,
            train_cfg.optimizer,
            optimizer.slots(),
        )
        last_ckpt = str(checkpoint_path)

    try:
        for step in range(start_step + 1, train_cfg.max_steps + 1):
            idx = _batch_indices(n, train_cfg.batch_size, train_cfg.rng_seed, step)
            pairs = [_sequence_pair(dataset[int(i)]) for i in idx]
            frames = np.stack([f for f, _ in pairs]).astype(dtype)
            audio = np.stack([a for _, a in pairs]).astype(dtype)
            noise = _noise_rng(train_cfg.rng_seed, step).standard_normal(
                (len(idx), fshape[0], model_cfg.latent_dim)
            )

            try:
                total, recon_terms, kl_terms, p_tensors = batch_elbo_graph(
                    frames, audio, params, model_cfg, noise, trainable=True
                )
                ad.backward(total)
            except NumericalFailure as e:
                raise NumericalFailure(
                    f"{e} at step {step}; last finite checkpoint: {last_ckpt}"
                ) from e

            grads = {}
            for name in params.arrays:
                g = p_tensors[name].grad
                if g is None:
                    g = np.zeros_like(params.arrays[name])
                if not np.all(np.isfinite(g)):
                    raise NumericalFailure(
                        f"non-finite gradient in {name} at step {step}; "
                        f"last finite checkpoint: {last_ckpt}"
                    )
                grads[name] = g
            _clip_global_norm(grads, train_cfg.gradient_clip_norm)
            optimizer.step(params, grads, train_cfg.learning_rate)

            total_v = total.item()
            recon_v = float(sum(r.item() for r in recon_terms))
            kl_v = float(sum(k.item() for k in kl_terms))
            report.steps.append(step)
            report.total.append(total_v)
            report.recon.append(recon_v)
            report.kl.append(kl_v)
            if log_file:
                log_file.write(
                    json.dumps(
                        {"step": step, "total": total_v, "recon": recon_v, "kl": kl_v}
                    )
                    + "\n"
                )

            if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
                if val_dataset is not None and len(val_dataset) > 0:
                    vkl = validation_kl(params, model_cfg, val_dataset)
                    report.val_kl_steps.append(step)
                    report.val_kl.append(vkl)
                    if log_file:
                        log_file.write(
                            json.dumps({"step": step, "val_kl": vkl}) + "\n"
                        )
                save_all(step)
                if log_file:
                    log_file.flush()
        if last_ckpt is None:
            save_all(train_cfg.max_steps)
    finally:
        if log_file:
            log_file.close()

    report.wall_clock_s = time.time() - t0
    report.checkpoint_path = last_ckpt
    return params, report


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    per_group: dict[str, float]
    num_coordinates: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def finite_difference_gradcheck(
    model_cfg: ModelConfig,
    sample,
    epsilon: float = 1e-5,
    num_coordinates: int = 200,
    rng_seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients against central differences in float64.

    Coordinates are sampled from every parameter group. The loss must be
    bit-deterministic in the parameters (it is evaluated twice up front; any
    difference raises ContractViolation). Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-5); the 1e-5 floor
    turns the test into an absolute one for near-zero gradients, where
    central differences bottom out at cancellation noise (~1e-10 here).
    """
    frames, audio = _sequence_pair(sample)
    frames = frames.astype(np.float64)
    audio = audio.astype(np.float64)
    t_len = frames.shape[0]
    params = init_model_params(
        model_cfg, np.random.default_rng(np.random.SeedSequence([rng_seed, 11])), np.float64
    )
    noise = np.random.default_rng(
        np.random.SeedSequence([rng_seed, 13])
    ).standard_normal((1, t_len, model_cfg.latent_dim))

    def loss() -> float:
        total, _, _, _ = batch_elbo_graph(
            frames[None], audio[None], params, model_cfg, noise, trainable=False
        )
        return total.item()

    first, second = loss(), loss()
    if first != second:
        raise ContractViolation("loss is not deterministic in the parameters")

    total, _, _, p_tensors = batch_elbo_graph(
        frames[None], audio[None], params, model_cfg, noise, trainable=True
    )
    ad.backward(total)
    grads = {n: p_tensors[n].grad for n in params.arrays}

    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 17]))
    groups = list(PARAM_GROUPS)
    per_group_counts = {g: num_coordinates // len(groups) for g in groups}
    for g in groups[: num_coordinates % len(groups)]:
        per_group_counts[g] += 1

    max_rel = 0.0
    per_group: dict[str, float] = {}
    for group in groups:
        names = sorted(params.group(group))
        sizes = np.array([params.arrays[n].size for n in names], dtype=np.float64)
        probs = sizes / sizes.sum()
        worst = 0.0
        for _ in range(per_group_counts[group]):
            name = names[int(rng.choice(len(names), p=probs))]
            arr = params.arrays[name]
            flat_idx = int(rng.integers(arr.size))
            orig = arr.flat[flat_idx]
            arr.flat[flat_idx] = orig + epsilon
            up = loss()
            arr.flat[flat_idx] = orig - epsilon
            down = loss()
            arr.flat[flat_idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            analytic = float(grads[name].flat[flat_idx]) if grads[name] is not None else 0.0
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
            worst = max(worst, rel)
        per_group[group] = worst
        max_rel = max(max_rel, worst)
    return GradCheckResult(max_rel, per_group, num_coordinates)
