"""The paired-modality stochastic sequence model.

A frame stream F (T, H, W, C) and an aligned audio-feature stream A (T, A)
are embedded by modality-specific encoders, then two recurrent chains emit a
diagonal-Gaussian latent posterior per timestep, one from frames and one
from audio. Training reconstructs each frame from a latent sampled from the
FRAME posterior while penalizing the per-step KL between the frame posterior
and the audio posterior; generation samples latents from the AUDIO posterior
instead, so audio alone drives the decoded video. That train/test asymmetry
is fixed, not configurable.

The decoder receives skip connections from the first frame's encoder tower
at every timestep, so static content is copied and the latent only has to
carry what changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericalFailure
from .gaussians import LOG_VAR_MAX, DiagonalGaussian

_GATE_ORDER = "ifgo"  # input, forget, cell, output


def default_enc_channels(height: int) -> tuple[int, ...]:
    """Encoder tower widths: 4 levels for 64x64, 3 for 32x32 and below,
    2 for very small inputs."""
    if height <= 8:
        return (8, 16)
    if height <= 32:
        return (16, 32, 64)
    return (16, 32, 64, 128)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes and loss weights.

    recon_weight and kl_weight are the reconstruction and posterior-alignment
    weights of the training objective.
    """

    latent_dim: int = 16
    frame_hidden_dim: int = 128
    audio_hidden_dim: int = 128
    recurrent_hidden_dim: int = 128
    height: int = 32
    width: int = 32
    channels: int = 1
    audio_dim: int = 8
    recon_weight: float = 1.0
    kl_weight: float = 1e-6
    enc_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.recon_weight <= 0:
            raise ValueError("recon_weight must be > 0")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if len(self.enc_channels) < 1:
            raise ValueError("enc_channels must name at least one level")
        object.__setattr__(self, "enc_channels", tuple(self.enc_channels))
        down = 1 << self.levels
        if self.height % down or self.width % down:
            raise ValueError(
                f"height/width ({self.height}x{self.width}) must be divisible "
                f"by 2^levels = {down}"
            )

    @property
    def levels(self) -> int:
        return len(self.enc_channels)

    @property
    def bottleneck_hw(self) -> tuple[int, int]:
        return self.height >> self.levels, self.width >> self.levels

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "frame_hidden_dim": self.frame_hidden_dim,
            "audio_hidden_dim": self.audio_hidden_dim,
            "recurrent_hidden_dim": self.recurrent_hidden_dim,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "audio_dim": self.audio_dim,
            "recon_weight": self.recon_weight,
            "kl_weight": self.kl_weight,
            "enc_channels": list(self.enc_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "enc_channels" in d:
            d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)


PARAM_GROUPS = (
    "frame_encoder",
    "audio_encoder",
    "frame_chain",
    "audio_chain",
    "decoder",
)


class ModelParams:
    """All learnable weights, as a flat name -> array mapping.

    Names are "<group>/<layer>/<w|b>" with groups from PARAM_GROUPS, e.g.
    "frame_encoder/conv0/w" or "audio_chain/head/b".
    """

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = dict(arrays)
        for name, arr in self.arrays.items():
            group = name.split("/", 1)[0]
            if group not in PARAM_GROUPS:
                raise ValueError(f"unknown parameter group in name {name!r}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name!r} contains non-finite values")

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def group(self, group: str) -> dict[str, np.ndarray]:
        if group not in PARAM_GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        prefix = group + "/"
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix)}

    def chain(self, which: str) -> dict[str, np.ndarray]:
        """The five arrays of one posterior chain ('frame' or 'audio')."""
        if which not in ("frame", "audio"):
            raise ValueError("chain must be 'frame' or 'audio'")
        return self.group(f"{which}_chain")

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.arrays.values())).dtype

    def num_scalars(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.arrays.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def _decoder_tconv_channels(cfg: ModelConfig) -> list[tuple[int, int]]:
    """(cin, cout) per up-sampling stage; cin includes the skip concat."""
    enc = cfg.enc_channels
    levels = cfg.levels
    stages = []
    for i in range(levels):
        cin = 2 * enc[levels - 1 - i]
        cout = enc[levels - 2 - i] if i < levels - 1 else enc[0]
        stages.append((cin, cout))
    return stages


# Posterior heads start with a larger fan-in-scaled spread than the rest of
# the network: the two chains then emit clearly distinct means/variances from
# step one, which gives the cross-modal alignment term signal immediately.
# Washes out within a few hundred steps of training.
POSTERIOR_HEAD_INIT_GAIN = 6.0


def init_model_params(
    cfg: ModelConfig, rng_seed: int | np.random.Generator = 0, dtype=np.float32
) -> ModelParams:
    """Fan-in-scaled uniform init; recurrent forget-gate biases start at 1."""
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )

    arrays: dict[str, np.ndarray] = {}

    def mat(name, shape, fan_in, gain=1.0):
        limit = gain / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)

    def vec(name, size):
        arrays[name] = np.zeros(size, dtype=dtype)

    def lstm(prefix, input_dim, hidden):
        mat(f"{prefix}/lstm/wx", (input_dim, 4 * hidden), input_dim)
        mat(f"{prefix}/lstm/wh", (hidden, 4 * hidden), hidden)
        vec(f"{prefix}/lstm/b", 4 * hidden)
        arrays[f"{prefix}/lstm/b"][hidden : 2 * hidden] = 1.0  # forget gate

    enc = cfg.enc_channels
    bh, bw = cfg.bottleneck_hw
    rh = cfg.recurrent_hidden_dim
    d = cfg.latent_dim

    cin = cfg.channels
    for i, cout in enumerate(enc):
        mat(f"frame_encoder/conv{i}/w", (4, 4, cin, cout), 16 * cin)
        vec(f"frame_encoder/conv{i}/b", cout)
        cin = cout
    flat = bh * bw * enc[-1]
    mat("frame_encoder/fc/w", (flat, cfg.frame_hidden_dim), flat)
    vec("frame_encoder/fc/b", cfg.frame_hidden_dim)

    mat("audio_encoder/fc0/w", (cfg.audio_dim, cfg.audio_hidden_dim), cfg.audio_dim)
    vec("audio_encoder/fc0/b", cfg.audio_hidden_dim)
    mat(
        "audio_encoder/fc1/w",
        (cfg.audio_hidden_dim, cfg.audio_hidden_dim),
        cfg.audio_hidden_dim,
    )
    vec("audio_encoder/fc1/b", cfg.audio_hidden_dim)

    lstm("frame_chain", cfg.frame_hidden_dim, rh)
    mat("frame_chain/head/w", (rh, 2 * d), rh, gain=POSTERIOR_HEAD_INIT_GAIN)
    vec("frame_chain/head/b", 2 * d)

    lstm("audio_chain", cfg.audio_hidden_dim, rh)
    mat("audio_chain/head/w", (rh, 2 * d), rh, gain=POSTERIOR_HEAD_INIT_GAIN)
    vec("audio_chain/head/b", 2 * d)

    mat("decoder/state0/w", (cfg.frame_hidden_dim, 2 * rh), cfg.frame_hidden_dim)
    vec("decoder/state0/b", 2 * rh)
    lstm("decoder", d, rh)
    mat("decoder/fc/w", (rh, flat), rh)
    vec("decoder/fc/b", flat)
    for i, (tcin, tcout) in enumerate(_decoder_tconv_channels(cfg)):
        mat(f"decoder/tconv{i}/w", (4, 4, tcout, tcin), 16 * tcin)
        vec(f"decoder/tconv{i}/b", tcout)
    mat("decoder/out/w", (1, 1, enc[0], cfg.channels), enc[0])
    vec("decoder/out/b", cfg.channels)

    return ModelParams(arrays)


# ---------------------------------------------------------------------------
# domain value types


@dataclass(frozen=True)
class SkipStack:
    """Multi-resolution feature maps from one frame's encoder tower.

    features[i] has shape (H/2^(i+1), W/2^(i+1), enc_channels[i]).
    """

    features: tuple[np.ndarray, ...]

    def __post_init__(self):
        for a, b in zip(self.features, self.features[1:]):
            if a.shape[0] != 2 * b.shape[0] or a.shape[1] != 2 * b.shape[1]:
                raise ValueError("skip features must halve spatial dims per level")


@dataclass(frozen=True)
class PosteriorSequence:
    """T diagonal Gaussians sharing dimension D, stored as stacked arrays."""

    means: np.ndarray  # (T, D)
    log_vars: np.ndarray  # (T, D)

    def __post_init__(self):
        if self.means.shape != self.log_vars.shape or self.means.ndim != 2:
            raise ValueError("means and log_vars must both have shape (T, D)")

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, t: int) -> DiagonalGaussian:
        return DiagonalGaussian(self.means[t], self.log_vars[t])

    @property
    def gaussians(self) -> list[DiagonalGaussian]:
        return [self[t] for t in range(len(self))]


@dataclass(frozen=True)
class LossReport:
    """Per-step breakdown of one objective evaluation (a minimization loss)."""

    total: float
    recon_per_t: np.ndarray
    kl_per_t: np.ndarray

    @property
    def recon_total(self) -> float:
        return float(self.recon_per_t.sum())

    @property
    def kl_total(self) -> float:
        return float(self.kl_per_t.sum())


@dataclass(frozen=True)
class GenerationResult:
    """K sampled frame streams plus the latents and diagnostics behind them.

    per_step_kl[t] is the KL from the audio posterior at step t to a standard
    normal: a measure of how concentrated the latent source was while
    generating (the audio posterior is shared by all K samples).
    """

    samples: np.ndarray  # (K, T, H, W, C)
    latents: np.ndarray  # (K, T, D)
    per_step_kl: np.ndarray  # (T,)


# ---------------------------------------------------------------------------
# stream validation


def validate_frame_stream(frames: np.ndarray, cfg: ModelConfig | None = None):
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"frame stream must be (T, H, W, C), got {frames.shape}")
    if frames.shape[0] < 2:
        raise ValueError("frame stream needs T >= 2")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frame stream contains non-finite values")
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ValueError("frame values must lie in [0, 1]")
    if cfg is not None and frames.shape[1:] != (cfg.height, cfg.width, cfg.channels):
        raise ValueError(
            f"frame shape {frames.shape[1:]} does not match config "
            f"({cfg.height}, {cfg.width}, {cfg.channels})"
        )
    return frames


def validate_audio_stream(audio: np.ndarray, cfg: ModelConfig | None = None):
    audio = np.asarray(audio)
    if audio.ndim != 2:
        raise ValueError(f"audio stream must be (T, A), got {audio.shape}")
    if not np.all(np.isfinite(audio)):
        raise ValueError("audio stream contains non-finite values")
    if cfg is not None and audio.shape[1] != cfg.audio_dim:
        raise ValueError(
            f"audio feature dim {audio.shape[1]} does not match config "
            f"audio_dim={cfg.audio_dim}"
        )
    return audio


# ---------------------------------------------------------------------------
# graph builders (shared by training loss, public ops, and generation)


def _as_tensors(params: ModelParams, trainable: bool) -> dict[str, Tensor]:
    make = ad.parameter if trainable else ad.constant
    return {k: make(v) for k, v in params.arrays.items()}


def _check_finite(arr: np.ndarray, subnet: str):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"{subnet} produced non-finite values")


def _encode_frames_graph(x: Tensor, p: dict[str, Tensor], cfg: ModelConfig):
    """x: (N, H, W, C) -> (embedding (N, F), per-level skip Tensors)."""
    skips = []
    h = x
    for i in range(cfg.levels):
        h = ad.elu(
            ad.conv2d(
                h,
                p[f"frame_encoder/conv{i}/w"],
                p[f"frame_encoder/conv{i}/b"],
                stride=2,
                pad=1,
            )
        )
        skips.append(h)
    bh, bw = cfg.bottleneck_hw
    flat = ad.reshape(h, (x.shape[0], bh * bw * cfg.enc_channels[-1]))
    emb = ad.linear(flat, p["frame_encoder/fc/w"], p["frame_encoder/fc/b"])
    return emb, skips


def _encode_audio_graph(a: Tensor, p: dict[str, Tensor]) -> Tensor:
    h = ad.elu(ad.linear(a, p["audio_encoder/fc0/w"], p["audio_encoder/fc0/b"]))
    return ad.linear(h, p["audio_encoder/fc1/w"], p["audio_encoder/fc1/b"])


def _lstm_step(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    hidden = wh.shape[0]
    gates = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
    i = ad.sigmoid(ad.getitem(gates, (slice(None), slice(0, hidden))))
    f = ad.sigmoid(ad.getitem(gates, (slice(None), slice(hidden, 2 * hidden))))
    g = ad.ttanh(ad.getitem(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
    o = ad.sigmoid(ad.getitem(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.ttanh(c_new))
    return h_new, c_new


def _soft_clamp(x: Tensor, bound: float = LOG_VAR_MAX) -> Tensor:
    """Smooth, strictly-bounded map onto (-bound, bound); identity-like near 0."""
    return ad.scale(ad.ttanh(ad.scale(x, 1.0 / bound)), bound)


def _chain_graph(
    embs_per_t: list[Tensor],
    prefix: str,
    p: dict[str, Tensor],
    cfg: ModelConfig,
    state: tuple[Tensor, Tensor] | None = None,
):
    """Run one posterior chain over T embedding Tensors of shape (B, hidden).

    Returns (means, log_vars, final state); entry t depends only on
    embeddings 1..t because the state threads forward.
    """
    d = cfg.latent_dim
    batch = embs_per_t[0].shape[0]
    dtype = embs_per_t[0].dtype
    if state is None:
        zeros = np.zeros((batch, cfg.recurrent_hidden_dim), dtype=dtype)
        state = (ad.constant(zeros), ad.constant(zeros.copy()))
    h, c = state
    wx, wh, b = p[f"{prefix}/lstm/wx"], p[f"{prefix}/lstm/wh"], p[f"{prefix}/lstm/b"]
    means, log_vars = [], []
    for emb in embs_per_t:
        h, c = _lstm_step(emb, h, c, wx, wh, b)
        out = ad.linear(h, p[f"{prefix}/head/w"], p[f"{prefix}/head/b"])
        means.append(ad.getitem(out, (slice(None), slice(0, d))))
        log_vars.append(_soft_clamp(ad.getitem(out, (slice(None), slice(d, 2 * d)))))
    return means, log_vars, (h, c)


def _decoder_initial_state(emb1: Tensor, p: dict[str, Tensor], rh: int):
    hc = ad.ttanh(ad.linear(emb1, p["decoder/state0/w"], p["decoder/state0/b"]))
    h0 = ad.getitem(hc, (slice(None), slice(0, rh)))
    c0 = ad.getitem(hc, (slice(None), slice(rh, 2 * rh)))
    return h0, c0


def _decoder_tower(g_flat: Tensor, skips: list[Tensor], reps: int, p, cfg):
    """Map (N, recurrent_hidden) decoder states to (N, H, W, C) frames.

    skips are per-sequence feature maps (B, h, w, c); each is repeated
    `reps` times along the batch axis so N = B*reps rows line up.
    """
    bh, bw = cfg.bottleneck_hw
    n = g_flat.shape[0]
    x = ad.elu(ad.linear(g_flat, p["decoder/fc/w"], p["decoder/fc/b"]))
    x = ad.reshape(x, (n, bh, bw, cfg.enc_channels[-1]))
    for i in range(cfg.levels):
        skip = skips[cfg.levels - 1 - i]
        if reps > 1:
            skip = ad.tile_leading(skip, reps)
        x = ad.concat([x, skip], axis=3)
        x = ad.elu(
            ad.conv2d_transpose(
                x, p[f"decoder/tconv{i}/w"], p[f"decoder/tconv{i}/b"], stride=2, pad=1
            )
        )
    return ad.sigmoid(ad.conv2d(x, p["decoder/out/w"], p["decoder/out/b"]))


def _decode_sequence_graph(
    zs: list[Tensor],
    skips: list[Tensor],
    emb1: Tensor,
    p: dict[str, Tensor],
    cfg: ModelConfig,
):
    """Decode T latents (B, D) into frames (B, T, H, W, C).

    The recurrent state is initialized from the first frame's embedding; the
    conv tower runs once over all B*T steps since it carries no recurrence.
    """
    rh = cfg.recurrent_hidden_dim
    batch = zs[0].shape[0]
    t_len = len(zs)
    h, c = _decoder_initial_state(emb1, p, rh)
    gs = []
    for z in zs:
        h, c = _lstm_step(z, h, c, p["decoder/lstm/wx"], p["decoder/lstm/wh"], p["decoder/lstm/b"])
        gs.append(ad.reshape(h, (batch, 1, rh)))
    g_all = ad.reshape(ad.concat(gs, axis=1), (batch * t_len, rh))
    frames = _decoder_tower(g_all, skips, t_len, p, cfg)
    return ad.reshape(frames, (batch, t_len, cfg.height, cfg.width, cfg.channels))


def _kl_scalar(mu_q, lv_q, mu_p, lv_p, batch: int) -> Tensor:
    """Batch-mean KL(q||p) summed over latent dims, as a graph scalar."""
    diff_lv = ad.sub(lv_p, lv_q)
    ratio = ad.texp(ad.sub(lv_q, lv_p))
    sq = ad.mul(ad.square(ad.sub(mu_q, mu_p)), ad.texp(ad.neg(lv_p)))
    total = ad.tsum(ad.add(ad.add(diff_lv, ratio), sq))
    d = mu_q.shape[1]
    total = ad.add(total, ad.constant(np.asarray(-batch * d, dtype=total.dtype)))
    return ad.scale(total, 0.5 / batch)


def batch_elbo_graph(
    frames: np.ndarray,
    audio: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    noise: np.ndarray,
    trainable: bool = True,
):
    """Build the full training objective graph for a (B, T, ...) batch.

    Returns (total, recon_terms, kl_terms, param_tensors); all per-step terms
    are batch-mean scalars, reconstruction is 0.5*sum-of-squares per frame,
    and total = recon_weight * sum(recon) + kl_weight * sum(kl).
    """
    b, t_len = frames.shape[:2]
    if audio.shape[:2] != (b, t_len):
        raise ValueError(
            f"frame and audio streams disagree on (B, T): "
            f"{frames.shape[:2]} vs {audio.shape[:2]}"
        )
    if noise.shape != (b, t_len, cfg.latent_dim):
        raise ValueError("noise must have shape (B, T, latent_dim)")

    p = _as_tensors(params, trainable)
    dtype = params.dtype
    frames = frames.astype(dtype, copy=False)
    audio = audio.astype(dtype, copy=False)
    noise = noise.astype(dtype, copy=False)

    flat_frames = ad.constant(frames.reshape(b * t_len, cfg.height, cfg.width, cfg.channels))
    emb_f_all, skips_all = _encode_frames_graph(flat_frames, p, cfg)
    _check_finite(emb_f_all.data, "frame_encoder")

    emb_a_all = _encode_audio_graph(
        ad.constant(audio.reshape(b * t_len, cfg.audio_dim)), p
    )
    _check_finite(emb_a_all.data, "audio_encoder")

    # per-timestep embedding slices, and first-frame rows for skips/state
    emb_f = ad.reshape(emb_f_all, (b, t_len, cfg.frame_hidden_dim))
    emb_a = ad.reshape(emb_a_all, (b, t_len, cfg.audio_hidden_dim))
    embs_f = [ad.getitem(emb_f, (slice(None), t)) for t in range(t_len)]
    embs_a = [ad.getitem(emb_a, (slice(None), t)) for t in range(t_len)]
    first_rows = slice(0, None, t_len)
    skips_f1 = [ad.getitem(s, (first_rows,)) for s in skips_all]
    emb_f1 = ad.getitem(emb_f_all, (first_rows,))

    mus_f, lvs_f, _ = _chain_graph(embs_f, "frame_chain", p, cfg)
    _check_finite(mus_f[-1].data, "frame_chain")
    mus_a, lvs_a, _ = _chain_graph(embs_a, "audio_chain", p, cfg)
    _check_finite(mus_a[-1].data, "audio_chain")

    zs = []
    for t in range(t_len):
        eps = ad.constant(noise[:, t, :])
        std = ad.texp(ad.scale(lvs_f[t], 0.5))
        zs.append(ad.add(mus_f[t], ad.mul(std, eps)))

    frames_hat = _decode_sequence_graph(zs, skips_f1, emb_f1, p, cfg)
    _check_finite(frames_hat.data, "decoder")

    targets = ad.constant(frames)
    recon_terms, kl_terms = [], []
    for t in range(t_len):
        diff = ad.sub(
            ad.getitem(frames_hat, (slice(None), t)),
            ad.getitem(targets, (slice(None), t)),
        )
        recon_terms.append(ad.scale(ad.tsum(ad.square(diff)), 0.5 / b))
        kl_terms.append(_kl_scalar(mus_f[t], lvs_f[t], mus_a[t], lvs_a[t], b))

    recon_sum = recon_terms[0]
    for term in recon_terms[1:]:
        recon_sum = ad.add(recon_sum, term)
    kl_sum = kl_terms[0]
    for term in kl_terms[1:]:
        kl_sum = ad.add(kl_sum, term)
    total = ad.add(
        ad.scale(recon_sum, cfg.recon_weight), ad.scale(kl_sum, cfg.kl_weight)
    )
    if not np.isfinite(total.data):
        raise NumericalFailure("objective total is non-finite")
    return total, recon_terms, kl_terms, p


def _make_rng(noise_source) -> np.random.Generator:
    if isinstance(noise_source, np.random.Generator):
        return noise_source
    return np.random.default_rng(noise_source)


# ---------------------------------------------------------------------------
# public operations


def encode_frame(frame: np.ndarray, params: ModelParams, cfg: ModelConfig):
    """Embed one (H, W, C) frame; also returns its skip-feature stack."""
    frame = np.asarray(frame)
    if frame.shape != (cfg.height, cfg.width, cfg.channels):
        raise ValueError(
            f"frame shape {frame.shape} does not match config "
            f"({cfg.height}, {cfg.width}, {cfg.channels})"
        )
    p = _as_tensors(params, trainable=False)
    emb, skips = _encode_frames_graph(
        ad.constant(frame[None].astype(params.dtype)), p, cfg
    )
    return emb.data[0], SkipStack(tuple(s.data[0] for s in skips))


def encode_audio(a_t: np.ndarray, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """Embed one (A,) audio feature vector."""
    a_t = np.asarray(a_t)
    if a_t.shape != (cfg.audio_dim,):
        raise ValueError(
            f"audio vector shape {a_t.shape} does not match config "
            f"audio_dim={cfg.audio_dim}"
        )
    p = _as_tensors(params, trainable=False)
    emb = _encode_audio_graph(ad.constant(a_t[None].astype(params.dtype)), p)
    return emb.data[0]


def run_posterior_chain(
    embeddings: np.ndarray,
    chain_params: dict[str, np.ndarray],
    initial_state: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Map (T, hidden) embeddings to a PosteriorSequence plus final state.

    chain_params holds the five '<x>_chain/...' arrays of one chain (see
    ModelParams.chain). Entry t of the result depends only on embeddings
    1..t; recurrent state is threaded through all steps.
    """
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise ValueError("embeddings must be (T, hidden) with T >= 1")
    prefix = next(iter(chain_params)).split("/", 1)[0]
    p = {k: ad.constant(v) for k, v in chain_params.items()}
    hidden = chain_params[f"{prefix}/lstm/wh"].shape[0]
    d = chain_params[f"{prefix}/head/w"].shape[1] // 2
    cfg_like = _ChainDims(latent_dim=d, recurrent_hidden_dim=hidden)

    state = None
    if initial_state is not None:
        state = (
            ad.constant(np.asarray(initial_state[0])[None]),
            ad.constant(np.asarray(initial_state[1])[None]),
        )
    embs = [ad.constant(embeddings[t][None]) for t in range(embeddings.shape[0])]
    means, log_vars, (h, c) = _chain_graph(embs, prefix, p, cfg_like, state)
    seq = PosteriorSequence(
        np.stack([m.data[0] for m in means]),
        np.stack([lv.data[0] for lv in log_vars]),
    )
    return seq, (h.data[0], c.data[0])


@dataclass(frozen=True)
class _ChainDims:
    latent_dim: int
    recurrent_hidden_dim: int


def decoder_initial_state(
    embedding: np.ndarray, params: ModelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Initial decoder recurrent state derived from a first-frame embedding."""
    p = _as_tensors(params, trainable=False)
    rh = params.arrays["decoder/lstm/wh"].shape[0]
    h, c = _decoder_initial_state(
        ad.constant(np.asarray(embedding)[None].astype(params.dtype)), p, rh
    )
    return h.data[0], c.data[0]


def decode_frame(
    z_t: np.ndarray,
    skips: SkipStack,
    decoder_state: tuple[np.ndarray, np.ndarray],
    params: ModelParams,
    cfg: ModelConfig,
):
    """Decode one latent into a frame; returns (frame, next decoder state)."""
    z_t = np.asarray(z_t)
    if z_t.shape != (cfg.latent_dim,):
        raise ValueError(
            f"latent shape {z_t.shape} does not match latent_dim={cfg.latent_dim}"
        )
    p = _as_tensors(params, trainable=False)
    h = ad.constant(np.asarray(decoder_state[0])[None].astype(params.dtype))
    c = ad.constant(np.asarray(decoder_state[1])[None].astype(params.dtype))
    h, c = _lstm_step(
        ad.constant(z_t[None].astype(params.dtype)),
        h,
        c,
        p["decoder/lstm/wx"],
        p["decoder/lstm/wh"],
        p["decoder/lstm/b"],
    )
    skip_tensors = [ad.constant(s[None]) for s in skips.features]
    frame = _decoder_tower(h, skip_tensors, 1, p, cfg)
    return frame.data[0], (h.data[0], c.data[0])


def elbo_loss(
    frames: np.ndarray,
    audio: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    noise_source: int | np.random.Generator = 0,
) -> LossReport:
    """Evaluate the training objective on one paired sequence.

    Draws exactly one standard-normal array of shape (1, T, latent_dim) from
    noise_source (in float64, then cast to the parameter dtype), so a fixed
    seed gives a bit-identical report.
    """
    frames = validate_frame_stream(frames, cfg)
    audio = validate_audio_stream(audio, cfg)
    if frames.shape[0] != audio.shape[0]:
        raise ValueError(
            f"frame stream has T={frames.shape[0]} but audio has T={audio.shape[0]}"
        )
    rng = _make_rng(noise_source)
    noise = rng.standard_normal((1, frames.shape[0], cfg.latent_dim))
    total, recon_terms, kl_terms, _ = batch_elbo_graph(
        frames[None], audio[None], params, cfg, noise, trainable=False
    )
    return LossReport(
        total=total.item(),
        recon_per_t=np.array([r.item() for r in recon_terms]),
        kl_per_t=np.array([k.item() for k in kl_terms]),
    )


def generate(
    first_frame: np.ndarray,
    audio: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    num_samples: int = 1,
    noise_source: int | Sequence[int] | np.random.Generator = 0,
) -> GenerationResult:
    """Generate K frame streams from a face image and an audio stream.

    Latents are sampled per step from the audio posterior chain; the first
    frame supplies skip features and the decoder's initial state and is
    emitted verbatim as frame 1. noise_source may be a master seed (per-sample
    seeds are spawned from it), an explicit sequence of K per-sample seeds, or
    a Generator drawn from directly.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    first_frame = np.asarray(first_frame)
    if first_frame.shape != (cfg.height, cfg.width, cfg.channels):
        raise ValueError(
            f"first frame shape {first_frame.shape} does not match config"
        )
    audio = validate_audio_stream(audio, cfg)
    if not params.all_finite():
        raise NumericalFailure("model parameters contain non-finite values")
    t_len = audio.shape[0]
    d = cfg.latent_dim
    dtype = params.dtype

    if isinstance(noise_source, np.random.Generator):
        eps = noise_source.standard_normal((num_samples, t_len, d))
    elif isinstance(noise_source, (int, np.integer)):
        seeds = np.random.SeedSequence(int(noise_source)).spawn(num_samples)
        eps = np.stack(
            [np.random.default_rng(s).standard_normal((t_len, d)) for s in seeds]
        )
    else:
        seeds = list(noise_source)
        if len(seeds) != num_samples:
            raise ValueError("need exactly one noise seed per sample")
        eps = np.stack(
            [np.random.default_rng(s).standard_normal((t_len, d)) for s in seeds]
        )
    eps = eps.astype(dtype)

    p = _as_tensors(params, trainable=False)
    emb1, skips = _encode_frames_graph(
        ad.constant(first_frame[None].astype(dtype)), p, cfg
    )
    emb_a_all = _encode_audio_graph(ad.constant(audio.astype(dtype)), p)
    embs_a = [ad.getitem(emb_a_all, (slice(t, t + 1),)) for t in range(t_len)]
    mus_a, lvs_a, _ = _chain_graph(embs_a, "audio_chain", p, cfg)
    _check_finite(mus_a[-1].data, "audio_chain")

    mu = np.stack([m.data[0] for m in mus_a])  # (T, D)
    lv = np.stack([v.data[0] for v in lvs_a])
    std = np.exp(0.5 * lv)
    latents = mu[None] + std[None] * eps  # (K, T, D)

    per_step_kl = np.array(
        [
            0.5
            * float(
                np.sum(-lv[t] + np.exp(lv[t]) + np.square(mu[t]) - 1.0)
            )
            for t in range(t_len)
        ]
    )

    # decode all K samples as one batch
    k = num_samples
    emb1_k = ad.constant(np.repeat(emb1.data, k, axis=0))
    skips_k = [ad.constant(np.repeat(s.data, k, axis=0)) for s in skips]
    zs = [ad.constant(latents[:, t, :]) for t in range(t_len)]
    frames_hat = _decode_sequence_graph(zs, skips_k, emb1_k, p, cfg)
    _check_finite(frames_hat.data, "decoder")

    samples = np.array(frames_hat.data, copy=True)
    samples[:, 0] = first_frame.astype(dtype)
    return GenerationResult(
        samples=samples, latents=latents, per_step_kl=per_step_kl
    )
