"""Deterministic paired-modality corpus with ground-truth multimodality.

Each sequence is a schematic grayscale face: a fixed head disc, two eyes
that close during blinks, and a mouth ellipse whose opening follows a smooth
driver signal. The audio stream is a noisy random linear lift of a local
driver window, so audio determines the mouth exactly (up to small noise)
while blinks are an independent nuisance process: one audio stream has many
valid videos, and we know precisely which pixels each factor controls.

Corpus files: a JSON manifest plus one binary data file of per-sequence
records. A record is four shape-prefixed little-endian float32 tensors in
fixed order: frames (T, H, W, 1), audio (T, A), driver (T,), blink (T,).
Identical seeds give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1

DRIVER_LOW = 0.05
DRIVER_HIGH = 0.95
MAX_DRIVER_STEP = 0.24  # strictly below the 0.25 smoothness contract

BLINK_ONSET_PROB = 0.15
BLINK_CLOSURE_STEPS = 2

# face geometry, in units of min(H, W); offsets shift the whole face
_HEAD_RADIUS = 0.42
_HEAD_SHADE = 0.60
_BACKGROUND_SHADE = 0.05
_EYE_DY = -0.14
_EYE_DX = 0.15
_EYE_RADIUS = 0.06
_EYE_SHADE = 0.95
_EYE_CLOSED_RY = 0.012
_MOUTH_DY = 0.20
_MOUTH_RX = 0.16
_MOUTH_RY_MIN = 0.02
_MOUTH_RY_SPAN = 0.14
_MOUTH_SHADE = 0.95
_MAX_OFFSET = 0.06  # per-sequence constant head offset range


@dataclass(frozen=True)
class SceneState:
    """Everything that determines one rendered frame."""

    driver: float  # mouth aperture in [0, 1]
    blink: int  # 1 while the eyes are closed
    dx: float  # per-sequence constant head offset, pixels
    dy: float


@dataclass(frozen=True)
class SequenceRecord:
    frames: np.ndarray  # (T, H, W, 1) float32 in [0, 1]
    audio: np.ndarray  # (T, A) float32
    driver: np.ndarray  # (T,) float32
    blink: np.ndarray  # (T,) float32 of {0, 1}
    dx: float
    dy: float


def synth_driver(seed: int, t_len: int) -> np.ndarray:
    """Smooth mouth-aperture signal: three random-phase sinusoids.

    Values stay inside [DRIVER_LOW, DRIVER_HIGH] and successive steps differ
    by at most MAX_DRIVER_STEP, both by construction. Deterministic in seed.
    """
    if t_len < 2:
        raise ValueError("driver length must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    periods = rng.uniform(8.0, 32.0, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    weights = rng.uniform(0.2, 1.0, size=3)
    weights = weights / weights.sum()
    t = np.arange(t_len)[:, None]
    s = (weights * np.sin(2.0 * np.pi * t / periods + phases)).sum(axis=1)
    # analytic bound on the per-step delta of s; shrink amplitude if needed
    max_delta = float((weights * 2.0 * np.sin(np.pi / periods)).sum())
    amp = min(0.45, MAX_DRIVER_STEP / max_delta if max_delta > 0 else 0.45)
    return (0.5 + amp * s).astype(np.float32)


def _disc(dist2: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased coverage of a disc from squared pixel distances."""
    dist = np.sqrt(dist2) - radius
    return np.clip(0.5 - dist, 0.0, 1.0)


def _ellipse(yy, xx, cy, cx, ry, rx) -> np.ndarray:
    e = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) - 1.0
    return np.clip(0.5 - e * min(rx, ry), 0.0, 1.0)


def _face_layout(h: int, w: int, dx: float, dy: float):
    s = min(h, w)
    cy = h / 2.0 + dy
    cx = w / 2.0 + dx
    return s, cy, cx


def render_frame(state: SceneState, h: int, w: int) -> np.ndarray:
    """Render one (H, W, 1) anti-aliased grayscale frame in [0, 1].

    Mouth coverage grows strictly with the driver value, blinks visibly
    change the eye region, and rendering is pure in the state.
    """
    if h < 16 or w < 16:
        raise ValueError("frames must be at least 16x16")
    s, cy, cx = _face_layout(h, w, state.dx, state.dy)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5

    img = np.full((h, w), _BACKGROUND_SHADE)
    head = _disc((yy - cy) ** 2 + (xx - cx) ** 2, _HEAD_RADIUS * s)
    img = img * (1 - head) + _HEAD_SHADE * head

    ey = cy + _EYE_DY * s
    for ex in (cx - _EYE_DX * s, cx + _EYE_DX * s):
        if state.blink:
            cover = _ellipse(yy, xx, ey, ex, _EYE_CLOSED_RY * s, _EYE_RADIUS * s)
        else:
            cover = _disc((yy - ey) ** 2 + (xx - ex) ** 2, _EYE_RADIUS * s)
        img = img * (1 - cover) + _EYE_SHADE * cover

    ry = (_MOUTH_RY_MIN + _MOUTH_RY_SPAN * float(state.driver)) * s
    mouth = _ellipse(yy, xx, cy + _MOUTH_DY * s, cx, ry, _MOUTH_RX * s)
    img = img * (1 - mouth) + _MOUTH_SHADE * mouth

    return img[:, :, None].astype(np.float32)


def face_region_masks(h: int, w: int, dx: float, dy: float) -> dict[str, np.ndarray]:
    """Boolean masks for the blink-driven, mouth-driven, and static regions.

    Derived from the same geometry as the renderer, with a 1.5-unit margin of
    slack around the moving parts; background is everything else.
    """
    s, cy, cx = _face_layout(h, w, dx, dy)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    pad = 1.5
    ey = cy + _EYE_DY * s
    eye = np.zeros((h, w), dtype=bool)
    for ex in (cx - _EYE_DX * s, cx + _EYE_DX * s):
        eye |= (yy - ey) ** 2 + (xx - ex) ** 2 <= (_EYE_RADIUS * s + pad) ** 2
    ry = (_MOUTH_RY_MIN + _MOUTH_RY_SPAN) * s + pad
    rx = _MOUTH_RX * s + pad
    mouth = ((yy - (cy + _MOUTH_DY * s)) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    background = ~(eye | mouth)
    return {"eyes": eye, "mouth": mouth, "background": background}


def synth_blink(seed: int, t_len: int) -> np.ndarray:
    """Blink indicator: Bernoulli onsets with a fixed 2-step closure."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 211]))
    onsets = rng.random(t_len) < BLINK_ONSET_PROB
    blink = np.zeros(t_len, dtype=np.float32)
    t = 0
    while t < t_len:
        if onsets[t] and blink[t] == 0:
            blink[t : t + BLINK_CLOSURE_STEPS] = 1.0
            t += BLINK_CLOSURE_STEPS
        else:
            t += 1
    return blink


def lift_matrix(corpus_seed: int, a_dim: int) -> np.ndarray:
    """Corpus-wide random linear map from a 3-step driver window to A dims."""
    if a_dim < 4:
        raise ValueError("audio feature dimension must be >= 4")
    rng = np.random.default_rng(np.random.SeedSequence([int(corpus_seed), 307]))
    return rng.normal(0.0, 1.0, size=(a_dim, 3)).astype(np.float64)


def synth_audio_features(
    driver: np.ndarray,
    lift: np.ndarray,
    noise_seed: int,
    noise_sigma: float = 0.01,
) -> np.ndarray:
    """Audio features: lift of the edge-clamped window (d_{t-1}, d_t, d_{t+1}).

    Gaussian observation noise (sigma=noise_sigma) is added per entry; with
    noise_sigma=0 the driver is exactly recoverable through the lift's
    pseudo-inverse.
    """
    driver = np.asarray(driver, dtype=np.float64)
    t_len = driver.shape[0]
    padded = np.concatenate([driver[:1], driver, driver[-1:]])
    windows = np.stack(
        [padded[0:t_len], padded[1 : t_len + 1], padded[2 : t_len + 2]], axis=1
    )
    feats = windows @ lift.T
    if noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([int(noise_seed), 401]))
        feats = feats + noise_sigma * rng.standard_normal(feats.shape)
    return feats.astype(np.float32)


def make_sequence(
    driver_seed: int,
    nuisance_seed: int,
    lift: np.ndarray,
    t_len: int,
    h: int,
    w: int,
    noise_sigma: float = 0.01,
) -> SequenceRecord:
    """Build one paired sequence; driver content and nuisance factors come
    from separate seeds so one audio track can pair with many videos."""
    driver = synth_driver(driver_seed, t_len)
    nuisance = np.random.default_rng(np.random.SeedSequence([int(nuisance_seed), 503]))
    dx = float(nuisance.uniform(-_MAX_OFFSET, _MAX_OFFSET) * min(h, w))
    dy = float(nuisance.uniform(-_MAX_OFFSET, _MAX_OFFSET) * min(h, w))
    blink = synth_blink(nuisance_seed, t_len)
    audio = synth_audio_features(driver, lift, noise_seed=nuisance_seed, noise_sigma=noise_sigma)
    frames = np.stack(
        [
            render_frame(SceneState(float(driver[t]), int(blink[t]), dx, dy), h, w)
            for t in range(t_len)
        ]
    )
    return SequenceRecord(frames, audio, driver, blink, dx, dy)


# ---------------------------------------------------------------------------
# serialization


def _write_tensor(f, arr: np.ndarray) -> int:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())
    return 4 + 4 * arr.ndim + arr.nbytes


def _read_tensor(buf: memoryview, offset: int):
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if ndim > 8:
        raise CheckpointError("corrupt record: implausible tensor rank")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    end = offset + 4 * count
    if end > len(buf):
        raise CheckpointError("corrupt record: truncated tensor data")
    arr = np.frombuffer(buf[offset:end], dtype="<f4").reshape(shape).copy()
    return arr, end


def write_stream_tensor(path, arr: np.ndarray) -> None:
    """Write a single tensor in the corpus record framing."""
    with open(path, "wb") as f:
        _write_tensor(f, arr)


def read_stream_tensor(path) -> np.ndarray:
    buf = memoryview(Path(path).read_bytes())
    arr, end = _read_tensor(buf, 0)
    if end != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after tensor")
    return arr


@dataclass(frozen=True)
class CorpusManifest:
    corpus_seed: int
    num_sequences: int
    num_train: int
    num_test: int
    t_len: int
    height: int
    width: int
    channels: int
    audio_dim: int
    data_file: str
    records: list  # dicts: offset, length, driver_seed, nuisance_seed, dx, dy

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "corpus_seed": self.corpus_seed,
            "num_sequences": self.num_sequences,
            "num_train": self.num_train,
            "num_test": self.num_test,
            "T": self.t_len,
            "H": self.height,
            "W": self.width,
            "C": self.channels,
            "A": self.audio_dim,
            "data_file": self.data_file,
            "records": self.records,
        }


def generate_corpus(
    seed: int,
    num_train: int,
    num_test: int,
    t_len: int,
    h: int,
    w: int,
    a_dim: int,
    out_dir,
    noise_sigma: float = 0.01,
) -> Path:
    """Write manifest.json + data.bin under out_dir; returns the manifest path.

    Training sequences come first, then the test split. Regeneration with the
    same arguments is byte-identical.
    """
    if t_len < 2:
        raise ValueError("sequences need T >= 2")
    if num_train < 1 or num_test < 0:
        raise ValueError("need at least one training sequence")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out_dir}: {e}") from e

    lift = lift_matrix(seed, a_dim)
    total = num_train + num_test
    seed_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 601]))
    driver_seeds = seed_rng.integers(0, 2**31 - 1, size=total)
    nuisance_seeds = seed_rng.integers(0, 2**31 - 1, size=total)

    records = []
    data_path = out_dir / "data.bin"
    try:
        with open(data_path, "wb") as f:
            offset = 0
            for i in range(total):
                rec = make_sequence(
                    int(driver_seeds[i]),
                    int(nuisance_seeds[i]),
                    lift,
                    t_len,
                    h,
                    w,
                    noise_sigma=noise_sigma,
                )
                length = 0
                for arr in (rec.frames, rec.audio, rec.driver, rec.blink):
                    length += _write_tensor(f, arr)
                records.append(
                    {
                        "offset": offset,
                        "length": length,
                        "driver_seed": int(driver_seeds[i]),
                        "nuisance_seed": int(nuisance_seeds[i]),
                        "dx": rec.dx,
                        "dy": rec.dy,
                    }
                )
                offset += length
    except OSError as e:
        raise OSError(f"cannot write corpus data to {data_path}: {e}") from e

    manifest = CorpusManifest(
        corpus_seed=int(seed),
        num_sequences=total,
        num_train=num_train,
        num_test=num_test,
        t_len=t_len,
        height=h,
        width=w,
        channels=1,
        audio_dim=a_dim,
        data_file="data.bin",
        records=records,
    )
    manifest_path = out_dir / "manifest.json"
    try:
        manifest_path.write_text(
            json.dumps(manifest.to_dict(), sort_keys=True, indent=1) + "\n"
        )
    except OSError as e:
        raise OSError(f"cannot write manifest to {manifest_path}: {e}") from e
    return manifest_path


class Corpus:
    """Random-access view of a corpus on disk; read-only and concurrency-safe."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        try:
            m = json.loads(self.manifest_path.read_text())
        except OSError as e:
            raise CheckpointError(f"cannot read manifest {manifest_path}: {e}") from e
        except json.JSONDecodeError as e:
            raise CheckpointError(f"corrupt manifest {manifest_path}: {e}") from e
        if m.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{manifest_path}: unsupported corpus format version "
                f"{m.get('format_version')}"
            )
        self.meta = m
        offsets = [r["offset"] for r in m["records"]]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise CheckpointError(f"{manifest_path}: record offsets not increasing")
        if len(m["records"]) != m["num_sequences"]:
            raise CheckpointError(
                f"{manifest_path}: manifest counts do not match records"
            )
        self._data = (self.manifest_path.parent / m["data_file"]).read_bytes()
        expected = offsets[-1] + m["records"][-1]["length"] if offsets else 0
        if len(self._data) != expected:
            raise CheckpointError(
                f"{manifest_path}: data file has {len(self._data)} bytes, "
                f"manifest expects {expected}"
            )

    def __len__(self) -> int:
        return self.meta["num_sequences"]

    @property
    def num_train(self) -> int:
        return self.meta["num_train"]

    @property
    def num_test(self) -> int:
        return self.meta["num_test"]

    @property
    def t_len(self) -> int:
        return self.meta["T"]

    def __getitem__(self, i: int) -> SequenceRecord:
        if not 0 <= i < len(self):
            raise IndexError(f"sequence index {i} out of range [0, {len(self)})")
        rec = self.meta["records"][i]
        buf = memoryview(self._data)
        offset = rec["offset"]
        frames, offset = _read_tensor(buf, offset)
        audio, offset = _read_tensor(buf, offset)
        driver, offset = _read_tensor(buf, offset)
        blink, offset = _read_tensor(buf, offset)
        if offset != rec["offset"] + rec["length"]:
            raise CheckpointError(f"record {i}: length mismatch while reading")
        return SequenceRecord(
            frames, audio, driver, blink, rec["dx"], rec["dy"]
        )

    def train_view(self) -> "CorpusView":
        return CorpusView(self, range(0, self.num_train))

    def test_view(self) -> "CorpusView":
        return CorpusView(self, range(self.num_train, len(self)))


class CorpusView:
    """Index-mapped subset of a corpus (train or test split)."""

    def __init__(self, corpus: Corpus, indices):
        self.corpus = corpus
        self.indices = list(indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> SequenceRecord:
        return self.corpus[self.indices[i]]


def load_corpus(manifest_path) -> Corpus:
    return Corpus(manifest_path)
