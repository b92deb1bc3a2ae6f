"""Synthetic Bayer RAW burst data: scenes, mosaicking, noise, and disk IO.

Values are linear and normalized to [0, 1]. The mosaic pattern is RGGB:
within each 2x2 cell, (even row, even col) is red, the two mixed-parity
sites are green, and (odd, odd) is blue. Packing keeps the four cell
sites as channels at half resolution; crops must start at even offsets so
the phase never changes, and no geometric augmentation is applied
anywhere (flips and rotations would break the pattern).

The noise model is Poisson photon counting plus Gaussian read noise,
applied in electron units and normalized back so the expectation equals
the clean signal: with S = illuminance * exposure * quantum_eff *
full_well_scale electrons per unit signal and sigma_e the read noise in
electrons, noisy = (Poisson(clean * S) + N(0, sigma_e)) / S, giving
Var = (clean * S + sigma_e^2) / S^2, an affine function of the signal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import CaptureCondition, ConditionVocabulary, default_vocabulary

BAYER_PATTERN = "RGGB"
BLACK_LEVEL = 64
WHITE_LEVEL = 1023


@dataclass
class BayerFrame:
    """One mosaicked frame plus its pattern metadata."""

    data: np.ndarray  # [H, W] float32 in [0, 1]
    pattern: str = BAYER_PATTERN
    black_level: int = BLACK_LEVEL
    white_level: int = WHITE_LEVEL

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"a Bayer frame is 2-D, got shape {self.data.shape}")
        if self.data.shape[0] % 2 or self.data.shape[1] % 2:
            raise ValueError(f"Bayer frame dimensions must be even, got {self.data.shape}")
        if self.pattern != BAYER_PATTERN:
            raise ValueError(f"unsupported mosaic pattern {self.pattern!r}")


def mosaic(rgb: np.ndarray) -> BayerFrame:
    """Sample an RGB image [3, H, W] onto the RGGB grid."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"mosaic expects [3, H, W], got shape {rgb.shape}")
    _, h, w = rgb.shape
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dimensions, got {(h, w)}")
    plane = np.empty((h, w), dtype=np.float32)
    plane[0::2, 0::2] = rgb[0, 0::2, 0::2]
    plane[0::2, 1::2] = rgb[1, 0::2, 1::2]
    plane[1::2, 0::2] = rgb[1, 1::2, 0::2]
    plane[1::2, 1::2] = rgb[2, 1::2, 1::2]
    return BayerFrame(plane)


def bayer_pack(plane: np.ndarray) -> np.ndarray:
    """[H, W] mosaic -> [4, H/2, W/2] planes in cell raster order."""
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.shape[0] % 2 or plane.shape[1] % 2:
        raise ValueError(f"cannot pack mosaic of shape {plane.shape}")
    h, w = plane.shape[0] // 2, plane.shape[1] // 2
    return np.ascontiguousarray(plane.reshape(h, 2, w, 2).transpose(1, 3, 0, 2).reshape(4, h, w))


def bayer_unpack(planes: np.ndarray) -> np.ndarray:
    """Inverse of :func:`bayer_pack`."""
    planes = np.asarray(planes)
    if planes.ndim != 3 or planes.shape[0] != 4:
        raise ValueError(f"cannot unpack planes of shape {planes.shape}")
    _, h, w = planes.shape
    return np.ascontiguousarray(
        planes.reshape(2, 2, h, w).transpose(2, 0, 3, 1).reshape(2 * h, 2 * w)
    )


def crop_mosaic(plane: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    """Phase-preserving crop: all offsets and sizes must be even."""
    if top % 2 or left % 2 or height % 2 or width % 2:
        raise ValueError(
            f"mosaic crops must use even offsets and sizes to preserve the pattern phase, "
            f"got top={top} left={left} height={height} width={width}"
        )
    if top < 0 or left < 0 or top + height > plane.shape[-2] or left + width > plane.shape[-1]:
        raise ValueError(
            f"crop [{top}:{top + height}, {left}:{left + width}] exceeds frame {plane.shape}"
        )
    return plane[..., top : top + height, left : left + width]


@dataclass(frozen=True)
class SensorProfile:
    """Per-sensor noise constants.

    ``gain_per_iso`` converts electrons to digital numbers, so the read
    noise (given in DN) corresponds to read_noise_sigma / gain_per_iso
    electrons. ``full_well_scale`` sets electrons collected per unit
    signal per lux-second, attenuated by ``quantum_eff``.
    """

    sensor_id: int
    gain_per_iso: float
    read_noise_sigma: float
    full_well_scale: float
    quantum_eff: float

    def __post_init__(self):
        if self.gain_per_iso <= 0 or self.full_well_scale <= 0 or not 0 < self.quantum_eff <= 1:
            raise ValueError(f"invalid sensor profile constants: {self}")
        if self.read_noise_sigma < 0:
            raise ValueError(f"read noise must be non-negative, got {self.read_noise_sigma}")

    def electron_scale(self, cond: CaptureCondition) -> float:
        """Electrons per unit clean signal for one exposure."""
        return self.illum_exposure(cond) * self.quantum_eff * self.full_well_scale

    @staticmethod
    def illum_exposure(cond: CaptureCondition) -> float:
        return cond.illuminance_lx * (1.0 / cond.fps)

    def read_noise_electrons(self) -> float:
        return self.read_noise_sigma / self.gain_per_iso

    def to_json(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "gain_per_iso": self.gain_per_iso,
            "read_noise_sigma": self.read_noise_sigma,
            "full_well_scale": self.full_well_scale,
            "quantum_eff": self.quantum_eff,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SensorProfile":
        return cls(**{k: obj[k] for k in (
            "sensor_id", "gain_per_iso", "read_noise_sigma", "full_well_scale", "quantum_eff"
        )})


def default_profiles() -> list[SensorProfile]:
    """Four desk-scale sensors spanning a 4x range in gain and read noise.

    Full-well scales are set so the supported conditions land in a
    genuinely photon-starved regime (tens of electrons per unit signal);
    with milder constants the noisy baseline leaves too little headroom
    for a desk-scale model to demonstrate a denoising gain.
    """
    return [
        SensorProfile(0, 0.5, 1.0, 1200.0, 0.80),
        SensorProfile(1, 1.0, 2.5, 1600.0, 0.65),
        SensorProfile(2, 1.5, 4.5, 2000.0, 0.55),
        SensorProfile(3, 2.0, 8.0, 2400.0, 0.45),
    ]


def noise_moments(clean, cond: CaptureCondition, profile: SensorProfile):
    """Analytic (mean, variance) of the noisy observation of ``clean``."""
    clean = np.asarray(clean, dtype=np.float64)
    scale = profile.electron_scale(cond)
    sigma_e = profile.read_noise_electrons()
    var = (clean * scale + sigma_e**2) / scale**2
    return clean.copy(), var


def apply_noise(clean, cond: CaptureCondition, profile: SensorProfile,
                rng: np.random.Generator):
    """Sample one noisy realization; unbiased (no clipping is applied here).

    Accepts a [H, W] array or a :class:`BayerFrame` and returns the same
    kind. Draw order (Poisson, then Gaussian) is part of the determinism
    contract.
    """
    frame = clean
    if isinstance(clean, BayerFrame):
        frame = clean.data
    frame = np.asarray(frame, dtype=np.float64)
    if np.any(frame < 0) or np.any(frame > 1):
        raise ValueError("clean signal must lie in [0, 1] before noise is applied")
    scale = profile.electron_scale(cond)
    sigma_e = profile.read_noise_electrons()
    electrons = rng.poisson(frame * scale).astype(np.float64)
    if sigma_e > 0:
        electrons = electrons + rng.normal(0.0, sigma_e, frame.shape)
    noisy = (electrons / scale).astype(np.float32)
    if isinstance(clean, BayerFrame):
        return BayerFrame(noisy, clean.pattern, clean.black_level, clean.white_level)
    return noisy


@dataclass
class SceneSpec:
    """Parameters of one synthetic moving scene."""

    height: int = 64
    width: int = 64
    texture_octaves: int = 3
    waves_per_octave: int = 4
    velocity: tuple[float, float] = (6.0, -4.0)  # (rows, cols) px/s
    illumination_scale: float = 1.0

    def __post_init__(self):
        if self.height % 2 or self.width % 2:
            raise ValueError(f"scene dimensions must be even, got {(self.height, self.width)}")
        if self.texture_octaves < 1 or self.waves_per_octave < 1:
            raise ValueError("scene texture needs at least one octave and one wave")
        if not 0 < self.illumination_scale <= 1:
            raise ValueError(f"illumination scale must be in (0, 1], got {self.illumination_scale}")


def synth_clean_video(spec: SceneSpec, fps: float, frames: int, seed: int) -> np.ndarray:
    """Render [T, 3, H, W] float32 frames of a rigidly translating texture.

    The texture is a sum of integer-wavenumber sinusoids, so it is
    periodic over the frame and translation is exact (no resampling
    blur). Per-frame displacement is velocity / fps.
    """
    if frames < 1:
        raise ValueError(f"need at least one frame, got {frames}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    h, w = spec.height, spec.width
    n_waves = spec.texture_octaves * spec.waves_per_octave
    ky = np.empty(n_waves)
    kx = np.empty(n_waves)
    amp = np.empty((3, n_waves))
    phase = np.empty(n_waves)
    i = 0
    for octave in range(spec.texture_octaves):
        kmax = 2**octave + 1
        for _ in range(spec.waves_per_octave):
            while True:
                cand = rng.integers(-kmax, kmax + 1, size=2)
                if cand[0] or cand[1]:
                    break
            ky[i], kx[i] = cand
            amp[:, i] = rng.uniform(0.3, 1.0, 3) / (2.0**octave)
            phase[i] = rng.uniform(0.0, 2.0 * np.pi)
            i += 1
    # Normalize so every channel stays safely inside [0, 1].
    total = np.abs(amp).sum(axis=1, keepdims=True)
    amp = 0.45 * amp / total

    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    vy, vx = spec.velocity
    out = np.empty((frames, 3, h, w), dtype=np.float32)
    for t in range(frames):
        dy = t * vy / fps
        dx = t * vx / fps
        args = (
            2.0 * np.pi
            * (ky[:, None, None] * (yy + dy)[None] / h + kx[:, None, None] * (xx + dx)[None] / w)
            + phase[:, None, None]
        )
        waves = np.cos(args)  # [n_waves, H, W]
        for c in range(3):
            signal = 0.5 + np.tensordot(amp[c], waves, axes=(0, 0))
            out[t, c] = (spec.illumination_scale * signal).astype(np.float32)
    return out


@dataclass
class VideoSequence:
    """One burst: aligned noisy/clean mosaicked frames plus metadata."""

    noisy: np.ndarray  # [T, H, W] float32
    clean: np.ndarray  # [T, H, W] float32
    condition: CaptureCondition
    profile: SensorProfile
    scene_seed: int
    name: str = "seq"
    black_level: int = BLACK_LEVEL
    white_level: int = WHITE_LEVEL

    def __post_init__(self):
        self.noisy = np.asarray(self.noisy, dtype=np.float32)
        self.clean = np.asarray(self.clean, dtype=np.float32)
        if self.noisy.shape != self.clean.shape:
            raise ValueError(
                f"noisy {self.noisy.shape} and clean {self.clean.shape} shapes differ"
            )
        if self.noisy.ndim != 3:
            raise ValueError(f"sequence frames must be [T, H, W], got {self.noisy.shape}")
        if self.noisy.shape[1] % 2 or self.noisy.shape[2] % 2:
            raise ValueError(f"frame dimensions must be even, got {self.noisy.shape[1:]}")

    @property
    def frames(self) -> int:
        return self.noisy.shape[0]

    @property
    def base_clean(self) -> np.ndarray:
        return self.clean[-1]

    @property
    def base_noisy(self) -> np.ndarray:
        return self.noisy[-1]


def _write_frames(directory: Path, stack: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(stack.shape[0]):
        path = directory / f"frame_{t:03d}.f32"
        path.write_bytes(np.ascontiguousarray(stack[t], dtype="<f4").tobytes())


def _read_frames(directory: Path, frames: int, shape: tuple[int, int]) -> np.ndarray:
    out = np.empty((frames,) + shape, dtype=np.float32)
    expected = shape[0] * shape[1] * 4
    for t in range(frames):
        path = directory / f"frame_{t:03d}.f32"
        if not path.exists():
            raise FileNotFoundError(f"missing frame file {path}")
        raw = path.read_bytes()
        if len(raw) != expected:
            raise ValueError(
                f"frame file {path} holds {len(raw)} bytes, expected {expected} "
                f"for shape {shape}"
            )
        out[t] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return out


def save_sequence(directory: str | Path, seq: VideoSequence) -> None:
    """Write meta.json plus per-frame raw float32 files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "frames": seq.frames,
        "shape": [int(seq.noisy.shape[1]), int(seq.noisy.shape[2])],
        "pattern": BAYER_PATTERN,
        "condition": seq.condition.to_json(),
        "profile": seq.profile.to_json(),
        "scene_seed": int(seq.scene_seed),
        "black_level": seq.black_level,
        "white_level": seq.white_level,
    }
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    _write_frames(directory / "noisy", seq.noisy)
    _write_frames(directory / "clean", seq.clean)


def load_sequence(directory: str | Path) -> VideoSequence:
    """Read a sequence directory written by :func:`save_sequence`."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing sequence metadata {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed sequence metadata {meta_path}: {exc}") from exc
    if meta.get("pattern") != BAYER_PATTERN:
        raise ValueError(f"unsupported mosaic pattern {meta.get('pattern')!r} in {meta_path}")
    frames = int(meta["frames"])
    shape = tuple(int(d) for d in meta["shape"])
    return VideoSequence(
        noisy=_read_frames(directory / "noisy", frames, shape),
        clean=_read_frames(directory / "clean", frames, shape),
        condition=CaptureCondition.from_json(meta["condition"]),
        profile=SensorProfile.from_json(meta["profile"]),
        scene_seed=int(meta["scene_seed"]),
        name=directory.name,
        black_level=int(meta.get("black_level", BLACK_LEVEL)),
        white_level=int(meta.get("white_level", WHITE_LEVEL)),
    )


def render_sequence(
    spec: SceneSpec,
    cond: CaptureCondition,
    profile: SensorProfile,
    frames: int,
    scene_seed: int,
    name: str = "seq",
) -> VideoSequence:
    """Render clean frames, mosaic them, and sample noisy observations.

    Stored noisy frames are clipped to [0, 1] (sensor range); the unclipped
    statistics are available through :func:`apply_noise` directly.
    """
    rgb = synth_clean_video(spec, cond.fps, frames, scene_seed)
    clean = np.stack([mosaic(rgb[t]).data for t in range(frames)])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=scene_seed, spawn_key=(1,)))
    noisy = np.stack([apply_noise(clean[t], cond, profile, rng) for t in range(frames)])
    noisy = np.clip(noisy, 0.0, 1.0)
    return VideoSequence(
        noisy=noisy, clean=clean, condition=cond, profile=profile,
        scene_seed=scene_seed, name=name,
    )


def make_dataset(
    out_dir: str | Path,
    n_sequences: int,
    conditions: list[CaptureCondition] | None = None,
    specs: list[SceneSpec] | None = None,
    seed: int = 0,
    frames: int = 4,
    height: int = 64,
    width: int = 64,
    val_count: int = 0,
    vocab: ConditionVocabulary | None = None,
    profiles: list[SensorProfile] | None = None,
) -> dict:
    """Generate a dataset directory with a manifest; returns the manifest.

    Conditions default to a round-robin over the vocabulary so every
    factor level is covered once enough sequences are requested. The last
    ``val_count`` sequences form the held-out split; scenes never straddle
    the split because every sequence has its own scene seed.
    """
    if n_sequences < 1:
        raise ValueError(f"need at least one sequence, got {n_sequences}")
    if not 0 <= val_count < n_sequences:
        raise ValueError(f"val_count {val_count} must be in [0, {n_sequences})")
    vocab = vocab or default_vocabulary()
    profiles = profiles or default_profiles()
    by_id = {p.sensor_id: p for p in profiles}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(n_sequences):
        if conditions is not None:
            cond = conditions[i % len(conditions)]
        else:
            cond = CaptureCondition(
                sensor_id=i % vocab.sensors,
                illuminance_lx=vocab.illuminance_lx[i % len(vocab.illuminance_lx)],
                fps=vocab.fps[i % len(vocab.fps)],
            )
        if cond.sensor_id not in by_id:
            raise ValueError(f"no sensor profile for sensor_id {cond.sensor_id}")
        scene_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2, i)))
        if specs is not None:
            spec = specs[i % len(specs)]
        else:
            speed = scene_rng.uniform(2.0, 20.0, 2) * scene_rng.choice([-1.0, 1.0], 2)
            spec = SceneSpec(
                height=height,
                width=width,
                velocity=(float(speed[0]), float(speed[1])),
                illumination_scale=float(scene_rng.uniform(0.6, 1.0)),
            )
        scene_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(3, i)).generate_state(1)[0]
        )
        name = f"seq_{i:04d}"
        seq = render_sequence(spec, cond, by_id[cond.sensor_id], frames, scene_seed, name)
        save_sequence(out_dir / name, seq)
        entries.append(
            {
                "dir": name,
                "split": "val" if i >= n_sequences - val_count else "train",
                "condition": cond.to_json(),
                "scene_seed": scene_seed,
            }
        )

    manifest = {
        "seed": seed,
        "frames": frames,
        "height": height,
        "width": width,
        "vocabulary": vocab.to_json(),
        "sequences": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def manifest_hash(dataset_dir: str | Path) -> str:
    """SHA-256 of the manifest bytes (stable across reruns)."""
    return hashlib.sha256((Path(dataset_dir) / "manifest.json").read_bytes()).hexdigest()


def load_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset manifest {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed dataset manifest {path}: {exc}") from exc


def load_dataset(dataset_dir: str | Path, split: str | None = None) -> list[VideoSequence]:
    """Load all sequences of a dataset, optionally filtered by split."""
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    out = []
    for entry in manifest["sequences"]:
        if split is not None and entry["split"] != split:
            continue
        out.append(load_sequence(dataset_dir / entry["dir"]))
    return out
