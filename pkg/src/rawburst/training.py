"""Training, evaluation, and the ablation harness.

Training samples fixed-size even-aligned patches from burst sequences,
optimizes L1 plus a multi-scale structural term with Adam under a cosine
learning-rate schedule, and logs one CSV row per iteration. All
randomness derives from a per-iteration seed sequence, so a resumed run
continues bit-for-bit identically to an uninterrupted one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .conditioning import CaptureCondition
from .metrics import combined_loss, psnr, ssim
from .model import (
    BurstDenoiser,
    ModelConfig,
    build_model,
    config_hash,
    load_checkpoint,
    load_optimizer_state,
    save_checkpoint,
)
from .optim import Adam, cosine_lr
from .rawdata import VideoSequence, crop_mosaic, load_dataset
from .tensor import Tensor, backward


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the diagnostics."""

    def __init__(self, iteration: int, lr: float, batch: list[str]):
        self.iteration = iteration
        self.lr = lr
        self.batch = batch
        super().__init__(
            f"non-finite loss at iteration {iteration} (lr={lr:.3e}, batch={batch})"
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (desk-scale defaults)."""

    iterations: int = 2000
    batch_size: int = 4
    patch_size: int = 32
    patch_stride: int = 24
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ssim_weight: float = 1.0
    seed: int = 0
    eval_interval: int = 500

    def validate(self, model_cfg: ModelConfig | None = None) -> None:
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError(
                f"invalid iteration/batch settings ({self.iterations}, {self.batch_size})"
            )
        if self.patch_size % 2 or self.patch_size < 2:
            raise ValueError(f"patch size must be even and >= 2, got {self.patch_size}")
        if self.patch_stride % 2 or self.patch_stride < 2:
            raise ValueError(
                f"patch stride must be even and >= 2 to preserve the mosaic phase, "
                f"got {self.patch_stride}"
            )
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError(f"learning rates out of order: {self.lr_min} > {self.lr_max}")
        if self.ssim_weight < 0:
            raise ValueError(f"structural loss weight must be >= 0, got {self.ssim_weight}")
        if model_cfg is not None and self.patch_size % model_cfg.min_input_size():
            raise ValueError(
                f"patch size {self.patch_size} must be a multiple of "
                f"{model_cfg.min_input_size()} for {model_cfg.num_scales} scales"
            )

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "patch_size": self.patch_size,
            "patch_stride": self.patch_stride,
            "lr_max": self.lr_max,
            "lr_min": self.lr_min,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "ssim_weight": self.ssim_weight,
            "seed": self.seed,
            "eval_interval": self.eval_interval,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def patch_origins(height: int, width: int, patch: int, stride: int) -> list[tuple[int, int]]:
    """Grid of even-aligned crop origins covering the frame."""
    if patch > height or patch > width:
        raise ValueError(f"patch {patch} does not fit a {height}x{width} frame")
    tops = range(0, height - patch + 1, stride)
    lefts = range(0, width - patch + 1, stride)
    return [(t, l) for t in tops for l in lefts]


@dataclass
class PatchSample:
    noisy: np.ndarray  # [T, patch, patch]
    clean_base: np.ndarray  # [patch, patch]
    condition: CaptureCondition
    sequence: str
    origin: tuple[int, int]


def sample_patches(
    seq: VideoSequence,
    patch: int,
    stride: int,
    rng: np.random.Generator,
    count: int | None = None,
) -> list[PatchSample]:
    """Random grid patches of one sequence (without replacement per pass)."""
    if patch % 2 or stride % 2:
        raise ValueError(f"patch and stride must be even, got {patch}, {stride}")
    origins = patch_origins(seq.noisy.shape[1], seq.noisy.shape[2], patch, stride)
    order = rng.permutation(len(origins))
    if count is not None:
        order = order[:count]
    out = []
    for idx in order:
        top, left = origins[idx]
        out.append(
            PatchSample(
                noisy=crop_mosaic(seq.noisy, top, left, patch, patch).copy(),
                clean_base=crop_mosaic(seq.clean[-1], top, left, patch, patch).copy(),
                condition=seq.condition,
                sequence=seq.name,
                origin=(top, left),
            )
        )
    return out


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def _draw_batch(
    sequences: list[VideoSequence], cfg: TrainConfig, iteration: int
) -> list[PatchSample]:
    rng = _iteration_rng(cfg.seed, iteration)
    batch = []
    for _ in range(cfg.batch_size):
        seq = sequences[int(rng.integers(len(sequences)))]
        origins = patch_origins(
            seq.noisy.shape[1], seq.noisy.shape[2], cfg.patch_size, cfg.patch_stride
        )
        top, left = origins[int(rng.integers(len(origins)))]
        batch.append(
            PatchSample(
                noisy=crop_mosaic(seq.noisy, top, left, cfg.patch_size, cfg.patch_size).copy(),
                clean_base=crop_mosaic(
                    seq.clean[-1], top, left, cfg.patch_size, cfg.patch_size
                ).copy(),
                condition=seq.condition,
                sequence=seq.name,
                origin=(top, left),
            )
        )
    return batch


@dataclass
class EvalRow:
    sequence: str
    sensor_id: int
    illuminance_lx: float
    fps: float
    psnr_db: float
    psnr_capped: bool
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    def by_condition(self) -> dict[tuple, dict[str, float]]:
        """Mean metrics stratified by the full condition triple."""
        groups: dict[tuple, list[EvalRow]] = {}
        for r in self.rows:
            groups.setdefault((r.sensor_id, r.illuminance_lx, r.fps), []).append(r)
        return {
            key: {
                "psnr_db": float(np.mean([r.psnr_db for r in rows])),
                "ssim": float(np.mean([r.ssim for r in rows])),
                "count": len(rows),
            }
            for key, rows in sorted(groups.items())
        }

    def write_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["sequence", "sensor_id", "illuminance_lx", "fps", "psnr_db", "ssim"]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.sequence,
                        r.sensor_id,
                        f"{r.illuminance_lx:g}",
                        f"{r.fps:g}",
                        f"{r.psnr_db:.6f}",
                        f"{r.ssim:.8f}",
                    ]
                )


def _metric_row(seq: VideoSequence, restored: np.ndarray) -> EvalRow:
    result = psnr(restored, seq.base_clean)
    return EvalRow(
        sequence=seq.name,
        sensor_id=seq.condition.sensor_id,
        illuminance_lx=seq.condition.illuminance_lx,
        fps=seq.condition.fps,
        psnr_db=result.db,
        psnr_capped=result.capped,
        ssim=ssim(restored, seq.base_clean),
    )


def evaluate(model: BurstDenoiser, sequences: list[VideoSequence]) -> EvalReport:
    """Restore each sequence's base frame and score it against clean."""
    if not sequences:
        raise ValueError("cannot evaluate on an empty sequence list")
    report = EvalReport()
    for seq in sequences:
        restored = model.restore(seq.noisy, seq.condition)
        report.rows.append(_metric_row(seq, restored))
    return report


def noisy_baseline(sequences: list[VideoSequence]) -> EvalReport:
    """Score the unmodified noisy base frames (the do-nothing reference)."""
    if not sequences:
        raise ValueError("cannot evaluate on an empty sequence list")
    report = EvalReport()
    for seq in sequences:
        report.rows.append(_metric_row(seq, np.clip(seq.base_noisy, 0.0, 1.0)))
    return report


@dataclass
class TrainResult:
    model: BurstDenoiser
    loss_rows: list[tuple[int, float, float]]  # (iteration, lr, loss)
    eval_reports: dict[int, EvalReport]
    checkpoint_dir: Path | None


def _loss_csv(path: Path, rows, comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "loss"])
        for it, lr, loss in rows:
            writer.writerow([it, f"{lr:.8e}", f"{loss:.8e}"])


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset_dir: str | Path,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    log_every: int = 100,
    quiet: bool = False,
    stop_after: int | None = None,
) -> TrainResult:
    """Run the optimization loop; see module docstring for determinism.

    ``stop_after`` pauses the run at that iteration without shortening the
    schedule: the learning-rate curve still spans ``train_cfg.iterations``,
    so resuming from the saved checkpoint reproduces a straight-through
    run bit for bit.
    """
    train_cfg.validate(model_cfg)
    model_cfg.validate()
    sequences = load_dataset(dataset_dir, split="train")
    if not sequences:
        raise ValueError(f"dataset {dataset_dir} has no training sequences")
    for seq in sequences:
        if seq.frames != model_cfg.frames:
            raise ValueError(
                f"sequence {seq.name} has {seq.frames} frames, model expects "
                f"{model_cfg.frames}"
            )
    val_sequences = load_dataset(dataset_dir, split="val")

    start_iteration = 0
    if resume is not None:
        model, manifest = load_checkpoint(resume)
        if config_hash(model.cfg) != config_hash(model_cfg):
            raise ValueError("checkpoint configuration does not match the requested model")
        start_iteration = int(manifest["iteration"])
        optimizer = Adam(
            model.named_parameters(), train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps
        )
        state = load_optimizer_state(resume, manifest)
        if state is not None:
            optimizer.load_state_dict(state)
    else:
        model = build_model(model_cfg, seed=train_cfg.seed)
        optimizer = Adam(
            model.named_parameters(), train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps
        )

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    stamp = f"config_hash={config_hash(model_cfg)} seed={train_cfg.seed}"

    loss_rows: list[tuple[int, float, float]] = []
    eval_reports: dict[int, EvalReport] = {}

    def checkpoint(iteration: int) -> None:
        if out_dir is None:
            return
        save_checkpoint(
            out_dir,
            model,
            iteration,
            optimizer_state=optimizer.state_dict(),
            extra={"seed": train_cfg.seed, "train_config": train_cfg.to_json()},
        )
        _loss_csv(out_dir / "loss.csv", loss_rows, stamp)

    def run_eval(iteration: int) -> None:
        if not val_sequences:
            return
        report = evaluate(model, val_sequences)
        eval_reports[iteration] = report
        if out_dir is not None:
            report.write_csv(out_dir / f"eval_{iteration:06d}.csv", stamp)
        if not quiet:
            print(
                f"[eval] iter {iteration}: psnr {report.mean_psnr:.3f} dB, "
                f"ssim {report.mean_ssim:.5f}"
            )

    stop = train_cfg.iterations if stop_after is None else min(stop_after, train_cfg.iterations)
    for iteration in range(start_iteration, stop):
        lr = cosine_lr(iteration, train_cfg.iterations, train_cfg.lr_max, train_cfg.lr_min)
        batch = _draw_batch(sequences, train_cfg, iteration)
        total = None
        for sample in batch:
            pred = model(sample.noisy, sample.condition)
            loss = combined_loss(pred, Tensor(sample.clean_base), train_cfg.ssim_weight)
            total = loss if total is None else (total + loss)
        total = total * (1.0 / len(batch))
        loss_value = float(total.data)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(iteration, lr, [s.sequence for s in batch])
        backward(total)
        optimizer.step(lr)
        optimizer.zero_grads()
        loss_rows.append((iteration, lr, loss_value))
        if not quiet and log_every and (iteration + 1) % log_every == 0:
            print(f"[train] iter {iteration + 1}/{train_cfg.iterations} "
                  f"lr {lr:.3e} loss {loss_value:.5f}")
        done = iteration + 1
        if train_cfg.eval_interval and done % train_cfg.eval_interval == 0 and done < stop:
            run_eval(done)
            checkpoint(done)

    run_eval(stop)
    checkpoint(stop)
    return TrainResult(model, loss_rows, eval_reports, out_dir)


ABLATION_VARIANTS = (
    ("baseline", {"use_conditioning": False, "use_burst_scan": False}),
    ("conditioned", {"use_conditioning": True, "use_burst_scan": False}),
    ("full", {"use_conditioning": True, "use_burst_scan": True}),
)


def ablate(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset_dir: str | Path,
    seeds: tuple[int, ...] = (0, 1, 2),
) -> dict[str, dict]:
    """Train every ablation variant over the seeds; aggregate held-out metrics.

    Variants share parameter names for their common submodules, so at a
    fixed seed the shared weights start from identical values.
    """
    val = load_dataset(dataset_dir, split="val")
    if not val:
        raise ValueError(f"dataset {dataset_dir} has no held-out sequences to score")
    results: dict[str, dict] = {}
    for name, flags in ABLATION_VARIANTS:
        cfg = replace(model_cfg, **flags)
        psnrs = []
        ssims = []
        for seed in seeds:
            run_cfg = replace(train_cfg, seed=seed)
            outcome = train(cfg, run_cfg, dataset_dir, out_dir=None, quiet=True)
            report = evaluate(outcome.model, val)
            psnrs.append(report.mean_psnr)
            ssims.append(report.mean_ssim)
        results[name] = {
            "psnr_mean": float(np.mean(psnrs)),
            "psnr_std": float(np.std(psnrs)),
            "ssim_mean": float(np.mean(ssims)),
            "ssim_std": float(np.std(ssims)),
            "seeds": list(seeds),
            "psnr_runs": [float(p) for p in psnrs],
        }
    return results


def write_ablation_csv(results: dict[str, dict], path: str | Path,
                       comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["variant", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"])
        for name, stats in results.items():
            writer.writerow(
                [
                    name,
                    f"{stats['psnr_mean']:.6f}",
                    f"{stats['psnr_std']:.6f}",
                    f"{stats['ssim_mean']:.8f}",
                    f"{stats['ssim_std']:.8f}",
                ]
            )
