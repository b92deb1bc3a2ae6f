"""Command line interface.

Exit codes: 0 success, 1 usage errors, 2 validation errors (bad inputs,
bad config, missing files), 3 runtime failures (including training
divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .model import ModelConfig, load_checkpoint
from .rawdata import load_dataset, load_sequence, make_dataset, manifest_hash
from .scan import BurstSequence, SelectiveScanParams, scan_parallel, scan_sequential
from .tensor import write_array
from .training import (
    TrainConfig,
    TrainingDiverged,
    ablate,
    evaluate,
    noisy_baseline,
    train,
    write_ablation_csv,
)
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ValidationError(Exception):
    """Bad inputs or configuration; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; remap to 1 and keep 0
    # for --help so validation failures stay distinguishable.
    def exit(self, status=0, message=None):
        if message:
            sys.stderr.write(message)
        raise SystemExit(EXIT_USAGE if status else EXIT_OK)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rawburst", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rawburst {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic burst dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--sequences", type=int, default=30, help="number of sequences")
    p.add_argument("--frames", type=int, default=4, help="frames per burst")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--val-count", type=int, default=6, help="held-out sequences at the end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument("--stop-after", type=int,
                   help="pause after this iteration without shortening the schedule")
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="restore one saved sequence with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--sequence", required=True, help="saved sequence directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--out", help="CSV path for per-sequence metrics")
    p.add_argument("--baseline", action="store_true",
                   help="also score the unprocessed noisy frames")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="run self-verification suites")
    p.add_argument("--suite", default="all",
                   choices=["gradcheck", "scan", "adaln", "noise", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench-scan", help="time the scan kernels")
    p.add_argument("--lengths", type=int, nargs="+", default=[256, 1024, 4096, 16384])
    p.add_argument("--d-inner", type=int, default=16)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--chunk", type=int, default=64)
    p.add_argument("--threads", type=int, nargs="+", default=[1])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backend", default="auto", choices=["auto", "numpy", "compiled"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (defaults to stdout)")
    p.set_defaults(func=_cmd_bench_scan)

    p = sub.add_parser("ablate", help="train the ablation ladder and aggregate metrics")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", help="CSV path for the per-variant summary")
    p.set_defaults(func=_cmd_ablate)
    return parser


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help='JSON file with "model" and/or "train" sections')
    p.add_argument("--profile", default="desk", choices=["desk", "full"],
                   help="base model size the config overrides apply to")
    p.add_argument("--iterations", type=int, help="override the training iteration count")
    p.add_argument("--seed", type=int, help="override the training seed")


def _merge_section(base: dict, overrides: dict, kind: str) -> dict:
    unknown = sorted(set(overrides) - set(base))
    if unknown:
        raise ValidationError(
            f"unknown {kind} config keys {unknown}; valid keys are {sorted(base)}"
        )
    merged = dict(base)
    merged.update(overrides)
    return merged


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"missing config file {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config file {p}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(obj) - {"model", "train"})
    if unknown:
        raise ValidationError(
            f"unknown config sections {unknown}; expected 'model' and/or 'train'"
        )
    return obj


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    file_obj = _load_config_file(args.config)
    base_model = ModelConfig.desk() if args.profile == "desk" else ModelConfig()
    model_obj = _merge_section(base_model.to_json(), file_obj.get("model", {}), "model")
    train_obj = _merge_section(TrainConfig().to_json(), file_obj.get("train", {}), "train")
    try:
        model_cfg = ModelConfig.from_json(model_obj)
        train_cfg = TrainConfig.from_json(train_obj)
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    if args.iterations is not None:
        train_cfg = replace(train_cfg, iterations=args.iterations)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    try:
        model_cfg.validate()
        train_cfg.validate(model_cfg)
    except TypeError as exc:
        # non-numeric JSON values surface here rather than as ValueError
        raise ValidationError(f"bad config value: {exc}") from exc
    return model_cfg, train_cfg


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"missing {what} directory {p}")
    return p


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(
            f"output directory {out} exists and is not empty; pass --force to overwrite"
        )
    manifest = make_dataset(
        out,
        n_sequences=args.sequences,
        seed=args.seed,
        frames=args.frames,
        height=args.height,
        width=args.width,
        val_count=args.val_count,
    )
    n_val = sum(1 for e in manifest["sequences"] if e["split"] == "val")
    print(f"wrote {len(manifest['sequences'])} sequences ({n_val} held out) to {out}")
    print(f"manifest sha256 {manifest_hash(out)}")
    return EXIT_OK


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    _require_dir(args.data, "dataset")
    result = train(
        model_cfg,
        train_cfg,
        args.data,
        out_dir=args.out,
        resume=args.resume,
        log_every=args.log_every,
        quiet=args.quiet,
        stop_after=args.stop_after,
    )
    final = result.eval_reports.get(train_cfg.iterations)
    if final is not None:
        print(f"final: psnr {final.mean_psnr:.3f} dB, ssim {final.mean_ssim:.5f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _cmd_denoise(args) -> int:
    ckpt = _require_dir(args.checkpoint, "checkpoint")
    seq_dir = _require_dir(args.sequence, "sequence")
    model, _ = load_checkpoint(ckpt)
    seq = load_sequence(seq_dir)
    restored = model.restore(seq.noisy, seq.condition)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_array(out / "restored.f32", restored)
    _write_preview(out / "preview.png", restored)
    print(f"restored {seq.name} -> {out / 'restored.f32'}")
    return EXIT_OK


def _write_preview(path: Path, image: np.ndarray) -> None:
    """8-bit grayscale preview with display gamma 1/2.2."""
    from PIL import Image

    gamma = np.clip(image, 0.0, 1.0) ** (1.0 / 2.2)
    Image.fromarray((gamma * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)


def _cmd_eval(args) -> int:
    ckpt = _require_dir(args.checkpoint, "checkpoint")
    data = _require_dir(args.data, "dataset")
    model, manifest = load_checkpoint(ckpt)
    sequences = load_dataset(data, split=args.split)
    if not sequences:
        raise ValidationError(f"dataset {data} has no sequences in split {args.split!r}")
    report = evaluate(model, sequences)
    if args.out:
        report.write_csv(
            args.out,
            f"config_hash={manifest['config_hash']} "
            f"checkpoint_iteration={manifest['iteration']}",
        )
    print(f"model: psnr {report.mean_psnr:.3f} dB, ssim {report.mean_ssim:.5f} "
          f"over {len(report.rows)} sequences")
    if args.baseline:
        base = noisy_baseline(sequences)
        print(f"noisy: psnr {base.mean_psnr:.3f} dB, ssim {base.mean_ssim:.5f}")
        print(f"gain:  {report.mean_psnr - base.mean_psnr:+.3f} dB")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_suite(args.suite, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _cmd_bench_scan(args) -> int:
    kernels.set_backend(args.backend)
    rng = np.random.default_rng(args.seed)
    params = SelectiveScanParams.random(args.d_inner, args.state, rng, dtype=np.float32)
    rows = []
    for length in args.lengths:
        tokens = rng.standard_normal((length, args.d_inner)).astype(np.float32)
        seq = BurstSequence(tokens, length, 1, 1)
        y_ref, dt = _best_time(lambda: scan_sequential(seq, params), args.repeats)
        rows.append((length, "seq", 1, length / dt, 0.0))
        for threads in args.threads:
            y, dt = _best_time(
                lambda: scan_parallel(seq, params, chunk=args.chunk, threads=threads),
                args.repeats,
            )
            diff = float(np.max(np.abs(y - y_ref)))
            rows.append((length, "par", threads, length / dt, diff))
    lines = ["L,kernel,threads,tokens_per_second,max_abs_diff_vs_seq"]
    for length, kernel, threads, tps, diff in rows:
        lines.append(f"{length},{kernel},{threads},{tps:.1f},{diff:.3e}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} (backend: {kernels.active_backend()})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _best_time(fn, repeats: int):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def _cmd_ablate(args) -> int:
    model_cfg, train_cfg = _resolve_configs(args)
    _require_dir(args.data, "dataset")
    results = ablate(model_cfg, train_cfg, args.data, seeds=tuple(args.seeds))
    for name, stats in results.items():
        print(f"{name:12s} psnr {stats['psnr_mean']:.3f} +/- {stats['psnr_std']:.3f} dB  "
              f"ssim {stats['ssim_mean']:.5f} +/- {stats['ssim_std']:.5f}")
    if args.out:
        write_ablation_csv(results, args.out, comment=f"seeds={args.seeds}")
        print(f"wrote {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("error: a subcommand is required\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, OverflowError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
