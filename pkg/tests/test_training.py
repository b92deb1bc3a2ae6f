"""Optimization loop: schedule, Adam, patching, determinism, ablation."""

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawburst.model import ModelConfig, build_model, config_hash, load_checkpoint
from rawburst.optim import Adam, cosine_lr
from rawburst.rawdata import (
    SceneSpec,
    default_profiles,
    load_dataset,
    make_dataset,
    render_sequence,
)
from rawburst.conditioning import CaptureCondition
from rawburst.tensor import Tensor
from rawburst.training import (
    ABLATION_VARIANTS,
    EvalReport,
    EvalRow,
    TrainConfig,
    TrainingDiverged,
    ablate,
    evaluate,
    noisy_baseline,
    patch_origins,
    sample_patches,
    train,
    write_ablation_csv,
)

COND = CaptureCondition(sensor_id=0, illuminance_lx=5.0, fps=60.0)


class TestCosineSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 2000) == pytest.approx(2e-4, rel=1e-12)
        assert cosine_lr(2000, 2000) == pytest.approx(1e-6, rel=1e-12)

    def test_midpoint_is_the_arithmetic_mean(self):
        assert cosine_lr(1000, 2000) == pytest.approx(1.005e-4, rel=1e-9)

    def test_monotone_non_increasing(self):
        values = [cosine_lr(t, 500) for t in range(501)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_range_validation(self):
        with pytest.raises(ValueError, match="positive length"):
            cosine_lr(0, 0)
        with pytest.raises(ValueError, match="outside"):
            cosine_lr(7, 5)
        with pytest.raises(ValueError, match="outside"):
            cosine_lr(-1, 5)


class TestAdam:
    def _param(self, value=0.7):
        return Tensor(np.array([value], dtype=np.float64), requires_grad=True)

    def test_single_step_matches_scalar_oracle(self):
        p = self._param()
        opt = Adam({"p": p}, beta1=0.9, beta2=0.999, eps=1e-8)
        p.grad = np.array([0.3])
        opt.step(0.01)
        m_hat = (0.1 * 0.3) / (1.0 - 0.9)
        v_hat = (0.001 * 0.09) / (1.0 - 0.999)
        expected = 0.7 - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert abs(p.data[0] - expected) <= 1e-10

    def test_two_steps_match_scalar_oracle(self):
        p = self._param()
        opt = Adam({"p": p}, beta1=0.9, beta2=0.999, eps=1e-8)
        theta, m, v = 0.7, 0.0, 0.0
        for t, g in enumerate([0.3, -0.5], start=1):
            p.grad = np.array([g])
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1.0 - 0.9**t)
            v_hat = v / (1.0 - 0.999**t)
            theta = theta - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
            assert abs(p.data[0] - theta) <= 1e-10

    def test_missing_and_zero_gradients_leave_parameters_alone(self):
        p = self._param()
        before = p.data.copy()
        opt = Adam({"p": p})
        p.grad = None
        opt.step(0.1)
        np.testing.assert_array_equal(p.data, before)
        p.grad = np.zeros(1)
        opt.step(0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_state_roundtrip_resumes_bitwise(self, rng):
        def fresh():
            return {
                "a": Tensor(np.array([0.4, -0.2], dtype=np.float32), requires_grad=True),
                "b": Tensor(np.array([1.5], dtype=np.float32), requires_grad=True),
            }

        grads = [
            {k: rng.standard_normal(v.shape).astype(np.float32) for k, v in fresh().items()}
            for _ in range(4)
        ]

        straight = fresh()
        opt = Adam(straight)
        for g in grads:
            for k, p in straight.items():
                p.grad = g[k]
            opt.step(0.01)

        resumed = fresh()
        opt_a = Adam(resumed)
        for g in grads[:2]:
            for k, p in resumed.items():
                p.grad = g[k]
            opt_a.step(0.01)
        opt_b = Adam(resumed)
        opt_b.load_state_dict(opt_a.state_dict())
        for g in grads[2:]:
            for k, p in resumed.items():
                p.grad = g[k]
            opt_b.step(0.01)

        for k in straight:
            np.testing.assert_array_equal(straight[k].data, resumed[k].data)

    def test_moments_keep_parameter_dtype(self):
        p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p})
        assert opt.m["p"].dtype == np.float32

    def test_state_validation(self):
        opt = Adam({"p": self._param()})
        with pytest.raises(ValueError, match="missing moments"):
            opt.load_state_dict({"step": 1, "moments": {}})
        with pytest.raises(ValueError, match="betas"):
            Adam({"p": self._param()}, beta1=1.0)


class TestTrainConfig:
    def test_json_roundtrip(self, tiny_train_cfg):
        assert TrainConfig.from_json(tiny_train_cfg.to_json()) == tiny_train_cfg

    @pytest.mark.parametrize(
        "overrides, match",
        [
            (dict(iterations=-1), "iteration/batch"),
            (dict(batch_size=0), "iteration/batch"),
            (dict(patch_size=15), "even"),
            (dict(patch_stride=3), "stride must be even"),
            (dict(lr_min=0.0), "learning rates"),
            (dict(lr_min=1e-3, lr_max=1e-4), "learning rates"),
            (dict(ssim_weight=-0.5), "weight"),
        ],
    )
    def test_validation(self, tiny_train_cfg, overrides, match):
        cfg = dataclasses.replace(tiny_train_cfg, **overrides)
        with pytest.raises(ValueError, match=match):
            cfg.validate()

    def test_patch_must_fit_the_model_scales(self, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, patch_size=10)
        with pytest.raises(ValueError, match="multiple of"):
            cfg.validate(ModelConfig.desk())


class TestPatchSampling:
    def test_origin_grid_example(self):
        assert patch_origins(8, 8, 4, 4) == [(0, 0), (0, 4), (4, 0), (4, 4)]

    def test_patch_too_large(self):
        with pytest.raises(ValueError, match="does not fit"):
            patch_origins(8, 8, 16, 4)

    @settings(max_examples=30, deadline=None)
    @given(
        h2=st.integers(4, 24),
        w2=st.integers(4, 24),
        p2=st.integers(2, 4),
        s2=st.integers(1, 4),
    )
    def test_origins_are_even_and_in_bounds(self, h2, w2, p2, s2):
        h, w, p, s = 2 * h2, 2 * w2, 2 * p2, 2 * s2
        origins = patch_origins(h, w, p, s)
        assert origins, "grid never empty when the patch fits"
        assert (0, 0) in origins
        for top, left in origins:
            assert top % 2 == 0 and left % 2 == 0
            assert 0 <= top <= h - p and 0 <= left <= w - p

    def test_samples_cover_the_grid_without_replacement(self, rng):
        seq = render_sequence(
            SceneSpec(height=16, width=16), COND, default_profiles()[0],
            frames=2, scene_seed=3,
        )
        samples = sample_patches(seq, patch=8, stride=4, rng=rng)
        assert sorted(s.origin for s in samples) == patch_origins(16, 16, 8, 4)
        top, left = samples[0].origin
        np.testing.assert_array_equal(
            samples[0].noisy, seq.noisy[:, top : top + 8, left : left + 8]
        )
        np.testing.assert_array_equal(
            samples[0].clean_base, seq.clean[-1, top : top + 8, left : left + 8]
        )
        assert samples[0].condition == seq.condition

    def test_count_limits_the_draw(self, rng):
        seq = render_sequence(
            SceneSpec(height=16, width=16), COND, default_profiles()[0],
            frames=2, scene_seed=3,
        )
        assert len(sample_patches(seq, 8, 4, rng, count=2)) == 2

    def test_odd_patch_rejected(self, rng):
        seq = render_sequence(
            SceneSpec(height=16, width=16), COND, default_profiles()[0],
            frames=2, scene_seed=3,
        )
        with pytest.raises(ValueError, match="even"):
            sample_patches(seq, 7, 4, rng)


class TestEvaluation:
    def test_clean_input_hits_the_psnr_cap(self, tiny_cfg):
        seq = render_sequence(
            SceneSpec(height=16, width=16), COND, default_profiles()[0],
            frames=2, scene_seed=5,
        )
        seq.noisy = seq.clean.copy()
        model = build_model(tiny_cfg, seed=0)
        report = evaluate(model, [seq])
        row = report.rows[0]
        assert row.psnr_capped and row.psnr_db == 100.0
        assert row.ssim == 1.0

    def test_identity_start_equals_noisy_baseline(self, tiny_cfg, mini_dataset):
        val = load_dataset(mini_dataset, split="val")
        fresh = evaluate(build_model(tiny_cfg, seed=0), val)
        baseline = noisy_baseline(val)
        for got, ref in zip(fresh.rows, baseline.rows):
            assert got.psnr_db == ref.psnr_db
            assert got.ssim == ref.ssim

    def test_aggregates_are_row_means(self):
        rows = [
            EvalRow("a", 0, 1.0, 24.0, 20.0, False, 0.5),
            EvalRow("b", 1, 5.0, 60.0, 26.0, False, 0.9),
        ]
        report = EvalReport(rows=rows)
        assert abs(report.mean_psnr - 23.0) <= 1e-9
        assert abs(report.mean_ssim - 0.7) <= 1e-9
        groups = report.by_condition()
        assert groups[(0, 1.0, 24.0)] == {"psnr_db": 20.0, "ssim": 0.5, "count": 1}

    def test_csv_shape_and_stamp(self, tmp_path):
        report = EvalReport(rows=[EvalRow("a", 0, 1.0, 24.0, 20.0, False, 0.5)])
        out = tmp_path / "eval.csv"
        report.write_csv(out, "config_hash=abc seed=0")
        lines = out.read_text().splitlines()
        assert lines[0] == "# config_hash=abc seed=0"
        assert lines[1] == "sequence,sensor_id,illuminance_lx,fps,psnr_db,ssim"
        assert lines[2].startswith("a,0,1,24,20.000000,")
        report.write_csv(tmp_path / "again.csv", "config_hash=abc seed=0")
        assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()

    def test_empty_sequence_list(self, tiny_cfg):
        with pytest.raises(ValueError, match="empty"):
            evaluate(build_model(tiny_cfg, seed=0), [])
        with pytest.raises(ValueError, match="empty"):
            noisy_baseline([])


class TestTrainLoop:
    def test_zero_iterations_checkpoint_the_initial_model(
        self, tiny_cfg, tiny_train_cfg, mini_dataset, tmp_path
    ):
        cfg = dataclasses.replace(tiny_train_cfg, iterations=0)
        result = train(tiny_cfg, cfg, mini_dataset, out_dir=tmp_path, quiet=True)
        assert result.loss_rows == []
        loaded, manifest = load_checkpoint(tmp_path)
        assert manifest["iteration"] == 0
        reference = build_model(tiny_cfg, seed=cfg.seed)
        for name, p in reference.named_parameters().items():
            np.testing.assert_array_equal(loaded.named_parameters()[name].data, p.data)
        baseline = noisy_baseline(load_dataset(mini_dataset, split="val"))
        report = result.eval_reports[0]
        assert [r.psnr_db for r in report.rows] == [r.psnr_db for r in baseline.rows]

    def test_fixed_seed_reproduces_the_loss_curve(
        self, tiny_cfg, tiny_train_cfg, mini_dataset
    ):
        a = train(tiny_cfg, tiny_train_cfg, mini_dataset, quiet=True)
        b = train(tiny_cfg, tiny_train_cfg, mini_dataset, quiet=True)
        assert a.loss_rows == b.loss_rows
        pa, pb = a.model.named_parameters(), b.model.named_parameters()
        for name in pa:
            np.testing.assert_array_equal(pa[name].data, pb[name].data)

    def test_different_seeds_diverge(self, tiny_cfg, tiny_train_cfg, mini_dataset):
        a = train(tiny_cfg, tiny_train_cfg, mini_dataset, quiet=True)
        b = train(
            tiny_cfg, dataclasses.replace(tiny_train_cfg, seed=1), mini_dataset, quiet=True
        )
        assert a.loss_rows != b.loss_rows

    def test_resume_matches_a_straight_run_bitwise(
        self, tiny_cfg, tiny_train_cfg, mini_dataset, tmp_path
    ):
        cfg = dataclasses.replace(tiny_train_cfg, iterations=6, eval_interval=3)
        straight = train(tiny_cfg, cfg, mini_dataset, quiet=True)
        first = train(
            tiny_cfg, cfg, mini_dataset, out_dir=tmp_path / "half", quiet=True, stop_after=3
        )
        assert first.loss_rows == straight.loss_rows[:3]
        second = train(
            tiny_cfg, cfg, mini_dataset, out_dir=tmp_path / "rest",
            resume=tmp_path / "half", quiet=True,
        )
        assert second.loss_rows == straight.loss_rows[3:]
        pa = straight.model.named_parameters()
        pb = second.model.named_parameters()
        for name in pa:
            np.testing.assert_array_equal(pa[name].data, pb[name].data)

    def test_resume_rejects_a_different_config(
        self, tiny_cfg, tiny_train_cfg, mini_dataset, tmp_path
    ):
        cfg = dataclasses.replace(tiny_train_cfg, iterations=1)
        train(tiny_cfg, cfg, mini_dataset, out_dir=tmp_path, quiet=True)
        other = dataclasses.replace(tiny_cfg, channels=8, attn_reduction=4)
        with pytest.raises(ValueError, match="does not match"):
            train(other, cfg, mini_dataset, resume=tmp_path, quiet=True)

    def test_artifacts_carry_the_config_stamp(
        self, tiny_cfg, tiny_train_cfg, mini_dataset, tmp_path
    ):
        result = train(tiny_cfg, tiny_train_cfg, mini_dataset, out_dir=tmp_path, quiet=True)
        stamp = f"# config_hash={config_hash(tiny_cfg)} seed={tiny_train_cfg.seed}"
        loss_lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert loss_lines[0] == stamp
        assert loss_lines[1] == "iteration,lr,loss"
        assert len(loss_lines) == 2 + tiny_train_cfg.iterations
        # eval_interval=2 with 4 iterations: one mid eval plus the final one.
        assert sorted(result.eval_reports) == [2, 4]
        for it in (2, 4):
            lines = (tmp_path / f"eval_{it:06d}.csv").read_text().splitlines()
            assert lines[0] == stamp
        _, manifest = load_checkpoint(tmp_path)
        assert manifest["iteration"] == 4
        assert manifest["extra"]["train_config"] == tiny_train_cfg.to_json()

    def test_frame_count_mismatch(self, tiny_train_cfg, mini_dataset):
        cfg = ModelConfig.desk()  # expects 4 frames, dataset has 2
        with pytest.raises(ValueError, match="model expects"):
            train(cfg, tiny_train_cfg, mini_dataset, quiet=True)

    def test_dataset_without_training_split(self, tiny_cfg, tiny_train_cfg, tmp_path):
        make_dataset(tmp_path, n_sequences=1, frames=2, height=16, width=16)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["sequences"][0]["split"] = "val"
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="no training sequences"):
            train(tiny_cfg, tiny_train_cfg, tmp_path, quiet=True)

    def test_divergence_reports_iteration_lr_and_batch(
        self, tiny_cfg, tiny_train_cfg, mini_dataset, monkeypatch
    ):
        import rawburst.training as training_module

        monkeypatch.setattr(
            training_module, "combined_loss",
            lambda *args, **kwargs: Tensor(np.float32("nan")),
        )
        with pytest.raises(TrainingDiverged, match="iteration 0") as info:
            train(tiny_cfg, tiny_train_cfg, mini_dataset, quiet=True)
        assert info.value.iteration == 0
        assert info.value.lr == pytest.approx(tiny_train_cfg.lr_max)
        assert len(info.value.batch) == tiny_train_cfg.batch_size


class TestOverfitSingleSequence:
    @pytest.mark.slow
    def test_five_hundred_iterations_beat_identity_by_five_db(self, tmp_path):
        make_dataset(tmp_path, n_sequences=1, seed=3, frames=4, height=64, width=64)
        model_cfg = ModelConfig.desk()
        train_cfg = TrainConfig(iterations=500, eval_interval=0, seed=0)
        result = train(model_cfg, train_cfg, tmp_path, quiet=True)
        seqs = load_dataset(tmp_path, split="train")
        trained = evaluate(result.model, seqs).mean_psnr
        identity = noisy_baseline(seqs).mean_psnr
        assert trained - identity >= 5.0, f"only improved {trained - identity:.2f} dB"


class TestAblation:
    def test_variant_table(self):
        assert [name for name, _ in ABLATION_VARIANTS] == ["baseline", "conditioned", "full"]
        flags = dict(ABLATION_VARIANTS)
        assert flags["baseline"] == {"use_conditioning": False, "use_burst_scan": False}
        assert flags["full"] == {"use_conditioning": True, "use_burst_scan": True}

    def test_variants_share_initial_weights_by_name(self, tiny_cfg):
        models = {
            name: build_model(dataclasses.replace(tiny_cfg, **flags), seed=0)
            for name, flags in ABLATION_VARIANTS
        }
        base = models["baseline"].named_parameters()
        full = models["full"].named_parameters()
        shared = set(base) & set(full)
        assert shared, "variants must overlap somewhere"
        for name in shared:
            np.testing.assert_array_equal(base[name].data, full[name].data)

    def test_single_seed_reports_zero_spread(self, tiny_cfg, mini_dataset, tmp_path):
        cfg = TrainConfig(
            iterations=1, batch_size=1, patch_size=16, patch_stride=8,
            eval_interval=0, seed=0,
        )
        results = ablate(tiny_cfg, cfg, mini_dataset, seeds=(0,))
        assert list(results) == ["baseline", "conditioned", "full"]
        for stats in results.values():
            assert stats["psnr_std"] == 0.0
            assert stats["ssim_std"] == 0.0
            assert len(stats["psnr_runs"]) == 1
        out = tmp_path / "ablation.csv"
        write_ablation_csv(results, out, comment="config_hash=x seed=0")
        lines = out.read_text().splitlines()
        assert lines[0] == "# config_hash=x seed=0"
        assert lines[1] == "variant,psnr_mean,psnr_std,ssim_mean,ssim_std"
        assert len(lines) == 5

    def test_ablation_needs_a_holdout(self, tiny_cfg, tiny_train_cfg, tmp_path):
        make_dataset(tmp_path, n_sequences=1, frames=2, height=16, width=16)
        with pytest.raises(ValueError, match="held-out"):
            ablate(tiny_cfg, tiny_train_cfg, tmp_path, seeds=(0,))
