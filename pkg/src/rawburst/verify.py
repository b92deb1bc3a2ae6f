"""Self-verification suites: gradient checks, scan equivalence, the
normalization contract, and noise-model statistics.

Each suite returns a list of named check results; the CLI prints one line
per check and fails if any check fails. Everything is deterministic for a
fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import BurstScanBlock, BurstScanModule, ChannelAttention, NafBlock
from .conditioning import AdaptiveLayerNorm, CaptureCondition, default_vocabulary
from .metrics import combined_loss
from .model import BurstDenoiser, ModelConfig
from .module import Module
from .rawdata import SensorProfile, apply_noise, default_profiles, noise_moments
from .scan import (
    BurstSequence,
    SelectiveScanParams,
    combine,
    scan_parallel,
    scan_sequential,
    selective_scan,
)
from .tensor import Tensor, backward, no_grad


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def gradcheck(
    fn,
    tensors: list[Tensor],
    rng: np.random.Generator,
    coords_per_tensor: int = 4,
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn()`` must rebuild a scalar loss from the (float64) ``tensors``;
    coordinates are sampled per tensor and perturbed in place. The
    roundoff term of a central difference is eps*|f|/(2h), so callers
    must keep the loss magnitude near 1 (e.g. by averaging rather than
    summing projections) or near-zero-derivative coordinates drown in
    float64 noise.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise ValueError("gradcheck requires float64 tensors")
        t.zero_grad()
    loss = fn()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    for t in tensors:
        t.zero_grad()
    worst = 0.0
    with no_grad():
        for t, g in zip(tensors, grads):
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            k = min(coords_per_tensor, flat.size)
            for i in rng.choice(flat.size, size=k, replace=False):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(fn().data.reshape(()))
                flat[i] = orig - h
                f_minus = float(fn().data.reshape(()))
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                ad = float(gflat[i])
                err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-6)
                worst = max(worst, err)
    return worst


def randomize_parameters(module: Module, seed: int, scale: float = 0.05) -> None:
    """Perturb every parameter, opening up zero-initialized paths.

    Used to probe sensitivity properties that an identity-initialized
    model would trivially hide.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(99,)))
    for name in sorted(module.named_parameters()):
        p = module.named_parameters()[name]
        p.data[...] = p.data + rng.normal(0.0, scale, p.shape).astype(p.dtype)


def _check(name: str, passed: bool, detail: str) -> CheckResult:
    return CheckResult(name, bool(passed), detail)


def _projection(rng: np.random.Generator, shape) -> Tensor:
    """Random projection scaled to keep the projected loss near O(1)."""
    size = int(np.prod(shape))
    return Tensor(rng.normal(0.0, 1.0, shape) / size, dtype=np.float64)


def _tiny_model_config() -> ModelConfig:
    return ModelConfig(
        channels=4,
        frames=2,
        num_scales=1,
        enc_blocks=1,
        bottleneck_blocks=1,
        dec_blocks=1,
        align_levels=1,
        cond_dim=8,
        factor_dim=4,
        state_dim=2,
        vocab=default_vocabulary(),
    )


def suite_gradcheck(seed: int = 0, instances: int = 20, tol: float = 1e-4) -> list[CheckResult]:
    """Finite-difference gradient checks over every block type (float64)."""
    results = []

    def run_block(name: str, builder) -> None:
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(hash(name) % 2**31, i)))
            fn, tensors = builder(rng)
            worst = max(worst, gradcheck(fn, tensors, rng))
        results.append(
            _check(f"gradcheck/{name}", worst <= tol, f"max rel err {worst:.3e} (tol {tol:.0e})")
        )

    def t64(rng, shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)

    def conv_builder(rng):
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2]))
        padding = int(rng.choice([0, 1]))
        c_in = int(rng.choice([1, 2, 3]))
        c_out = int(rng.choice([1, 2, 4]))
        depthwise = bool(rng.random() < 0.3) and k == 3
        if depthwise:
            c_out = c_in
        size = int(rng.integers(max(k, 4), 7))
        x = t64(rng, (2, c_in, size, size))
        w = (
            t64(rng, (c_in, 1, k, k))
            if depthwise
            else t64(rng, (c_out, c_in, k, k))
        )
        b = t64(rng, (c_out if not depthwise else c_in,))
        groups = c_in if depthwise else 1
        proj_cache = {}

        def fn():
            y = ops.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
            if "p" not in proj_cache:
                proj_cache["p"] = _projection(np.random.default_rng(12345), y.shape)
            return ops.reduce_sum(ops.mul(y, proj_cache["p"]))

        return fn, [x, w, b]

    def linear_builder(rng):
        d_in = int(rng.integers(2, 6))
        d_out = int(rng.integers(2, 6))
        x = t64(rng, (3, d_in))
        w = t64(rng, (d_out, d_in))
        b = t64(rng, (d_out,))
        proj = _projection(rng, (3, d_out))

        def fn():
            return ops.reduce_sum(ops.mul(ops.linear(x, w, b), proj))

        return fn, [x, w, b]

    def silu_builder(rng):
        x = t64(rng, (4, 5), -3.0, 3.0)
        proj = _projection(rng, (4, 5))

        def fn():
            return ops.reduce_sum(ops.mul(ops.silu(x), proj))

        return fn, [x]

    def adaln_builder(rng):
        c = int(rng.choice([2, 4]))
        layer = AdaptiveLayerNorm(c, 6, dtype=np.float64)
        layer.proj_w.data[...] = rng.normal(0.0, 0.3, layer.proj_w.shape)
        layer.proj_b.data[...] += rng.normal(0.0, 0.3, layer.proj_b.shape)
        x = t64(rng, (2, c, 3, 3))
        v = t64(rng, (1, 6))
        proj = _projection(rng, x.shape)

        def fn():
            return ops.reduce_sum(ops.mul(layer(x, v), proj))

        return fn, [x, v, layer.proj_w, layer.proj_b]

    def attention_builder(rng):
        c = 4
        block = ChannelAttention(c, reduction=2, dtype=np.float64)
        randomize_parameters(block, int(rng.integers(2**31)))
        x = t64(rng, (2, c, 4, 4))
        proj = _projection(rng, x.shape)

        def fn():
            return ops.reduce_sum(ops.mul(block(x), proj))

        return fn, [x, block.w1, block.w2, block.b1]

    def scan_module_builder(rng):
        c = 4
        block = BurstScanModule(c, state_dim=2, kernel="parallel", chunk=8, dtype=np.float64)
        randomize_parameters(block, int(rng.integers(2**31)))
        x = t64(rng, (2, c, 3, 3))
        proj = _projection(rng, x.shape)

        def fn():
            return ops.reduce_sum(ops.mul(block(x), proj))

        return fn, [x, block.log_a, block.delta_w, block.skip, block.in_w]

    def scan_block_builder(rng):
        c = 4
        block = BurstScanBlock(c, state_dim=2, reduction=2, kernel="parallel", chunk=8,
                               dtype=np.float64)
        randomize_parameters(block, int(rng.integers(2**31)))
        x = t64(rng, (2, c, 3, 3))
        proj = _projection(rng, x.shape)

        def fn():
            return ops.reduce_sum(ops.mul(block(x), proj))

        return fn, [x, block.scale1, block.scale2, block.mixer.out_w]

    def naf_builder(rng):
        c = 4
        block = NafBlock(c, cond_dim=6, dtype=np.float64)
        randomize_parameters(block, int(rng.integers(2**31)))
        x = t64(rng, (2, c, 4, 4))
        v = t64(rng, (1, 6))
        proj = _projection(rng, x.shape)

        def fn():
            return ops.reduce_sum(ops.mul(block(x, v), proj))

        return fn, [x, v, block.conv1_w, block.scale1, block.dw_w]

    def model_builder(rng):
        cfg = _tiny_model_config()
        model = BurstDenoiser(cfg, dtype=np.float64)
        model.initialize(int(rng.integers(2**31)))
        randomize_parameters(model, int(rng.integers(2**31)))
        frames = Tensor(rng.uniform(0.05, 0.95, (2, 8, 8)), requires_grad=True, dtype=np.float64)
        cond = CaptureCondition(0, 1.0, 24.0)
        proj = _projection(rng, (8, 8))
        params = model.named_parameters()
        names = sorted(params)
        picks = [params[names[int(j)]] for j in rng.choice(len(names), 3, replace=False)]

        def fn():
            return ops.reduce_sum(ops.mul(model(frames, cond), proj))

        return fn, [frames] + picks

    def loss_builder(rng):
        pred = Tensor(rng.uniform(0.1, 0.9, (8, 8)), requires_grad=True, dtype=np.float64)
        target = Tensor(rng.uniform(0.1, 0.9, (8, 8)), dtype=np.float64)

        def fn():
            return combined_loss(pred, target, ssim_weight=1.0)

        return fn, [pred]

    run_block("conv2d", conv_builder)
    run_block("linear", linear_builder)
    run_block("silu", silu_builder)
    run_block("adaptive_layer_norm", adaln_builder)
    run_block("channel_attention", attention_builder)
    run_block("burst_scan_module", scan_module_builder)
    run_block("burst_scan_block", scan_block_builder)
    run_block("naf_block", naf_builder)
    run_block("full_model", model_builder)
    run_block("combined_loss", loss_builder)
    return results


def suite_scan(seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    """Sequential/parallel equivalence plus structural scan properties."""
    results = []
    lengths = [1, 2, 7, 64, 1000, 4096]
    d_inner, state = 8, 4

    worst = 0.0
    for length in lengths:
        for draw in range(10):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(length, draw)))
            params = SelectiveScanParams.random(d_inner, state, rng, dtype=np.float32)
            tokens = rng.standard_normal((length, d_inner)).astype(np.float32)
            grid = _fake_grid(length)
            seq = BurstSequence(tokens, *grid)
            y_seq = scan_sequential(seq, params)
            y_par = scan_parallel(seq, params, chunk=64)
            worst = max(worst, float(np.max(np.abs(y_seq - y_par))))
    results.append(
        _check(
            "scan/seq_par_equivalence",
            worst <= tol,
            f"max |par-seq| {worst:.3e} over L={lengths} (tol {tol:.0e})",
        )
    )

    # Chunk-size and thread-count invariance at L = 1000.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7001,)))
    params = SelectiveScanParams.random(d_inner, state, rng, dtype=np.float32)
    tokens = rng.standard_normal((1000, d_inner)).astype(np.float32)
    seq = BurstSequence(tokens, *_fake_grid(1000))
    y_ref = scan_sequential(seq, params)
    worst = 0.0
    thread_exact = True
    for chunk in (16, 64, 256):
        base = scan_parallel(seq, params, chunk=chunk, threads=1)
        worst = max(worst, float(np.max(np.abs(base - y_ref))))
        for threads in (2, 4):
            other = scan_parallel(seq, params, chunk=chunk, threads=threads)
            if not np.array_equal(base, other):
                thread_exact = False
    results.append(
        _check(
            "scan/chunk_thread_invariance",
            worst <= tol and thread_exact,
            f"max diff vs seq {worst:.3e}; thread-count bitwise invariant: {thread_exact}",
        )
    )

    # Causality: editing future tokens does not change earlier outputs.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7002,)))
    params = SelectiveScanParams.random(d_inner, state, rng, dtype=np.float32)
    tokens = rng.standard_normal((96, d_inner)).astype(np.float32)
    cut = 40
    edited = tokens.copy()
    edited[cut:] += rng.standard_normal((96 - cut, d_inner)).astype(np.float32)
    y_a = scan_sequential(BurstSequence(tokens, *_fake_grid(96)), params)
    y_b = scan_sequential(BurstSequence(edited, *_fake_grid(96)), params)
    causal = np.array_equal(y_a[:cut], y_b[:cut]) and not np.allclose(y_a[cut:], y_b[cut:])
    results.append(_check("scan/causality", causal, f"prefix of {cut} tokens unchanged"))

    # Stability: bounded outputs over a long sequence.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7003,)))
    params = SelectiveScanParams.random(d_inner, state, rng, dtype=np.float32)
    tokens = rng.standard_normal((10_000, d_inner)).astype(np.float32)
    y = scan_parallel(BurstSequence(tokens, *_fake_grid(10_000)), params, chunk=64)
    peak = float(np.max(np.abs(y)))
    results.append(
        _check("scan/stability_long", np.isfinite(peak) and peak < 1e3, f"max |y| {peak:.3f} at L=10000")
    )

    # Order sensitivity: reversing the token order changes the outputs.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7004,)))
    params = SelectiveScanParams.random(d_inner, state, rng, dtype=np.float32)
    tokens = rng.standard_normal((64, d_inner)).astype(np.float32)
    y_fwd = scan_sequential(BurstSequence(tokens, *_fake_grid(64)), params)
    y_rev = scan_sequential(BurstSequence(tokens[::-1].copy(), *_fake_grid(64)), params)[::-1]
    diff = float(np.max(np.abs(y_fwd - y_rev)))
    results.append(
        _check("scan/order_sensitivity", diff > 1e-6, f"max |fwd - rev| {diff:.3e} (> 1e-6)")
    )

    # Associativity of the combine operator.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7005,)))
    worst = 0.0
    for _ in range(50):
        trip = [(rng.uniform(0.1, 1.0, 5), rng.standard_normal(5)) for _ in range(3)]
        left = combine(combine(trip[0], trip[1]), trip[2])
        right = combine(trip[0], combine(trip[1], trip[2]))
        worst = max(worst, float(np.max(np.abs(left[0] - right[0]))),
                    float(np.max(np.abs(left[1] - right[1]))))
    results.append(
        _check("scan/combine_associative", worst <= 1e-7, f"max assoc diff {worst:.3e}")
    )

    # Gradients of the fused op against finite differences (float64).
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7006,)))
    worst = 0.0
    for draw in range(5):
        length, d, n = 6, 3, 2
        u = Tensor(rng.standard_normal((length, d)), requires_grad=True, dtype=np.float64)
        delta = Tensor(rng.uniform(0.05, 0.5, (length, d)), requires_grad=True, dtype=np.float64)
        a = Tensor(-rng.uniform(0.5, 2.0, (d, n)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.standard_normal((length, n)), requires_grad=True, dtype=np.float64)
        c = Tensor(rng.standard_normal((length, n)), requires_grad=True, dtype=np.float64)
        skip = Tensor(rng.standard_normal(d), requires_grad=True, dtype=np.float64)
        proj = _projection(rng, (length, d))

        def fn():
            y = selective_scan(u, delta, a, b, c, skip, kernel="parallel", chunk=4)
            return ops.reduce_sum(ops.mul(y, proj))

        worst = max(worst, gradcheck(fn, [u, delta, a, b, c, skip], rng, coords_per_tensor=3))
    results.append(
        _check("scan/gradients", worst <= 1e-4, f"max rel err {worst:.3e} (tol 1e-04)")
    )
    return results


def _fake_grid(length: int) -> tuple[int, int, int]:
    """A (frames, height, width) factorization for free-form token tests."""
    return (length, 1, 1)


def suite_adaln(seed: int = 0) -> list[CheckResult]:
    """The normalization contract of the conditioned layer norm."""
    results = []
    eps = 1e-5
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(8001,)))

    # Pre-affine statistics: zero mean, variance var/(var + eps).
    worst_mu = 0.0
    worst_var = 0.0
    for _ in range(10):
        b, c, h, w = 3, int(rng.integers(2, 6)), int(rng.integers(2, 8)), int(rng.integers(2, 8))
        x = rng.normal(rng.uniform(-2, 2), rng.uniform(0.5, 3.0), (b, c, h, w))
        layer = AdaptiveLayerNorm(c, 5, dtype=np.float64)
        v = Tensor(rng.standard_normal((1, 5)), dtype=np.float64)
        with no_grad():
            y = layer(Tensor(x, dtype=np.float64), v).data
        for i in range(b):
            sample = y[i]
            var_in = x[i].var()
            worst_mu = max(worst_mu, abs(sample.mean()))
            worst_var = max(worst_var, abs(sample.var() - var_in / (var_in + eps)))
    results.append(
        _check("adaln/pre_affine_mean", worst_mu <= 1e-6, f"max |mean| {worst_mu:.3e} (tol 1e-06)")
    )
    results.append(
        _check(
            "adaln/pre_affine_variance",
            worst_var <= 1e-6,
            f"max |var - s2/(s2+eps)| {worst_var:.3e} (tol 1e-06)",
        )
    )

    # Constant input: zero variance, output equals the projected shift.
    layer = AdaptiveLayerNorm(3, 5, dtype=np.float64)
    layer.proj_w.data[...] = rng.normal(0.0, 0.5, layer.proj_w.shape)
    layer.proj_b.data[...] += rng.normal(0.0, 0.5, layer.proj_b.shape)
    v = Tensor(rng.standard_normal((1, 5)), dtype=np.float64)
    x = Tensor(np.full((1, 3, 4, 4), 2.75), dtype=np.float64)
    with no_grad():
        y = layer(x, v).data
        beta = (v.data @ layer.proj_w.data.T + layer.proj_b.data)[0, 3:]
    diff = float(np.max(np.abs(y - beta[None, :, None, None])))
    results.append(
        _check("adaln/constant_input_gives_shift", diff == 0.0, f"max |y - beta| {diff:.3e}")
    )

    # Hand oracle: B=1, C=2, H=1, W=2, values 1..4, gamma=[1,2], beta=[0,1].
    layer = AdaptiveLayerNorm(2, 3, dtype=np.float64)
    layer.proj_b.data[...] = np.array([1.0, 2.0, 0.0, 1.0])
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 1, 2), dtype=np.float64)
    v = Tensor(np.zeros((1, 3)), dtype=np.float64)
    with no_grad():
        y = layer(x, v).data
    gamma = np.array([1.0, 2.0]).reshape(1, 2, 1, 1)
    beta = np.array([0.0, 1.0]).reshape(1, 2, 1, 1)
    expected = gamma * (x.data - 2.5) / np.sqrt(1.25 + eps) + beta
    diff = float(np.max(np.abs(y - expected)))
    results.append(
        _check(
            "adaln/hand_oracle",
            diff <= 1e-6,
            f"max diff {diff:.3e} vs gamma*(x-2.5)/sqrt(1.25+eps)+beta",
        )
    )

    # Shift invariance: adding a constant to the input changes nothing.
    layer = AdaptiveLayerNorm(3, 5, dtype=np.float64)
    layer.proj_w.data[...] = rng.normal(0.0, 0.5, layer.proj_w.shape)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), dtype=np.float64)
    v = Tensor(rng.standard_normal((1, 5)), dtype=np.float64)
    shifted = Tensor(x.data + 3.25, dtype=np.float64)
    with no_grad():
        diff = float(np.max(np.abs(layer(x, v).data - layer(shifted, v).data)))
    results.append(
        _check("adaln/shift_invariance", diff <= 1e-6, f"max |f(x) - f(x+c)| {diff:.3e}")
    )

    # Conditioning sensitivity once the projection is non-trivial.
    va = Tensor(rng.standard_normal((1, 5)), dtype=np.float64)
    vb = Tensor(rng.standard_normal((1, 5)), dtype=np.float64)
    with no_grad():
        diff = float(np.max(np.abs(layer(x, va).data - layer(x, vb).data)))
    results.append(
        _check("adaln/condition_sensitivity", diff > 1e-6, f"max response diff {diff:.3e}")
    )
    return results


def suite_noise(seed: int = 0, samples: int = 1_000_000) -> list[CheckResult]:
    """Monte-Carlo validation of the analytic noise moments."""
    results = []
    vocab = default_vocabulary()
    profiles = default_profiles()
    conds = [
        CaptureCondition(p.sensor_id, lux, fps)
        for p, lux, fps in zip(
            profiles * 5,
            [1.0, 5.0, 10.0, 1.0, 10.0] * 4,
            [120.0, 60.0, 24.0, 24.0, 120.0] * 4,
        )
    ][:20]
    cleans = np.linspace(0.1, 0.9, 20)

    worst_mean = 0.0
    worst_var = 0.0
    for i, cond in enumerate(conds):
        profile = profiles[cond.sensor_id]
        clean = float(cleans[i])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9000, i)))
        draws = apply_noise(np.full(samples, clean, dtype=np.float64), cond, profile, rng)
        mean_expected, var_expected = noise_moments(clean, cond, profile)
        mean_err = abs(draws.mean() - clean) / clean
        var_err = abs(draws.var() - var_expected) / var_expected
        worst_mean = max(worst_mean, float(mean_err))
        worst_var = max(worst_var, float(var_err))
    results.append(
        _check(
            "noise/mc_mean",
            worst_mean <= 0.01,
            f"max relative mean error {worst_mean:.4%} over 20 configs (tol 1%)",
        )
    )
    results.append(
        _check(
            "noise/mc_variance",
            worst_var <= 0.05,
            f"max relative variance error {worst_var:.4%} over 20 configs (tol 5%)",
        )
    )

    # Monotonicity of the analytic variance in illuminance and frame rate.
    mono = True
    for profile in profiles:
        for fps in vocab.fps:
            variances = [
                noise_moments(0.5, CaptureCondition(profile.sensor_id, lux, fps), profile)[1]
                for lux in sorted(vocab.illuminance_lx)
            ]
            if not all(a > b for a, b in zip(variances, variances[1:])):
                mono = False
        for lux in vocab.illuminance_lx:
            variances = [
                noise_moments(0.5, CaptureCondition(profile.sensor_id, lux, fps), profile)[1]
                for fps in sorted(vocab.fps)
            ]
            if not all(a < b for a, b in zip(variances, variances[1:])):
                mono = False
    results.append(
        _check(
            "noise/variance_monotonicity",
            mono,
            "variance rises with less light and shorter exposure on every profile",
        )
    )

    # Dark frame: variance is the scaled read noise alone.
    profile = profiles[1]
    cond = CaptureCondition(1, 1.0, 120.0)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9100,)))
    draws = apply_noise(np.zeros(samples), cond, profile, rng)
    _, var_expected = noise_moments(0.0, cond, profile)
    err = abs(draws.var() - var_expected) / var_expected
    results.append(
        _check("noise/dark_frame_variance", err <= 0.05, f"relative error {err:.4%} (tol 5%)")
    )

    # Photon-rich limit: relative fluctuation collapses.
    bright = SensorProfile(0, 1.0, 0.0, 2_000_000.0, 1.0)
    cond = CaptureCondition(0, 1.0, 1.0)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9200,)))
    draws = apply_noise(np.full(100_000, 0.5), cond, bright, rng)
    ratio = float(draws.std() / draws.mean())
    results.append(
        _check("noise/bright_limit", ratio < 0.002, f"std/mean {ratio:.5%} at 1e6 electrons")
    )
    return results


SUITES = {
    "gradcheck": suite_gradcheck,
    "scan": suite_scan,
    "adaln": suite_adaln,
    "noise": suite_noise,
}


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    if name == "all":
        out = []
        for key in ("gradcheck", "scan", "adaln", "noise"):
            out.extend(SUITES[key](seed=seed))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown verification suite {name!r}; choose from "
                         f"{sorted(SUITES)} or 'all'")
    return SUITES[name](seed=seed)
