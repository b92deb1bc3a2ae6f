"""The selective scan: discretization, both kernels, and the token layout."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawburst import kernels, ops
from rawburst.ops import softplus_np
from rawburst.scan import (
    BurstSequence,
    SelectiveScanParams,
    _blelloch_exclusive,
    _scan_h,
    burst_flatten,
    burst_unflatten,
    combine,
    discretize,
    scan_parallel,
    scan_sequential,
    selective_scan,
)
from rawburst.tensor import Tensor
from rawburst.verify import gradcheck


def loop_scan(tokens, params):
    """Step-by-step recurrence straight from the definition, float64."""
    tokens = np.asarray(tokens, dtype=np.float64)
    length, d = tokens.shape
    n = params.state_dim
    a = -np.exp(np.asarray(params.log_a, dtype=np.float64))
    delta = softplus_np(tokens @ np.asarray(params.delta_w, np.float64).T + params.delta_b)
    bc = tokens @ np.asarray(params.b_w, np.float64).T + params.b_b
    cc = tokens @ np.asarray(params.c_w, np.float64).T + params.c_b
    h = np.zeros((d, n))
    out = np.empty((length, d))
    for t in range(length):
        abar = np.exp(delta[t][:, None] * a)
        bbar = delta[t][:, None] * bc[t][None, :]
        h = abar * h + bbar * tokens[t][:, None]
        out[t] = h @ cc[t] + params.skip * tokens[t]
    return out


def random_burst(rng, frames, height, width, d, dtype=np.float32):
    tokens = rng.standard_normal((frames * height * width, d)).astype(dtype)
    return BurstSequence(tokens, frames, height, width)


class TestDiscretize:
    def test_small_delta_limit(self):
        abar, bbar = discretize(np.full((1, 2), 1e-12), -np.ones((2, 3)), np.ones((1, 3)))
        np.testing.assert_allclose(abar, 1.0, atol=1e-9)
        np.testing.assert_allclose(bbar, 0.0, atol=1e-9)

    def test_log_two_halves_the_state(self):
        abar, _ = discretize(np.full((1, 1), np.log(2.0)), -np.ones((1, 1)), np.ones((1, 1)))
        np.testing.assert_allclose(abar, 0.5, rtol=1e-12)

    def test_matches_scalar_closed_form(self, rng):
        delta = rng.uniform(0.01, 2.0, (4, 3))
        a = -np.exp(rng.standard_normal((3, 2)))
        b = rng.standard_normal((4, 2))
        abar, bbar = discretize(delta, a, b)
        for t in range(4):
            for i in range(3):
                for j in range(2):
                    assert abs(abar[t, i, j] - np.exp(delta[t, i] * a[i, j])) <= 1e-7
                    assert abs(bbar[t, i, j] - delta[t, i] * b[t, j]) <= 1e-7

    def test_abar_in_unit_interval(self, rng):
        delta = rng.uniform(0.01, 3.0, (16, 4))
        a = -np.exp(rng.standard_normal((4, 8)))
        abar, _ = discretize(delta, a, rng.standard_normal((16, 8)))
        assert np.all(abar > 0) and np.all(abar < 1)

    def test_nonpositive_delta_is_an_error(self):
        with pytest.raises(ValueError, match="delta"):
            discretize(np.zeros((1, 1)), -np.ones((1, 1)), np.ones((1, 1)))

    def test_nonnegative_state_matrix_is_an_error(self):
        with pytest.raises(ValueError, match="negative"):
            discretize(np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))


class TestCombine:
    def test_associativity_on_random_triples(self, rng):
        for _ in range(50):
            p, q, r = [
                (rng.standard_normal(4), rng.standard_normal(4)) for _ in range(3)
            ]
            left = combine(combine(p, q), r)
            right = combine(p, combine(q, r))
            np.testing.assert_allclose(left[0], right[0], atol=1e-7)
            np.testing.assert_allclose(left[1], right[1], atol=1e-7)

    def test_identity_element(self, rng):
        p = (rng.standard_normal(3), rng.standard_normal(3))
        a, b = combine((np.ones(3), np.zeros(3)), p)
        np.testing.assert_allclose(a, p[0])
        np.testing.assert_allclose(b, p[1])

    def test_blelloch_matches_serial_exclusive_prefix(self, rng):
        for n in (1, 2, 5, 8, 13):
            a = rng.uniform(0.5, 1.0, (n, 3))
            b = rng.standard_normal((n, 3))
            pa, pb = _blelloch_exclusive(a, b)
            acc = (np.ones(3), np.zeros(3))
            for i in range(n):
                np.testing.assert_allclose(pa[i], acc[0], atol=1e-12)
                np.testing.assert_allclose(pb[i], acc[1], atol=1e-12)
                acc = combine(acc, (a[i], b[i]))


class TestBurstLayout:
    def test_two_frames_single_pixel_order(self):
        x = np.zeros((2, 3, 1, 1), dtype=np.float32)
        x[0, :, 0, 0] = [1, 2, 3]
        x[1, :, 0, 0] = [4, 5, 6]
        seq = burst_flatten(x)
        np.testing.assert_array_equal(seq.tokens, [[1, 2, 3], [4, 5, 6]])

    def test_single_row_column_order(self):
        x = np.zeros((1, 2, 1, 2), dtype=np.float32)
        x[0, :, 0, 0] = [1, 2]
        x[0, :, 0, 1] = [3, 4]
        seq = burst_flatten(x)
        np.testing.assert_array_equal(seq.tokens, [[1, 2], [3, 4]])

    def test_token_index_formula(self, rng):
        t_, h_, w_ = 3, 2, 4
        x = rng.standard_normal((t_, 5, h_, w_)).astype(np.float32)
        seq = burst_flatten(x)
        for t in range(t_):
            for i in range(h_):
                for j in range(w_):
                    np.testing.assert_array_equal(
                        seq.tokens[t * h_ * w_ + i * w_ + j], x[t, :, i, j]
                    )

    def test_roundtrip_is_exact(self, rng):
        x = rng.standard_normal((3, 4, 2, 2)).astype(np.float32)
        np.testing.assert_array_equal(burst_unflatten(burst_flatten(x)), x)

    def test_token_count_mismatch_is_an_error(self):
        with pytest.raises(ValueError, match="token count"):
            BurstSequence(np.zeros((5, 2), dtype=np.float32), 2, 1, 2)


class TestSequentialScan:
    def test_single_token_closed_form(self, rng):
        params = SelectiveScanParams.random(3, 2, rng, dtype=np.float64)
        seq = random_burst(rng, 1, 1, 1, 3, dtype=np.float64)
        x = seq.tokens[0]
        delta = softplus_np(x @ params.delta_w.T + params.delta_b)
        b1 = x @ params.b_w.T + params.b_b
        c1 = x @ params.c_w.T + params.c_b
        bbar = delta[:, None] * b1[None, :]
        expected = (bbar * x[:, None]) @ c1 + params.skip * x
        np.testing.assert_allclose(scan_sequential(seq, params)[0], expected, atol=1e-9)

    def test_degenerate_parameters_give_cumsum(self, rng):
        # abar = 1, bu = x reduces the recurrence to a running sum; both
        # kernels must agree with numpy's cumsum.
        x = rng.standard_normal((50, 4, 1))
        ones = np.ones_like(x)
        np.testing.assert_allclose(
            _scan_h(ones, x, "sequential")[:, :, 0], np.cumsum(x[:, :, 0], axis=0),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            _scan_h(ones, x, "parallel", chunk=8)[:, :, 0],
            np.cumsum(x[:, :, 0], axis=0), atol=1e-9,
        )

    def test_matches_loop_oracle(self, rng):
        params = SelectiveScanParams.random(2, 3, rng, dtype=np.float64)
        seq = random_burst(rng, 5, 1, 1, 2, dtype=np.float64)
        np.testing.assert_allclose(
            scan_sequential(seq, params), loop_scan(seq.tokens, params), atol=1e-6
        )

    def test_empty_sequence_is_an_error(self, rng):
        params = SelectiveScanParams.random(2, 2, rng)
        seq = BurstSequence(np.zeros((0, 2), dtype=np.float32), 0, 1, 1)
        with pytest.raises(ValueError, match="empty"):
            scan_sequential(seq, params)

    def test_token_width_mismatch_is_an_error(self, rng):
        params = SelectiveScanParams.random(3, 2, rng)
        with pytest.raises(ValueError, match="width"):
            scan_sequential(random_burst(rng, 2, 1, 1, 2), params)


class TestParallelEquivalence:
    @pytest.mark.parametrize("length", [1, 2, 7, 64, 300])
    def test_matches_sequential_float32(self, length):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            params = SelectiveScanParams.random(8, 4, rng, dtype=np.float32)
            seq = random_burst(rng, length, 1, 1, 8)
            diff = np.abs(
                scan_parallel(seq, params) - scan_sequential(seq, params)
            ).max()
            assert diff <= 1e-5, f"L={length} seed={seed}: {diff:.2e}"

    def test_matches_sequential_float64(self, rng):
        params = SelectiveScanParams.random(6, 3, rng, dtype=np.float64)
        seq = random_burst(rng, 4, 8, 8, 6, dtype=np.float64)
        diff = np.abs(scan_parallel(seq, params) - scan_sequential(seq, params)).max()
        assert diff <= 1e-9

    def test_chunk_size_independence(self, rng):
        params = SelectiveScanParams.random(8, 4, rng, dtype=np.float32)
        seq = random_burst(rng, 3, 7, 9, 8)
        ref = scan_sequential(seq, params)
        for chunk in (1, 16, 64, 256, 4096):
            diff = np.abs(scan_parallel(seq, params, chunk=chunk) - ref).max()
            assert diff <= 1e-5, f"chunk={chunk}: {diff:.2e}"

    def test_thread_count_does_not_change_bits(self, rng):
        params = SelectiveScanParams.random(8, 4, rng, dtype=np.float32)
        seq = random_burst(rng, 4, 8, 8, 8)
        single = scan_parallel(seq, params, threads=1)
        for threads in (2, 3, 8):
            np.testing.assert_array_equal(scan_parallel(seq, params, threads=threads), single)

    def test_invalid_chunk_is_an_error(self, rng):
        params = SelectiveScanParams.random(4, 2, rng)
        with pytest.raises(ValueError, match="chunk"):
            scan_parallel(random_burst(rng, 2, 2, 2, 4), params, chunk=0)


class TestScanProperties:
    def test_causality(self, rng):
        params = SelectiveScanParams.random(4, 2, rng, dtype=np.float64)
        seq = random_burst(rng, 8, 2, 2, 4, dtype=np.float64)
        base = scan_sequential(seq, params)
        for cut in rng.choice(seq.length - 1, 5, replace=False):
            edited = seq.tokens.copy()
            edited[cut + 1:] += rng.standard_normal(edited[cut + 1:].shape)
            out = scan_sequential(
                BurstSequence(edited, seq.frames, seq.height, seq.width), params
            )
            np.testing.assert_array_equal(out[: cut + 1], base[: cut + 1])

    def test_long_sequence_stays_bounded(self, rng):
        params = SelectiveScanParams.random(4, 4, rng, dtype=np.float32)
        seq = random_burst(rng, 10_000, 1, 1, 4)
        out = scan_parallel(seq, params)
        assert np.all(np.isfinite(out))
        assert np.abs(out).max() < 1e3

    def test_frame_order_sensitivity(self, rng):
        params = SelectiveScanParams.random(4, 2, rng, dtype=np.float32)
        seq = random_burst(rng, 5, 2, 2, 4)
        fwd = scan_sequential(seq, params)
        rev_tokens = burst_unflatten(seq)[::-1]
        rev = scan_sequential(burst_flatten(rev_tokens), params)
        assert np.abs(rev[::-1].reshape(fwd.shape) - fwd).max() > 0


class TestBackends:
    def test_active_backend_is_available(self):
        assert kernels.active_backend() in kernels.available_backends()

    def test_backends_agree_bitwise(self, rng):
        if "compiled" not in kernels.available_backends():
            pytest.skip("compiled extension not built")
        params = SelectiveScanParams.random(8, 4, rng, dtype=np.float32)
        seq = random_burst(rng, 3, 8, 8, 8)
        try:
            kernels.set_backend("numpy")
            y_np = scan_sequential(seq, params)
            p_np = scan_parallel(seq, params, chunk=32)
            kernels.set_backend("compiled")
            y_cy = scan_sequential(seq, params)
            p_cy = scan_parallel(seq, params, chunk=32)
        finally:
            kernels.set_backend("auto")
        np.testing.assert_array_equal(y_np, y_cy)
        np.testing.assert_array_equal(p_np, p_cy)

    def test_unknown_backend_is_an_error(self):
        with pytest.raises(ValueError, match="backend"):
            kernels.set_backend("cuda")


class TestSelectiveScanGradients:
    @pytest.mark.parametrize("kernel", ["sequential", "parallel"])
    def test_gradients_match_finite_differences(self, kernel):
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            length, d, n = 6, 3, 2
            u = Tensor(rng.standard_normal((length, d)), requires_grad=True)
            raw = Tensor(rng.standard_normal((length, d)), requires_grad=True)
            a = Tensor(-np.exp(rng.standard_normal((d, n))), requires_grad=True)
            b = Tensor(rng.standard_normal((length, n)), requires_grad=True)
            c = Tensor(rng.standard_normal((length, n)), requires_grad=True)
            skip = Tensor(rng.standard_normal(d), requires_grad=True)
            proj = rng.standard_normal((length, d))

            def fn():
                y = selective_scan(
                    u, ops.softplus(raw), a, b, c, skip, kernel=kernel, chunk=4
                )
                return ops.mean(ops.mul(y, Tensor(proj)))

            worst = max(worst, gradcheck(fn, [u, raw, a, b, c, skip], rng))
        assert worst <= 1e-4, f"max relative error {worst:.3e}"


@settings(max_examples=25, deadline=None)
@given(
    frames=st.integers(1, 4),
    height=st.integers(1, 4),
    width=st.integers(1, 4),
    d=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
)
def test_parallel_equals_sequential_property(frames, height, width, d, seed):
    rng = np.random.default_rng(seed)
    params = SelectiveScanParams.random(d, 3, rng, dtype=np.float32)
    seq = random_burst(rng, frames, height, width, d)
    diff = np.abs(scan_parallel(seq, params, chunk=16) - scan_sequential(seq, params)).max()
    assert diff <= 1e-5
