"""Shared fixtures: tiny configs, a small on-disk dataset, RNG helpers."""

import sys

import numpy as np
import pytest

from rawburst import ModelConfig, TrainConfig, make_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Smallest config that exercises every architectural path."""
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
        attn_reduction=2,
    )


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(
        iterations=4,
        batch_size=2,
        patch_size=16,
        patch_stride=8,
        eval_interval=2,
        seed=0,
    )


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Five 2-frame 32x32 sequences (4 train / 1 val), shared read-only."""
    root = tmp_path_factory.mktemp("mini_dataset")
    make_dataset(root, n_sequences=5, seed=7, frames=2, height=32, width=32, val_count=1)
    return root


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Re-emit the acceptance PASS/FAIL lines after the run."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
