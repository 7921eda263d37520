"""Shared fixtures: small configs and datasets that train in seconds."""

import numpy as np
import pytest

from mlf.data import SplitRanges, split_dataset, standardize
from mlf.model import MlfConfig
from mlf.synth import linear_trend, regime_switching


@pytest.fixture
def tiny_config():
    return MlfConfig(
        period_lengths=(4, 8),
        horizon=2,
        n_patches=4,
        squeeze_factor=2,
        d_model=4,
        n_heads=2,
        n_blocks=2,
        d_ff=8,
        conv_filters=4,
        learning_rate=1e-3,
        batch_size=32,
        epochs=2,
    )


@pytest.fixture
def tiny_dataset():
    ds = linear_trend(160, 1, seed=3)
    split = split_dataset(ds, "ratio", min_history=8, horizon=2)
    return standardize(ds, split), split


@pytest.fixture
def overfit_dataset():
    """64 usable anchors of a clean ramp in a single train-only split."""
    split = SplitRanges((0, 73), (73, 73), (73, 73))
    ds = linear_trend(73, 1, seed=1, noise=0.0, seasonal_amp=0.0)
    return standardize(ds, split), split


def regime_dataset(n_steps=3000, seed=7):
    """The regime-switching series used by the comparison experiments."""
    return regime_switching(
        n_steps, 1, seed=seed, fast_amp=2.5, mean_dwell=50, noise=0.03, calm_noise=0.25
    )


def regime_config(periods=(8, 24, 64), horizon=4, epochs=16):
    """Desk-scale base config for the regime experiments."""
    return MlfConfig(
        period_lengths=periods,
        horizon=horizon,
        n_patches=8,
        squeeze_factor=2,
        d_model=8,
        n_heads=4,
        n_blocks=2,
        d_ff=16,
        conv_filters=8,
        learning_rate=1e-3,
        batch_size=64,
        epochs=epochs,
    )
