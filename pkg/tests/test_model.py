"""Config validation, forward-pass contracts, loss decomposition, ablations."""

import numpy as np
import pytest

from mlf.autograd import ShapeError
from mlf.model import (
    ConfigError,
    MlfConfig,
    apply_ablation,
    build_model,
    mlf_loss,
    period_geometries,
    seed_streams,
)

TOY = MlfConfig(
    period_lengths=(4, 8),
    horizon=2,
    n_patches=4,
    squeeze_factor=2,
    d_model=4,
    n_heads=2,
    n_blocks=2,
    d_ff=8,
    conv_filters=4,
)


def toy_windows(batch=3, seed=0, cfg=TOY):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((batch, n)) for n in cfg.period_lengths]


# -- config -----------------------------------------------------------------


def test_config_defaults_match_contract():
    cfg = MlfConfig(period_lengths=(96,), horizon=24)
    assert cfg.n_patches == 64
    assert cfg.squeeze_factor in (2, 4, 8)
    assert cfg.learning_rate == 1e-4
    assert cfg.batch_size == 128
    assert cfg.epochs == 30
    assert cfg.ff_width == 2 * cfg.d_model


@pytest.mark.parametrize(
    "kwargs,match",
    [
        (dict(period_lengths=(), horizon=1), "period_lengths"),
        (dict(period_lengths=(8, 8), horizon=1), "strictly increasing"),
        (dict(period_lengths=(8,), horizon=0), "horizon"),
        (dict(period_lengths=(8,), horizon=1, squeeze_factor=3), "squeeze_factor"),
        (dict(period_lengths=(8,), horizon=1, n_patches=10, squeeze_factor=4), "divisible"),
        (dict(period_lengths=(8,), horizon=1, d_model=6, n_heads=4), "n_heads"),
        (dict(period_lengths=(8,), horizon=1, n_blocks=0), "n_blocks"),
        (dict(period_lengths=(4, 8), horizon=1, use_map=False), "too short for fixed patching"),
    ],
)
def test_config_validation(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        MlfConfig(**kwargs)


def test_config_round_trip_and_unknown_fields():
    d = TOY.to_dict()
    assert MlfConfig.from_dict(d) == TOY
    with pytest.raises(ConfigError, match="unknown model config field"):
        MlfConfig.from_dict(dict(d, banana=1))
    with pytest.raises(ConfigError, match="period_lengths"):
        MlfConfig.from_dict({"horizon": 2})


def test_geometries_adaptive_vs_fixed():
    geo = period_geometries(TOY)
    assert [g.params.n_patches for g in geo] == [4, 4]
    assert [g.n_squeezed for g in geo] == [2, 2]
    fixed = period_geometries(
        MlfConfig(period_lengths=(16, 32), horizon=1, n_patches=4, squeeze_factor=2, d_model=4,
                  n_heads=2, n_blocks=1, conv_filters=2, use_map=False)
    )
    assert [g.params.n_patches for g in fixed] == [2, 4]
    assert fixed[0].params.patch_len == 16 and fixed[0].params.stride == 8


# -- forward ---------------------------------------------------------------------


def test_forward_shapes_full_trace():
    cfg = MlfConfig(
        period_lengths=(5, 10, 30, 60, 120, 150),
        horizon=5,
        n_patches=64,
        squeeze_factor=8,
        d_model=16,
        n_heads=4,
        n_blocks=3,
        conv_filters=4,
    )
    model = build_model(cfg, seed=0)
    windows = toy_windows(2, 1, cfg)
    bundle = model.forward(windows, training=True, collect_diagnostics=True)
    assert bundle.forecast.shape == (2, 5)
    assert len(bundle.period_forecasts) == 6
    assert bundle.att.shape == (2, 6, 5)
    assert bundle.attention_scores[0].shape == (4, 2, 48, 48)  # 6 periods x 8 tokens
    assert bundle.token_ranges[-1] == (40, 48)
    for s, geom in enumerate(model.geometries):
        assert bundle.raw_patches[s].shape == (2, geom.params.patch_len, 64)
        assert bundle.reconstructions[s].shape == bundle.raw_patches[s].shape


def test_forward_zero_parameters_zero_forecast():
    model = build_model(TOY, seed=0)
    for p in model.params.values():
        p.data[...] = 0.0
    bundle = model.forward(toy_windows(), training=False)
    assert np.allclose(bundle.forecast.data, 0.0)


def test_forward_smallest_degenerate_config():
    cfg = MlfConfig(
        period_lengths=(6,),
        horizon=3,
        n_patches=2,
        squeeze_factor=1,
        d_model=2,
        n_heads=1,
        n_blocks=1,
        conv_filters=2,
    )
    model = build_model(cfg, seed=0)
    bundle = model.forward(toy_windows(2, 2, cfg), training=True)
    assert bundle.forecast.shape == (2, 3)


def test_forward_rejects_bad_windows():
    model = build_model(TOY, seed=0)
    with pytest.raises(ShapeError, match="expected 2 period windows"):
        model.forward(toy_windows()[:1], training=False)
    bad = toy_windows()
    bad[1] = bad[1][:, :-1]
    with pytest.raises(ShapeError, match="period 1 window"):
        model.forward(bad, training=False)


# -- loss -------------------------------------------------------------------------


def test_loss_decomposes_into_terms():
    model = build_model(TOY, seed=0)
    windows = toy_windows()
    target = np.random.default_rng(3).standard_normal((3, 2))
    bundle = model.forward(windows, training=True)
    parts = mlf_loss(bundle, target)
    assert float(parts.total.data) == pytest.approx(parts.forecast_term + parts.reconstruction_term)
    bare = mlf_loss(bundle, target, use_reconstruction=False)
    assert float(bare.total.data) == pytest.approx(parts.forecast_term)
    assert bare.reconstruction_term == 0.0


def test_loss_zero_when_everything_perfect():
    model = build_model(TOY, seed=0)
    windows = toy_windows()
    bundle = model.forward(windows, training=True)
    # Force perfection: target equals the forecast, reconstructions equal raws.
    bundle.reconstructions = bundle.raw_patches
    parts = mlf_loss(bundle, bundle.forecast.data.copy())
    assert float(parts.total.data) == pytest.approx(0.0, abs=1e-15)


def test_loss_hand_arithmetic():
    # Forecast MSE 1 plus reconstruction terms (2, 4)/2 -> total 4.
    from mlf.autograd import Tensor
    from mlf.model import ForecastBundle

    bundle = ForecastBundle(
        forecast=Tensor(np.array([[1.0, 3.0]])),
        period_forecasts=[],
        block_forecasts=[],
        att=None,
        reconstructions=[Tensor(np.full((1, 1, 2), np.sqrt(2.0))), Tensor(np.full((1, 1, 2), 2.0))],
        raw_patches=[Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 2)))],
        token_ranges=[],
    )
    parts = mlf_loss(bundle, np.array([[0.0, 2.0]]))
    assert float(parts.total.data) == pytest.approx(4.0)


# -- ablation switches -------------------------------------------------------------


def test_apply_ablation_flags():
    assert apply_ablation(TOY, "irf").use_irf is False
    assert apply_ablation(TOY, "lwi").use_lwi is False
    assert apply_ablation(TOY, "ma").use_attention is False
    assert apply_ablation(TOY, "reconstruction_loss").use_reconstruction_loss is False
    with pytest.raises(ConfigError, match="unknown ablation flag"):
        apply_ablation(TOY, "bogus")


def test_no_attention_variant_runs_and_differs():
    windows = toy_windows(2, 4)
    base = build_model(TOY, seed=1).forward(windows, training=False)
    noma = build_model(apply_ablation(TOY, "ma"), seed=1).forward(windows, training=False)
    assert noma.forecast.shape == base.forecast.shape
    assert not np.allclose(base.forecast.data, noma.forecast.data)


def test_no_lwi_variant_uses_plain_mean():
    windows = toy_windows(2, 5)
    model = build_model(apply_ablation(TOY, "lwi"), seed=1)
    bundle = model.forward(windows, training=False)
    assert bundle.att is None
    stacked = np.mean([f.data for f in bundle.period_forecasts], axis=0)
    assert np.allclose(bundle.forecast.data, stacked)


def test_no_map_variant_runs_with_uneven_patch_counts():
    cfg = MlfConfig(
        period_lengths=(16, 32, 64),
        horizon=2,
        n_patches=8,
        squeeze_factor=2,
        d_model=4,
        n_heads=2,
        n_blocks=2,
        conv_filters=2,
        use_map=False,
    )
    model = build_model(cfg, seed=0)
    counts = [g.params.n_patches for g in model.geometries]
    assert counts == [2, 4, 8]  # grows with window length
    windows = toy_windows(3, 6, cfg)
    bundle = model.forward(windows, training=True)
    assert bundle.forecast.shape == (3, 2)
    sizes = [b - a for a, b in bundle.token_ranges]
    assert sizes == [1, 2, 4]


# -- seeding ---------------------------------------------------------------------


def test_seed_streams_are_independent_and_reproducible():
    init_a, shuffle_a = seed_streams(123)
    init_b, shuffle_b = seed_streams(123)
    assert init_a.standard_normal(5) == pytest.approx(init_b.standard_normal(5))
    assert shuffle_a.standard_normal(5) == pytest.approx(shuffle_b.standard_normal(5))
    init_c, _ = seed_streams(124)
    assert not np.allclose(seed_streams(123)[0].standard_normal(5), init_c.standard_normal(5))


def test_same_seed_same_parameters_across_ablations():
    base = build_model(TOY, seed=7)
    variant = build_model(apply_ablation(TOY, "irf"), seed=7)
    for name, p in base.params.items():
        assert np.array_equal(p.data, variant.params[name].data), name
