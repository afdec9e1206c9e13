import numpy as np
import pytest

from scenegan.autodiff import ParamStore, Tensor, finite_difference_gradient, grad, relative_error
from scenegan.neural_renderer import (
    RendererConfig,
    ablation_variant,
    blocks_for,
    init_renderer,
    neural_render,
    neural_render_tiled,
    receptive_radius,
    renderer_parameter_count,
    to_uint8,
)


def make(cfg, seed=0, zero=False):
    store = ParamStore(np.float64)
    init_renderer(store, cfg, np.random.default_rng(seed))
    if zero:
        for t in store.tensors():
            t.data[...] = 0
    return store


def test_block_arithmetic():
    assert blocks_for(16, 64) == 2
    assert blocks_for(16, 256) == 4
    assert blocks_for(16, 16) == 0
    with pytest.raises(ValueError):
        blocks_for(16, 48)


def test_zero_weights_give_gray():
    cfg = RendererConfig(feature_dim=8)
    out = neural_render(np.random.default_rng(0).standard_normal((2, 4, 4, 8)), make(cfg, zero=True), cfg)
    assert out.shape == (2, 16, 16, 3)
    np.testing.assert_array_equal(out.data, 0.5)


def test_output_range_and_shapes_for_all_variants():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 4, 8)) * 2
    base = RendererConfig(feature_dim=8, rgb_gain=1.0)
    shapes = set()
    unbounded = False
    for skip in (True, False):
        for act in (True, False):
            for nn_rgb in (False, True):
                for bi_feat in (False, True):
                    cfg = ablation_variant(base, skip, act, nn_rgb, bi_feat)
                    out = neural_render(x, make(cfg, seed=2), cfg).data
                    shapes.add(out.shape)
                    if act:
                        assert out.min() > 0 and out.max() < 1
                    elif out.min() < 0 or out.max() > 1:
                        unbounded = True
                        assert to_uint8(out).dtype == np.uint8
    assert shapes == {(2, 16, 16, 3)}
    assert unbounded


def test_default_variant_is_reference_pipeline():
    cfg = ablation_variant()
    assert cfg.skip_connections and cfg.final_sigmoid
    assert (cfg.rgb_upsample_mode, cfg.feature_upsample_mode) == ("bilinear", "nearest")


def test_parameter_counts_match_store():
    for cfg in (RendererConfig(), RendererConfig(channel_schedule="constant"), ablation_variant(skip=False)):
        assert make(cfg).num_parameters() == renderer_parameter_count(cfg)
    assert RendererConfig().channels() == [128, 128, 64]


def test_resolution_mismatch():
    cfg = RendererConfig(feature_dim=8)
    with pytest.raises(ValueError):
        neural_render(np.zeros((1, 4, 4, 5)), make(cfg), cfg)


def footprint_bound(n):
    """Radius in output pixels by which one input pixel's 2^n block can spread."""
    best = 0
    for m in range(n + 1):
        r = sum(2 ** (n - k) for k in range(1, m + 1)) + 2 ** (n - m)
        r += sum(2 ** (n - k - 1) for k in range(m, n))
        best = max(best, r)
    return best


def test_locality_of_single_pixel_perturbation():
    cfg = RendererConfig(feature_dim=8, n_blocks=2)
    store = make(cfg, seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 16, 16, 8))
    base = neural_render(x, store, cfg).data
    i, j = 7, 9
    y = x.copy()
    y[0, i, j] += 3.0
    changed = np.abs(neural_render(y, store, cfg).data - base).max(-1)[0] > 0
    rows, cols = np.nonzero(changed)
    n, R = cfg.n_blocks, footprint_bound(cfg.n_blocks)
    assert rows.min() >= 2 ** n * i - R and rows.max() <= 2 ** n * i + 2 ** n - 1 + R
    assert cols.min() >= 2 ** n * j - R and cols.max() <= 2 ** n * j + 2 ** n - 1 + R
    assert changed.sum() < changed.size / 10


def test_skip_path_keeps_gradient_with_zero_blocks():
    cfg = RendererConfig(feature_dim=8)
    store = make(cfg, seed=5)
    for name, t in store.items():
        if ".block" in name:
            t.data[...] = 0
    x = Tensor(np.random.default_rng(6).standard_normal((1, 4, 4, 8)), requires_grad=True)
    (g,) = grad(neural_render(x, store, cfg).sum(), [x])
    assert np.abs(g.data).max() > 0


@pytest.mark.parametrize("variant", [dict(), dict(skip=False), dict(act=False, nn_rgb=True, bi_feat=True)])
def test_renderer_gradients_match_finite_differences(variant):
    cfg = ablation_variant(RendererConfig(feature_dim=4, n_blocks=2, rgb_gain=1.0), **variant)
    store = make(cfg, seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 3, 3, 4))
    probe = rng.standard_normal((1, 12, 12, 3))
    params = store.tensors()
    out = neural_render(x, store, cfg)
    from scenegan.autodiff import ops
    loss = ops.sum(ops.mul(out, Tensor(probe)))
    gs = grad(loss, params)
    for t, g in zip(params, gs):
        idx = [tuple(rng.integers(0, s) for s in t.shape) for _ in range(4)]

        def f(theta, t=t):
            return float(np.sum(neural_render(x, store, cfg).data * probe))

        num = finite_difference_gradient(f, t.data, eps=1e-6, indices=idx)
        for k in idx:
            assert relative_error(g.data[k], num[k]) <= 1e-4 or abs(g.data[k] - num[k]) < 1e-9


def test_receptive_radius_matches_locality_bound():
    for n in range(1, 5):
        assert receptive_radius(n) == footprint_bound(n)


@pytest.mark.parametrize("variant", [dict(), dict(skip=False), dict(nn_rgb=True, bi_feat=True)])
def test_tiled_rendering_is_exact(variant):
    cfg = ablation_variant(RendererConfig(feature_dim=4, n_blocks=2, rgb_gain=1.0), **variant)
    store = make(cfg, seed=9)
    x = np.random.default_rng(10).standard_normal((2, 21, 19, 4))
    full = neural_render(x, store, cfg).data
    np.testing.assert_allclose(neural_render_tiled(x, store, cfg, tile=6), full, rtol=0, atol=1e-13)
