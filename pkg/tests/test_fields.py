import numpy as np
import pytest

from scenegan.autodiff import ParamStore, Tensor, grad
from scenegan.fields import (
    RANDOM_FOURIER,
    EncodingConfig,
    FieldConfig,
    background_field_forward,
    field_parameter_count,
    init_field,
    object_field_forward,
    positional_encode,
    random_fourier_encode,
    sample_latents,
)


def make_field(cfg=None, prefix="object", seed=0, zero=False):
    cfg = cfg or FieldConfig()
    store = ParamStore(np.float64)
    init_field(store, prefix, cfg, np.random.default_rng(seed))
    if zero:
        for t in store.tensors():
            t.data[...] = 0
    return cfg, store


def test_encode_zero_and_pi_multiples():
    np.testing.assert_allclose(positional_encode(np.array([0.0]), 3).data, [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(positional_encode(np.array([1.0]), 2).data, [0, -1, 0, 1], atol=1e-15)


def test_encode_lengths():
    enc = EncodingConfig()
    assert enc.encode_x(np.zeros(3)).shape == (60,)
    assert enc.encode_d(np.zeros(3)).shape == (24,)
    assert positional_encode(np.zeros((7, 5, 3)), 4).shape == (7, 5, 24)
    with pytest.raises(ValueError):
        positional_encode(np.zeros(3), 0)


def test_encode_component_order_against_direct_formula():
    v = np.array([0.3, -0.7, 0.11])
    out = positional_encode(v, 4).data
    expect = []
    for t in v:
        for j in range(4):
            expect += [np.sin(2 ** j * t * np.pi), np.cos(2 ** j * t * np.pi)]
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_random_fourier_zero_input_and_norm():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((30, 3))
    z = random_fourier_encode(np.zeros(3), B).data
    np.testing.assert_array_equal(z[0::2], 0)
    np.testing.assert_array_equal(z[1::2], 1)
    for v in rng.uniform(-1, 1, (20, 3)):
        e = random_fourier_encode(v, B).data
        # sin^2 + cos^2 per row: 3 L rows give L per component
        assert np.sum(e ** 2) == pytest.approx(30.0, abs=1e-12)
    with pytest.raises(ValueError):
        random_fourier_encode(np.zeros(3), rng.standard_normal((30, 2)))


def test_random_fourier_reproduces_axis_aligned_up_to_order():
    L = 4
    rows = [2.0 ** (j - 1) * np.eye(3)[c] for c in range(3) for j in range(L)]
    v = np.array([0.25, -0.4, 0.9])
    a = positional_encode(v, L).data
    b = random_fourier_encode(v, np.array(rows)).data
    np.testing.assert_allclose(np.sort(a), np.sort(b), atol=1e-14)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_random_fourier_config_persists_matrix():
    enc = EncodingConfig(mode=RANDOM_FOURIER, fourier_seed=3)
    again = EncodingConfig(**{k: getattr(enc, k) for k in enc.__dataclass_fields__})
    np.testing.assert_array_equal(enc.fourier_matrix_x, again.fourier_matrix_x)
    assert enc.encode_x(np.zeros(3)).shape == (60,)


def _inputs(cfg, rng, n=50):
    enc = cfg.encoding
    x = enc.encode_x(rng.uniform(-1, 1, (n, 3)))
    d = enc.encode_d(rng.uniform(-1, 1, (n, 3)))
    return x, d


def test_zero_network_outputs_zero():
    rng = np.random.default_rng(0)
    for fwd, prefix, cfg in ((object_field_forward, "object", FieldConfig()),
                             (background_field_forward, "background", FieldConfig.background(FieldConfig()))):
        cfg, store = make_field(cfg, prefix, zero=True)
        x, d = _inputs(cfg, rng)
        s, f = fwd(x, d, rng.standard_normal(64), rng.standard_normal(64), store, cfg)
        assert np.all(s.data == 0) and np.all(f.data == 0)


def test_density_nonnegative_many_inputs():
    cfg = FieldConfig(hidden=32, depth=3)
    cfg, store = make_field(cfg)
    rng = np.random.default_rng(1)
    enc = cfg.encoding
    n = 100_000
    x = enc.encode_x(rng.uniform(-1, 1, (1, n, 3)))
    d = enc.encode_d(rng.uniform(-1, 1, (1, n, 3)))
    s, f = object_field_forward(x, d, rng.standard_normal((1, 64)), rng.standard_normal((1, 64)), store, cfg)
    assert s.shape == (1, n) and f.shape == (1, n, 128)
    assert s.data.min() >= 0
    assert (s.data > 0).any()


@pytest.mark.parametrize("background", [False, True])
def test_density_independent_of_appearance(background):
    cfg = FieldConfig.background(FieldConfig()) if background else FieldConfig()
    prefix = "background" if background else "object"
    cfg, store = make_field(cfg, prefix, seed=4)
    rng = np.random.default_rng(2)
    x, d = _inputs(cfg, rng)
    zs = rng.standard_normal(64)
    s0, f0 = object_field_forward(x, d, zs, rng.standard_normal(64), store, cfg, prefix)
    for _ in range(5):
        s1, f1 = object_field_forward(x, d, zs, rng.standard_normal(64), store, cfg, prefix)
        np.testing.assert_array_equal(s0.data, s1.data)
        assert not np.allclose(f0.data, f1.data)
    za = Tensor(rng.standard_normal(64), requires_grad=True)
    s, _ = object_field_forward(x, d, zs, za, store, cfg, prefix)
    (g,) = grad(s.sum(), [za])
    assert np.all(g.data == 0)


def test_background_is_much_smaller():
    obj = FieldConfig()
    bg = FieldConfig.background(obj)
    assert (bg.depth, bg.hidden) == (4, 64)
    counts = field_parameter_count(bg)
    trunk = field_parameter_count(obj)["trunk"]
    # analytic count from layer dims
    assert counts["trunk"] == (60 + 64) * 64 + 64 + 3 * (64 * 64 + 64)
    assert counts["trunk"] < trunk / 4
    _, store = make_field(bg, "background")
    assert store.num_parameters() == counts["total"]


def test_weight_sharing_identical_objects():
    cfg, store = make_field()
    rng = np.random.default_rng(5)
    x, d = _inputs(cfg, rng)
    zs, za = rng.standard_normal(64), rng.standard_normal(64)
    xs = Tensor(np.stack([x.data, x.data]))
    ds = Tensor(np.stack([d.data, d.data]))
    s, f = object_field_forward(xs, ds, np.stack([zs, zs]), np.stack([za, za]), store, cfg)
    np.testing.assert_array_equal(s.data[0], s.data[1])
    np.testing.assert_array_equal(f.data[0], f.data[1])


def test_dimension_mismatch_raises():
    cfg, store = make_field()
    rng = np.random.default_rng(0)
    x, d = _inputs(cfg, rng)
    with pytest.raises(ValueError):
        object_field_forward(x, d, rng.standard_normal(32), rng.standard_normal(64), store, cfg)
    with pytest.raises(ValueError):
        object_field_forward(d, d, rng.standard_normal(64), rng.standard_normal(64), store, cfg)


def test_sample_latents_reproducible_and_standard_normal():
    a = sample_latents(3, np.random.default_rng(7))
    b = sample_latents(3, np.random.default_rng(7))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.z_s, v.z_s)
        np.testing.assert_array_equal(u.z_a, v.z_a)
    codes = sample_latents(100_000 // 64 + 1, np.random.default_rng(0))
    z = np.concatenate([c.z_s for c in codes])[:100_000]
    # CLT: standard error of the mean is 1/sqrt(1e5) ~ 0.003, of the variance ~ 0.0045
    assert abs(z.mean()) < 0.05
    assert abs(z.var() - 1) < 0.05
