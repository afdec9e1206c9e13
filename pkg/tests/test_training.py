import math

import mpmath
import numpy as np
import pytest

from scenegan.autodiff import ParamStore, Tensor, finite_difference_gradient, grad, ops, relative_error
from scenegan.training import (
    Discriminator,
    DiscriminatorConfig,
    RMSprop,
    RunConfig,
    Trainer,
    TrainingAbort,
    ema_update,
    nonsat_term,
    r1_penalty,
    rmsprop_step,
)

from helpers import tiny_run_config


def test_nonsat_closed_forms():
    assert nonsat_term(0.0) == pytest.approx(-math.log(2), abs=1e-15)
    assert abs(nonsat_term(60.0)) < 1e-25
    assert nonsat_term(-60.0) == pytest.approx(-60.0, rel=1e-15)
    mpmath.mp.dps = 50
    ref = -mpmath.log(1 + mpmath.exp(50))
    assert abs(nonsat_term(-50.0) - float(ref)) / abs(float(ref)) <= 1e-12
    assert np.isfinite(nonsat_term(np.array([-1e4, 1e4]))).all()


def test_r1_linear_and_constant():
    x = np.random.default_rng(0).uniform(0, 1, (1, 2, 2, 1))
    lin = r1_penalty(lambda t: ops.sum(t, axis=(1, 2, 3)), x, lam=10.0)
    assert lin.item() == pytest.approx(40.0, abs=1e-12)
    w = Tensor(np.ones(1), requires_grad=True)
    const = r1_penalty(lambda t: ops.mul(w, ops.mul(ops.sum(t, axis=(1, 2, 3)), 0.0)), x)
    assert const.item() == 0.0


def two_layer_d(params):
    def D(x):
        h = ops.leaky_relu(ops.bias_add(ops.conv2d(x, params["c.w"], stride=2, pad=1), params["c.b"]))
        h = ops.reshape(h, (h.shape[0], -1))
        return ops.reshape(ops.linear(h, params["o.w"], params["o.b"]), (h.shape[0],))
    return D


def test_r1_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    store = ParamStore(np.float64)
    store.add("c.w", rng.standard_normal((3, 3, 3, 4)) * 0.5)
    store.add("c.b", rng.standard_normal(4) * 0.1)
    store.add("o.w", rng.standard_normal((4 * 4 * 4, 1)) * 0.3)
    store.add("o.b", np.zeros(1))
    x = rng.uniform(0, 1, (2, 8, 8, 3))
    D = two_layer_d(store)
    pen = r1_penalty(D, x, lam=10.0)
    gs = grad(pen, store.tensors())
    for t, g in zip(store.tensors(), gs):
        idx = [tuple(rng.integers(0, s) for s in t.shape) for _ in range(6)]
        num = finite_difference_gradient(lambda th: r1_penalty(D, x, 10.0).item(), t.data, eps=1e-6, indices=idx)
        for k in idx:
            if abs(num[k]) > 1e-8:
                assert relative_error(g.data[k], num[k]) <= 1e-3


def test_rmsprop_arithmetic():
    th, v = rmsprop_step(np.array([0.0]), np.array([1.0]), np.array([0.0]), lr=1e-4)
    assert v[0] == pytest.approx(0.01, abs=1e-15)
    assert th[0] == pytest.approx(-1e-4 / (0.1 + 1e-8), abs=1e-15)
    assert abs(th[0] + 1e-3) < 1e-9
    th, v2 = rmsprop_step(np.array([3.0]), np.array([0.0]), np.array([0.5]), lr=1e-4)
    assert th[0] == 3.0 and v2[0] == pytest.approx(0.495, abs=1e-15)
    with pytest.raises(ValueError):
        rmsprop_step(np.zeros(2), np.zeros(3), np.zeros(2), 1e-4)


def test_rmsprop_steady_state():
    theta, v, g = np.zeros(1), np.zeros(1), np.array([2.5])
    for _ in range(5000):
        prev = theta.copy()
        theta, v = rmsprop_step(theta, g, v, lr=1e-3)
    # fixed point v = g^2 so |dtheta| = lr g / (g + eps)
    assert abs(prev - theta)[0] == pytest.approx(1e-3 * 2.5 / (2.5 + 1e-8), rel=1e-9)


def test_rmsprop_optimizer_matches_functional():
    store = ParamStore(np.float64)
    store.add("w", np.array([1.0, -2.0]))
    opt = RMSprop(store, 1e-2)
    th, v = store["w"].data.copy(), np.zeros(2)
    for g in ([0.3, -1.0], [0.1, 0.2]):
        opt.step({"w": np.array(g)})
        th, v = rmsprop_step(th, np.array(g), v, 1e-2)
    np.testing.assert_allclose(store["w"].data, th, rtol=1e-15)
    with pytest.raises(ValueError):
        opt.step({"w": np.zeros(3)})


def test_ema_closed_form():
    assert ema_update(0.0, 1.0, 0.999) == pytest.approx(0.001, abs=1e-15)
    c, s = 2.5, 0.0
    for k in range(1, 2001):
        s = ema_update(s, c, 0.999)
        if k in (1, 10, 2000):
            assert abs(s - c * (1 - 0.999 ** k)) <= 1e-12


def test_nonsaturating_gradient_survives_confident_discriminator():
    logits = Tensor(np.full(4, -50.0), requires_grad=True)
    (g,) = grad(ops.mean(ops.softplus(ops.neg(logits))), [logits])
    np.testing.assert_allclose(g.data, -0.25, rtol=1e-12)
    # the saturating form log(1 - sigmoid(t)) has a vanishing gradient there
    sat = Tensor(np.full(4, -50.0), requires_grad=True)
    (gs,) = grad(ops.mean(ops.neg(ops.softplus(sat))), [sat])
    assert np.abs(gs.data).max() < 1e-20


def test_discriminator_shapes():
    cfg = DiscriminatorConfig(64)
    assert cfg.channels() == [3, 64, 128, 256, 512]
    d = Discriminator(DiscriminatorConfig(16, 4, 8))
    assert d(np.zeros((3, 16, 16, 3))).shape == (3,)
    with pytest.raises(ValueError):
        d(np.zeros((3, 8, 8, 3)))
    with pytest.raises(ValueError):
        DiscriminatorConfig(48).channels()


def checksum(store):
    return {n: t.data.copy() for n, t in store.items()}


def test_phase_isolation(tiny_dataset):
    tr = Trainer(tiny_run_config(str(tiny_dataset)))
    real = next(tr.data)
    _, fake = tr.sample_fakes(real.shape[0])
    g0, d0 = checksum(tr.gen.params), checksum(tr.disc.params)
    tr.d_phase(real, fake)
    g1, d1 = checksum(tr.gen.params), checksum(tr.disc.params)
    assert all(np.array_equal(g0[n], g1[n]) for n in g0)
    assert any(not np.array_equal(d0[n], d1[n]) for n in d0)
    tr.g_phase(fake)
    g2, d2 = checksum(tr.gen.params), checksum(tr.disc.params)
    assert all(np.array_equal(d1[n], d2[n]) for n in d1)
    assert any(not np.array_equal(g1[n], g2[n]) for n in g1)


def test_ema_tracks_live_trajectory(tiny_dataset):
    tr = Trainer(tiny_run_config(str(tiny_dataset), dtype="float64"))
    name = "renderer.rgb0.bias"
    shadow = tr.gen.params[name].data.copy()
    for _ in range(3):
        tr.train_step(next(tr.data))
        shadow = 0.999 * shadow + 0.001 * tr.gen.params[name].data
    np.testing.assert_allclose(tr.gen.params.shadow[name], shadow, rtol=1e-13)


def test_losses_finite_for_200_steps(tiny_dataset):
    tr = Trainer(tiny_run_config(str(tiny_dataset), density_noise=1.0))
    reps = tr.train(200)
    assert len(reps) == 200
    for r in reps:
        assert all(np.isfinite(r[k]) for k in ("d_loss", "g_loss", "r1"))


def test_nonfinite_loss_aborts_with_dump(tiny_dataset, tmp_path):
    tr = Trainer(tiny_run_config(str(tiny_dataset)), run_dir=tmp_path)
    tr.disc.params["disc.out.bias"].data[...] = np.inf
    with pytest.raises(TrainingAbort) as info:
        tr.train_step(next(tr.data))
    assert (tmp_path / "abort.json").exists() and info.value.dump


def test_miniature_end_to_end_gradients():
    """4x4 images at 64-bit: generator and discriminator loss gradients vs finite differences."""
    cfg = tiny_run_config(dtype="float64", feature_resolution=2, n_blocks=1)
    cfg.discriminator = DiscriminatorConfig(4, 4, 8)
    tr = Trainer(cfg)
    rng = np.random.default_rng(3)
    # zero biases on zero features sit exactly on ReLU kinks; move every parameter off them
    for store in (tr.gen.params, tr.disc.params):
        for t in store.tensors():
            t.data = t.data + rng.normal(0, 0.1, t.shape)
    real = rng.uniform(0, 1, (2, 4, 4, 3))
    from scenegan.scene import sample_scene
    scenes = [sample_scene(cfg.sampling, np.random.default_rng(i)) for i in range(2)]

    def g_loss():
        return ops.mean(ops.softplus(ops.neg(tr.disc(tr.gen(scenes)))))

    def d_loss():
        x = Tensor(real, requires_grad=True)
        dr = tr.disc(x)
        df = tr.disc(Tensor(tr.gen(scenes).data))
        r1 = r1_penalty(tr.disc, real, 10.0)
        return ops.add(ops.add(ops.mean(ops.softplus(ops.neg(dr))), ops.mean(ops.softplus(df))), r1)

    checked = 0
    for loss_fn, store in ((g_loss, tr.gen.params), (d_loss, tr.disc.params)):
        gs = grad(loss_fn(), store.tensors())
        for t, g in zip(store.tensors(), gs):
            idx = [tuple(rng.integers(0, s) for s in t.shape) for _ in range(2)]
            num = finite_difference_gradient(lambda th: loss_fn().item(), t.data, eps=1e-6, indices=idx)
            for k in idx:
                if max(abs(num[k]), abs(g.data[k])) > 1e-7:
                    assert relative_error(g.data[k], num[k]) <= 1e-4, (t.name, k, g.data[k], num[k])
                    checked += 1
    assert checked > 20


def test_resume_reproduces_next_step(tiny_dataset, tmp_path):
    cfg = tiny_run_config(str(tiny_dataset), dtype="float64", density_noise=1.0)
    tr = Trainer(cfg, run_dir=tmp_path)
    tr.train(3)
    tr.save(tmp_path / "ckpt.nsf")
    expect = tr.train_step(next(tr.data))
    again = Trainer(RunConfig.from_dict(cfg.to_dict()), run_dir=tmp_path)
    again.load(tmp_path / "ckpt.nsf")
    got = again.train_step(next(again.data))
    for k in ("d_loss", "g_loss", "r1"):
        assert abs(got[k] - expect[k]) <= 1e-9


def test_run_config_roundtrip_and_validation():
    cfg = tiny_run_config()
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        RunConfig.from_dict({**cfg.to_dict(), "bogus": {}})
    bad = cfg.to_dict()
    bad["train"]["lr_d"] = -1
    with pytest.raises(ValueError):
        RunConfig.from_dict(bad)
