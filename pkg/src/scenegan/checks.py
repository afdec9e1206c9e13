"""Quick invariant suite behind ``scenegan check``.

Each check returns ``(ok, detail)``; none of them needs a dataset or a
trained checkpoint, and the whole suite runs in a few seconds.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .autodiff import Tensor, finite_difference_gradient, grad, ops, relative_error
from .fields import EncodingConfig, FieldConfig, LatentCodes
from .generator import Generator, GeneratorConfig
from .neural_renderer import RendererConfig
from .scene import AffineTransform, CameraPose, SceneSample, compose
from .training import ema_update, nonsat_term, r1_penalty, rmsprop_step
from .volume import volume_render_ray

REFERENCE_BUDGET = 0.41e6


def check_encoding_dims():
    enc = EncodingConfig()
    return (enc.dim_x, enc.dim_d) == (60, 24), f"L_x={enc.dim_x} L_d={enc.dim_d}"


def check_parameter_budget():
    n = Generator(GeneratorConfig(FieldConfig())).num_parameters()
    rel = n / REFERENCE_BUDGET - 1
    return abs(rel) <= 0.2, f"{n} parameters ({rel:+.1%} vs 0.41m)"


def check_volume_oracle(n_rays=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_rays):
        S = int(rng.integers(1, 40))
        sigma, delta = rng.exponential(1.0, S), rng.uniform(0.01, 0.3, S)
        c = rng.uniform(0, 1, (S, 3))
        f, _ = volume_render_ray(sigma, c, delta)
        # transmittance from the optical depth up to each bin
        depth = np.concatenate([[0.0], np.cumsum(sigma * delta)[:-1]])
        ref = (np.exp(-depth) * -np.expm1(-sigma * delta)) @ c
        worst = max(worst, float(np.abs(f.data - ref).max()))
    return worst <= 1e-12, f"max abs error {worst:.2e}"


def check_composition(seed=0):
    rng = np.random.default_rng(seed)
    s = [rng.exponential(1.0, 50) for _ in range(3)]
    f = [rng.standard_normal((50, 4)) for _ in range(3)]
    sig, feat = compose(list(zip(s, f)))
    sig_p, feat_p = compose(list(zip(s[::-1], f[::-1])))
    one_s, one_f = compose([(s[0], f[0])])
    ok = (np.allclose(sig.data, sum(s), rtol=0, atol=1e-12) and np.allclose(feat.data, feat_p.data, atol=1e-12)
          and np.allclose(sig.data, sig_p.data, atol=1e-12) and np.array_equal(one_s.data, s[0])
          and np.array_equal(one_f.data, f[0]))
    return ok, "identity, permutation and additivity"


def check_closed_forms():
    x = np.ones((1, 2, 2, 1))
    r1 = r1_penalty(lambda t: ops.sum(t, axis=(1, 2, 3)), x, lam=10.0).item()
    th, v = rmsprop_step(np.zeros(1), np.ones(1), np.zeros(1), lr=1e-4)
    s = 0.0
    for _ in range(10):
        s = ema_update(s, 2.0, 0.999)
    errs = [abs(nonsat_term(0.0) + math.log(2)), abs(r1 - 40.0), abs(v[0] - 0.01),
            abs(th[0] + 1e-4 / (0.1 + 1e-8)), abs(s - 2.0 * (1 - 0.999 ** 10))]
    return max(errs) <= 1e-12, f"max error {max(errs):.1e}"


def check_generator_gradients(n_params=40, seed=0):
    rng = np.random.default_rng(seed)
    obj = FieldConfig(depth=2, hidden=8, feature_dim=4, shape_dim=4, appearance_dim=4,
                      encoding=EncodingConfig(octaves_x=3, octaves_d=2))
    gen = Generator(GeneratorConfig(object_field=obj, renderer=RendererConfig(feature_dim=4, n_blocks=1),
                                    feature_resolution=2, n_samples=6, near=1.5, far=4.0, dtype="float64"), seed=seed)
    for t in gen.params.tensors():
        t.data = t.data + rng.normal(0, 0.1, t.shape)
    codes = [LatentCodes(rng.standard_normal(4), rng.standard_normal(4)) for _ in range(2)]
    scene = SceneSample(codes, [AffineTransform.from_yaw(0.5, [0.1, 0.0, 0.5], 0.3), AffineTransform.identity()],
                        CameraPose(elevation=0.5))
    probe = rng.standard_normal((1, 4, 4, 3))

    def loss():
        return ops.sum(ops.mul(gen([scene]), Tensor(probe)))

    params = gen.params.tensors()
    gs = grad(loss(), params)
    worst, checked = 0.0, 0
    for _ in range(n_params):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        num = finite_difference_gradient(lambda th: loss().item(), params[k].data, eps=1e-6, indices=[idx])
        if max(abs(num[idx]), abs(gs[k].data[idx])) > 1e-7:
            worst = max(worst, float(relative_error(gs[k].data[idx], num[idx])))
            checked += 1
    return worst <= 1e-4, f"max rel err {worst:.1e} over {checked} parameters"


CHECKS = {
    "encoding dimensionality": check_encoding_dims,
    "parameter budget": check_parameter_budget,
    "volume rendering oracle": check_volume_oracle,
    "composition laws": check_composition,
    "loss and optimiser closed forms": check_closed_forms,
    "generator gradients": check_generator_gradients,
}


def run_checks(out=print) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        t0 = time.time()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.time() - t0:.1f}s)")
    return ok_all
