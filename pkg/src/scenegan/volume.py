"""Feature-space volume rendering along rays.

Depths come from stratified sampling (one uniform draw per equal-width bin)
or from bin midpoints when no rng is passed. Spacing between neighbours is
delta_j = t_{j+1} - t_j for unit directions, and the last sample is closed
off at the far plane.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .autodiff import Tensor, as_tensor, ops


@dataclass
class RaySamples:
    depths: np.ndarray  # (..., S)
    deltas: np.ndarray  # (..., S)
    points: np.ndarray | None = None  # (..., S, 3)


def sample_depths(shape, near: float, far: float, n_samples: int, rng: np.random.Generator | None = None,
                  dtype=np.float64) -> np.ndarray:
    if n_samples < 1:
        raise ValueError("need at least one sample per ray")
    if not far > near >= 0:
        raise ValueError(f"need far > near >= 0, got near={near}, far={far}")
    width = (far - near) / n_samples
    lo = near + width * np.arange(n_samples)
    shape = tuple(shape) + (n_samples,)
    u = np.full(shape, 0.5) if rng is None else rng.random(shape)
    return (lo + u * width).astype(dtype)


def depth_deltas(depths: np.ndarray, far: float) -> np.ndarray:
    d = np.empty_like(depths)
    d[..., :-1] = depths[..., 1:] - depths[..., :-1]
    d[..., -1] = far - depths[..., -1]
    return d


def stratified_sample(origins, directions, near: float, far: float, n_samples: int,
                      rng: np.random.Generator | None = None) -> RaySamples:
    """Sample every ray in ``origins``/``directions`` (..., 3); directions are unit."""
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    t = sample_depths(origins.shape[:-1], near, far, n_samples, rng)
    pts = origins[..., None, :] + t[..., :, None] * directions[..., None, :]
    return RaySamples(t, depth_deltas(t, far), pts)


def alpha_from_density(sigma, delta):
    """1 - exp(-sigma delta); works on arrays or Tensors."""
    if isinstance(sigma, Tensor) or isinstance(delta, Tensor):
        return ops.rsub(ops.exp(ops.neg(ops.mul(as_tensor(sigma), as_tensor(delta)))), 1.0)
    return -np.expm1(-np.asarray(sigma) * np.asarray(delta))


def ray_weights(sigma, delta) -> tuple[Tensor, Tensor]:
    """Compositing weights tau_j alpha_j and the transmittances tau_j, both (..., S)."""
    sigma = as_tensor(sigma)
    delta = as_tensor(np.asarray(delta.data if isinstance(delta, Tensor) else delta, dtype=sigma.dtype))
    keep = ops.exp(ops.neg(ops.mul(sigma, delta)))  # 1 - alpha, computed without cancellation
    alpha = ops.rsub(keep, 1.0)
    lead, n = sigma.shape[:-1], sigma.shape[-1]
    ones = Tensor(np.ones(lead + (1,), dtype=sigma.dtype))
    if n > 1:
        tau = ops.concat([ones, ops.cumprod(keep[..., :-1], axis=-1)], axis=-1)
    else:
        tau = ones
    return ops.mul(tau, alpha), tau


def volume_render_ray(sigma, features, delta) -> tuple[Tensor, Tensor]:
    """Composite (..., S) densities and (..., S, M) features into (..., M) and an alpha (...)."""
    features = as_tensor(features)
    w, _ = ray_weights(sigma, delta)
    lead, n = w.shape[:-1], w.shape[-1]
    m = features.shape[-1]
    f = ops.matmul(ops.reshape(w, (-1, 1, n)), ops.reshape(features, (-1, n, m)))
    return ops.reshape(f, lead + (m,)), ops.sum(w, axis=-1)


def render_field_image(field_fn, camera, resolution: int, near: float, far: float, n_samples: int,
                       rng: np.random.Generator | None = None):
    """Render an arbitrary field ``field_fn(points (P, 3), dirs (P, 3)) -> (sigma (P,), feat (P, M))``.

    Returns features (H, W, M) and alpha (H, W) as Tensors. Handy for analytic media.
    """
    from .scene import generate_rays

    o, d = generate_rays(camera, resolution, resolution)
    rs = stratified_sample(o.reshape(-1, 3), d.reshape(-1, 3), near, far, n_samples, rng)
    R = o.shape[0] * o.shape[1]
    pts = rs.points.reshape(-1, 3)
    dirs = np.repeat(d.reshape(-1, 3), n_samples, axis=0)
    sigma, feat = field_fn(pts, dirs)
    sigma = ops.reshape(as_tensor(sigma), (R, n_samples))
    feat = as_tensor(feat)
    feat = ops.reshape(feat, (R, n_samples, feat.shape[-1]))
    f, a = volume_render_ray(sigma, feat, rs.deltas)
    return ops.reshape(f, (resolution, resolution, f.shape[-1])), ops.reshape(a, (resolution, resolution))


def render_feature_image(samples, generator, resolution: int, rng=None, **kw):
    """Feature image (B, H, W, M) and alpha accumulation (B, H, W) for one or more scenes."""
    return generator.render_features(samples, resolution, rng=rng, **kw)


def render_entity_alpha_map(sample, generator, entity: int, resolution: int) -> np.ndarray:
    """Accumulated alpha (H, W) with only ``entity``'s density switched on."""
    if not 0 <= entity < sample.n_entities:
        raise IndexError(f"entity {entity} out of range for {sample.n_entities} entities")
    return generator.entity_alpha(sample, entity, resolution)


def save_alpha_png(alpha, path) -> None:
    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(a * 255).astype(np.uint8), mode="L").save(path)


def save_feature_slice_png(features, channel: int, path) -> None:
    """Min-max normalised single feature channel of an (H, W, M) image."""
    c = np.asarray(features)[..., channel].astype(np.float64)
    span = c.max() - c.min()
    save_alpha_png((c - c.min()) / span if span > 0 else np.zeros_like(c), path)
