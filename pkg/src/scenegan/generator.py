"""The full generator: scene sample -> feature image -> RGB.

Objects are evaluated in their canonical frames by one shared field, the
background by its own field. Object density is zero outside the canonical
box [-b, b]^3, so only points inside it are pushed through the object MLP.
Composition and volume rendering are fused: with w_j the compositing weight
of the summed density, entity i contributes w_j sigma_ij / (sigma_j + eps)
times its own feature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ParamStore, Tensor, is_grad_enabled, no_grad, ops
from .fields import FieldConfig, field_forward, init_field
from .neural_renderer import RendererConfig, init_renderer, neural_render
from .scene import EPS, SamplingConfig, SceneSample, generate_rays, inverse_transform_dir, inverse_transform_point
from .volume import depth_deltas, ray_weights, sample_depths


@dataclass
class GeneratorConfig:
    object_field: FieldConfig = field(default_factory=FieldConfig)
    background_field: FieldConfig | None = None
    renderer: RendererConfig | None = None
    feature_resolution: int = 16
    n_samples: int = 64
    near: float = 0.5
    far: float = 6.0
    object_box: float | None = 1.1
    density_noise_std: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.background_field is None:
            self.background_field = FieldConfig.background(self.object_field)
        if self.renderer is None:
            self.renderer = RendererConfig(feature_dim=self.object_field.feature_dim)
        if self.object_field.feature_dim != self.background_field.feature_dim or \
                self.renderer.feature_dim != self.object_field.feature_dim:
            raise ValueError("object, background and renderer feature dims must agree")

    @property
    def image_resolution(self) -> int:
        return self.feature_resolution * 2 ** self.renderer.n_blocks

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        obj = FieldConfig.from_dict(d.pop("object_field", {}))
        bg = d.pop("background_field", None)
        bg = FieldConfig.from_dict(bg) if bg is not None else None
        rend = d.pop("renderer", None)
        rend = RendererConfig(**rend) if rend is not None else None
        return cls(object_field=obj, background_field=bg, renderer=rend, **d)


class Generator:
    OBJ = "object"
    BG = "background"
    REND = "renderer"

    def __init__(self, cfg: GeneratorConfig, params: ParamStore | None = None, seed: int = 0,
                 sampling: SamplingConfig | None = None):
        self.cfg = cfg
        obj, bg = cfg.object_field, cfg.background_field
        # scene prior used for test-time sampling; training overrides it with the run's config
        self.sampling = sampling or SamplingConfig(
            object_counts=[2], shape_dim=obj.shape_dim, appearance_dim=obj.appearance_dim,
            background_shape_dim=bg.shape_dim, background_appearance_dim=bg.appearance_dim)
        self.dtype = np.dtype(cfg.dtype)
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParamStore(self.dtype)
            init_field(params, self.OBJ, cfg.object_field, rng)
            init_field(params, self.BG, cfg.background_field, rng)
            init_renderer(params, cfg.renderer, rng, self.REND)
        self.params = params

    def num_parameters(self, prefix: str = "") -> int:
        return self.params.num_parameters(prefix)

    def with_params(self, params: ParamStore) -> "Generator":
        return Generator(self.cfg, params, sampling=self.sampling)

    # -- field evaluation -------------------------------------------------
    def _codes(self, samples, slot, dims):
        zs = np.zeros((len(samples), dims[0]), dtype=self.dtype)
        za = np.zeros((len(samples), dims[1]), dtype=self.dtype)
        for b, s in enumerate(samples):
            c = s.codes[-1] if slot == -1 else (s.codes[slot] if slot < s.n_objects else None)
            if c is not None:
                zs[b], za[b] = c.z_s, c.z_a
        return Tensor(zs), Tensor(za)

    def _object_slot(self, samples, slot, pts, dirs, active, noise_rng, density_only):
        """Packed evaluation of object ``slot`` over (B, P, 3) scene points.

        Returns dense density (B*P,) and features (B*P, M) or None if the slot
        has no points inside any box.
        """
        cfg = self.cfg.object_field
        B, P, _ = pts.shape
        xs, ds, flat = [], [], []
        for b, s in enumerate(samples):
            if slot >= s.n_objects or (active is not None and slot not in active[b]):
                continue
            T = s.transforms[slot]
            xc = inverse_transform_point(T, pts[b])
            dc = inverse_transform_dir(T, dirs[b])
            if self.cfg.object_box is not None:
                idx = np.flatnonzero(np.all(np.abs(xc) <= self.cfg.object_box, axis=-1))
            else:
                idx = np.arange(P)
            if len(idx):
                xs.append(xc[idx])
                ds.append(dc[idx])
                flat.append(b * P + idx)
        if not flat:
            return None
        flat = np.concatenate(flat)
        rows = flat // P
        x = np.concatenate(xs).astype(self.dtype) * cfg.position_scale
        d = np.concatenate(ds).astype(self.dtype)
        enc = cfg.encoding
        z_s, z_a = self._codes(samples, slot, (cfg.shape_dim, cfg.appearance_dim))
        noise = self._noise(noise_rng, len(flat))
        sigma, f = field_forward(self.params, self.OBJ, cfg, enc.encode_x(x), enc.encode_d(d), z_s, z_a,
                                 rows=rows, density_noise=noise, density_only=density_only)
        sigma = ops.scatter_rows(sigma, flat, B * P)
        if f is not None:
            f = ops.scatter_rows(f, flat, B * P)
        return sigma, f

    def _background(self, samples, pts, dirs, noise_rng, density_only):
        cfg = self.cfg.background_field
        B, P, _ = pts.shape
        enc = cfg.encoding
        x = (pts * cfg.position_scale).astype(self.dtype)
        z_s, z_a = self._codes(samples, -1, (cfg.shape_dim, cfg.appearance_dim))
        noise = self._noise(noise_rng, (B, P))
        sigma, f = field_forward(self.params, self.BG, cfg, enc.encode_x(x), enc.encode_d(dirs.astype(self.dtype)),
                                 z_s, z_a, density_noise=noise, density_only=density_only)
        sigma = ops.reshape(sigma, (B * P,))
        if f is not None:
            f = ops.reshape(f, (B * P, f.shape[-1]))
        return sigma, f

    def _noise(self, noise_rng, shape):
        if noise_rng is None or self.cfg.density_noise_std <= 0:
            return None
        return (noise_rng.standard_normal(shape) * self.cfg.density_noise_std).astype(self.dtype)

    def evaluate_entities(self, samples, pts, dirs, active=None, noise_rng=None, density_only=False):
        """Per-entity (density (B*P,), features (B*P, M)) over (B, P, 3) points.

        ``active[b]`` optionally restricts image b to a set of entity indices;
        the background is index -1 in that set.
        """
        out = []
        n_slots = max(s.n_objects for s in samples)
        for slot in range(n_slots):
            r = self._object_slot(samples, slot, pts, dirs, active, noise_rng, density_only)
            if r is not None:
                out.append(r)
        if active is None or any(-1 in a for a in active):
            sigma, f = self._background(samples, pts, dirs, noise_rng, density_only)
            if active is not None:
                keep = np.repeat(np.array([-1 in a for a in active], dtype=self.dtype), pts.shape[1])
                sigma = ops.mul(sigma, Tensor(keep))
            out.append((sigma, f))
        return out

    # -- rendering --------------------------------------------------------
    def render_rays(self, samples, origins, dirs, rng=None, active=None, noise_rng=None, density_only=False):
        """Render (B, R, 3) rays; returns features (B, R, M) (None if density_only) and alpha (B, R)."""
        cfg = self.cfg
        B, R, _ = origins.shape
        S = cfg.n_samples
        t = sample_depths((B, R), cfg.near, cfg.far, S, rng)
        delta = depth_deltas(t, cfg.far).astype(self.dtype)
        pts = (origins[:, :, None, :] + t[..., None] * dirs[:, :, None, :]).reshape(B, R * S, 3)
        pdirs = np.broadcast_to(dirs[:, :, None, :], (B, R, S, 3)).reshape(B, R * S, 3)
        ents = self.evaluate_entities(samples, pts, pdirs, active, noise_rng, density_only)
        M = cfg.object_field.feature_dim
        if not ents:
            zero = Tensor(np.zeros((B, R), dtype=self.dtype))
            return (None if density_only else Tensor(np.zeros((B, R, M), dtype=self.dtype))), zero
        sigma = ents[0][0]
        for s, _ in ents[1:]:
            sigma = ops.add(sigma, s)
        sigma = ops.reshape(sigma, (B * R, S))
        w, _ = ray_weights(sigma, delta.reshape(B * R, S))
        alpha = ops.reshape(ops.sum(w, axis=-1), (B, R))
        if density_only:
            return None, alpha
        if len(ents) == 1:
            u_f = [(w, ents[0][1])]
        else:
            scale = ops.mul(w, ops.rdiv(ops.add(sigma, EPS), 1.0))
            u_f = [(ops.mul(scale, ops.reshape(s, (B * R, S))), f) for s, f in ents]
        feat = None
        for u, f in u_f:
            term = ops.matmul(ops.reshape(u, (B * R, 1, S)), ops.reshape(f, (B * R, S, M)))
            feat = term if feat is None else ops.add(feat, term)
        return ops.reshape(feat, (B, R, M)), alpha

    def _rays(self, samples, resolution):
        o, d = zip(*(generate_rays(s.camera, resolution, resolution) for s in samples))
        return np.stack(o).reshape(len(samples), -1, 3), np.stack(d).reshape(len(samples), -1, 3)

    def render_features(self, samples, resolution: int | None = None, rng=None, active=None, noise_rng=None,
                        density_only=False, max_points: int = 1 << 20):
        """Feature image (B, H, W, M) and alpha (B, H, W).

        Without gradient recording, rays are processed in chunks of at most
        ``max_points`` sample points to bound memory.
        """
        if isinstance(samples, SceneSample):
            samples = [samples]
        H = resolution or self.cfg.feature_resolution
        o, d = self._rays(samples, H)
        B, R, _ = o.shape
        per_ray = B * self.cfg.n_samples
        chunk = R if is_grad_enabled() else max(1, max_points // per_ray)
        feats, alphas = [], []
        for start in range(0, R, chunk):
            sl = slice(start, start + chunk)
            f, a = self.render_rays(samples, o[:, sl], d[:, sl], rng, active, noise_rng, density_only)
            feats.append(f)
            alphas.append(a)
        alpha = alphas[0] if len(alphas) == 1 else ops.concat(alphas, axis=1)
        alpha = ops.reshape(alpha, (B, H, H))
        if density_only:
            return None, alpha
        feat = feats[0] if len(feats) == 1 else ops.concat(feats, axis=1)
        return ops.reshape(feat, (B, H, H, feat.shape[-1])), alpha

    def forward(self, samples, rng=None, noise_rng=None, feature_resolution: int | None = None,
                active=None) -> Tensor:
        """RGB images (B, H, W, 3); the renderer's block count fixes the upsampling factor."""
        feat, _ = self.render_features(samples, feature_resolution, rng=rng, active=active, noise_rng=noise_rng)
        return neural_render(feat, self.params, self.cfg.renderer, self.REND)

    __call__ = forward

    def entity_alpha(self, sample: SceneSample, entity: int, resolution: int) -> np.ndarray:
        """Alpha map (H, W) with only one entity's density active; -1 or n-1 is the background."""
        n = sample.n_entities
        if not -1 <= entity < n:
            raise IndexError(f"entity {entity} out of range for {n} entities")
        key = -1 if entity in (-1, n - 1) else entity
        with no_grad():
            _, a = self.render_features([sample], resolution, active=[{key}], density_only=True)
        return a.data[0].astype(np.float64)


def evaluate_entity(i: int, x, d, sample: SceneSample, gen: Generator):
    """(sigma_i, f_i) of entity i at scene points x (P, 3) with directions d (P, 3)."""
    n = sample.n_entities
    if not 0 <= i < n:
        raise IndexError(f"entity {i} out of range for {n} entities")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(1, -1, 3)
    key = -1 if i == n - 1 else i
    ents = gen.evaluate_entities([sample], x, d, active=[{key}])
    P = x.shape[1]
    if not ents:
        return Tensor(np.zeros(P, dtype=gen.dtype)), Tensor(np.zeros((P, gen.cfg.object_field.feature_dim), dtype=gen.dtype))
    return ents[0]


def generator_forward(sample, gen: Generator, rng=None) -> Tensor:
    return gen.forward(sample if isinstance(sample, list) else [sample], rng=rng)
