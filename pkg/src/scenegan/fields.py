"""Positional encodings and the generative feature-field MLPs.

A field maps an encoded point, an encoded direction and a pair of latent
codes to a nonnegative density and an unconstrained feature vector::

    trunk:   [gamma(x) | z_s] -> depth x (linear + ReLU), width `hidden`
    density: trunk -> 1 unit -> ReLU
    feature: [trunk | gamma(d) | z_a] -> feature_dim (linear)

``z_a`` enters only the feature head, so the density never depends on it.
Concatenated inputs are realised as one weight matrix whose row blocks are
applied separately; per-code blocks become per-image biases.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ParamStore, Tensor, as_tensor, ops

AXIS_ALIGNED = "axis-aligned"
RANDOM_FOURIER = "random-fourier"


@dataclass
class EncodingConfig:
    octaves_x: int = 10
    octaves_d: int = 4
    mode: str = AXIS_ALIGNED
    fourier_std: float = 4.0
    fourier_seed: int = 0
    fourier_matrix_x: list | None = None
    fourier_matrix_d: list | None = None

    def __post_init__(self):
        if self.mode not in (AXIS_ALIGNED, RANDOM_FOURIER):
            raise ValueError(f"unknown encoding mode {self.mode!r}")
        if self.mode == RANDOM_FOURIER and self.fourier_matrix_x is None:
            rng = np.random.default_rng(self.fourier_seed)
            self.fourier_matrix_x = (rng.standard_normal((3 * self.octaves_x, 3)) * self.fourier_std).tolist()
            self.fourier_matrix_d = (rng.standard_normal((3 * self.octaves_d, 3)) * self.fourier_std).tolist()

    @property
    def dim_x(self) -> int:
        return 2 * 3 * self.octaves_x

    @property
    def dim_d(self) -> int:
        return 2 * 3 * self.octaves_d

    def encode_x(self, v):
        if self.mode == AXIS_ALIGNED:
            return positional_encode(v, self.octaves_x)
        return random_fourier_encode(v, np.asarray(self.fourier_matrix_x))

    def encode_d(self, v):
        if self.mode == AXIS_ALIGNED:
            return positional_encode(v, self.octaves_d)
        return random_fourier_encode(v, np.asarray(self.fourier_matrix_d))


def _frequency_matrix(k: int, octaves: int) -> np.ndarray:
    # column (c, j) holds 2^j * pi in row c; output order is component-major
    freqs = np.zeros((k, k * octaves))
    for c in range(k):
        freqs[c, c * octaves:(c + 1) * octaves] = np.pi * 2.0 ** np.arange(octaves)
    return freqs


def _sin_cos_interleave(phase: Tensor) -> Tensor:
    lead = phase.shape[:-1]
    n = phase.shape[-1]
    s = ops.reshape(ops.sin(phase), lead + (n, 1))
    c = ops.reshape(ops.cos(phase), lead + (n, 1))
    return ops.reshape(ops.concat([s, c], axis=-1), lead + (2 * n,))


def positional_encode(v, octaves: int) -> Tensor:
    """(sin(2^0 t pi), cos(2^0 t pi), ..., sin(2^(L-1) t pi), cos(2^(L-1) t pi)) per component t.

    ``v`` has shape (..., k); the result has shape (..., 2 k L).
    """
    if octaves < 1:
        raise ValueError("octave count must be at least 1")
    v = as_tensor(v)
    if v.ndim == 0:
        v = ops.reshape(v, (1,))
    k = v.shape[-1]
    freqs = Tensor(_frequency_matrix(k, octaves).astype(v.dtype))
    lead = v.shape[:-1]
    flat = ops.reshape(v, (-1, k))
    phase = ops.matmul(flat, freqs)
    return ops.reshape(_sin_cos_interleave(phase), lead + (2 * k * octaves,))


def random_fourier_encode(v, matrix) -> Tensor:
    """(sin(2 pi B v), cos(2 pi B v)) interleaved per row of B; B has shape (rows, 3)."""
    v = as_tensor(v)
    matrix = np.asarray(matrix, dtype=v.dtype)
    if matrix.ndim != 2 or matrix.shape[1] != v.shape[-1]:
        raise ValueError(f"fourier matrix {matrix.shape} does not match input dim {v.shape[-1]}")
    lead = v.shape[:-1]
    phase = ops.matmul(ops.reshape(v, (-1, v.shape[-1])), Tensor(2.0 * np.pi * matrix.T))
    return ops.reshape(_sin_cos_interleave(phase), lead + (2 * matrix.shape[0],))


@dataclass
class FieldConfig:
    depth: int = 8
    hidden: int = 128
    feature_dim: int = 128
    shape_dim: int = 64
    appearance_dim: int = 64
    # multiplier applied to points before encoding, keeps the coarsest octave unambiguous
    position_scale: float = 0.5
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    @classmethod
    def background(cls, obj: "FieldConfig", position_scale: float = 0.125) -> "FieldConfig":
        """Half the layers and half the width of the object field."""
        return cls(depth=max(1, obj.depth // 2), hidden=max(1, obj.hidden // 2), feature_dim=obj.feature_dim,
                   shape_dim=obj.shape_dim, appearance_dim=obj.appearance_dim,
                   position_scale=position_scale, encoding=EncodingConfig(**asdict(obj.encoding)))

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        d = dict(d)
        enc = EncodingConfig(**d.pop("encoding", {}))
        return cls(encoding=enc, **d)


@dataclass
class LatentCodes:
    z_s: np.ndarray
    z_a: np.ndarray

    def to_dict(self):
        return {"z_s": np.asarray(self.z_s).tolist(), "z_a": np.asarray(self.z_a).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["z_s"], dtype=np.float64), np.asarray(d["z_a"], dtype=np.float64))


def sample_latents(n: int, rng: np.random.Generator, shape_dim: int = 64, appearance_dim: int = 64) -> list[LatentCodes]:
    return [LatentCodes(rng.standard_normal(shape_dim), rng.standard_normal(appearance_dim)) for _ in range(n)]


def init_field(store: ParamStore, prefix: str, cfg: FieldConfig, rng: np.random.Generator,
               head_gain: float = 0.1) -> None:
    """He-normal weights, zero biases; density head scaled by ``head_gain``."""
    def he(fan_in, fan_out, gain=1.0):
        return rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in) * gain

    enc = cfg.encoding
    fan = enc.dim_x + cfg.shape_dim
    store.add(f"{prefix}.trunk.0.weight", he(fan, cfg.hidden))
    store.add(f"{prefix}.trunk.0.bias", np.zeros(cfg.hidden))
    for i in range(1, cfg.depth):
        store.add(f"{prefix}.trunk.{i}.weight", he(cfg.hidden, cfg.hidden))
        store.add(f"{prefix}.trunk.{i}.bias", np.zeros(cfg.hidden))
    store.add(f"{prefix}.density.weight", he(cfg.hidden, 1, head_gain))
    store.add(f"{prefix}.density.bias", np.zeros(1))
    fan = cfg.hidden + enc.dim_d + cfg.appearance_dim
    store.add(f"{prefix}.feature.weight", he(fan, cfg.feature_dim))
    store.add(f"{prefix}.feature.bias", np.zeros(cfg.feature_dim))


def field_parameter_count(cfg: FieldConfig) -> dict[str, int]:
    enc = cfg.encoding
    trunk = (enc.dim_x + cfg.shape_dim) * cfg.hidden + cfg.hidden + (cfg.depth - 1) * (cfg.hidden ** 2 + cfg.hidden)
    density = cfg.hidden + 1
    feature = (cfg.hidden + enc.dim_d + cfg.appearance_dim) * cfg.feature_dim + cfg.feature_dim
    return {"trunk": trunk, "density": density, "feature": feature, "total": trunk + density + feature}


def _per_row_bias(z: Tensor, w_block: Tensor, rows: np.ndarray | None, batch: int, lead: int) -> Tensor:
    """Project codes (B, M) and spread them over points.

    Without ``rows`` the result is (B, 1, H) for bias_add over (B, P, H);
    with ``rows`` (image index per point) it is gathered to (Q, H).
    """
    proj = ops.matmul(z, w_block)
    if rows is None:
        return ops.reshape(proj, (batch, 1, proj.shape[-1]))
    onehot = np.zeros((len(rows), batch), dtype=proj.dtype)
    onehot[np.arange(len(rows)), rows] = 1.0
    return ops.matmul(Tensor(onehot), proj)


def field_forward(params: ParamStore, prefix: str, cfg: FieldConfig, x_enc, d_enc, z_s, z_a,
                  rows: np.ndarray | None = None, density_noise=None, density_only: bool = False):
    """Evaluate a feature field.

    Dense layout: ``x_enc`` (B, P, Lx), ``d_enc`` (B, P, Ld), codes (B, M);
    returns density (B, P) and features (B, P, F).
    Packed layout (``rows`` given): ``x_enc`` (Q, Lx), ``d_enc`` (Q, Ld) and
    ``rows[q]`` the image each point belongs to; returns (Q,) and (Q, F).
    ``density_noise`` is added before the density ReLU.
    """
    x_enc, d_enc, z_s, z_a = (as_tensor(t) for t in (x_enc, d_enc, z_s, z_a))
    enc = cfg.encoding
    lx, ld = enc.dim_x, enc.dim_d
    if x_enc.shape[-1] != lx or d_enc.shape[-1] != ld:
        raise ValueError(f"{prefix}: encoded dims {x_enc.shape[-1]}/{d_enc.shape[-1]} != {lx}/{ld}")
    if z_s.shape[-1] != cfg.shape_dim or z_a.shape[-1] != cfg.appearance_dim:
        raise ValueError(f"{prefix}: latent dims {z_s.shape[-1]}/{z_a.shape[-1]} != {cfg.shape_dim}/{cfg.appearance_dim}")
    batch = z_s.shape[0]
    lead = x_enc.ndim - 1

    w0 = params[f"{prefix}.trunk.0.weight"]
    h = ops.matmul(x_enc, w0[:lx])
    h = ops.bias_add(h, _per_row_bias(z_s, w0[lx:], rows, batch, lead))
    h = ops.relu(ops.bias_add(h, params[f"{prefix}.trunk.0.bias"]))
    for i in range(1, cfg.depth):
        h = ops.relu(ops.linear(h, params[f"{prefix}.trunk.{i}.weight"], params[f"{prefix}.trunk.{i}.bias"]))

    raw = ops.linear(h, params[f"{prefix}.density.weight"], params[f"{prefix}.density.bias"])
    raw = ops.reshape(raw, raw.shape[:-1])
    if density_noise is not None:
        raw = ops.add(raw, as_tensor(np.asarray(density_noise, dtype=raw.dtype)))
    sigma = ops.relu(raw)
    if density_only:
        return sigma, None

    wf = params[f"{prefix}.feature.weight"]
    hid = cfg.hidden
    f = ops.add(ops.matmul(h, wf[:hid]), ops.matmul(d_enc, wf[hid:hid + ld]))
    f = ops.bias_add(f, _per_row_bias(z_a, wf[hid + ld:], rows, batch, lead))
    f = ops.bias_add(f, params[f"{prefix}.feature.bias"])
    return sigma, f


def _as_batch(x_enc, d_enc, z_s, z_a):
    x_enc, d_enc = as_tensor(x_enc), as_tensor(d_enc)
    z_s, z_a = as_tensor(z_s), as_tensor(z_a)
    single = z_s.ndim == 1
    if single:
        z_s = ops.reshape(z_s, (1, -1))
        z_a = ops.reshape(z_a, (1, -1))
        x_enc = ops.reshape(x_enc, (1, -1, x_enc.shape[-1]))
        d_enc = ops.reshape(d_enc, (1, -1, d_enc.shape[-1]))
    return single, x_enc, d_enc, z_s, z_a


def object_field_forward(x_enc, d_enc, z_s, z_a, params: ParamStore, cfg: FieldConfig, prefix: str = "object"):
    """Shared object field. Accepts unbatched (P, L) inputs with (M,) codes or the batched layout."""
    single, x_enc, d_enc, z_s, z_a = _as_batch(x_enc, d_enc, z_s, z_a)
    sigma, f = field_forward(params, prefix, cfg, x_enc, d_enc, z_s, z_a)
    if single:
        return ops.reshape(sigma, sigma.shape[1:]), ops.reshape(f, f.shape[1:])
    return sigma, f


def background_field_forward(x_enc, d_enc, z_s, z_a, params: ParamStore, cfg: FieldConfig, prefix: str = "background"):
    return object_field_forward(x_enc, d_enc, z_s, z_a, params, cfg, prefix=prefix)
