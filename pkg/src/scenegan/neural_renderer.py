"""Learned 2D upsampler from the low-resolution feature image to RGB.

Each block upsamples features 2x, applies a 3x3 conv and a leaky ReLU. At
every resolution (the input one included) a 3x3 conv maps the features to
RGB, which is added to the upsampled RGB of the previous resolution. A final
sigmoid squashes the result into (0, 1).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, as_tensor, ops

NEAREST = "nearest"
BILINEAR = "bilinear"


@dataclass
class RendererConfig:
    feature_dim: int = 128
    n_blocks: int = 2
    # block 0 keeps feature_dim channels, later blocks halve down to min_channels;
    # "constant" keeps feature_dim everywhere
    channel_schedule: str = "halving"
    min_channels: int = 16
    skip_connections: bool = True
    final_sigmoid: bool = True
    rgb_upsample_mode: str = BILINEAR
    feature_upsample_mode: str = NEAREST
    rgb_gain: float = 0.1

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be nonnegative")
        for mode in (self.rgb_upsample_mode, self.feature_upsample_mode):
            if mode not in (NEAREST, BILINEAR):
                raise ValueError(f"unknown upsampling mode {mode!r}")
        if self.channel_schedule not in ("halving", "constant"):
            raise ValueError(f"unknown channel schedule {self.channel_schedule!r}")

    def channels(self) -> list[int]:
        """Feature channels at the input and after each block."""
        out = [self.feature_dim]
        for i in range(self.n_blocks):
            if self.channel_schedule == "constant" or i == 0:
                out.append(out[-1])
            else:
                out.append(max(self.min_channels, out[-1] // 2))
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def blocks_for(feature_resolution: int, image_resolution: int) -> int:
    ratio = image_resolution / feature_resolution
    n = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if n < 0 or feature_resolution * 2 ** n != image_resolution:
        raise ValueError(f"image resolution {image_resolution} is not feature resolution "
                         f"{feature_resolution} times a power of two")
    return n


def ablation_variant(base: RendererConfig | None = None, skip: bool = True, act: bool = True,
                     nn_rgb: bool = False, bi_feat: bool = False) -> RendererConfig:
    """Renderer config for the ablation flags (-Skip, -Act., +NN-RGB, +Bi-Feat)."""
    base = base or RendererConfig()
    d = asdict(base)
    d.update(skip_connections=skip, final_sigmoid=act,
             rgb_upsample_mode=NEAREST if nn_rgb else BILINEAR,
             feature_upsample_mode=BILINEAR if bi_feat else NEAREST)
    return RendererConfig(**d)


def init_renderer(store: ParamStore, cfg: RendererConfig, rng: np.random.Generator, prefix: str = "renderer") -> None:
    ch = cfg.channels()

    def conv(name, cin, cout, gain=1.0):
        std = math.sqrt(2.0 / (9 * cin)) * gain
        store.add(f"{prefix}.{name}.weight", rng.standard_normal((3, 3, cin, cout)) * std)
        store.add(f"{prefix}.{name}.bias", np.zeros(cout))

    for i in range(cfg.n_blocks):
        conv(f"block{i}", ch[i], ch[i + 1])
    if cfg.skip_connections:
        for i, c in enumerate(ch):
            conv(f"rgb{i}", c, 3, cfg.rgb_gain)
    else:
        conv(f"rgb{cfg.n_blocks}", ch[-1], 3, cfg.rgb_gain)


def renderer_parameter_count(cfg: RendererConfig) -> int:
    ch = cfg.channels()
    n = sum(9 * ch[i] * ch[i + 1] + ch[i + 1] for i in range(cfg.n_blocks))
    rgb_in = ch if cfg.skip_connections else ch[-1:]
    return n + sum(9 * c * 3 + 3 for c in rgb_in)


def _conv(params, name, x):
    return ops.bias_add(ops.conv2d(x, params[f"{name}.weight"], stride=1, pad=1), params[f"{name}.bias"])


def _up(x, mode):
    return ops.upsample_nearest(x) if mode == NEAREST else ops.upsample_bilinear(x)


def neural_render(features, params: ParamStore, cfg: RendererConfig, prefix: str = "renderer") -> Tensor:
    """(B, H_V, W_V, M) features to (B, H_V 2^n, W_V 2^n, 3) RGB."""
    x = as_tensor(features)
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[-1] != cfg.feature_dim:
        raise ValueError(f"expected (B, H, W, {cfg.feature_dim}) features, got {x.shape}")
    rgb = _conv(params, f"{prefix}.rgb0", x) if cfg.skip_connections else None
    for i in range(cfg.n_blocks):
        x = ops.leaky_relu(_conv(params, f"{prefix}.block{i}", _up(x, cfg.feature_upsample_mode)))
        if cfg.skip_connections:
            rgb = ops.add(_up(rgb, cfg.rgb_upsample_mode), _conv(params, f"{prefix}.rgb{i + 1}", x))
    if not cfg.skip_connections:
        rgb = _conv(params, f"{prefix}.rgb{cfg.n_blocks}", x)
    return ops.sigmoid(rgb) if cfg.final_sigmoid else rgb


def receptive_radius(n_blocks: int) -> int:
    """Output pixels by which a change in one feature pixel's 2^n block can spread.

    Worst case over the paths that leave the feature branch after m blocks:
    the 3x3 convs reach one pixel at their level, and each bilinear upsample
    reaches half a pixel of the finer level.
    """
    best = 0
    for m in range(n_blocks + 1):
        r = sum(2 ** (n_blocks - k) for k in range(1, m + 1)) + 2 ** (n_blocks - m)
        r += sum(2 ** (n_blocks - k - 1) for k in range(m, n_blocks))
        best = max(best, r)
    return best


def neural_render_tiled(features, params: ParamStore, cfg: RendererConfig, prefix: str = "renderer",
                        tile: int = 64) -> np.ndarray:
    """Inference-only rendering in feature-space tiles with a halo; equals :func:`neural_render`.

    Bounds peak memory for large images: each tile is rendered with enough
    surrounding context that its interior does not see the tile border.
    """
    x = np.asarray(features.data if isinstance(features, Tensor) else features)
    B, H, W, _ = x.shape
    f = 2 ** cfg.n_blocks
    halo = -(-receptive_radius(cfg.n_blocks) // f) + 1
    out = np.empty((B, H * f, W * f, 3), dtype=x.dtype)
    for i in range(0, H, tile):
        for j in range(0, W, tile):
            i0, j0 = max(i - halo, 0), max(j - halo, 0)
            i1, j1 = min(i + tile + halo, H), min(j + tile + halo, W)
            y = neural_render(x[:, i0:i1, j0:j1], params, cfg, prefix).data
            h, w = min(tile, H - i), min(tile, W - j)
            out[:, i * f:(i + h) * f, j * f:(j + w) * f] = y[:, (i - i0) * f:(i - i0 + h) * f,
                                                             (j - j0) * f:(j - j0 + w) * f]
    return out


def to_uint8(rgb) -> np.ndarray:
    """Clamp to [0, 1] and quantise; used for every PNG export."""
    a = np.asarray(rgb.data if isinstance(rgb, Tensor) else rgb, dtype=np.float64)
    return np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
