"""Affine object transforms, cameras, rays, scene sampling and composition.

Scene coordinates are z-up with the ground plane at z = 0. Cameras sit on a
sphere around the origin and look at it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .fields import LatentCodes

EPS = 1e-10


class DegenerateTransformError(ValueError):
    pass


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class AffineTransform:
    """k(x) = R diag(s) x + t."""

    scale: np.ndarray
    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.all(s > 0):
            raise ValueError(f"scale must be componentwise positive, got {s}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.ones(3), np.zeros(3), np.eye(3))

    @classmethod
    def from_yaw(cls, scale, translation, yaw: float) -> "AffineTransform":
        scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (3,))
        return cls(scale, translation, yaw_matrix(yaw))

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def rotated(self, dyaw: float) -> "AffineTransform":
        return AffineTransform(self.scale, self.translation, yaw_matrix(dyaw) @ self.rotation)

    def translated(self, dt) -> "AffineTransform":
        return AffineTransform(self.scale, self.translation + np.asarray(dt, dtype=np.float64), self.rotation)

    def to_dict(self) -> dict:
        return {"scale": self.scale.tolist(), "translation": self.translation.tolist(),
                "rotation": self.rotation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        if "rotation" in d:
            rot = np.asarray(d["rotation"], dtype=np.float64)
        else:
            rot = yaw_matrix(float(d.get("yaw", 0.0)))
        return cls(np.broadcast_to(np.asarray(d["scale"], dtype=np.float64), (3,)), d["translation"], rot)


def transform_to_scene(T: AffineTransform, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x * T.scale) @ T.rotation.T + T.translation


def _check_scale(T: AffineTransform):
    if np.any(T.scale <= 1e-9):
        raise DegenerateTransformError(f"degenerate transform scale {T.scale}")


def inverse_transform_point(T: AffineTransform, x) -> np.ndarray:
    """diag(1/s) R^T (x - t); row vectors so R^T v becomes v @ R."""
    _check_scale(T)
    return ((np.asarray(x) - T.translation) @ T.rotation) / T.scale


def inverse_transform_dir(T: AffineTransform, d) -> np.ndarray:
    """diag(1/s) R^T d, deliberately not renormalised."""
    _check_scale(T)
    return (np.asarray(d) @ T.rotation) / T.scale


@dataclass
class CameraPose:
    radius: float = 2.7
    elevation: float = math.radians(30.0)
    azimuth: float = 0.0
    fov: float = math.radians(50.0)

    @property
    def position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return self.radius * np.array([ce * math.cos(self.azimuth), ce * math.sin(self.azimuth),
                                       math.sin(self.elevation)])

    def basis(self) -> np.ndarray:
        """Rows: right, up, forward (all unit, orthonormal)."""
        fwd = -self.position / np.linalg.norm(self.position)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        n = np.linalg.norm(right)
        if n < 1e-12:
            raise ValueError("camera looks straight along the up axis")
        right /= n
        up = np.cross(right, fwd)
        return np.stack([right, up, fwd])

    def to_dict(self) -> dict:
        return {"radius": self.radius, "elevation": self.elevation, "azimuth": self.azimuth, "fov": self.fov}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(**{k: float(d[k]) for k in ("radius", "elevation", "azimuth", "fov") if k in d})


def generate_rays(camera: CameraPose, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rays through pixel centres; row-major with origin top-left.

    Returns origins and unit directions, each (H, W, 3).
    """
    if height < 1 or width < 1:
        raise ValueError(f"image extent must be positive, got {height}x{width}")
    right, up, fwd = camera.basis()
    tan = math.tan(camera.fov / 2)
    aspect = width / height
    u = ((np.arange(width) + 0.5) / width * 2 - 1) * tan * aspect
    v = (1 - (np.arange(height) + 0.5) / height * 2) * tan
    d = fwd + u[None, :, None] * right + v[:, None, None] * up
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.position, d.shape).copy()
    return o, d


@dataclass
class SamplingConfig:
    object_counts: list = field(default_factory=lambda: [2, 3, 4, 5])
    object_count_weights: list | None = None
    scale_range: tuple = (0.2, 0.5)
    isotropic_scale: bool = True
    translation_range: tuple = (-0.6, 0.6)
    ground_height: float = 0.0
    rest_on_ground: bool = True
    yaw_range: tuple = (0.0, 2 * math.pi)
    full_rotation: bool = False
    radius: float = 2.7
    elevation_range_deg: tuple = (20.0, 35.0)
    azimuth_range_deg: tuple = (0.0, 360.0)
    fov_deg: float = 50.0
    shape_dim: int = 64
    appearance_dim: int = 64
    background_shape_dim: int | None = None
    background_appearance_dim: int | None = None
    max_entities: int = 9

    def __post_init__(self):
        for name in ("scale_range", "translation_range", "yaw_range", "elevation_range_deg", "azimuth_range_deg"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"{name} must satisfy lo < hi, got {(lo, hi)}")
            setattr(self, name, (float(lo), float(hi)))
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")
        if not self.object_counts or min(self.object_counts) < 1:
            raise ValueError("object counts must be >= 1")
        if max(self.object_counts) + 1 > self.max_entities:
            raise ValueError("object counts exceed max_entities")
        if self.object_count_weights is not None and len(self.object_count_weights) != len(self.object_counts):
            raise ValueError("object_count_weights length mismatch")

    @property
    def max_objects(self) -> int:
        return max(self.object_counts)

    @property
    def bg_dims(self) -> tuple[int, int]:
        return (self.background_shape_dim or self.shape_dim, self.background_appearance_dim or self.appearance_dim)

    @classmethod
    def preset(cls, name: str, **overrides) -> "SamplingConfig":
        presets = {"clevr-2345": {"object_counts": [2, 3, 4, 5]},
                   "clevr-2": {"object_counts": [2]},
                   "single-object": {"object_counts": [1]}}
        if name not in presets:
            raise KeyError(f"unknown sampling preset {name!r}; choose from {sorted(presets)}")
        return cls(**{**presets[name], **overrides})

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) and k.endswith(("range", "range_deg")) else v)
                      for k, v in d.items()})


@dataclass
class SceneSample:
    """Objects first, background last. Codes and transforms align by index."""

    codes: list
    transforms: list
    camera: CameraPose
    max_entities: int = 9

    def __post_init__(self):
        if len(self.codes) != len(self.transforms):
            raise ValueError("codes and transforms differ in length")
        if not 2 <= len(self.codes) <= self.max_entities:
            raise ValueError(f"entity count {len(self.codes)} outside [2, {self.max_entities}]")
        bg = self.transforms[-1]
        if not (np.allclose(bg.scale, 1) and np.allclose(bg.translation, 0) and np.allclose(bg.rotation, np.eye(3))):
            raise ValueError("background transform must be the fixed scene-spanning identity")

    @property
    def n_entities(self) -> int:
        return len(self.codes)

    @property
    def n_objects(self) -> int:
        return len(self.codes) - 1

    def with_changes(self, **kw) -> "SceneSample":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"codes": [c.to_dict() for c in self.codes],
                "transforms": [t.to_dict() for t in self.transforms],
                "camera": self.camera.to_dict(), "max_entities": self.max_entities}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSample":
        return cls([LatentCodes.from_dict(c) for c in d["codes"]],
                   [AffineTransform.from_dict(t) for t in d["transforms"]],
                   CameraPose.from_dict(d["camera"]), int(d.get("max_entities", 9)))


def sample_object_transform(cfg: SamplingConfig, rng: np.random.Generator) -> AffineTransform:
    lo, hi = cfg.scale_range
    s = np.full(3, rng.uniform(lo, hi)) if cfg.isotropic_scale else rng.uniform(lo, hi, 3)
    t = np.zeros(3)
    t[:2] = rng.uniform(*cfg.translation_range, 2)
    t[2] = cfg.ground_height + (s[2] if cfg.rest_on_ground else 0.0)
    if cfg.full_rotation:
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
        return AffineTransform(s, t, rot)
    return AffineTransform(s, t, yaw_matrix(rng.uniform(*cfg.yaw_range)))


def sample_camera(cfg: SamplingConfig, rng: np.random.Generator) -> CameraPose:
    el = math.radians(rng.uniform(*cfg.elevation_range_deg))
    az = math.radians(rng.uniform(*cfg.azimuth_range_deg))
    return CameraPose(cfg.radius, el, az, math.radians(cfg.fov_deg))


def sample_scene(cfg: SamplingConfig, rng: np.random.Generator) -> SceneSample:
    w = cfg.object_count_weights
    p = None if w is None else np.asarray(w, dtype=np.float64) / np.sum(w)
    n_obj = int(rng.choice(cfg.object_counts, p=p))
    codes = [LatentCodes(rng.standard_normal(cfg.shape_dim), rng.standard_normal(cfg.appearance_dim))
             for _ in range(n_obj)]
    bs, ba = cfg.bg_dims
    codes.append(LatentCodes(rng.standard_normal(bs), rng.standard_normal(ba)))
    transforms = [sample_object_transform(cfg, rng) for _ in range(n_obj)] + [AffineTransform.identity()]
    return SceneSample(codes, transforms, sample_camera(cfg, rng), cfg.max_entities)


def compose(evaluations) -> tuple[Tensor, Tensor]:
    """Density-weighted mean of features, summed densities.

    ``evaluations`` is a list of (sigma, feature) pairs with sigma (...,) and
    feature (..., M). Where the total density is zero the feature is zero.
    """
    evaluations = [(as_tensor(s), as_tensor(f)) for s, f in evaluations]
    if not evaluations:
        raise ValueError("compose needs at least one entity")
    for s, f in evaluations:
        if np.any(s.data < 0):
            raise ValueError("negative density passed to compose")
        if f.shape[:-1] != s.shape:
            raise ValueError(f"feature shape {f.shape} incongruent with density {s.shape}")
    if len(evaluations) == 1:
        return evaluations[0]
    sigma = evaluations[0][0]
    for s, _ in evaluations[1:]:
        sigma = ops.add(sigma, s)
    inv = ops.rdiv(ops.add(sigma, EPS), 1.0)
    lead = sigma.shape
    feat = None
    for s, f in evaluations:
        w = ops.reshape(ops.mul(s, inv), lead + (1, 1))
        term = ops.reshape(ops.matmul(w, ops.reshape(f, lead + (1, f.shape[-1]))), f.shape)
        feat = term if feat is None else ops.add(feat, term)
    return sigma, feat
