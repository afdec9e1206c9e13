"""Synthetic training data: a small ray tracer for primitives on a ground plane.

Each image shows 2-5 spheres or yaw-rotated cubes resting on z = 0 under a
directional light, in front of a flat background colour. Per-pixel object ids
are written as grayscale sidecars (0 = background, k + 1 = object k); there is
no anti-aliasing, so they align exactly with the rendered silhouettes.

Layout: ``<root>/<name>/{images,masks,manifest.json}``.
"""
from __future__ import annotations

import colorsys
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import CameraPose, SamplingConfig, generate_rays, sample_camera

BACKGROUND = (0.55, 0.55, 0.58)


@dataclass
class Primitive:
    kind: str  # "sphere" | "cube"
    center: list  # (x, y, z), z equals the half-size so it rests on the ground
    size: float  # radius or half edge
    yaw: float
    color: list

    @property
    def footprint(self) -> float:
        return self.size * (math.sqrt(2.0) if self.kind == "cube" else 1.0)


@dataclass
class PrimitiveScene:
    primitives: list
    camera: CameraPose
    light: list = field(default_factory=lambda: [0.45, -0.35, 0.82])

    def to_dict(self):
        return {"primitives": [asdict(p) for p in self.primitives], "camera": self.camera.to_dict(),
                "light": list(self.light)}

    @classmethod
    def from_dict(cls, d):
        return cls([Primitive(**p) for p in d["primitives"]], CameraPose.from_dict(d["camera"]), d["light"])


@dataclass
class SynthConfig:
    name: str = "clevr-2"
    object_counts: list = field(default_factory=lambda: [2])
    resolution: int = 64
    size_range: tuple = (0.2, 0.5)
    position_range: tuple = (-0.6, 0.6)
    kinds: tuple = ("sphere", "cube")
    ambient: float = 0.35
    sampling: dict = field(default_factory=dict)

    @classmethod
    def preset(cls, name: str, **kw) -> "SynthConfig":
        counts = {"clevr-2": [2], "clevr-2345": [2, 3, 4, 5], "clevr-1": [1]}
        if name not in counts:
            raise KeyError(f"unknown dataset preset {name!r}; choose from {sorted(counts)}")
        return cls(name=name, object_counts=counts[name], **kw)

    def camera_config(self) -> SamplingConfig:
        return SamplingConfig(**{"object_counts": list(self.object_counts), **self.sampling})

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def sample_primitive_scene(cfg: SynthConfig, rng: np.random.Generator, max_tries: int = 1000) -> PrimitiveScene:
    n = int(rng.choice(cfg.object_counts))
    prims: list[Primitive] = []
    tries = 0
    while len(prims) < n:
        tries += 1
        if tries > max_tries:
            # restart the placement; keeps the count exact
            prims, tries = [], 0
        kind = str(rng.choice(cfg.kinds))
        size = float(rng.uniform(*cfg.size_range))
        xy = rng.uniform(*cfg.position_range, 2)
        yaw = float(rng.uniform(0, 2 * math.pi))
        hue = float(rng.uniform())
        color = list(colorsys.hsv_to_rgb(hue, float(rng.uniform(0.55, 0.9)), float(rng.uniform(0.7, 0.95))))
        p = Primitive(kind, [float(xy[0]), float(xy[1]), size], size, yaw, color)
        if all(np.hypot(*(np.subtract(p.center[:2], q.center[:2]))) >= p.footprint + q.footprint for q in prims):
            prims.append(p)
    return PrimitiveScene(prims, sample_camera(cfg.camera_config(), rng))


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    disc = b * b - (np.einsum("ij,ij->i", oc, oc) - r * r)
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    t = np.where((disc >= 0) & (t > 1e-6), t, np.inf)
    n = oc + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    return t, n / r


def _hit_cube(o, d, c, h, yaw):
    ca, sa = math.cos(yaw), math.sin(yaw)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    lo_ = (o - c) @ rot  # into the cube frame: R^T v
    ld = d @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / ld
        t1 = (-h - lo_) * inv
        t2 = (h - lo_) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    t = np.where((tmax >= tmin) & (tmin > 1e-6), tmin, np.inf)
    p = lo_ + np.where(np.isfinite(t), t, 0.0)[:, None] * ld
    axis = np.argmax(np.abs(p) / h, axis=1)
    nl = np.zeros_like(p)
    nl[np.arange(len(p)), axis] = np.sign(p[np.arange(len(p)), axis])
    return t, nl @ rot.T


def raytrace_scene(scene: PrimitiveScene, resolution: int, ambient: float = 0.35,
                   background=BACKGROUND) -> tuple[np.ndarray, np.ndarray]:
    """RGB float image (H, W, 3) in [0, 1] and object id map (H, W) uint8."""
    o, d = generate_rays(scene.camera, resolution, resolution)
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    light = np.asarray(scene.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    best = np.full(len(o), np.inf)
    ids = np.zeros(len(o), dtype=np.uint8)
    rgb = np.tile(np.asarray(background, dtype=np.float64), (len(o), 1))
    for k, p in enumerate(scene.primitives):
        c = np.asarray(p.center, dtype=np.float64)
        if p.kind == "sphere":
            t, n = _hit_sphere(o, d, c, p.size)
        elif p.kind == "cube":
            t, n = _hit_cube(o, d, c, p.size, p.yaw)
        else:
            raise ValueError(f"unknown primitive kind {p.kind!r}")
        closer = t < best
        best = np.where(closer, t, best)
        ids[closer] = k + 1
        shade = ambient + (1 - ambient) * np.clip(n @ light, 0.0, 1.0)
        rgb[closer] = shade[closer, None] * np.asarray(p.color)[None, :]
    return rgb.reshape(resolution, resolution, 3), ids.reshape(resolution, resolution)


def sphere_masks(camera: CameraPose, centers, radii, resolution: int) -> np.ndarray:
    """Boolean (K, H, W) silhouettes of spheres, each on its own (no occlusion)."""
    o, d = generate_rays(camera, resolution, resolution)
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    out = []
    for c, r in zip(centers, radii):
        t, _ = _hit_sphere(o, d, np.asarray(c, dtype=np.float64), float(r))
        out.append(np.isfinite(t).reshape(resolution, resolution))
    return np.stack(out) if out else np.zeros((0, resolution, resolution), bool)


def _to_png(arr: np.ndarray) -> Image.Image:
    if arr.ndim == 3:
        return Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8), mode="RGB")
    return Image.fromarray(arr.astype(np.uint8), mode="L")


def generate_dataset(cfg: SynthConfig, n_images: int, seed: int, root) -> dict:
    """Write ``n_images`` PNGs plus id-mask sidecars and a manifest; returns the manifest."""
    out = Path(root) / cfg.name
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    files, scenes = [], []
    for i in range(n_images):
        scene = sample_primitive_scene(cfg, rng)
        rgb, ids = raytrace_scene(scene, cfg.resolution, cfg.ambient)
        name = f"{i:06d}.png"
        _to_png(rgb).save(out / "images" / name)
        _to_png(ids).save(out / "masks" / name)
        files.append(name)
        scenes.append(scene.to_dict())
    manifest = {"name": cfg.name, "count": n_images, "resolution": cfg.resolution, "seed": seed,
                "config_hash": cfg.digest(), "config": json.loads(json.dumps(asdict(cfg), default=list)),
                "files": files, "scenes": scenes}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text()), path.parent


class DatasetIterator:
    """Epoch-shuffled batches of (B, H, W, 3) float images in [0, 1]."""

    def __init__(self, manifest_path, batch_size: int, rng: np.random.Generator, dtype=np.float32):
        self.manifest, self.root = load_manifest(manifest_path)
        paths = [self.root / "images" / f for f in self.manifest["files"]]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} dataset images missing, e.g. {missing[0]}")
        self.images = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths])
        if batch_size < 1 or batch_size > len(self.images):
            raise ValueError(f"batch size {batch_size} invalid for {len(self.images)} images")
        self.batch_size = batch_size
        self.rng = rng
        self.dtype = dtype
        self.epoch = 0
        self.pos = 0
        self.order = self.rng.permutation(len(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if self.pos + self.batch_size > len(self.order):
            self.epoch += 1
            self.pos = 0
            self.order = self.rng.permutation(len(self.images))
        idx = self.order[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return (self.images[idx].astype(np.float64) / 255.0).astype(self.dtype)

    def state(self) -> dict:
        return {"epoch": self.epoch, "pos": self.pos, "order": self.order.tolist(),
                "rng": self.rng.bit_generator.state}

    def load_state(self, st: dict) -> None:
        self.epoch, self.pos = int(st["epoch"]), int(st["pos"])
        self.order = np.asarray(st["order"], dtype=np.int64)
        self.rng.bit_generator.state = st["rng"]


def dataset_iterator(manifest_path, batch_size: int, rng: np.random.Generator) -> DatasetIterator:
    return DatasetIterator(manifest_path, batch_size, rng)
