"""Test-time scene edits, session state, edit scripts and deterministic rendering.

One JSON schema serves the CLI scripts and the HTTP service. An edit is a
dict with an ``op`` key::

    {"op": "rotate_object", "index": 0, "yaw": 0.5}
    {"op": "translate_object", "index": 1, "delta": [0.1, 0.0, 0.0]}
    {"op": "set_appearance", "index": 0, "seed": 7}          # or "z_a": [...]
    {"op": "set_shape", "index": 0, "z_s": [...]}            # or "seed"
    {"op": "add_object", "transform": {...}, "codes": {...}} # or "seed"
    {"op": "remove_object", "index": 2}
    {"op": "set_camera", "elevation": 0.5, "azimuth": 1.0}   # radians
    {"op": "set_resolution", "resolution": 128}

Angles are radians. Object indices count objects only; the background is
never addressed by an edit.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from .autodiff import no_grad
from .fields import LatentCodes
from .neural_renderer import neural_render_tiled, receptive_radius, to_uint8
from .scene import AffineTransform, SceneSample, sample_scene, yaw_matrix

EDIT_OPS = ("rotate_object", "translate_object", "set_appearance", "set_shape", "add_object",
            "remove_object", "set_camera", "set_resolution")
MACROS = ("rotate_360", "circle_around", "depth_sweep", "horizontal_sweep")


class EditError(ValueError):
    """An edit that is malformed or would break a scene invariant."""


# ---------------------------------------------------------------------------
# session state


@dataclass
class SessionState:
    scene: SceneSample
    resolution: int = 64
    checkpoint_id: str = ""
    use_ema: bool = True
    version: int = 0

    def to_dict(self) -> dict:
        return {"checkpoint_id": self.checkpoint_id, "use_ema": self.use_ema, "version": self.version,
                "render": {"resolution": self.resolution}, "scene": self.scene.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SessionState":
        return cls(SceneSample.from_dict(d["scene"]), int(d["render"]["resolution"]),
                   d.get("checkpoint_id", ""), bool(d.get("use_ema", True)), int(d.get("version", 0)))


def initial_state(gen, seed: int = 0, resolution: int | None = None, checkpoint_id: str = "") -> SessionState:
    """Scene drawn from the generator's sampling config with a fixed seed."""
    scene = sample_scene(gen.sampling, np.random.default_rng(seed))
    return SessionState(scene, resolution or gen.cfg.image_resolution, checkpoint_id)


# ---------------------------------------------------------------------------
# the edit algebra


def _need(edit: dict, key: str):
    if key not in edit:
        raise EditError(f"{edit.get('op')}: missing field {key!r}")
    return edit[key]


def _num(edit: dict, key: str) -> float:
    v = _need(edit, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise EditError(f"{edit.get('op')}: {key!r} must be a finite number, got {v!r}")
    return float(v)


def _vec(edit: dict, key: str, n: int | None = None) -> np.ndarray:
    v = _need(edit, key)
    try:
        a = np.asarray(v, dtype=np.float64)
    except (TypeError, ValueError):
        raise EditError(f"{edit.get('op')}: {key!r} must be a list of numbers") from None
    if a.ndim != 1 or (n is not None and a.shape[0] != n) or not np.isfinite(a).all():
        want = f"{n} finite numbers" if n else "a finite vector"
        raise EditError(f"{edit.get('op')}: {key!r} must be {want}, got shape {a.shape}")
    return a


def _index(edit: dict, scene: SceneSample) -> int:
    i = _need(edit, "index")
    if isinstance(i, bool) or not isinstance(i, int):
        raise EditError(f"{edit['op']}: index must be an integer, got {i!r}")
    if not 0 <= i < scene.n_objects:
        raise EditError(f"{edit['op']}: object index {i} out of range [0, {scene.n_objects})")
    return i


def _code(edit: dict, key: str, dim: int) -> np.ndarray:
    if key in edit:
        return _vec(edit, key, dim)
    if "seed" in edit:
        seed = edit["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise EditError(f"{edit['op']}: seed must be a non-negative integer")
        return np.random.default_rng(seed).standard_normal(dim)
    raise EditError(f"{edit['op']}: give {key!r} or 'seed'")


def _object_dims(scene: SceneSample) -> tuple[int, int]:
    c = scene.codes[0]
    return len(c.z_s), len(c.z_a)


def _replace_object(scene, i, code=None, transform=None) -> SceneSample:
    codes, transforms = list(scene.codes), list(scene.transforms)
    if code is not None:
        codes[i] = code
    if transform is not None:
        transforms[i] = transform
    return scene.with_changes(codes=codes, transforms=transforms)


def apply_edit(state: SessionState, edit: dict) -> SessionState:
    """Pure: returns a new state or raises :class:`EditError`."""
    if not isinstance(edit, dict):
        raise EditError(f"an edit must be a JSON object, got {type(edit).__name__}")
    op = edit.get("op")
    if op not in EDIT_OPS:
        raise EditError(f"unknown edit op {op!r}; expected one of {list(EDIT_OPS)}")
    scene = state.scene
    try:
        if op == "rotate_object":
            i = _index(edit, scene)
            scene = _replace_object(scene, i, transform=scene.transforms[i].rotated(_num(edit, "yaw")))
        elif op == "translate_object":
            i = _index(edit, scene)
            d = _vec(edit, "delta")
            if d.shape[0] == 2:
                d = np.append(d, 0.0)
            if d.shape[0] != 3:
                raise EditError("translate_object: delta must have 2 or 3 components")
            scene = _replace_object(scene, i, transform=scene.transforms[i].translated(d))
        elif op == "set_appearance":
            i = _index(edit, scene)
            old = scene.codes[i]
            scene = _replace_object(scene, i, code=LatentCodes(old.z_s, _code(edit, "z_a", len(old.z_a))))
        elif op == "set_shape":
            i = _index(edit, scene)
            old = scene.codes[i]
            scene = _replace_object(scene, i, code=LatentCodes(_code(edit, "z_s", len(old.z_s)), old.z_a))
        elif op == "add_object":
            if scene.n_entities + 1 > scene.max_entities:
                raise EditError(f"add_object: scene already holds {scene.n_entities} of "
                                f"{scene.max_entities} entities")
            T = _need(edit, "transform")
            if not isinstance(T, dict):
                raise EditError("add_object: transform must be an object")
            T = AffineTransform.from_dict(T)
            ds, da = _object_dims(scene)
            codes = edit.get("codes")
            if codes is not None:
                code = LatentCodes(_vec(codes, "z_s", ds), _vec(codes, "z_a", da))
            else:
                rng = np.random.default_rng(int(_need(edit, "seed")))
                code = LatentCodes(rng.standard_normal(ds), rng.standard_normal(da))
            scene = scene.with_changes(codes=scene.codes[:-1] + [code, scene.codes[-1]],
                                       transforms=scene.transforms[:-1] + [T, scene.transforms[-1]])
        elif op == "remove_object":
            i = _index(edit, scene)
            if scene.n_objects == 1:
                raise EditError("remove_object: a scene keeps at least one object")
            scene = scene.with_changes(codes=scene.codes[:i] + scene.codes[i + 1:],
                                       transforms=scene.transforms[:i] + scene.transforms[i + 1:])
        elif op == "set_camera":
            cam = scene.camera
            el = _num(edit, "elevation") if "elevation" in edit else cam.elevation
            az = _num(edit, "azimuth") if "azimuth" in edit else cam.azimuth
            if not -math.pi / 2 < el < math.pi / 2:
                raise EditError("set_camera: elevation must lie strictly inside (-pi/2, pi/2)")
            scene = scene.with_changes(camera=replace(cam, elevation=el, azimuth=az))
        else:
            h = _need(edit, "resolution")
            if isinstance(h, bool) or not isinstance(h, int) or h < 4 or h > 2048:
                raise EditError(f"set_resolution: resolution must be an integer in [4, 2048], got {h!r}")
            return replace(state, resolution=h, version=state.version + 1)
    except EditError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise EditError(f"{op}: {exc}") from exc
    return replace(state, scene=scene, version=state.version + 1)


def fold_edits(state: SessionState, edits) -> SessionState:
    for e in edits:
        state = apply_edit(state, e)
    return state


# ---------------------------------------------------------------------------
# macros: deterministic sequences of absolute states


def _with_transform(state, i, T) -> SessionState:
    return replace(state, scene=_replace_object(state.scene, i, transform=T))


def rotate_360(state: SessionState, index: int, frames: int) -> list[SessionState]:
    """frames+1 states; the last has yaw advanced by exactly one turn."""
    T0 = state.scene.transforms[index]
    out = []
    for k in range(frames + 1):
        # frame `frames` uses the start pose, as 2*pi mod 2*pi is zero
        R = yaw_matrix(2 * math.pi * (k % frames) / frames) @ T0.rotation
        out.append(_with_transform(state, index, AffineTransform(T0.scale, T0.translation, R)))
    return out


def circle_around(state: SessionState, index: int, center: int, frames: int) -> list[SessionState]:
    """Move object ``index`` on a horizontal circle around object ``center``."""
    T0, C = state.scene.transforms[index], state.scene.transforms[center].translation
    off = T0.translation[:2] - C[:2]
    r, phi = float(np.hypot(*off)), float(np.arctan2(off[1], off[0]))
    out = []
    for k in range(frames + 1):
        a = phi + 2 * math.pi * (k % frames) / frames
        t = np.array([C[0] + r * math.cos(a), C[1] + r * math.sin(a), T0.translation[2]])
        out.append(_with_transform(state, index, AffineTransform(T0.scale, t, T0.rotation)))
    return out


def sweep(state: SessionState, index: int, frames: int, distance: float, axis: str) -> list[SessionState]:
    """Translate along the ground-projected camera depth or right axis, centred on the start pose."""
    right, _, fwd = state.scene.camera.basis()
    v = fwd if axis == "depth" else right
    v = np.array([v[0], v[1], 0.0])
    v /= max(np.linalg.norm(v), 1e-12)
    T0 = state.scene.transforms[index]
    steps = np.linspace(-0.5, 0.5, frames + 1) * distance
    return [_with_transform(state, index, T0.translated(s * v)) for s in steps]


def expand_macro(state: SessionState, step: dict) -> list[SessionState]:
    name = step.get("macro")
    frames = step.get("frames", 16)
    if isinstance(frames, bool) or not isinstance(frames, int) or frames < 1:
        raise EditError(f"{name}: frames must be a positive integer")
    i = _index({**step, "op": name}, state.scene)
    if name == "rotate_360":
        return rotate_360(state, i, frames)
    if name == "circle_around":
        c = _index({"op": name, "index": step.get("center", 0 if i else 1)}, state.scene)
        if c == i:
            raise EditError("circle_around: center must differ from index")
        return circle_around(state, i, c, frames)
    if name in ("depth_sweep", "horizontal_sweep"):
        dist = _num({**step, "op": name}, "distance") if "distance" in step else 0.8
        return sweep(state, i, frames, dist, "depth" if name == "depth_sweep" else "horizontal")
    raise EditError(f"unknown macro {name!r}; expected one of {list(MACROS)}")


def run_script(state: SessionState, script) -> list[SessionState]:
    """Expand an edit script into the list of states to render.

    Each step is an edit (``op``) or a macro (``macro``). Edit steps take a
    ``frames`` count, default 1; rotate/translate/set_camera are spread evenly
    over their frames, other edits apply once and then hold. ``frames: 0``
    applies an edit silently.
    """
    if not isinstance(script, list):
        raise EditError("an edit script is a JSON list of steps")
    out = []
    for n, step in enumerate(script):
        try:
            if not isinstance(step, dict):
                raise EditError("a step must be a JSON object")
            if "macro" in step:
                seq = expand_macro(state, step)
                out.extend(seq)
                continue
            frames = step.get("frames", 1)
            if isinstance(frames, bool) or not isinstance(frames, int) or frames < 0:
                raise EditError("frames must be a non-negative integer")
            edit = {k: v for k, v in step.items() if k != "frames"}
            op = edit.get("op")
            if frames > 1 and op in ("rotate_object", "translate_object"):
                key = "yaw" if op == "rotate_object" else "delta"
                part = dict(edit)
                part[key] = (_num(edit, key) / frames if key == "yaw"
                             else (_vec(edit, key) / frames).tolist())
                for _ in range(frames):
                    state = apply_edit(state, part)
                    out.append(state)
            elif frames > 1 and op == "set_camera":
                cam = state.scene.camera
                target = apply_edit(state, edit).scene.camera
                for k in range(1, frames + 1):
                    f = k / frames
                    state = apply_edit(state, {"op": "set_camera",
                                               "elevation": cam.elevation + f * (target.elevation - cam.elevation),
                                               "azimuth": cam.azimuth + f * (target.azimuth - cam.azimuth)})
                    out.append(state)
            else:
                state = apply_edit(state, edit)
                out.extend([state] * frames)
        except EditError as exc:
            raise EditError(f"step {n} {step!r}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# rendering


def feature_resolution_for(gen, resolution: int) -> int:
    f = 2 ** gen.cfg.renderer.n_blocks
    if resolution % f:
        raise EditError(f"resolution {resolution} is not a multiple of the renderer's upsampling factor {f}")
    return resolution // f


def render_image(gen, scene: SceneSample, resolution: int, active=None) -> np.ndarray:
    """Deterministic float RGB (H, W, 3): midpoint depths, no density noise."""
    with no_grad():
        feat, _ = gen.render_features([scene], feature_resolution_for(gen, resolution),
                                      active=None if active is None else [active])
        out = neural_render_tiled(feat, gen.params, gen.cfg.renderer, gen.REND)
    return out[0].astype(np.float64)


def render_state(gen, state: SessionState) -> np.ndarray:
    return render_image(gen, state.scene, state.resolution)


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    arr = img if img.dtype == np.uint8 else (to_uint8(img) if img.ndim == 3 else
                                             np.round(np.clip(img, 0, 1) * 255).astype(np.uint8))
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def object_alphas(gen, scene: SceneSample, resolution: int) -> np.ndarray:
    """Alpha of every object alone, (n_objects, H, W), rendered at ``resolution``."""
    return np.stack([gen.entity_alpha(scene, i, resolution) for i in range(scene.n_objects)])


def upsample_nearest(a: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(a, factor, axis=-2), factor, axis=-1)


def footprint_mask(alpha: np.ndarray, image_res: int, dilate: int, threshold: float = 1e-3) -> np.ndarray:
    """Boolean image-resolution mask of ``alpha > threshold`` grown by ``dilate`` pixels."""
    f = image_res // alpha.shape[-1]
    m = upsample_nearest(alpha > threshold, f) if f > 1 else alpha > threshold
    if dilate > 0:
        m = ndimage.binary_dilation(m, structure=np.ones((3, 3), bool), iterations=dilate)
    return m


def renderer_reach(gen) -> int:
    """Output-pixel radius over which one feature pixel can influence the RGB image."""
    return receptive_radius(gen.cfg.renderer.n_blocks)


PALETTE = np.array([[0.90, 0.25, 0.20], [0.20, 0.55, 0.90], [0.30, 0.75, 0.30], [0.95, 0.75, 0.15],
                    [0.65, 0.35, 0.80], [0.15, 0.75, 0.75], [0.95, 0.50, 0.70], [0.55, 0.40, 0.25]])


def colorize_alphas(alphas: np.ndarray) -> np.ndarray:
    """Colour-code per-object alpha maps over black, later objects painted over earlier ones."""
    out = np.zeros(alphas.shape[1:] + (3,))
    for i, a in enumerate(alphas):
        a = np.clip(a, 0, 1)[..., None]
        out = out * (1 - a) + a * PALETTE[i % len(PALETTE)]
    return out


def disentanglement_grid(gen, scenes, resolution: int) -> np.ndarray:
    """Rows: background only, objects only, colour-coded object alphas, composite. One column per scene."""
    cols = []
    for s in scenes:
        objs = set(range(s.n_objects))
        bg = render_image(gen, s, resolution, active={-1})
        fg = render_image(gen, s, resolution, active=objs)
        al = colorize_alphas(object_alphas(gen, s, resolution))
        full = render_image(gen, s, resolution)
        cols.append(np.concatenate([bg, fg, al, full], axis=0))
    return np.concatenate(cols, axis=1)


@dataclass
class RenderedFrames:
    images: list = field(default_factory=list)
    states: list = field(default_factory=list)


def render_states(gen, states, progress=None) -> RenderedFrames:
    out = RenderedFrames()
    for k, st in enumerate(states):
        out.images.append(render_state(gen, st))
        out.states.append(st)
        if progress:
            progress(k, len(states))
    return out
