"""Adversarial training: discriminator, losses, RMSprop, EMA and the loop.

Sign convention: a large discriminator logit means "real". With
f(t) = -log(1 + exp(-t)) the discriminator maximises
f(D(real)) + f(-D(fake)) - lambda |grad_I D(real)|^2 and the generator
maximises f(D(G(z))); both are minimised here as softplus losses.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, ParamStore, Tensor, grad, load_checkpoint, no_grad, ops, save_checkpoint
from .data import DatasetIterator
from .generator import Generator, GeneratorConfig
from .neural_renderer import to_uint8
from .scene import SamplingConfig, sample_scene


class TrainingAbort(RuntimeError):
    """Raised on non-finite losses or gradients; ``dump`` names the diagnostic file."""

    def __init__(self, msg, dump=None):
        super().__init__(msg if dump is None else f"{msg} (diagnostics in {dump})")
        self.dump = dump


# ---------------------------------------------------------------------------
# discriminator


@dataclass
class DiscriminatorConfig:
    resolution: int = 64
    base_channels: int = 64
    max_channels: int = 512

    def channels(self) -> list[int]:
        n = int(round(math.log2(self.resolution / 4)))
        if n < 0 or 4 * 2 ** n != self.resolution:
            raise ValueError(f"discriminator resolution {self.resolution} must be 4 times a power of two")
        return [3] + [min(self.base_channels * 2 ** i, self.max_channels) for i in range(n)]


class Discriminator:
    """Stride-2 3x3 convs with leaky ReLU down to 4x4, then a linear logit."""

    def __init__(self, cfg: DiscriminatorConfig, params: ParamStore | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParamStore(dtype)
            ch = cfg.channels()
            for i in range(len(ch) - 1):
                params.add(f"disc.conv{i}.weight", rng.standard_normal((3, 3, ch[i], ch[i + 1])) * math.sqrt(2 / (9 * ch[i])))
                params.add(f"disc.conv{i}.bias", np.zeros(ch[i + 1]))
            fan = 16 * ch[-1]
            params.add("disc.out.weight", rng.standard_normal((fan, 1)) * math.sqrt(1 / fan))
            params.add("disc.out.bias", np.zeros(1))
        self.params = params

    def __call__(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.params.dtype))
        if x.ndim != 4 or x.shape[1:] != (self.cfg.resolution, self.cfg.resolution, 3):
            raise ValueError(f"discriminator expects (B, {self.cfg.resolution}, {self.cfg.resolution}, 3), got {x.shape}")
        n = len(self.cfg.channels()) - 1
        for i in range(n):
            x = ops.conv2d(x, self.params[f"disc.conv{i}.weight"], stride=2, pad=1)
            x = ops.leaky_relu(ops.bias_add(x, self.params[f"disc.conv{i}.bias"]))
        x = ops.reshape(x, (x.shape[0], -1))
        out = ops.linear(x, self.params["disc.out.weight"], self.params["disc.out.bias"])
        return ops.reshape(out, (out.shape[0],))


# ---------------------------------------------------------------------------
# losses and optimisers


def nonsat_term(t):
    """f(t) = -log(1 + exp(-t)), stable for any t; arrays in, arrays out."""
    return -np.logaddexp(0.0, -np.asarray(t, dtype=np.float64))


def r1_penalty(D, real, lam: float = 10.0) -> Tensor:
    """lam * batch mean of |grad_I D(I)|^2, differentiable w.r.t. D's parameters."""
    x = real if isinstance(real, Tensor) and real.requires_grad else \
        Tensor(np.asarray(real.data if isinstance(real, Tensor) else real), requires_grad=True)
    out = D(x)
    return _r1_from(out, x, lam)


def _r1_from(out: Tensor, x: Tensor, lam: float) -> Tensor:
    if not out.requires_grad:
        return Tensor(np.zeros((), dtype=x.dtype))
    (g,) = grad(ops.sum(out), [x], create_graph=True)
    if not np.all(np.isfinite(g.data)):
        raise TrainingAbort("non-finite discriminator input gradient in R1 penalty")
    if not g.requires_grad:
        # input gradient does not depend on any parameter (e.g. a linear D)
        g = Tensor(g.data)
    sq = ops.sum(ops.mul(g, g))
    return ops.mul(sq, lam / x.shape[0])


class RMSprop:
    """v <- a v + (1 - a) g^2; theta <- theta - lr g / (sqrt(v) + eps)."""

    def __init__(self, params: ParamStore, lr: float, alpha: float = 0.99, eps: float = 1e-8, prefix: str = ""):
        if lr <= 0 or not 0 < alpha < 1:
            raise ValueError("RMSprop needs lr > 0 and 0 < alpha < 1")
        self.params, self.lr, self.alpha, self.eps, self.prefix = params, lr, alpha, eps, prefix
        self.v = {n: np.zeros_like(t.data) for n, t in params.items() if n.startswith(prefix)}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for n, g in grads.items():
            t = self.params[n]
            g = np.asarray(g, dtype=t.dtype)
            if g.shape != t.shape:
                raise ValueError(f"{n}: gradient shape {g.shape} != parameter shape {t.shape}")
            v = self.v[n]
            v *= self.alpha
            v += (1 - self.alpha) * g * g
            t.data = t.data - self.lr * g / (np.sqrt(v) + self.eps)


def rmsprop_step(theta: np.ndarray, g: np.ndarray, v: np.ndarray, lr: float, alpha: float = 0.99,
                 eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Functional single step; returns (new theta, new v)."""
    theta, g, v = (np.asarray(a, dtype=np.float64) for a in (theta, g, v))
    if g.shape != theta.shape or v.shape != theta.shape:
        raise ValueError("rmsprop_step: shape mismatch")
    v = alpha * v + (1 - alpha) * g * g
    return theta - lr * g / (np.sqrt(v) + eps), v


def ema_update(shadow, live, decay: float):
    """shadow <- decay shadow + (1 - decay) live, elementwise or over name->array dicts."""
    if isinstance(shadow, dict):
        for n, v in live.items():
            if shadow[n].shape != np.shape(v):
                raise ValueError(f"{n}: EMA shape mismatch")
            shadow[n] = decay * shadow[n] + (1 - decay) * np.asarray(v, dtype=shadow[n].dtype)
        return shadow
    return decay * np.asarray(shadow) + (1 - decay) * np.asarray(live)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_d: float = 1e-4
    lr_g: float = 5e-4
    r1_lambda: float = 10.0
    ema_decay: float = 0.999
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 500
    sample_every: int = 500
    log_every: int = 10
    dataset: str = ""

    def __post_init__(self):
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.ema_decay < 1:
            raise ValueError("EMA decay must lie in (0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch size must be positive and iterations nonnegative")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig | None = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.discriminator is None:
            self.discriminator = DiscriminatorConfig(resolution=self.generator.image_resolution)
        if self.discriminator.resolution != self.generator.image_resolution:
            raise ValueError("discriminator and generator resolutions differ")
        if self.sampling.shape_dim != self.generator.object_field.shape_dim or \
                self.sampling.appearance_dim != self.generator.object_field.appearance_dim:
            raise ValueError("sampling latent dims do not match the object field")

    def to_dict(self) -> dict:
        return {"train": asdict(self.train), "generator": self.generator.to_dict(),
                "discriminator": asdict(self.discriminator), "sampling": self.sampling.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"train", "generator", "discriminator", "sampling"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown run-config sections {sorted(extra)}")
        gen = GeneratorConfig.from_dict(d.get("generator", {}))
        samp = dict(d.get("sampling", {}))
        samp.setdefault("shape_dim", gen.object_field.shape_dim)
        samp.setdefault("appearance_dim", gen.object_field.appearance_dim)
        samp.setdefault("background_shape_dim", gen.background_field.shape_dim)
        samp.setdefault("background_appearance_dim", gen.background_field.appearance_dim)
        disc = d.get("discriminator")
        return cls(train=TrainConfig(**d.get("train", {})), generator=gen,
                   discriminator=DiscriminatorConfig(**disc) if disc is not None else None,
                   sampling=SamplingConfig.from_dict(samp))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def smoke_config(dataset: str = "dataset/clevr-2", iterations: int = 5000) -> RunConfig:
    """Reduced CPU configuration: 32 feature channels, 64-wide object field."""
    from .fields import FieldConfig
    from .neural_renderer import RendererConfig
    obj = FieldConfig(depth=8, hidden=64, feature_dim=32, shape_dim=64, appearance_dim=64)
    gen = GeneratorConfig(object_field=obj, renderer=RendererConfig(feature_dim=32),
                          n_samples=32, near=1.0, far=4.5)
    # D learns 5x faster than the full-size default so objects form within the short budget
    return RunConfig(train=TrainConfig(batch_size=16, lr_d=5e-4, iterations=iterations, checkpoint_every=250,
                                       sample_every=500, dataset=dataset),
                     generator=gen, discriminator=DiscriminatorConfig(64, 32, 256),
                     sampling=SamplingConfig.preset("clevr-2"))


# ---------------------------------------------------------------------------
# training


def _norm(grads: dict) -> float:
    return float(math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


class Trainer:
    """Owns generator, discriminator, optimisers, EMA shadow and all rng state."""

    METRICS = ["iteration", "d_loss", "g_loss", "r1", "d_real", "d_fake", "g_grad_norm", "d_grad_norm", "wall_clock"]

    def __init__(self, cfg: RunConfig, run_dir=None, data=None):
        self.cfg = cfg
        tc = cfg.train
        self.rng = np.random.default_rng(tc.seed)
        seeds = self.rng.integers(0, 2 ** 31, size=3)
        self.gen = Generator(cfg.generator, seed=int(seeds[0]), sampling=cfg.sampling)
        self.disc = Discriminator(cfg.discriminator, seed=int(seeds[1]), dtype=cfg.generator.dtype)
        self.gen.params.init_shadow()
        self.opt_g = RMSprop(self.gen.params, tc.lr_g, tc.rms_alpha, tc.rms_eps)
        self.opt_d = RMSprop(self.disc.params, tc.lr_d, tc.rms_alpha, tc.rms_eps)
        if data is None and tc.dataset:
            data = DatasetIterator(tc.dataset, tc.batch_size, np.random.default_rng(int(seeds[2])),
                                   dtype=np.dtype(cfg.generator.dtype))
        self.data = data
        self.iteration = 0
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self._t0 = time.time()
        self._elapsed = 0.0
        self.fixed_scenes = [sample_scene(cfg.sampling, np.random.default_rng(10_000 + i)) for i in range(16)]

    # -- single step ------------------------------------------------------
    def sample_fakes(self, n: int):
        scenes = [sample_scene(self.cfg.sampling, self.rng) for _ in range(n)]
        return scenes, self.gen(scenes, rng=self.rng, noise_rng=self.rng)

    def train_step(self, real: np.ndarray) -> dict:
        real = np.asarray(real, dtype=self.gen.dtype)
        try:
            _, fake = self.sample_fakes(real.shape[0])
            rep = self.d_phase(real, fake)
            rep.update(self.g_phase(fake))
        except NonFiniteError as exc:
            raise TrainingAbort(f"non-finite value at iteration {self.iteration + 1}: {exc}",
                                self._dump(str(exc))) from exc
        self.iteration += 1
        rep["iteration"] = self.iteration
        return rep

    def d_phase(self, real: np.ndarray, fake: Tensor) -> dict:
        """One discriminator update; fakes are detached and R1 is taken on the real batch."""
        tc = self.cfg.train
        x_real = Tensor(np.asarray(real, dtype=self.gen.dtype), requires_grad=True)
        d_real = self.disc(x_real)
        r1 = _r1_from(d_real, x_real, tc.r1_lambda) if tc.r1_lambda > 0 else Tensor(np.zeros((), self.gen.dtype))
        d_fake = self.disc(fake.detach())
        d_loss = ops.add(ops.add(ops.mean(ops.softplus(ops.neg(d_real))), ops.mean(ops.softplus(d_fake))), r1)
        self._check(d_loss, "discriminator loss")
        d_grads = dict(zip(self.disc.params, (g.data for g in grad(d_loss, self.disc.params.tensors()))))
        self._check_grads(d_grads, "discriminator")
        self.opt_d.step(d_grads)
        return {"d_loss": float(d_loss.item()), "r1": float(r1.item()), "d_real": float(d_real.data.mean()),
                "d_fake": float(d_fake.data.mean()), "d_grad_norm": _norm(d_grads)}

    def g_phase(self, fake: Tensor) -> dict:
        """One generator update through the current discriminator, then the EMA update."""
        tc = self.cfg.train
        g_loss = ops.mean(ops.softplus(ops.neg(self.disc(fake))))
        self._check(g_loss, "generator loss")
        g_grads = dict(zip(self.gen.params, (g.data for g in grad(g_loss, self.gen.params.tensors()))))
        self._check_grads(g_grads, "generator")
        self.opt_g.step(g_grads)
        ema_update(self.gen.params.shadow, {n: t.data for n, t in self.gen.params.items()}, tc.ema_decay)
        return {"g_loss": float(g_loss.item()), "g_grad_norm": _norm(g_grads)}

    def _check(self, t: Tensor, what: str):
        if not np.all(np.isfinite(t.data)):
            raise TrainingAbort(f"non-finite {what} at iteration {self.iteration + 1}", self._dump(what))

    def _check_grads(self, grads: dict, what: str):
        bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise TrainingAbort(f"non-finite {what} gradients in {bad[:3]} at iteration {self.iteration + 1}",
                                self._dump(f"{what} gradients", bad))

    def _dump(self, what, names=None):
        if self.run_dir is None:
            return None
        info = {"iteration": self.iteration + 1, "what": what, "bad": names or [],
                "param_norms": {n: float(np.linalg.norm(t.data)) for n, t in
                                list(self.gen.params.items()) + list(self.disc.params.items())}}
        path = self.run_dir / "abort.json"
        self.run_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(info, indent=1))
        return str(path)

    # -- loop -------------------------------------------------------------
    def train(self, iterations: int | None = None, progress=None) -> list[dict]:
        tc = self.cfg.train
        if self.data is None:
            raise ValueError("no dataset configured")
        target = tc.iterations if iterations is None else self.iteration + iterations
        reports = []
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            cfg_path = self.run_dir / "config.json"
            if not cfg_path.exists():
                cfg_path.write_text(json.dumps(self.cfg.to_dict(), indent=1))
        while self.iteration < target:
            start = time.time()
            rep = self.train_step(next(self.data))
            self._elapsed += time.time() - start
            rep["wall_clock"] = round(self._elapsed, 3)
            reports.append(rep)
            self._log(rep)
            if progress is not None:
                progress(rep)
            if self.run_dir is not None:
                if tc.checkpoint_every and self.iteration % tc.checkpoint_every == 0:
                    self.save(self.run_dir / "checkpoint.nsf")
                if tc.sample_every and self.iteration % tc.sample_every == 0:
                    self.save_samples(self.run_dir / "samples" / f"{self.iteration:06d}.png")
        if self.run_dir is not None:
            self.save(self.run_dir / "checkpoint.nsf")
        return reports

    def _log(self, rep):
        if self.run_dir is None:
            return
        path = self.run_dir / "metrics.csv"
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.METRICS, extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow(rep)

    def ema_generator(self) -> Generator:
        return self.gen.with_params(self.gen.params.swapped_to_shadow())

    def save_samples(self, path, n: int = 16):
        from PIL import Image
        gen = self.ema_generator()
        with no_grad():
            imgs = to_uint8(gen(self.fixed_scenes[:n]).data)
        side = int(math.ceil(math.sqrt(n)))
        H = imgs.shape[1]
        grid = np.zeros((side * H, side * H, 3), np.uint8)
        for k, im in enumerate(imgs):
            r, c = divmod(k, side)
            grid[r * H:(r + 1) * H, c * H:(c + 1) * H] = im
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(grid).save(path)

    # -- persistence ------------------------------------------------------
    def save(self, path) -> None:
        arrays = {}
        for n, t in self.gen.params.items():
            arrays[f"g/{n}"] = t.data
            arrays[f"ema/{n}"] = self.gen.params.shadow[n]
            arrays[f"opt_g/{n}"] = self.opt_g.v[n]
        for n, t in self.disc.params.items():
            arrays[f"d/{n}"] = t.data
            arrays[f"opt_d/{n}"] = self.opt_d.v[n]
        meta = {"iteration": self.iteration, "rng": self.rng.bit_generator.state,
                "data": self.data.state() if self.data is not None else None,
                "elapsed": self._elapsed, "config": self.cfg.to_dict()}
        save_checkpoint(path, arrays, meta)

    def load(self, path) -> None:
        arrays, meta = load_checkpoint(path)
        self.gen.params.load_state({n[2:]: a for n, a in arrays.items() if n.startswith("g/")})
        self.gen.params.shadow = {n[4:]: a.astype(self.gen.dtype) for n, a in arrays.items() if n.startswith("ema/")}
        self.disc.params.load_state({n[2:]: a for n, a in arrays.items() if n.startswith("d/")})
        self.opt_g.v = {n[6:]: a for n, a in arrays.items() if n.startswith("opt_g/")}
        self.opt_d.v = {n[6:]: a for n, a in arrays.items() if n.startswith("opt_d/")}
        self.iteration = int(meta["iteration"])
        self.rng.bit_generator.state = meta["rng"]
        self._elapsed = float(meta.get("elapsed", 0.0))
        if self.data is not None and meta.get("data"):
            self.data.load_state(meta["data"])

    @classmethod
    def resume(cls, run_dir, data=None) -> "Trainer":
        run_dir = Path(run_dir)
        _, meta = load_checkpoint(run_dir / "checkpoint.nsf")
        tr = cls(RunConfig.from_dict(meta["config"]), run_dir, data)
        tr.load(run_dir / "checkpoint.nsf")
        return tr


def load_generator(path, use_ema: bool = True) -> Generator:
    """Generator from a training checkpoint; EMA weights unless ``use_ema`` is False."""
    arrays, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    key = "ema/" if use_ema else "g/"
    gen = Generator(cfg.generator, sampling=cfg.sampling)
    gen.params.load_state({n[len(key):]: a for n, a in arrays.items() if n.startswith(key)})
    return gen
