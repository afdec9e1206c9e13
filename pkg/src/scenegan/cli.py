"""Command-line entry point: ``scenegan {train,render,generate-data,serve,check}``.

Exit codes: 0 success, 1 a failed check or aborted run, 2 invalid input
(config, dataset, checkpoint or edit script).

``SCENEGAN_THREADS`` caps the BLAS thread pool; it must be read before
numpy loads, so this module defers every numpy-importing import.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_threads = os.environ.get("SCENEGAN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)


class UsageError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _load_generator(path, live=False):
    from .training import load_generator
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_generator(path, use_ema=not live)
    except (KeyError, ValueError, OSError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .training import RunConfig, Trainer, TrainingAbort
    raw = _read_json(args.config, "config")
    try:
        cfg = RunConfig.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from None
    if args.dataset:
        cfg.train.dataset = args.dataset
    manifest = Path(cfg.train.dataset) / "manifest.json"
    if not cfg.train.dataset or not manifest.exists():
        raise UsageError(f"dataset not found: {cfg.train.dataset!r} has no manifest.json")
    run_dir = Path(args.run_dir or Path("runs") / Path(args.config).stem)
    if args.resume and (run_dir / "checkpoint.nsf").exists():
        tr = Trainer.resume(run_dir)
        print(f"resumed {run_dir} at iteration {tr.iteration}")
    else:
        tr = Trainer(cfg, run_dir)

    def progress(rep):
        if rep["iteration"] % args.log_every == 0:
            print(f"it {rep['iteration']:6d}  d {rep['d_loss']:.4f}  g {rep['g_loss']:.4f}  r1 {rep['r1']:.4f}",
                  flush=True)
    try:
        tr.train(args.iterations, progress=progress)
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    print(f"run directory: {run_dir}")
    return 0


def _script_parts(raw):
    """Accept a bare step list or {"seed", "resolution", "scene", "steps"}."""
    if isinstance(raw, list):
        return {"steps": raw}
    if isinstance(raw, dict) and isinstance(raw.get("steps"), list):
        return raw
    raise UsageError("edit script must be a list of steps or an object with a 'steps' list")


def cmd_render(args) -> int:
    import numpy as np
    from PIL import Image

    from .edits import (EditError, SessionState, disentanglement_grid, feature_resolution_for, initial_state,
                        run_script)
    from .neural_renderer import to_uint8
    from .scene import SceneSample

    gen = _load_generator(args.checkpoint, args.live)
    parts = _script_parts(_read_json(args.script, "edit script")) if args.script else {"steps": []}
    seed = args.seed if args.seed is not None else parts.get("seed", 0)
    res = args.resolution or parts.get("resolution")
    state = initial_state(gen, seed, res, str(args.checkpoint))
    if parts.get("scene"):
        try:
            state = SessionState(SceneSample.from_dict(parts["scene"]), state.resolution, state.checkpoint_id)
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"invalid scene in script: {exc}") from None
    try:
        feature_resolution_for(gen, state.resolution)
        states = run_script(state, parts["steps"]) or [state]
        for st in states:
            feature_resolution_for(gen, st.resolution)
    except EditError as exc:
        raise UsageError(f"invalid edit: {exc}") from None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    from .edits import render_state
    for k, st in enumerate(states):
        Image.fromarray(to_uint8(render_state(gen, st))).save(out / f"frame_{k:04d}.png")
        if args.alpha:
            for i in range(st.scene.n_objects):
                a = gen.entity_alpha(st.scene, i, st.resolution)
                Image.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)).save(
                    out / f"alpha_{k:04d}_obj{i}.png")
    if args.alpha:
        pick = sorted({round(x) for x in np.linspace(0, len(states) - 1, min(len(states), 8))})
        grid = disentanglement_grid(gen, [states[k].scene for k in pick], states[0].resolution)
        Image.fromarray(to_uint8(grid)).save(out / "disentanglement.png")
    (out / "states.json").write_text(json.dumps([s.to_dict() for s in states]))
    print(f"wrote {len(states)} frames to {out}")
    return 0


def cmd_generate_data(args) -> int:
    from .data import SynthConfig, generate_dataset
    try:
        cfg = SynthConfig.preset(args.preset, resolution=args.resolution)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    generate_dataset(cfg, args.n, args.seed, args.root)
    print(f"wrote {args.n} images to {Path(args.root) / cfg.name}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    gen = _load_generator(args.checkpoint, args.live)
    app = create_app(gen, checkpoint_id=str(args.checkpoint), seed=args.seed, resolution=args.resolution)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks
    return 0 if run_checks() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenegan", description="Compositional generative feature-field scenes.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a run config JSON")
    t.add_argument("--config", required=True)
    t.add_argument("--run-dir")
    t.add_argument("--dataset", help="override the config's dataset directory")
    t.add_argument("--iterations", type=int, help="iterations to run now (default: the config's total)")
    t.add_argument("--resume", action="store_true", help="continue from <run-dir>/checkpoint.nsf if present")
    t.add_argument("--log-every", type=int, default=10)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render an edit script to a PNG sequence")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--script", help="JSON edit script; omitted renders the initial scene")
    r.add_argument("--output", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--resolution", type=int, help="image resolution")
    r.add_argument("--alpha", action="store_true", help="export per-object alpha maps and the layout grid")
    r.add_argument("--live", action="store_true", help="use live instead of averaged generator weights")
    r.set_defaults(fn=cmd_render)

    g = sub.add_parser("generate-data", help="ray-trace a synthetic primitive dataset")
    g.add_argument("--preset", default="clevr-2")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--root", default="dataset")
    g.set_defaults(fn=cmd_generate_data)

    s = sub.add_parser("serve", help="HTTP/WebSocket control service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int)
    s.add_argument("--live", action="store_true")
    s.set_defaults(fn=cmd_serve)

    c = sub.add_parser("check", help="run the quick invariant suite")
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
