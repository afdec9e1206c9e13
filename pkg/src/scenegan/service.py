"""HTTP/WebSocket control service over a loaded generator.

Endpoints (all take an optional ``session`` query parameter, default
``"default"``)::

    GET  /state               session state JSON
    POST /edit                apply one edit, returns the new state; 400 on a bad edit
    GET  /render.png          current render; ?resolution= overrides without mutating
    GET  /alpha/{i}.png       alpha map of object i at the current resolution
    WS   /stream              binary PNG frames: the current render, then one per accepted edit
    POST /sessions            {"seed": int, "resolution": int} -> {"id": ...}

Each session serialises its edits and renders behind one lock; sessions are
independent of each other.
"""
from __future__ import annotations

import asyncio
import logging
import uuid
from dataclasses import dataclass, field

from fastapi import Body, FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response

from .edits import EditError, SessionState, apply_edit, feature_resolution_for, initial_state, png_bytes, render_image

log = logging.getLogger(__name__)


@dataclass
class Session:
    state: SessionState
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    subscribers: set = field(default_factory=set)


class RenderFailure(RuntimeError):
    def __init__(self, diagnostic_id: str, detail: str):
        super().__init__(detail)
        self.diagnostic_id = diagnostic_id


def create_app(gen, checkpoint_id: str = "", seed: int = 0, resolution: int | None = None) -> FastAPI:
    app = FastAPI(title="scene control service")
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions
    app.state.generator = gen

    def new_state(seed_, res_):
        st = initial_state(gen, seed_, res_, checkpoint_id)
        try:
            feature_resolution_for(gen, st.resolution)
        except EditError as exc:
            raise HTTPException(400, str(exc)) from exc
        return st

    sessions["default"] = Session(new_state(seed, resolution))

    def get(session: str) -> Session:
        if session not in sessions:
            raise HTTPException(404, f"unknown session {session!r}")
        return sessions[session]

    def _render(scene, res, active=None):
        try:
            return png_bytes(render_image(gen, scene, res, active))
        except EditError:
            raise
        except Exception as exc:  # reported to the client with an id to grep the log for
            diag = uuid.uuid4().hex[:12]
            log.exception("render failure %s", diag)
            raise RenderFailure(diag, f"{type(exc).__name__}: {exc}") from exc

    def _alpha(scene, res, i):
        try:
            return png_bytes(gen.entity_alpha(scene, i, res))
        except Exception as exc:
            diag = uuid.uuid4().hex[:12]
            log.exception("alpha failure %s", diag)
            raise RenderFailure(diag, f"{type(exc).__name__}: {exc}") from exc

    @app.exception_handler(RequestValidationError)
    async def _invalid(request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})

    @app.exception_handler(RenderFailure)
    async def _failure(request, exc: RenderFailure):
        return JSONResponse(status_code=500, content={"error": "render failed", "diagnostic_id": exc.diagnostic_id,
                                                      "detail": str(exc)})

    @app.post("/sessions")
    async def create_session(body: dict = Body(default={})):
        s, r = body.get("seed", seed), body.get("resolution", resolution)
        if not isinstance(s, int) or isinstance(s, bool) or (r is not None and not isinstance(r, int)):
            raise HTTPException(400, "seed and resolution must be integers")
        sid = uuid.uuid4().hex[:8]
        sessions[sid] = Session(new_state(s, r))
        return {"id": sid, "state": sessions[sid].state.to_dict()}

    @app.get("/state")
    async def state(session: str = "default"):
        return get(session).state.to_dict()

    @app.post("/edit")
    async def edit(body=Body(...), session: str = "default"):
        sess = get(session)
        async with sess.lock:
            try:
                new = apply_edit(sess.state, body)
                feature_resolution_for(gen, new.resolution)
            except EditError as exc:
                raise HTTPException(400, detail=str(exc)) from exc
            sess.state = new
            if sess.subscribers:
                frame = await run_in_threadpool(_render, new.scene, new.resolution)
                for q in list(sess.subscribers):
                    q.put_nowait(frame)
            return new.to_dict()

    @app.get("/render.png")
    async def render(session: str = "default", resolution: int | None = Query(default=None, ge=4, le=2048)):
        sess = get(session)
        async with sess.lock:
            st = sess.state
            res = resolution or st.resolution
            try:
                feature_resolution_for(gen, res)
            except EditError as exc:
                raise HTTPException(400, str(exc)) from exc
            data = await run_in_threadpool(_render, st.scene, res)
        return Response(data, media_type="image/png")

    @app.get("/alpha/{i}.png")
    async def alpha(i: int, session: str = "default", resolution: int | None = Query(default=None, ge=1, le=2048)):
        sess = get(session)
        async with sess.lock:
            st = sess.state
            if not 0 <= i < st.scene.n_objects:
                raise HTTPException(400, f"object index {i} out of range [0, {st.scene.n_objects})")
            data = await run_in_threadpool(_alpha, st.scene, resolution or st.resolution, i)
        return Response(data, media_type="image/png")

    @app.websocket("/stream")
    async def stream(ws: WebSocket, session: str = "default"):
        if session not in sessions:
            await ws.close(code=4404)
            return
        sess = sessions[session]
        await ws.accept()
        q: asyncio.Queue = asyncio.Queue()
        async with sess.lock:
            st = sess.state
            try:
                q.put_nowait(await run_in_threadpool(_render, st.scene, st.resolution))
            except RenderFailure as exc:
                await ws.send_json({"error": "render failed", "diagnostic_id": exc.diagnostic_id})
            sess.subscribers.add(q)
        # watch the socket too, so a client that leaves is noticed while no edits arrive
        recv = asyncio.ensure_future(ws.receive())
        try:
            while True:
                nxt = asyncio.ensure_future(q.get())
                done, _ = await asyncio.wait({nxt, recv}, return_when=asyncio.FIRST_COMPLETED)
                if nxt in done:
                    await ws.send_bytes(nxt.result())
                else:
                    nxt.cancel()
                if recv in done:
                    if recv.result()["type"] == "websocket.disconnect":
                        break
                    recv = asyncio.ensure_future(ws.receive())
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv.cancel()
            sess.subscribers.discard(q)

    return app
