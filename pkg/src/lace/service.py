"""HTTP/JSON front door for sessions, plus on-disk persistence.

The service is a thin adapter: every endpoint maps onto exactly one
orchestrator operation, so driving a session over HTTP or in-process produces
identical logs and digests. Commands for one session are serialized behind a
per-session lock; the event stream is a read-only view over the append-only
log with index-based resume, so reconnecting clients never lose frames.
"""

from __future__ import annotations

import argparse
import asyncio
import base64
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .layers import UnknownLayerError, save_stack
from .raster import Rgba, digest_hex, encode_png, pixel_digest
from .session import (
    ContractViolation,
    ReplayError,
    Session,
    SessionConfig,
    UnknownCandidateError,
    WorkflowKind,
    create_session,
    replay_jsonl,
)

DEFAULT_CANVAS = (512, 512)
STREAM_POLL_SECONDS = 0.02


class UnknownSessionError(KeyError):
    def __init__(self, session_id: str):
        self.session_id = session_id
        super().__init__(f"no session with id {session_id}")


@dataclass
class ServiceConfig:
    canvas: tuple[int, int] = DEFAULT_CANVAS
    cadence_ms: int = 2000
    tick_mode: str = "manual"  # "manual" | "wall"
    data_dir: Optional[Path] = None
    inline_images: bool = False
    persistence: float = 0.7


@dataclass
class SessionHandle:
    session: Session
    lock: threading.Lock = field(default_factory=threading.Lock)
    created_at: float = field(default_factory=time.time)
    wall_anchor: float = field(default_factory=time.monotonic)


class SessionRegistry:
    def __init__(self) -> None:
        self._handles: dict[str, SessionHandle] = {}
        self._lock = threading.Lock()

    def add(self, session: Session) -> SessionHandle:
        handle = SessionHandle(session)
        with self._lock:
            self._handles[session.id] = handle
        return handle

    def get(self, session_id: str) -> SessionHandle:
        try:
            return self._handles[session_id]
        except KeyError:
            raise UnknownSessionError(session_id) from None

    def all(self) -> list[SessionHandle]:
        with self._lock:
            return list(self._handles.values())


# -- request bodies ----------------------------------------------------------


class CreateSessionBody(BaseModel):
    workflow: str
    width: Optional[int] = None
    height: Optional[int] = None
    seed: int | str = "0"


class PromptBody(BaseModel):
    text: str


class WeightBody(BaseModel):
    w: float


class TickBody(BaseModel):
    now_ms: int


class BrushBody(BaseModel):
    x: int
    y: int
    radius: int
    color: list[int]


class FillBody(BaseModel):
    x0: int
    y0: int
    x1: int
    y1: int
    color: list[int]


class PropsBody(BaseModel):
    opacity: Optional[float] = None
    visible: Optional[bool] = None
    index: Optional[int] = None


class RateBody(BaseModel):
    measure: str
    score: int


def _parse_seed(seed: int | str) -> int:
    if isinstance(seed, str):
        return int(seed, 10)
    return seed


def _candidate_metadata(session: Session, candidate, inline: bool) -> dict:
    meta = {
        "id": candidate.id,
        "created_at": candidate.created_at,
        "cycle_mode": candidate.cycle_mode.value,
        "prompt": candidate.request.prompt,
        "seed": str(candidate.request.seed),
        "influence_weight": candidate.request.influence_weight,
        "conditioned_on_snapshot": candidate.request.snapshot is not None,
        "latent_digest": digest_hex(candidate.latent.digest()),
        "image_digest": digest_hex(pixel_digest(candidate.image)),
        "image_url": f"/candidates/{session.id}-{candidate.id}.png",
    }
    if inline:
        meta["image_b64"] = base64.b64encode(encode_png(candidate.image)).decode("ascii")
    return meta


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="lace", version="0.1.0")
    registry = SessionRegistry()
    app.state.registry = registry
    app.state.config = config

    # -- error mapping -------------------------------------------------------

    def error_response(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(UnknownSessionError)
    async def _unknown_session(request: Request, exc: UnknownSessionError):
        return error_response(404, "unknown_session", str(exc.args[0]) if exc.args else "unknown session")

    @app.exception_handler(UnknownCandidateError)
    async def _unknown_candidate(request: Request, exc: UnknownCandidateError):
        return error_response(404, "unknown_candidate", exc.args[0])

    @app.exception_handler(UnknownLayerError)
    async def _unknown_layer(request: Request, exc: UnknownLayerError):
        return error_response(404, "unknown_layer", exc.args[0])

    @app.exception_handler(ContractViolation)
    async def _contract(request: Request, exc: ContractViolation):
        return error_response(409, exc.code, str(exc))

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return error_response(400, "invalid_request", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        return error_response(400, "invalid_request", str(exc))

    # -- session lifecycle ----------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session_endpoint(body: CreateSessionBody):
        workflow = WorkflowKind(body.workflow)  # ValueError -> 400
        width = body.width or config.canvas[0]
        height = body.height or config.canvas[1]
        session = create_session(
            workflow,
            width,
            height,
            _parse_seed(body.seed),
            SessionConfig(cadence_ms=config.cadence_ms, persistence=config.persistence),
            session_id=uuid.uuid4().hex[:12],
        )
        handle = registry.add(session)
        return {
            "id": session.id,
            "workflow": session.workflow.value,
            "created_at": handle.created_at,
            "width": width,
            "height": height,
        }

    @app.post("/sessions/{sid}/prompt")
    def set_prompt(sid: str, body: PromptBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.set_prompt(body.text)
        return {}

    @app.post("/sessions/{sid}/weight")
    def set_weight(sid: str, body: WeightBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.set_weight(body.w)
        return {}

    @app.post("/sessions/{sid}/generate")
    def generate(sid: str):
        handle = registry.get(sid)
        with handle.lock:
            candidate = handle.session.turn_generate()
            return {
                "candidate_id": candidate.id,
                "latent_digest": digest_hex(candidate.latent.digest()),
                "image_digest": digest_hex(pixel_digest(candidate.image)),
                "image_url": f"/candidates/{sid}-{candidate.id}.png",
            }

    @app.post("/sessions/{sid}/parallel/start")
    def parallel_start(sid: str):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.start_parallel()
        return {}

    @app.post("/sessions/{sid}/parallel/stop")
    def parallel_stop(sid: str):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.stop_parallel()
        return {}

    @app.post("/sessions/{sid}/tick")
    def tick(sid: str, body: TickBody):
        handle = registry.get(sid)
        with handle.lock:
            produced = handle.session.tick(body.now_ms)
        return {"new_candidate_ids": [c.id for c in produced]}

    @app.get("/sessions/{sid}/candidates")
    def list_candidates(sid: str, inline: bool = False):
        handle = registry.get(sid)
        with handle.lock:
            session = handle.session
            include_inline = inline or config.inline_images
            return {
                "candidates": [
                    _candidate_metadata(session, c, include_inline) for c in session.cache
                ]
            }

    @app.get("/candidates/{token}.png")
    def candidate_png(token: str):
        sid, _, cid_text = token.rpartition("-")
        if not sid or not cid_text.isdigit():
            raise UnknownSessionError(token)
        handle = registry.get(sid)
        with handle.lock:
            candidate = handle.session.candidate(int(cid_text))
            return Response(content=encode_png(candidate.image), media_type="image/png")

    @app.post("/sessions/{sid}/import/{cid}")
    def import_candidate(sid: str, cid: int):
        handle = registry.get(sid)
        with handle.lock:
            layer_id = handle.session.import_candidate(cid)
        return {"layer_id": layer_id}

    @app.post("/sessions/{sid}/layers/{lid}/brush")
    def brush(sid: str, lid: int, body: BrushBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.brush(lid, body.x, body.y, body.radius, Rgba(*body.color))
        return {}

    @app.post("/sessions/{sid}/layers/{lid}/fill")
    def fill(sid: str, lid: int, body: FillBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.fill(lid, body.x0, body.y0, body.x1, body.y1, Rgba(*body.color))
        return {}

    @app.post("/sessions/{sid}/layers/{lid}/props")
    def layer_props(sid: str, lid: int, body: PropsBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.layer_props(lid, opacity=body.opacity, visible=body.visible, index=body.index)
        return {}

    @app.get("/sessions/{sid}/snapshot.png")
    def snapshot(sid: str):
        handle = registry.get(sid)
        with handle.lock:
            return Response(content=encode_png(handle.session.flatten()), media_type="image/png")

    @app.get("/sessions/{sid}/log")
    def event_log(sid: str):
        handle = registry.get(sid)
        with handle.lock:
            return PlainTextResponse(handle.session.to_jsonl(), media_type="application/x-ndjson")

    @app.post("/sessions/{sid}/rate")
    def rate(sid: str, body: RateBody):
        handle = registry.get(sid)
        with handle.lock:
            handle.session.record_rating(body.measure, body.score)
        return {}

    @app.get("/sessions/{sid}/events")
    async def events(sid: str, since: int = -1, limit: Optional[int] = None):
        handle = registry.get(sid)

        async def frames():
            cursor = since + 1
            sent = 0
            while True:
                log = handle.session.events  # append-only; reads are safe
                while cursor < len(log):
                    event = log[cursor]
                    yield f"id: {event.index}\nevent: {event.kind}\ndata: {event.to_json()}\n\n"
                    cursor += 1
                    sent += 1
                    if limit is not None and sent >= limit:
                        return
                await asyncio.sleep(STREAM_POLL_SECONDS)

        return StreamingResponse(
            frames(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    return app


# -- persistence --------------------------------------------------------------


def persist_session(session: Session, directory: Path) -> None:
    """Write a session to disk: event log, layer stack, and candidate cache.

    The log alone is sufficient to rebuild the session; PNGs are stored for
    direct inspection and cross-checking.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "log.jsonl").write_text(session.to_jsonl())
    state = {
        "id": session.id,
        "workflow": session.workflow.value,
        "width": session.canvas.width,
        "height": session.canvas.height,
        "seed": str(session.base_seed),
        "clock": session.clock,
        "cache_len": len(session.cache),
        "flatten_digest": session.flatten_digest(),
    }
    (directory / "state.json").write_text(json.dumps(state, indent=2))
    save_stack(session.canvas, directory / "layers")
    cache_dir = directory / "cache"
    cache_dir.mkdir(exist_ok=True)
    for candidate in session.cache:
        stem = f"candidate-{candidate.id:04d}"
        (cache_dir / f"{stem}.png").write_bytes(encode_png(candidate.image))
        request = candidate.request
        (cache_dir / f"{stem}.json").write_text(
            json.dumps(
                {
                    "id": candidate.id,
                    "created_at": candidate.created_at,
                    "cycle_mode": candidate.cycle_mode.value,
                    "prompt": request.prompt,
                    "seed": str(request.seed),
                    "influence_weight": request.influence_weight,
                    "snapshot_digest": digest_hex(pixel_digest(request.snapshot))
                    if request.snapshot
                    else None,
                    "has_prior": request.prior_latent is not None,
                    "latent": list(candidate.latent.components),
                    "latent_digest": digest_hex(candidate.latent.digest()),
                    "image_digest": digest_hex(pixel_digest(candidate.image)),
                },
                indent=2,
            )
        )


def load_session(directory: Path) -> Session:
    """Rebuild a session from its directory by replaying the event log.

    The replayed canvas must reproduce the stored flatten digest; stored PNGs
    are not consulted for state.
    """
    directory = Path(directory)
    state = json.loads((directory / "state.json").read_text())
    session = replay_jsonl((directory / "log.jsonl").read_text(), session_id=state["id"])
    digest = session.flatten_digest()
    if digest != state["flatten_digest"]:
        raise ReplayError(
            f"replayed flatten digest {digest} does not match stored {state['flatten_digest']}"
        )
    return session


def save_all_sessions(registry: SessionRegistry, data_dir: Path) -> list[Path]:
    saved = []
    for handle in registry.all():
        with handle.lock:
            path = Path(data_dir) / "sessions" / handle.session.id
            persist_session(handle.session, path)
            saved.append(path)
    return saved


def load_all_sessions(registry: SessionRegistry, data_dir: Path) -> int:
    sessions_dir = Path(data_dir) / "sessions"
    if not sessions_dir.is_dir():
        return 0
    count = 0
    for path in sorted(sessions_dir.iterdir()):
        if (path / "log.jsonl").is_file():
            registry.add(load_session(path))
            count += 1
    return count


# -- wall-clock ticking --------------------------------------------------------


class WallTicker:
    """Background thread mapping wall time onto per-session virtual clocks."""

    def __init__(self, registry: SessionRegistry, interval: float = 0.05):
        self.registry = registry
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            for handle in self.registry.all():
                with handle.lock:
                    session = handle.session
                    if not session.parallel_running:
                        continue
                    now = int((time.monotonic() - handle.wall_anchor) * 1000)
                    if now > session.clock:
                        session.tick(now)


# -- CLI ------------------------------------------------------------------------


def _parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {value!r}")
    return host, int(port)


def _parse_canvas(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lace-server", description="Run the lace session service.")
    parser.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 8080), metavar="HOST:PORT")
    parser.add_argument(
        "--data-dir",
        type=Path,
        default=os.environ.get("LACE_DATA_DIR"),
        help="session persistence directory (falls back to $LACE_DATA_DIR)",
    )
    parser.add_argument("--tick-mode", choices=("wall", "manual"), default="manual")
    parser.add_argument("--cadence-ms", type=int, default=2000)
    parser.add_argument("--canvas", type=_parse_canvas, default=DEFAULT_CANVAS, metavar="WxH")
    return parser


def main(argv: Optional[list[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    config = ServiceConfig(
        canvas=args.canvas,
        cadence_ms=args.cadence_ms,
        tick_mode=args.tick_mode,
        data_dir=Path(args.data_dir) if args.data_dir else None,
    )
    app = create_app(config)
    registry: SessionRegistry = app.state.registry

    if config.data_dir:
        loaded = load_all_sessions(registry, config.data_dir)
        if loaded:
            print(f"restored {loaded} session(s) from {config.data_dir}")

    ticker = WallTicker(registry) if config.tick_mode == "wall" else None
    if ticker:
        ticker.start()
    try:
        host, port = args.listen
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        if ticker:
            ticker.stop()
        if config.data_dir:
            save_all_sessions(registry, config.data_dir)


if __name__ == "__main__":
    main()
