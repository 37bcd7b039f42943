"""HTTP+JSON API for blind-test sessions.

POST /sessions, GET /sessions/{id}/items, GET /items/{id}/image,
POST /items/{id}/answer, GET /sessions/{id}/report. Sessions persist as one
JSON file each; answers for a session are serialized by a per-session lock.
An optional shared token (env DEINKER_BLINDTEST_TOKEN) gates every route.
"""

from __future__ import annotations

import mimetypes
import threading
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .blindtest import (
    BlindSession,
    SessionStore,
    create_session,
    record_answer,
    session_report,
    wire_items,
)
from .errors import (
    ConfigError,
    ConflictError,
    DeinkerError,
    IncompleteSessionError,
    InputError,
    NotFoundError,
)

TOKEN_ENV = "DEINKER_BLINDTEST_TOKEN"
PATCH_GLOB = ("*.png", "*.bmp", "*.tif", "*.tiff")


def list_pool(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    files: list[Path] = []
    for pattern in PATCH_GLOB:
        files.extend(directory.glob(pattern))
    return sorted(files)


class CreateSessionRequest(BaseModel):
    n: int = 100
    patch_size: int = 500
    seed: int | None = None


class AnswerRequest(BaseModel):
    answer: str


class ServiceState:
    def __init__(self, clean_dir, corrected_dir, data_dir, token: str | None):
        self.clean_pool = list_pool(clean_dir)
        self.corrected_pool = list_pool(corrected_dir)
        self.store = SessionStore(data_dir)
        self.token = token
        self.sessions: dict[str, BlindSession] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.registry_lock = threading.Lock()

    def lock_for(self, session_id: str) -> threading.Lock:
        with self.registry_lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def get_session(self, session_id: str) -> BlindSession:
        with self.registry_lock:
            if session_id in self.sessions:
                return self.sessions[session_id]
        session = self.store.load(session_id)  # NotFoundError -> 404
        with self.registry_lock:
            return self.sessions.setdefault(session_id, session)

    def session_for_item(self, item_id: str) -> BlindSession:
        session_id, _, _ = item_id.rpartition("-")
        if not session_id:
            raise NotFoundError(f"malformed item id {item_id!r}")
        return self.get_session(session_id)


def _http_error(exc: DeinkerError) -> HTTPException:
    if isinstance(exc, NotFoundError):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, ConflictError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, IncompleteSessionError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, (InputError, ConfigError)):
        return HTTPException(status_code=400, detail=str(exc))
    return HTTPException(status_code=500, detail=str(exc))


def create_app(
    clean_dir: str | Path,
    corrected_dir: str | Path,
    data_dir: str | Path,
    token: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    state = ServiceState(clean_dir, corrected_dir, data_dir, token)
    app = FastAPI(title="deinker blind test", version="1")
    app.state.service = state

    def check_token(x_auth_token: str | None):
        if state.token and x_auth_token != state.token:
            raise HTTPException(status_code=401, detail="missing or invalid token")

    @app.post("/sessions")
    def post_session(body: CreateSessionRequest, x_auth_token: str | None = Header(default=None)):
        check_token(x_auth_token)
        if body.seed is None:
            import secrets

            seed = secrets.randbits(32)
        else:
            seed = body.seed
        try:
            session = create_session(
                state.clean_pool, state.corrected_pool, n=body.n, patch_size=body.patch_size, seed=seed
            )
        except DeinkerError as exc:
            raise _http_error(exc)
        with state.registry_lock:
            state.sessions[session.session_id] = session
        state.store.save(session)
        return {"session_id": session.session_id, "n": session.n}

    @app.get("/sessions/{session_id}/items")
    def get_items(session_id: str, x_auth_token: str | None = Header(default=None)):
        check_token(x_auth_token)
        try:
            return wire_items(state.get_session(session_id))
        except DeinkerError as exc:
            raise _http_error(exc)

    @app.get("/items/{item_id}/image")
    def get_image(item_id: str, x_auth_token: str | None = Header(default=None)):
        check_token(x_auth_token)
        try:
            session = state.session_for_item(item_id)
            item = session.find(item_id)
        except DeinkerError as exc:
            raise _http_error(exc)
        path = Path(item.path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"patch file missing: {path.name}")
        media = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media)

    @app.post("/items/{item_id}/answer")
    def post_answer(item_id: str, body: AnswerRequest, x_auth_token: str | None = Header(default=None)):
        check_token(x_auth_token)
        try:
            session = state.session_for_item(item_id)
        except DeinkerError as exc:
            raise _http_error(exc)
        with state.lock_for(session.session_id):
            try:
                record_answer(session, item_id, body.answer)
            except DeinkerError as exc:
                raise _http_error(exc)
            state.store.save(session)
            return {
                "recorded": True,
                "answered_count": session.answered_count(),
                "complete": session.is_complete(),
            }

    @app.get("/sessions/{session_id}/report")
    def get_report(
        session_id: str, partial: bool = False, x_auth_token: str | None = Header(default=None)
    ):
        check_token(x_auth_token)
        try:
            session = state.get_session(session_id)
            return session_report(session, allow_partial=partial)
        except DeinkerError as exc:
            raise _http_error(exc)

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
