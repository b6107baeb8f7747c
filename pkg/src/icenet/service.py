"""Session-oriented HTTP API for the interactive annotate-enhance loop.

Endpoints:
  POST   /sessions                 create from a PNG/JPEG (multipart field
                                   "image" or JSON {"image_base64": ...})
  GET    /sessions/{id}            session state
  DELETE /sessions/{id}            drop the session
  POST   /sessions/{id}/enhance    {"eta": float, "strokes": [...]}
  POST   /sessions/{id}/commit     {"eta": float} -> personalization store
  GET    /healthz

The model checkpoint is resolved from ICENET_CHECKPOINT when the module
app is used directly; the CLI `serve` command passes it explicitly.
"""

from __future__ import annotations

import base64
import binascii
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import imgops, model, personalization, pipeline

DEFAULT_MAX_SIDE = 4096
DEFAULT_PROFILE = "default"


class StrokePayload(BaseModel):
    polarity: str = Field(pattern="^(darken|brighten)$")
    points: list[tuple[float, float]] = Field(min_length=1)
    radius: int = Field(default=10, ge=1)

    def to_stroke(self) -> imgops.Stroke:
        return imgops.Stroke(self.polarity, tuple(self.points), self.radius)


class EnhanceRequest(BaseModel):
    eta: float
    strokes: list[StrokePayload] = Field(default_factory=list)


class CommitRequest(BaseModel):
    eta: float


@dataclass
class Session:
    id: str
    rgb: np.ndarray
    luma: np.ndarray
    profile: str
    created_at: float
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_annotation: dict | None = None
    last_output_png: bytes | None = None


@dataclass
class ServiceState:
    params: model.ModelParams | None
    checkpoint_path: str
    store_dir: Path
    max_side: int
    inference_dtype: type
    sessions: dict[str, Session] = field(default_factory=dict)
    registry_lock: threading.Lock = field(default_factory=threading.Lock)

    def store(self, profile: str) -> personalization.ObservationStore:
        return personalization.ObservationStore(self.store_dir / f"{profile}.tsv")


def _check_eta(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise HTTPException(422, f"eta must be in [0, 1], got {eta}")


def create_app(
    checkpoint: str | os.PathLike | None = None,
    store_dir: str | os.PathLike | None = None,
    max_side: int = DEFAULT_MAX_SIDE,
    inference_dtype=np.float32,
) -> FastAPI:
    params = model.load_checkpoint(checkpoint) if checkpoint else None
    state = ServiceState(
        params=params,
        checkpoint_path=str(checkpoint) if checkpoint else "",
        store_dir=Path(store_dir) if store_dir else Path("profiles"),
        max_side=max_side,
        inference_dtype=inference_dtype,
    )
    app = FastAPI(title="interactive contrast enhancement service")
    # Browser clients are served from a separate static origin.
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.enhancer = state

    def get_session(session_id: str) -> Session:
        with state.registry_lock:
            session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return session

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint": state.checkpoint_path}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        content_type = request.headers.get("content-type", "")
        profile = DEFAULT_PROFILE
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("image")
            if upload is None or not hasattr(upload, "read"):
                raise HTTPException(422, "missing multipart file field 'image'")
            payload = await upload.read()
            profile = str(form.get("profile") or DEFAULT_PROFILE)
        else:
            try:
                body = await request.json()
            except Exception:
                raise HTTPException(415, "expected multipart or JSON payload")
            encoded = body.get("image_base64") if isinstance(body, dict) else None
            if not encoded:
                raise HTTPException(422, "missing 'image_base64'")
            try:
                payload = base64.b64decode(encoded, validate=True)
            except (binascii.Error, ValueError):
                raise HTTPException(415, "image_base64 is not valid base64")
            profile = str(body.get("profile") or DEFAULT_PROFILE)
        try:
            rgb = imgops.decode_image(payload)
        except Exception:
            raise HTTPException(415, "payload is not a decodable PNG/JPEG image")
        height, width = rgb.shape[:2]
        if max(height, width) > state.max_side:
            raise HTTPException(
                413, f"image {width}x{height} exceeds the {state.max_side} px cap"
            )
        luma = imgops.rgb_to_luminance(rgb)
        eta_init, personalized = personalization.initial_eta(luma, state.store(profile))
        session = Session(
            id=uuid.uuid4().hex,
            rgb=rgb,
            luma=luma,
            profile=profile,
            created_at=time.time(),
        )
        with state.registry_lock:
            state.sessions[session.id] = session
        return {
            "id": session.id,
            "width": width,
            "height": height,
            "eta_init": eta_init,
            "personalized": personalized,
        }

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        session = get_session(session_id)
        return {
            "id": session.id,
            "width": session.rgb.shape[1],
            "height": session.rgb.shape[0],
            "profile": session.profile,
            "created_at": session.created_at,
            "last_annotation": session.last_annotation,
            "has_output": session.last_output_png is not None,
        }

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        with state.registry_lock:
            if state.sessions.pop(session_id, None) is None:
                raise HTTPException(404, f"unknown session {session_id}")
        return Response(status_code=204)

    @app.post("/sessions/{session_id}/enhance")
    def enhance(session_id: str, body: EnhanceRequest):
        session = get_session(session_id)
        _check_eta(body.eta)
        if state.params is None:
            raise HTTPException(503, "no checkpoint loaded")
        try:
            strokes = tuple(s.to_stroke() for s in body.strokes)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        with session.lock:
            result = pipeline.enhance_rgb(
                state.params, session.rgb, body.eta, strokes, dtype=state.inference_dtype
            )
            png = imgops.encode_png(result.image)
            session.last_annotation = body.model_dump()
            session.last_output_png = png
        return {
            "image_png_base64": base64.b64encode(png).decode("ascii"),
            "gamma": {
                "min": result.gamma_min,
                "mean": result.gamma_mean,
                "max": result.gamma_max,
            },
            "mean_luma": result.mean_luma,
        }

    @app.post("/sessions/{session_id}/commit")
    def commit(session_id: str, body: CommitRequest):
        session = get_session(session_id)
        _check_eta(body.eta)
        store = state.store(session.profile)
        count = store.append(personalization.mean_luminance(session.luma), body.eta)
        return {"m": count, "active": count >= personalization.MIN_OBSERVATIONS}

    return app


app = create_app(
    checkpoint=os.environ.get("ICENET_CHECKPOINT") or None,
    store_dir=os.environ.get("ICENET_STORE_DIR") or None,
)
