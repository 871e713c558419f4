"""HTTP JSON API around sessions, for the browser companion and scripting.

One in-flight step per session (409 on concurrent steps); read endpoints
serve immutable snapshots. Sessions live in memory; bundles move them in
and out. Configuration comes from a TOML/JSON file with SCENEMEM_PORT and
SCENEMEM_DATA_DIR environment overrides.
"""

from __future__ import annotations

import base64
import io
import json
import os
import sys
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, Response
from PIL import Image

from .frames import Frame
from .geometry import Intrinsics, Pose
from .pointcloud_io import encode_spcl
from .projection import Trajectory
from .scenes import SceneParams, SceneSpec, generate_scene
from .session import (CorruptBundleError, ModelClipGenerator, SessionConfig,
                      StepError, StepRequest, create_session, export_session,
                      import_session)
from .voxel_memory import EditOp


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8123
    data_dir: str = "./scenemem-data"


def load_service_config(path=None) -> ServiceConfig:
    """File config (TOML or JSON) with environment overrides."""
    cfg = ServiceConfig()
    if path is not None:
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            data = json.loads(text)
        else:
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            data = tomllib.loads(text)
        for key in ("host", "port", "data_dir"):
            if key in data:
                setattr(cfg, key, data[key])
    if os.environ.get("SCENEMEM_PORT"):
        cfg.port = int(os.environ["SCENEMEM_PORT"])
    if os.environ.get("SCENEMEM_DATA_DIR"):
        cfg.data_dir = os.environ["SCENEMEM_DATA_DIR"]
    return cfg


class SessionHandle:
    def __init__(self, session):
        self.session = session
        self.lock = threading.Lock()


def _decode_array(b64: str, dtype, shape) -> np.ndarray:
    raw = base64.b64decode(b64)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _session_config(payload: dict) -> SessionConfig:
    overrides = payload.get("config", {})
    base = SessionConfig().to_dict()
    retrieval = base.pop("retrieval")
    retrieval.update(overrides.pop("retrieval", {}))
    unknown = set(overrides) - set(base)
    if unknown:
        raise HTTPException(422, f"unknown config fields: {sorted(unknown)}")
    base.update(overrides)
    base["retrieval"] = retrieval
    return SessionConfig.from_dict(base)


def _build_generator(payload: dict, scene):
    spec = payload.get("generator", {"kind": "oracle"})
    kind = spec.get("kind", "oracle")
    if kind == "oracle":
        return None  # create_session defaults to the scene oracle
    if kind == "model":
        from .generator.training import load_model
        ckpt = spec.get("checkpoint")
        if not ckpt or not Path(ckpt).exists():
            raise HTTPException(422, "model generator needs a valid checkpoint path")
        return ModelClipGenerator(load_model(ckpt),
                                  sample_steps=spec.get("sample_steps", 20))
    raise HTTPException(422, f"unknown generator kind {kind!r}")


def create_app(service_config: ServiceConfig | None = None) -> FastAPI:
    app = FastAPI(title="scenemem", version="0.1.0")
    app.state.config = service_config or ServiceConfig()
    app.state.sessions = {}

    def handle(session_id: str) -> SessionHandle:
        h = app.state.sessions.get(session_id)
        if h is None:
            raise HTTPException(404, f"no session {session_id}")
        return h

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(app.state.sessions)}

    @app.post("/sessions")
    def create(payload: dict = Body(...)):
        cfg = _session_config(payload)
        if "scene" in payload:
            scene = SceneSpec.from_dict(payload["scene"])
        elif "scene_seed" in payload:
            params = payload.get("scene_params", {})
            scene = generate_scene(int(payload["scene_seed"]),
                                   SceneParams(**params))
        elif "image_b64" in payload:
            h, w = cfg.resolution, cfg.resolution
            rgb = _decode_array(payload["image_b64"], "<f4", (h, w, 3))
            depth = _decode_array(payload["depth_b64"], "<f4", (h, w)) \
                if "depth_b64" in payload else None
            mask = _decode_array(payload["mask_b64"], "u1", (h, w)).astype(bool) \
                if "mask_b64" in payload else None
            frame = Frame(rgb=rgb, pose=Pose.from_dict(payload["pose"]),
                          intrinsics=Intrinsics.from_dict(payload["intrinsics"])
                          if "intrinsics" in payload else cfg.intrinsics,
                          depth=depth, dynamic_mask=mask)
            try:
                session = create_session(frame, cfg,
                                         generator=_build_generator(payload, None))
            except ValueError as e:
                raise HTTPException(422, str(e))
            sid = uuid.uuid4().hex[:12]
            app.state.sessions[sid] = SessionHandle(session)
            return _summary(sid, session)
        else:
            raise HTTPException(422, "need 'scene', 'scene_seed' or 'image_b64'")
        try:
            session = create_session(scene, cfg,
                                     generator=_build_generator(payload, scene))
        except ValueError as e:
            raise HTTPException(422, str(e))
        sid = uuid.uuid4().hex[:12]
        app.state.sessions[sid] = SessionHandle(session)
        return _summary(sid, session)

    def _summary(sid: str, session) -> dict:
        return {
            "session_id": sid,
            "clip_index": session.clip_index,
            "archive_len": len(session.archive),
            "memory_cells": session.memory.cell_count,
            "clip_len": session.config.clip_len,
            "resolution": session.config.resolution,
            "initial_pose": session.archive[0].pose.to_dict(),
            "last_pose": session.archive[-1].pose.to_dict(),
            "intrinsics": session.config.intrinsics.to_dict(),
        }

    @app.get("/sessions/{session_id}")
    def info(session_id: str):
        return _summary(session_id, handle(session_id).session)

    @app.delete("/sessions/{session_id}")
    def delete(session_id: str):
        handle(session_id)
        del app.state.sessions[session_id]
        return {"deleted": session_id}

    @app.get("/sessions/{session_id}/memory")
    def memory(session_id: str):
        cloud = handle(session_id).session.memory_cloud()
        return Response(content=encode_spcl(cloud),
                        media_type="application/octet-stream")

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, payload: dict = Body(...)):
        h = handle(session_id)
        try:
            req = StepRequest.from_dict(payload)
        except (KeyError, ValueError, TypeError) as e:
            raise HTTPException(422, f"malformed step request: {e}")
        if not h.lock.acquire(blocking=False):
            raise HTTPException(409, "a step is already in flight for this session")
        try:
            h.session.step(req)
        except StepError as e:
            raise HTTPException(400, str(e))
        finally:
            h.lock.release()
        return _summary(session_id, h.session)

    @app.post("/sessions/{session_id}/edit")
    def edit(session_id: str, payload: dict = Body(...)):
        h = handle(session_id)
        try:
            op = EditOp.from_dict(payload)
        except (KeyError, ValueError, TypeError) as e:
            raise HTTPException(422, f"malformed edit: {e}")
        with h.lock:
            h.session.apply_edit(op)
        return _summary(session_id, h.session)

    @app.get("/sessions/{session_id}/clips/{k}")
    def clip(session_id: str, k: int, frame: int | None = Query(default=None)):
        session = handle(session_id).session
        try:
            frames = session.clip_frames(k)
        except IndexError as e:
            raise HTTPException(404, str(e))
        if frame is not None:
            if not (0 <= frame < len(frames)):
                raise HTTPException(404, f"frame {frame} out of range")
            buf = io.BytesIO()
            Image.fromarray((frames[frame].rgb * 255 + 0.5).astype(np.uint8)).save(
                buf, format="PNG")
            return Response(content=buf.getvalue(), media_type="image/png")
        out = []
        for f in frames:
            buf = io.BytesIO()
            Image.fromarray((f.rgb * 255 + 0.5).astype(np.uint8)).save(buf, format="PNG")
            out.append(base64.b64encode(buf.getvalue()).decode())
        return {"clip": k, "frames_png_b64": out}

    @app.get("/sessions/{session_id}/bundle")
    def get_bundle(session_id: str):
        blob = export_session(handle(session_id).session)
        return Response(content=blob, media_type="application/octet-stream")

    @app.put("/sessions/{session_id}/bundle")
    async def put_bundle(session_id: str, request_body: bytes = Body(...)):
        try:
            session = import_session(request_body)
        except CorruptBundleError as e:
            raise HTTPException(422, f"corrupt bundle: {e}")
        app.state.sessions[session_id] = SessionHandle(session)
        return _summary(session_id, session)

    @app.post("/trajectory/echo")
    def trajectory_echo(payload: dict = Body(...)):
        try:
            traj = Trajectory.from_dict(payload)
        except (KeyError, ValueError, TypeError) as e:
            raise HTTPException(422, f"malformed trajectory: {e}")
        return traj.to_dict()

    return app


def run_server(config: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="warning")
