"""HTTP inference service: register targets once, then animate or retarget.

Targets are registered by content hash; operator and encoder work happens at
registration so slider-driven /animate calls only run the decoder. One
checkpoint per process; the model never changes while serving.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from .checkpoint import load_checkpoint
from .mesh import Mesh, MeshError
from .model import ExpressionCloner, TargetEncoding
from .spectral import OperatorCache


class MeshPayload(BaseModel):
    vertices: list[float]  # flat xyz triples
    faces: list[int]       # flat index triples


class AnimateRequest(BaseModel):
    target_id: str
    code: list[float]


class RetargetRequest(BaseModel):
    target_id: str
    source: MeshPayload


def _payload_to_mesh(payload: MeshPayload) -> Mesh:
    if len(payload.vertices) % 3 != 0:
        raise HTTPException(422, detail="vertices length must be a multiple of 3")
    if len(payload.faces) % 3 != 0:
        raise HTTPException(422, detail="faces length must be a multiple of 3")
    vertices = np.asarray(payload.vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(payload.faces, dtype=np.int64).reshape(-1, 3)
    if not np.isfinite(vertices).all():
        raise HTTPException(422, detail="non-finite vertex coordinates")
    try:
        return Mesh(vertices, faces)
    except MeshError as exc:
        raise HTTPException(422, detail=str(exc)) from exc


def _mesh_digest(vertices: list[float]) -> str:
    return hashlib.sha256(repr(vertices).encode()).hexdigest()


class ServiceState:
    def __init__(self, model: ExpressionCloner, manifest: dict,
                 cache_dir: Optional[str] = None):
        self.model = model
        self.manifest = manifest
        self.checkpoint_digest: str = manifest.get("digest", "")
        meta = manifest.get("metadata", {})
        self.expression_names: list[str] = meta.get("expression_names", [])
        self.segment_names: list[str] = meta.get("segment_names", [])
        self.targets: dict[str, TargetEncoding] = {}
        self.last_target_id: Optional[str] = None
        self.op_cache = OperatorCache(cache_dir, max_memory_items=64)
        self.request_counts: dict[str, int] = {}

    def count(self, endpoint: str) -> None:
        self.request_counts[endpoint] = self.request_counts.get(endpoint, 0) + 1

    def get_target(self, target_id: Optional[str]) -> tuple[str, TargetEncoding]:
        if target_id is None:
            target_id = self.last_target_id
        if target_id is None or target_id not in self.targets:
            raise HTTPException(404, detail=f"unknown target_id {target_id!r}")
        return target_id, self.targets[target_id]


def create_app(
    checkpoint_path: str | Path | None = None,
    model: ExpressionCloner | None = None,
    manifest: dict | None = None,
    cache_dir: Optional[str] = None,
    torch_threads: int = 1,
) -> FastAPI:
    """Build the service around one checkpoint (path or preloaded model)."""
    if model is None:
        if checkpoint_path is None:
            raise ValueError("need a checkpoint path or a preloaded model")
        model, manifest = load_checkpoint(checkpoint_path)
    model.eval()
    # run-to-run identical float results for idempotent responses
    torch.set_num_threads(torch_threads)
    state = ServiceState(model, manifest or {}, cache_dir)

    app = FastAPI(title="faceclone inference service")
    app.state.service = state

    @app.get("/model/info")
    def model_info():
        state.count("model/info")
        cfg = state.model.config
        return {
            "code_dims": cfg.code_dim,
            "semantic_exp": cfg.semantic_exp,
            "semantic_id": cfg.semantic_id,
            "L": cfg.n_labels,
            "checkpoint_digest": state.checkpoint_digest,
        }

    @app.get("/expression/names")
    def expression_names():
        state.count("expression/names")
        return {"names": state.expression_names}

    @app.get("/rig/segments")
    def rig_segments(target_id: Optional[str] = Query(default=None)):
        state.count("rig/segments")
        tid, encoding = state.get_target(target_id)
        if encoding.field is None:
            raise HTTPException(404, detail="model was trained without a skinning encoder")
        labels = encoding.field.probabilities.argmax(dim=1).tolist()
        return {"target_id": tid, "labels": labels, "names": state.segment_names}

    @app.post("/target")
    def register_target(payload: MeshPayload):
        state.count("target")
        mesh = _payload_to_mesh(payload)
        target_id = mesh.content_hash()[:16]
        if target_id not in state.targets:
            with torch.no_grad():
                state.targets[target_id] = state.model.encode_target(mesh, state.op_cache)
        state.last_target_id = target_id
        return {
            "target_id": target_id,
            "n_vertices": mesh.n_vertices,
            "n_faces": mesh.n_faces,
        }

    def _animate(encoding: TargetEncoding, code: list[float], heat: bool) -> dict:
        try:
            z_ge = state.model.expand_code(np.asarray(code, dtype=np.float64))
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc)) from exc
        with torch.no_grad():
            displacement = state.model.displace(encoding, z_ge)
        deformed = encoding.mesh.vertices + displacement
        vertices = [float(v) for v in deformed.reshape(-1)]
        out = {
            "vertices": vertices,
            "faces": [int(i) for i in encoding.mesh.faces.reshape(-1)],
            "digest": _mesh_digest(vertices),
        }
        if heat:
            out["heat"] = [float(h) for h in np.linalg.norm(displacement, axis=1)]
        return out

    @app.post("/animate")
    def animate(request: AnimateRequest, heat: int = Query(default=0)):
        state.count("animate")
        _, encoding = state.get_target(request.target_id)
        return _animate(encoding, request.code, bool(heat))

    @app.post("/retarget")
    def retarget(request: RetargetRequest):
        state.count("retarget")
        tid, encoding = state.get_target(request.target_id)
        source = _payload_to_mesh(request.source)
        with torch.no_grad():
            code = state.model.encode_source(source, state.op_cache)
        code_list = [float(v) for v in code.values.double().numpy()]
        out = _animate(encoding, code_list, heat=False)
        out["code"] = code_list
        out["target_id"] = tid
        return out

    @app.post("/model/reload")
    def reload_model():
        state.count("model/reload")
        raise HTTPException(409, detail="checkpoint is immutable while serving; restart the process")

    @app.get("/stats")
    def stats():
        return {"request_counts": state.request_counts, "targets": sorted(state.targets)}

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():  # serve the editor bundle when it has been built
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
