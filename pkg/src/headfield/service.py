"""HTTP/JSON editing service over a frozen checkpoint.

Endpoints:
    GET  /api/regions                  topology, anchors, symmetry pairs
    GET  /api/identities               stored identity labels
    GET  /api/latent-stats             latent table statistics
    POST /api/edits                    base + override ops -> edit id
    POST /api/fit                      multipart PLY -> async job id
    POST /api/mesh                     identity/edit + expression -> async job id
    GET  /api/jobs/{id}                job state
    GET  /api/meshes/{id}              OBJ text (non-JSON payload)
    GET  /api/meshes/{id}/displacement JSON sidecar (edit baselines only)

Long operations run on a bounded worker pool; results are polled via the job
endpoints. Identical edit bodies hash to the same edit id, so replaying an op
list reproduces the same resource. The checkpoint is never mutated.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional

import numpy as np
import torch
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from . import editing, fitting
from .meshio import obj_text, parse_ply
from .model import extract_mesh
from .training import Checkpoint

DEFAULT_MESH_RESOLUTION = 64


# ---------------------------------------------------------------------------
# Request / response schemas
# ---------------------------------------------------------------------------

class EditOp(BaseModel):
    region: int
    mode: str = Field(pattern="^(sample|swap|reset)$")
    source_id: Optional[str] = None
    scale: Optional[float] = 1.0
    seed: Optional[int] = 0


class EditRequest(BaseModel):
    base: str
    ops: List[EditOp] = []
    id: Optional[str] = None      # explicit id for idempotent creation


class MeshRequest(BaseModel):
    identity: Optional[str] = None
    edit: Optional[str] = None
    expression: Optional[List[float]] = None
    resolution: int = DEFAULT_MESH_RESOLUTION


@dataclass
class Job:
    id: str
    kind: str                      # fit | mesh | edit-mesh
    state: str = "queued"          # queued | running | done | failed
    result: Optional[dict] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "state": self.state,
                "result": self.result, "error": self.error}


class JobStore:
    def __init__(self):
        self._jobs: Dict[str, Job] = {}
        self._lock = threading.Lock()

    def create(self, kind: str) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def update(self, job_id: str, **fields) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if job.state == "done":
                return              # done jobs are immutable
            for k, v in fields.items():
                setattr(job, k, v)


def _error(status: int, code: str, message: str):
    raise HTTPException(status_code=status, detail={"code": code, "message": message})


def create_app(ckpt: Checkpoint, workers: int = 2) -> FastAPI:
    ckpt.model.eval()
    for p in ckpt.model.parameters():
        p.requires_grad_(False)

    app = FastAPI(title="headfield edit service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    pool = ThreadPoolExecutor(max_workers=workers)
    jobs = JobStore()
    edits: Dict[str, dict] = {}
    edits_lock = threading.Lock()
    meshes: Dict[str, dict] = {}
    meshes_lock = threading.Lock()

    d_expr = ckpt.config.d_expr

    def anchors_for(z) -> np.ndarray:
        with torch.no_grad():
            emb = ckpt.model.effective_embeddings(z)
            return ckpt.model.regress_landmarks(emb).cpu().numpy()

    def mean_latent() -> torch.Tensor:
        if ckpt.stats is not None:
            return torch.from_numpy(ckpt.stats.id_mean).float()
        return ckpt.identity_table.mean(0)

    def resolve_identity(label: str) -> torch.Tensor:
        if label in ckpt.identity_labels:
            return ckpt.identity_latent(label)
        _error(404, "unknown_identity", f"identity {label!r} not in checkpoint")

    def resolve_subject(req: MeshRequest):
        """(latent or EditedIdentity, edit id or None) for a mesh request."""
        if (req.identity is None) == (req.edit is None):
            _error(422, "invalid_subject", "specify exactly one of identity, edit")
        if req.identity is not None:
            return resolve_identity(req.identity), None
        with edits_lock:
            entry = edits.get(req.edit)
        if entry is None:
            _error(404, "unknown_edit", f"edit {req.edit!r} not found")
        return entry["edited"], req.edit

    def expression_tensor(values: Optional[List[float]]) -> torch.Tensor:
        if values is None:
            return torch.zeros(d_expr)
        if len(values) != d_expr:
            _error(422, "invalid_expression", f"expression code needs {d_expr} values")
        return torch.tensor(values, dtype=torch.float32)

    # -- read endpoints -------------------------------------------------------

    @app.get("/api/regions")
    def regions():
        topo = ckpt.topology
        return {
            "names": topo.names,
            "pairs": [list(p) for p in topo.pairs],
            "midline": topo.midline,
            "anchors": anchors_for(mean_latent()).tolist(),
            "sigma": ckpt.config.sigma,
        }

    @app.get("/api/identities")
    def identities():
        return {"identities": [{"id": label, "index": i}
                               for i, label in enumerate(ckpt.identity_labels)]}

    @app.get("/api/latent-stats")
    def latent_stats():
        if ckpt.stats is None:
            _error(404, "no_stats", "checkpoint has no latent statistics")
        return ckpt.stats.to_dict()

    # -- edits ------------------------------------------------------------------

    def apply_ops(base_label: str, ops: List[EditOp]) -> editing.EditedIdentity:
        z = resolve_identity(base_label)
        edited = editing.EditedIdentity(z)
        for op in ops:
            if not 0 <= op.region < ckpt.model.num_regions:
                _error(404, "unknown_region", f"region {op.region} out of range")
            if op.mode == "sample":
                if ckpt.stats is None:
                    _error(422, "no_stats", "sampling needs latent statistics")
                edited = editing.sample_region(
                    edited, [op.region], ckpt.stats, float(op.scale or 0.0),
                    seed=int(op.seed or 0), mirror_symmetric=True,
                    topology=ckpt.topology)
            elif op.mode == "swap":
                if not op.source_id:
                    _error(422, "missing_source", "swap op needs source_id")
                src = resolve_identity(op.source_id)
                edited = editing.swap_regions(ckpt.model, edited, src, [op.region])
            else:   # reset
                edited.overrides.pop(op.region, None)
        return edited

    @app.post("/api/edits")
    def create_edit(req: EditRequest):
        payload = json.dumps({"base": req.base,
                              "ops": [op.model_dump() for op in req.ops]},
                             sort_keys=True)
        edit_id = req.id or ("edit-" + hashlib.sha256(payload.encode()).hexdigest()[:12])
        edited = apply_ops(req.base, req.ops)
        with edits_lock:
            existing = edits.get(edit_id)
            if existing is not None:
                if existing["payload"] != payload:
                    _error(409, "edit_conflict",
                           f"edit {edit_id!r} already exists with different content")
                return {"id": edit_id}
            edits[edit_id] = {"payload": payload, "base": req.base, "edited": edited}
        return {"id": edit_id}

    # -- async jobs ---------------------------------------------------------------

    def run_fit(job_id: str, cloud, iters: int, seed: int):
        jobs.update(job_id, state="running")
        try:
            result = fitting.fit(cloud, ckpt, fitting.FitOptions(iters=iters, seed=seed))
            jobs.update(job_id, state="done", result=json.loads(result.to_json()))
        except Exception as exc:
            jobs.update(job_id, state="failed", error=str(exc))

    def run_mesh(job_id: str, subject, edit_id, z_exp: torch.Tensor, resolution: int):
        jobs.update(job_id, state="running")
        try:
            mesh = extract_mesh(ckpt.model, subject, z_exp, resolution=resolution)
            if mesh.is_empty:
                jobs.update(job_id, state="failed", error="empty mesh (no zero crossing)")
                return
            displacement = None
            if edit_id is not None:
                with edits_lock:
                    base_label = edits[edit_id]["base"]
                base_mesh = extract_mesh(ckpt.model, resolve_identity(base_label),
                                         z_exp, resolution=resolution)
                if not base_mesh.is_empty:
                    displacement = editing.displacement_map(mesh, base_mesh).tolist()
            with meshes_lock:
                meshes[job_id] = {"obj": obj_text(mesh), "displacement": displacement,
                                  "vertices": len(mesh.vertices), "faces": len(mesh.faces)}
            jobs.update(job_id, state="done",
                        result={"mesh": f"/api/meshes/{job_id}",
                                "vertices": len(mesh.vertices), "faces": len(mesh.faces),
                                "has_displacement": displacement is not None})
        except Exception as exc:
            jobs.update(job_id, state="failed", error=str(exc))

    @app.post("/api/fit")
    async def post_fit(scan: UploadFile = File(...), iters: int = Form(200),
                       seed: int = Form(0)):
        raw = await scan.read()
        try:
            cloud = parse_ply(raw, name=scan.filename or "upload")
        except ValueError as exc:
            _error(422, "invalid_ply", str(exc))
        job = jobs.create("fit")
        pool.submit(run_fit, job.id, cloud, iters, seed)
        return {"job": job.id}

    @app.post("/api/mesh")
    def post_mesh(req: MeshRequest):
        subject, edit_id = resolve_subject(req)
        z_exp = expression_tensor(req.expression)
        if not 8 <= req.resolution <= 256:
            _error(422, "invalid_resolution", "resolution must be in [8, 256]")
        job = jobs.create("edit-mesh" if edit_id is not None else "mesh")
        pool.submit(run_mesh, job.id, subject, edit_id, z_exp, req.resolution)
        return {"job": job.id}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            _error(404, "unknown_job", f"job {job_id!r} not found")
        return job.as_dict()

    @app.get("/api/meshes/{job_id}")
    def get_mesh(job_id: str):
        with meshes_lock:
            entry = meshes.get(job_id)
        if entry is None:
            _error(404, "unknown_mesh", f"mesh {job_id!r} not found")
        headers = {}
        if entry["displacement"] is not None:
            headers["X-Displacement-Sidecar"] = f"/api/meshes/{job_id}/displacement"
        return PlainTextResponse(entry["obj"], headers=headers)

    @app.get("/api/meshes/{job_id}/displacement")
    def get_displacement(job_id: str):
        with meshes_lock:
            entry = meshes.get(job_id)
        if entry is None or entry["displacement"] is None:
            _error(404, "no_displacement", f"mesh {job_id!r} has no displacement sidecar")
        return JSONResponse(entry["displacement"])

    @app.exception_handler(HTTPException)
    async def handle_http_error(_, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else \
            {"code": "error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    return app
