"""HTTP editing service: job submission, polling, exemplar upload, styles.

Jobs are asynchronous because sampling latency is unbounded: POST /v1/edits
persists and queues the request, a bounded worker pool executes it, and
clients poll GET /v1/edits/{id}. The sqlite-backed store survives restarts;
interrupted jobs are re-queued on startup.
"""

from __future__ import annotations

import io
import json
import os
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from fastapi import FastAPI, File, Form, Header, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image

from .backends import save_image
from .diffusion import EditingModel, GuidanceConfig, NoiseSchedule
from .errors import JobError, StyleBoothError
from .instructions import ExemplarRef, ScaleWeights, bind, parse_template
from .refinery import load_styles

QUEUED, RUNNING, DONE, FAILED = "QUEUED", "RUNNING", "DONE", "FAILED"
_TRANSITIONS = {QUEUED: {RUNNING}, RUNNING: {DONE, FAILED}, DONE: set(), FAILED: set()}


@dataclass
class ServiceConfig:
    data_dir: str
    max_image_bytes: int = 8 * 2**20
    workers: int = 1
    sample_steps: int = 8
    styles_path: str | None = None
    studio_dir: str | None = None  # static studio build to mount at /studio
    guidance: GuidanceConfig = field(default_factory=lambda: GuidanceConfig(1.5, 7.5, 0.5))

    def styles_file(self) -> str:
        if self.styles_path:
            return self.styles_path
        return str(resources.files("stylebooth") / "fixtures" / "styles.tsv")


# ---------------------------------------------------------------------------
# persistent job store
# ---------------------------------------------------------------------------

@dataclass
class Job:
    id: str
    status: str
    request: dict
    result: str | None
    error: str | None
    created: float
    updated: float


class JobStore:
    """sqlite-backed job records with enforced lifecycle transitions."""

    def __init__(self, path: str):
        self.path = path
        with self._conn() as conn:
            conn.execute(
                """CREATE TABLE IF NOT EXISTS jobs (
                    id TEXT PRIMARY KEY,
                    idempotency_key TEXT UNIQUE,
                    status TEXT NOT NULL,
                    request TEXT NOT NULL,
                    result TEXT,
                    error TEXT,
                    created REAL NOT NULL,
                    updated REAL NOT NULL
                )"""
            )

    def _conn(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=10.0)
        conn.row_factory = sqlite3.Row
        return conn

    def _job(self, row) -> Job:
        return Job(
            id=row["id"],
            status=row["status"],
            request=json.loads(row["request"]),
            result=row["result"],
            error=row["error"],
            created=row["created"],
            updated=row["updated"],
        )

    def create(self, request: dict, idempotency_key: str | None = None) -> tuple[str, bool]:
        """Insert a QUEUED job; a reused idempotency key returns the original."""
        job_id = uuid.uuid4().hex
        now = time.time()
        with self._conn() as conn:
            try:
                conn.execute(
                    "INSERT INTO jobs (id, idempotency_key, status, request, created, updated)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    (job_id, idempotency_key, QUEUED, json.dumps(request), now, now),
                )
                return job_id, True
            except sqlite3.IntegrityError:
                row = conn.execute(
                    "SELECT * FROM jobs WHERE idempotency_key = ?", (idempotency_key,)
                ).fetchone()
                return row["id"], False

    def get(self, job_id: str) -> Job | None:
        with self._conn() as conn:
            row = conn.execute("SELECT * FROM jobs WHERE id = ?", (job_id,)).fetchone()
        return self._job(row) if row else None

    def _transition(self, conn, job_id: str, new: str, **fields) -> None:
        row = conn.execute("SELECT status FROM jobs WHERE id = ?", (job_id,)).fetchone()
        if row is None:
            raise JobError(f"unknown job {job_id}")
        if new not in _TRANSITIONS[row["status"]]:
            raise JobError(f"illegal transition {row['status']} -> {new} for {job_id}")
        sets = ", ".join(["status = ?", "updated = ?"] + [f"{k} = ?" for k in fields])
        conn.execute(
            f"UPDATE jobs SET {sets} WHERE id = ?",
            (new, time.time(), *fields.values(), job_id),
        )

    def claim_next(self) -> Job | None:
        """Atomically move the oldest QUEUED job to RUNNING."""
        with self._conn() as conn:
            row = conn.execute(
                "SELECT * FROM jobs WHERE status = ? ORDER BY created LIMIT 1", (QUEUED,)
            ).fetchone()
            if row is None:
                return None
            self._transition(conn, row["id"], RUNNING)
        job = self.get(row["id"])
        assert job is not None
        return job

    def finish(self, job_id: str, result: str) -> None:
        with self._conn() as conn:
            self._transition(conn, job_id, DONE, result=result)

    def fail(self, job_id: str, error: str) -> None:
        with self._conn() as conn:
            self._transition(conn, job_id, FAILED, error=error)

    def requeue_interrupted(self) -> int:
        """Startup recovery: RUNNING jobs go back to QUEUED."""
        with self._conn() as conn:
            cur = conn.execute(
                "UPDATE jobs SET status = ?, updated = ? WHERE status = ?",
                (QUEUED, time.time(), RUNNING),
            )
            return cur.rowcount


# ---------------------------------------------------------------------------
# request validation and execution
# ---------------------------------------------------------------------------

def validate_request(payload: dict, exemplar_dir: str) -> dict:
    """Check template syntax, slot arity, weights, and exemplar existence.

    Raises StyleBoothError subclasses with slot diagnostics; the API layer maps
    them to 400 responses.
    """
    instruction = payload.get("instruction") or ""
    template = parse_template(instruction)
    styles = list(payload.get("styles") or [])
    exemplar_ids = list(payload.get("exemplar_ids") or [])
    alphas = payload.get("alphas") or None
    blend_weights = payload.get("blend_weights") or None

    missing = [
        e for e in exemplar_ids if not os.path.exists(os.path.join(exemplar_dir, f"{e}.png"))
    ]
    if missing:
        raise JobError(f"unknown exemplar id(s): {missing}")

    refs = [
        ExemplarRef(id=e, path=os.path.join(exemplar_dir, f"{e}.png")) for e in exemplar_ids
    ]
    weights = ScaleWeights(alphas=tuple(float(a) for a in alphas)) if alphas else None
    if blend_weights is not None:
        # blended exemplars share the instruction's single image slot
        if template.image_count != 1:
            raise JobError(
                f"blend_weights needs exactly one <image> slot, template has {template.image_count}"
            )
        if len(blend_weights) != len(exemplar_ids) or not exemplar_ids:
            raise JobError(
                f"blend_weights count {len(blend_weights)} must match exemplar count {len(exemplar_ids)}"
            )
        bind(template, styles=styles, exemplars=refs[:1], weights=weights)
    else:
        bind(template, styles=styles, exemplars=refs, weights=weights)

    return {
        "instruction": instruction,
        "styles": styles,
        "exemplar_ids": exemplar_ids,
        "alphas": list(alphas) if alphas else None,
        "blend_weights": list(blend_weights) if blend_weights else None,
        "s_image": float(payload.get("s_image", 1.5)),
        "s_text": float(payload.get("s_text", 7.5)),
        "rescale_phi": float(payload.get("rescale_phi", 0.5)),
        "seed": int(payload.get("seed", 0)),
    }


class EditRunner:
    """Executes one validated job request against the editing model."""

    def __init__(self, model: EditingModel, config: ServiceConfig):
        self.model = model
        self.config = config

    def __call__(self, job: Job) -> str:
        req = job.request
        original = np.asarray(
            Image.open(os.path.join(self.config.data_dir, "originals", f"{job.id}.png")).convert(
                "RGB"
            )
        )
        template = parse_template(req["instruction"])
        exemplar_dir = os.path.join(self.config.data_dir, "exemplars")
        refs = [
            ExemplarRef(id=e, path=os.path.join(exemplar_dir, f"{e}.png"))
            for e in req["exemplar_ids"]
        ]
        weights = (
            ScaleWeights(alphas=tuple(req["alphas"])) if req.get("alphas") else None
        )
        blend = None
        if req.get("blend_weights"):
            blend = (refs, list(req["blend_weights"]))
            refs = refs[:1]
        bound = bind(template, styles=req["styles"], exemplars=refs, weights=weights)
        cfg = GuidanceConfig(
            s_image=req["s_image"], s_text=req["s_text"], rescale_phi=req["rescale_phi"]
        )
        edited = self.model.sample_edit(
            original, bound, cfg, steps=self.config.sample_steps, seed=req["seed"], blend=blend
        )
        out_dir = os.path.join(self.config.data_dir, "results")
        os.makedirs(out_dir, exist_ok=True)
        return save_image(edited, os.path.join(out_dir, f"{job.id}.png"))


class Worker(threading.Thread):
    """Single worker loop over the queued jobs; one writer per job record."""

    def __init__(self, store: JobStore, runner, poll_interval: float = 0.02):
        super().__init__(daemon=True)
        self.store = store
        self.runner = runner
        self.poll_interval = poll_interval
        self._halt = threading.Event()

    def run(self) -> None:
        while not self._halt.is_set():
            job = self.store.claim_next()
            if job is None:
                self._halt.wait(self.poll_interval)
                continue
            try:
                result = self.runner(job)
                self.store.finish(job.id, result)
            except Exception as exc:
                self.store.fail(job.id, str(exc))

    def stop(self) -> None:
        self._halt.set()
        self.join(timeout=5.0)


# ---------------------------------------------------------------------------
# the app
# ---------------------------------------------------------------------------

def create_app(
    config: ServiceConfig,
    model: EditingModel | None = None,
    start_worker: bool = True,
) -> FastAPI:
    os.makedirs(config.data_dir, exist_ok=True)
    for sub in ("originals", "exemplars", "results"):
        os.makedirs(os.path.join(config.data_dir, sub), exist_ok=True)

    if model is None:
        model = EditingModel(schedule=NoiseSchedule.linear(num_steps=100), hidden=16)
    store = JobStore(os.path.join(config.data_dir, "jobs.db"))
    requeued = store.requeue_interrupted()
    if requeued:
        print(f"re-queued {requeued} interrupted job(s)")

    app = FastAPI(title="stylebooth", version="1")
    app.state.store = store
    app.state.config = config
    runner = EditRunner(model, config)
    workers = [Worker(store, runner) for _ in range(config.workers)] if start_worker else []
    for w in workers:
        w.start()
    app.state.workers = workers

    @app.exception_handler(StyleBoothError)
    async def _domain_error(request: Request, exc: StyleBoothError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def job_view(job: Job) -> dict:
        view = {
            "job_id": job.id,
            "status": job.status,
            "request": job.request,
            "created": job.created,
            "updated": job.updated,
        }
        if job.status == DONE:
            view["result_url"] = f"/v1/edits/{job.id}/result"
        if job.status == FAILED:
            view["error"] = job.error
        return view

    @app.post("/v1/edits", status_code=202)
    async def submit_edit(
        image: UploadFile = File(...),
        payload: str = Form(...),
        idempotency_key: str | None = Header(default=None, alias="Idempotency-Key"),
    ):
        data = await image.read()
        if len(data) > config.max_image_bytes:
            return JSONResponse(
                status_code=413,
                content={"detail": f"image exceeds {config.max_image_bytes} bytes"},
            )
        try:
            body = json.loads(payload)
        except json.JSONDecodeError as exc:
            return JSONResponse(status_code=400, content={"detail": f"payload not JSON: {exc}"})
        request = validate_request(body, os.path.join(config.data_dir, "exemplars"))
        try:
            decoded = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
        except Exception as exc:
            return JSONResponse(status_code=400, content={"detail": f"undecodable image: {exc}"})
        key = idempotency_key or body.get("idempotency_key")
        job_id, created = store.create(request, idempotency_key=key)
        if created:
            save_image(decoded, os.path.join(config.data_dir, "originals", f"{job_id}.png"))
        return {"job_id": job_id, "deduplicated": not created}

    @app.get("/v1/edits/{job_id}")
    async def get_edit(job_id: str):
        job = store.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown job {job_id}"})
        return job_view(job)

    @app.get("/v1/edits/{job_id}/result")
    async def get_result(job_id: str):
        job = store.get(job_id)
        if job is None or job.status != DONE or not job.result:
            return JSONResponse(status_code=404, content={"detail": "no result available"})
        return FileResponse(job.result, media_type="image/png")

    @app.post("/v1/exemplars", status_code=201)
    async def upload_exemplar(image: UploadFile = File(...)):
        data = await image.read()
        if len(data) > config.max_image_bytes:
            return JSONResponse(
                status_code=413,
                content={"detail": f"image exceeds {config.max_image_bytes} bytes"},
            )
        try:
            decoded = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
        except Exception as exc:
            return JSONResponse(status_code=400, content={"detail": f"undecodable image: {exc}"})
        exemplar_id = uuid.uuid4().hex
        save_image(decoded, os.path.join(config.data_dir, "exemplars", f"{exemplar_id}.png"))
        return {"exemplar_id": exemplar_id}

    @app.get("/v1/styles")
    async def get_styles():
        styles = load_styles(config.styles_file())
        return {
            "styles": [
                {"name": s.name, "prompt_format": s.expansion_format} for s in styles
            ]
        }

    if config.studio_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=config.studio_dir, html=True), name="studio")

    return app


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8321) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port)
