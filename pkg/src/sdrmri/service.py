"""HTTP facade for the human-in-the-loop workflow: browse slices, post
suspect boxes, get back the diverse reconstruction set with detections.

Jobs run synchronously under a hard time budget; a small worker pool bounds
concurrent jobs (excess requests get 429). The dataset directory is produced
by `sdrmri gen-data`.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .detect import BoundingBox, matched_filter_detect, merge_detections
from .encoder import make_encoder
from .mri import lesion_template
from .sdr import SdrParams, diversity_matrix, sdr_generate
from .serialize import load_acquisition, load_gt_boxes, write_magnitude_png


class JobTimeout(Exception):
    def __init__(self, completed: int, total: int):
        super().__init__(f"budget exceeded after {completed}/{total} sweeps")
        self.completed = completed
        self.total = total


class BoxModel(BaseModel):
    x_min: float
    y_min: float
    x_max: float
    y_max: float


class SdrJobRequest(BaseModel):
    slice_id: str
    boxes: list[BoxModel]
    n_rec: int = 3
    n_opt: int = 50
    radius: float = 3.0
    seed: int = 0


@dataclass
class SliceRecord:
    slice_id: str
    acceleration: float
    acq: object
    baseline: np.ndarray
    gt_boxes: list
    vmax: float


def _png_b64(image: np.ndarray, vmax: float | None = None) -> str:
    buf = io.BytesIO()
    write_magnitude_png(buf, image, vmax=vmax)
    return base64.b64encode(buf.getvalue()).decode("ascii")


class Dataset:
    def __init__(self, data_dir):
        root = Path(data_dir)
        manifest = json.loads((root / "manifest.json").read_text())
        if manifest.get("schema") != "sdrmri/dataset/v1":
            raise ValueError(f"not a dataset directory: {data_dir}")
        self.image_size = manifest["image_size"]
        self.detector_threshold = manifest["detector_threshold"]
        self.templates = {0: [lesion_template("disc", manifest["disc_radius"])],
                          1: [lesion_template("ring", manifest["ring_radius"])]}
        self.slices: dict[str, SliceRecord] = {}
        self.order: list[str] = []
        for entry in manifest["slices"]:
            sdir = root / "slices" / entry["slice_id"]
            acq = load_acquisition(sdir / "acq.json")
            from .serialize import complex_from_json

            baseline = complex_from_json(json.loads((sdir / "baseline.json").read_text()))
            gt = load_gt_boxes(sdir / "gt_boxes.json")
            rec = SliceRecord(slice_id=entry["slice_id"],
                              acceleration=entry["acceleration"], acq=acq,
                              baseline=baseline, gt_boxes=gt,
                              vmax=float(np.abs(baseline).max()))
            self.slices[rec.slice_id] = rec
            self.order.append(rec.slice_id)


def create_app(data_dir, demo_mode: bool = False, max_jobs: int = 2,
               time_budget_s: float = 30.0, n_rec_limit: int = 8,
               n_opt_limit: int = 200, ui_dir: str | None = None) -> FastAPI:
    dataset = Dataset(data_dir)
    encoder = make_encoder(seed=0)
    job_slots = threading.Semaphore(max_jobs)

    app = FastAPI(title="sdrmri service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/slices")
    def list_slices():
        out = []
        for sid in dataset.order:
            rec = dataset.slices[sid]
            thumb = np.abs(rec.baseline)[::4, ::4]
            out.append({"slice_id": sid, "acceleration": rec.acceleration,
                        "thumbnail": _png_b64(thumb, vmax=rec.vmax)})
        return out

    @app.get("/slice/{slice_id}")
    def get_slice(slice_id: str):
        rec = dataset.slices.get(slice_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown slice {slice_id!r}")
        body = {
            "slice_id": slice_id,
            "acceleration": rec.acceleration,
            "image_size": dataset.image_size,
            "image": _png_b64(rec.baseline, vmax=rec.vmax),
        }
        if demo_mode:
            body["gt_boxes"] = [{"x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max,
                                 "y_max": b.y_max, "class_id": c} for b, c in rec.gt_boxes]
        return body

    @app.post("/sdr")
    def run_sdr(req: SdrJobRequest):
        rec = dataset.slices.get(req.slice_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown slice {req.slice_id!r}")
        if not req.boxes:
            raise HTTPException(status_code=422, detail="box list is empty")
        if not 2 <= req.n_rec <= n_rec_limit:
            raise HTTPException(status_code=422,
                                detail=f"n_rec must lie in [2, {n_rec_limit}]")
        if not 0 <= req.n_opt <= n_opt_limit:
            raise HTTPException(status_code=422,
                                detail=f"n_opt must lie in [0, {n_opt_limit}]")
        if not 0 < req.radius <= 10:
            raise HTTPException(status_code=422, detail="radius must lie in (0, 10]")
        size = dataset.image_size
        bad = []
        boxes = []
        for k, bm in enumerate(req.boxes):
            if not (bm.x_min < bm.x_max and bm.y_min < bm.y_max
                    and bm.x_min >= 0 and bm.y_min >= 0
                    and bm.x_max <= size and bm.y_max <= size):
                bad.append({"index": k, "box": bm.model_dump()})
            else:
                boxes.append(BoundingBox(bm.x_min, bm.y_min, bm.x_max, bm.y_max))
        if bad:
            raise HTTPException(status_code=422,
                                detail={"message": "invalid boxes", "boxes": bad})

        if not job_slots.acquire(blocking=False):
            raise HTTPException(status_code=429, detail="all SDR workers are busy")
        try:
            t0 = time.perf_counter()
            deadline = t0 + time_budget_s

            def watchdog(done, total):
                if time.perf_counter() > deadline:
                    raise JobTimeout(done, total)

            params = SdrParams(n_rec=req.n_rec, n_opt=req.n_opt, radius=req.radius,
                               seed=req.seed)
            try:
                recon_set = sdr_generate(rec.acq, rec.baseline, encoder, boxes, params,
                                         progress=watchdog)
            except JobTimeout as t:
                raise HTTPException(status_code=408, detail={
                    "message": "time budget exceeded",
                    "completed_sweeps": t.completed, "total_sweeps": t.total})
            dmat = diversity_matrix(recon_set, encoder)
            per_rec = [matched_filter_detect(im, dataset.templates,
                                             dataset.detector_threshold)
                       for im in recon_set.images]
            merged = merge_detections(per_rec, recon_set.n_rec)
            return {
                "slice_id": req.slice_id,
                "reconstructions": [{
                    "png_base64": _png_b64(im, vmax=rec.vmax),
                    "residual": prov.residual,
                    "distance_to_initial": prov.ball_distance,
                } for im, prov in zip(recon_set.images, recon_set.provenance)],
                "diversity_matrix": dmat.tolist(),
                "merged_detections": [{
                    "box": list(m.box.as_tuple()), "class_id": m.class_id,
                    "score": m.score, "per_recon_scores": list(m.per_recon_scores),
                } for m in merged],
                "timing": {"seconds": time.perf_counter() - t0},
            }
        finally:
            job_slots.release()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/app", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
