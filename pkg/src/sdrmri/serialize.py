"""File formats: JSON schemas for phantoms/acquisitions/boxes, 16-bit
magnitude PNGs, detection JSON lines, CSV training logs, and the versioned
encoder blob. Complex arrays are stored as interleaved real/imaginary floats.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .detect import BoundingBox, Detection, MergedDetection
from .encoder import EncoderModel
from .mri import (AcquisitionData, CoilSensitivities, Ellipse, Lesion, PhantomSpec,
                  SamplingMask)

ACQUISITION_SCHEMA = "sdrmri/acquisition/v1"
PHANTOM_SCHEMA = "sdrmri/phantom/v1"
ENCODER_MAGIC = b"SDRENC01"
PNG_SCALE_KEY = "sdrmri_scale"


def complex_to_json(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.complex128)
    inter = np.empty(arr.size * 2)
    inter[0::2] = arr.real.ravel()
    inter[1::2] = arr.imag.ravel()
    return {"shape": list(arr.shape), "data": inter.tolist()}


def complex_from_json(obj: dict) -> np.ndarray:
    data = np.asarray(obj["data"], dtype=float)
    re, im = data[0::2], data[1::2]
    return (re + 1j * im).reshape(obj["shape"])


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True))


def save_acquisition(path, acq: AcquisitionData) -> None:
    _dump(path, {
        "schema": ACQUISITION_SCHEMA,
        "y": complex_to_json(acq.y),
        "mask": {
            "width": acq.mask.width,
            "columns": acq.mask.columns.astype(int).tolist(),
            "acceleration": acq.mask.acceleration,
            "acs_width": acq.mask.acs_width,
        },
        "sens": complex_to_json(acq.sens.maps),
    })


def load_acquisition(path) -> AcquisitionData:
    obj = json.loads(Path(path).read_text())
    if obj.get("schema") != ACQUISITION_SCHEMA:
        raise ValueError(f"not an acquisition file: {path}")
    m = obj["mask"]
    mask = SamplingMask(width=m["width"], columns=np.asarray(m["columns"], dtype=bool),
                        acceleration=m["acceleration"], acs_width=m["acs_width"])
    return AcquisitionData(y=complex_from_json(obj["y"]), mask=mask,
                           sens=CoilSensitivities(complex_from_json(obj["sens"])))


def save_phantom_spec(path, spec: PhantomSpec) -> None:
    _dump(path, {
        "schema": PHANTOM_SCHEMA,
        "height": spec.height,
        "width": spec.width,
        "seed": spec.seed,
        "texture_amp": spec.texture_amp,
        "ellipses": [{"center": list(e.center), "axes": list(e.axes),
                      "angle_deg": e.angle_deg, "intensity": e.intensity}
                     for e in spec.ellipses],
        "lesions": [{"shape": l.shape, "center": list(l.center), "radius": l.radius,
                     "contrast": l.contrast, "class_id": l.class_id}
                    for l in spec.lesions],
    })


def load_phantom_spec(path) -> PhantomSpec:
    obj = json.loads(Path(path).read_text())
    if obj.get("schema") != PHANTOM_SCHEMA:
        raise ValueError(f"not a phantom spec file: {path}")
    return PhantomSpec(
        height=obj["height"], width=obj["width"],
        ellipses=tuple(Ellipse(tuple(e["center"]), tuple(e["axes"]), e["angle_deg"],
                               e["intensity"]) for e in obj["ellipses"]),
        lesions=tuple(Lesion(l["shape"], tuple(l["center"]), l["radius"], l["contrast"],
                             l["class_id"]) for l in obj["lesions"]),
        seed=obj["seed"], texture_amp=obj["texture_amp"],
    )


def save_boxes(path, boxes: Sequence, classes: Sequence[int] | None = None) -> None:
    """Boxes (optionally with class ids) to JSON."""
    rows = []
    for k, box in enumerate(boxes):
        row = {"x_min": box.x_min, "y_min": box.y_min, "x_max": box.x_max, "y_max": box.y_max}
        if classes is not None:
            row["class_id"] = int(classes[k])
        rows.append(row)
    _dump(path, rows)


def load_boxes(path) -> list[BoundingBox]:
    rows = json.loads(Path(path).read_text())
    out = []
    for row in rows:
        if isinstance(row, dict):
            out.append(BoundingBox(row["x_min"], row["y_min"], row["x_max"], row["y_max"]))
        else:
            out.append(BoundingBox(*row[:4]))
    return out


def load_gt_boxes(path) -> list[tuple[BoundingBox, int]]:
    rows = json.loads(Path(path).read_text())
    return [(BoundingBox(r["x_min"], r["y_min"], r["x_max"], r["y_max"]),
             int(r.get("class_id", 0))) for r in rows]


def write_magnitude_png(path, image: np.ndarray, vmax: float | None = None) -> float:
    """Render |image| to a 16-bit grayscale PNG; returns the scale used.

    The scale (1.0 in PNG units == ``vmax`` in image units) is stored in a
    text chunk so ``read_magnitude_png`` can invert it.
    """
    mag = np.abs(np.asarray(image))
    if vmax is None:
        vmax = float(mag.max()) or 1.0
    quant = np.clip(mag / vmax, 0.0, 1.0)
    arr = np.round(quant * 65535).astype(np.uint16)
    info = PngInfo()
    info.add_text(PNG_SCALE_KEY, repr(float(vmax)))
    Image.fromarray(arr).save(path, format="PNG", pnginfo=info)
    return float(vmax)


def read_magnitude_png(path) -> tuple[np.ndarray, float]:
    """Load a 16-bit magnitude PNG back to float, undoing the stored scale."""
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=float)
        vmax = float(img.text.get(PNG_SCALE_KEY, "1.0")) if hasattr(img, "text") else 1.0
    return arr / 65535.0 * vmax, vmax


def write_detections_jsonl(path, detections: Sequence, recon_indices: Sequence[int] | None = None) -> None:
    lines = []
    for k, det in enumerate(detections):
        row = {
            "box": list(det.box.as_tuple()),
            "class_id": det.class_id,
            "score": det.score,
        }
        if isinstance(det, MergedDetection):
            row["per_recon_scores"] = list(det.per_recon_scores)
        if recon_indices is not None:
            row["recon_index"] = int(recon_indices[k])
        lines.append(json.dumps(row, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_detections_jsonl(path) -> list[Detection]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        out.append(Detection(BoundingBox(*row["box"]), int(row["class_id"]),
                             float(row["score"])))
    return out


def write_training_log_csv(path, log: Sequence[tuple[int, float]]) -> None:
    lines = ["step,objective"] + [f"{step},{obj!r}" for step, obj in log]
    Path(path).write_text("\n".join(lines) + "\n")


def save_reconstruction_set(out_dir, recon_set) -> list[str]:
    """Per-image 16-bit PNGs plus a provenance JSON for a diverse set."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vmax = max(float(np.abs(im).max()) for im in recon_set.images) or 1.0
    files = []
    for prov, image in zip(recon_set.provenance, recon_set.images):
        fname = f"recon_{prov.index:02d}.png"
        write_magnitude_png(out / fname, image, vmax=vmax)
        files.append(fname)
    p = recon_set.params
    provenance = {
        "schema": "sdrmri/reconstruction-set/v1",
        "params": {"n_rec": p.n_rec, "n_opt": p.n_opt, "step_size": p.step_size,
                   "init_sigma": p.init_sigma, "radius": p.radius, "seed": p.seed,
                   "sweep": p.sweep, "aggregate": p.aggregate,
                   "dc": {"cg_iters": p.dc.cg_iters, "cg_tol": p.dc.cg_tol,
                          "replacement": p.dc.replacement}},
        "boxes": [list(b.as_tuple()) for b in recon_set.boxes],
        "png_scale": vmax,
        "post_seed_mean_distance": recon_set.post_seed_mean_distance,
        "final_mean_distance": recon_set.final_mean_distance,
        "images": [{"file": fname, "index": prov.index,
                    "final_distance": prov.final_distance,
                    "consistency_residual": prov.residual,
                    "distance_to_initial": prov.ball_distance}
                   for fname, prov in zip(files, recon_set.provenance)],
    }
    (out / "provenance.json").write_text(json.dumps(provenance, sort_keys=True, indent=1))
    return files + ["provenance.json"]


def save_encoder(path, model: EncoderModel) -> None:
    """Versioned binary blob: magic, JSON header, then float64 parameters."""
    arrays = [("conv1_w", model.conv1_w), ("conv1_b", model.conv1_b),
              ("conv2_w", model.conv2_w), ("conv2_b", model.conv2_b),
              ("head_w", model.head_w)]
    header = {
        "version": 1,
        "variant": model.variant,
        "seed": model.seed,
        "pool_size": model.pool_size,
        "channels": model.channels,
        "feature_dim": model.feature_dim,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(ENCODER_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_encoder(path) -> EncoderModel:
    with open(path, "rb") as f:
        magic = f.read(len(ENCODER_MAGIC))
        if magic != ENCODER_MAGIC:
            raise ValueError(f"not an encoder blob: {path}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        if header.get("version") != 1:
            raise ValueError(f"unsupported encoder blob version {header.get('version')}")
        arrays = {}
        for meta in header["arrays"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape))
            buf = f.read(count * 8)
            arrays[meta["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return EncoderModel(arrays["conv1_w"], arrays["conv1_b"], arrays["conv2_w"],
                        arrays["conv2_b"], arrays["head_w"],
                        pool_size=header["pool_size"], variant=header["variant"],
                        seed=header["seed"])
