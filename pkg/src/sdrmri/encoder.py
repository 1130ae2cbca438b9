"""Differentiable ROI feature encoder.

A small convolutional backbone (two 3x3 layers, tanh, reflect padding) feeds
a per-box head (bilinear ROI-align to a PxP grid, then a linear map). All
gradients — with respect to the image and, for robust fine-tuning, the
backbone parameters — are hand-written reverse-mode passes; the test suite
checks every path against central finite differences.

The backbone consumes real magnitude images. Complex images enter through a
smoothed magnitude map sqrt(re^2 + im^2 + eps^2), differentiable at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .detect import BoundingBox
from .errors import NumericFailure
from .mri import validate_image

MAGNITUDE_EPS = 1e-8

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")


def smooth_magnitude(x: np.ndarray, eps: float = MAGNITUDE_EPS) -> np.ndarray:
    """|z| smoothed as sqrt(re^2 + im^2 + eps^2)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.sqrt(x.real**2 + x.imag**2 + eps**2)
    return np.sqrt(x.astype(float) ** 2 + eps**2)


def _magnitude_backward(g_mag: np.ndarray, x: np.ndarray, eps: float = MAGNITUDE_EPS) -> np.ndarray:
    m = smooth_magnitude(x, eps)
    return (g_mag * x.real / m) + 1j * (g_mag * x.imag / m)


def _reflect_pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")


def _fold_reflect(gp: np.ndarray) -> np.ndarray:
    """Adjoint of width-1 reflect padding: fold border gradients back in."""
    g = gp[:, 1:-1, 1:-1].copy()
    g[:, 1, :] += gp[:, 0, 1:-1]
    g[:, -2, :] += gp[:, -1, 1:-1]
    g[:, :, 1] += gp[:, 1:-1, 0]
    g[:, :, -2] += gp[:, 1:-1, -1]
    g[:, 1, 1] += gp[:, 0, 0]
    g[:, 1, -2] += gp[:, 0, -1]
    g[:, -2, 1] += gp[:, -1, 0]
    g[:, -2, -2] += gp[:, -1, -1]
    return g


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = _reflect_pad(x)
    out = np.zeros((cout, h * wd))
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy : dy + h, dx : dx + wd].reshape(cin, -1)
            out += w[:, :, dy, dx] @ patch
    return out.reshape(cout, h, wd) + b[:, None, None]


def _conv3x3_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = _reflect_pad(x)
    gflat = g.reshape(cout, -1)
    g_w = np.zeros_like(w)
    g_xp = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy : dy + h, dx : dx + wd].reshape(cin, -1)
            g_w[:, :, dy, dx] = gflat @ patch.T
            g_xp[:, dy : dy + h, dx : dx + wd] += (w[:, :, dy, dx].T @ gflat).reshape(cin, h, wd)
    return _fold_reflect(g_xp), g_w, g.sum(axis=(1, 2))


@dataclass(frozen=True)
class EncoderModel:
    """Backbone + box-head parameters.

    ``reference-fixed`` models have a random orthonormal-row head and are the
    reproducible default for the diversity loop; ``trainable`` models may be
    robust-fine-tuned.
    """

    conv1_w: np.ndarray  # (C, 1, 3, 3)
    conv1_b: np.ndarray  # (C,)
    conv2_w: np.ndarray  # (C, C, 3, 3)
    conv2_b: np.ndarray  # (C,)
    head_w: np.ndarray   # (D, C * P * P)
    pool_size: int = 7
    variant: str = "reference-fixed"
    seed: int = 0

    def __post_init__(self):
        for name in (*PARAM_NAMES, "head_w"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if self.variant not in ("reference-fixed", "trainable"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.head_w.shape[1] != self.channels * self.pool_size**2:
            raise ValueError("head width does not match backbone channels and pool size")
        if self.variant == "reference-fixed":
            gram = self.head_w @ self.head_w.T
            if not np.allclose(gram, np.eye(self.feature_dim), atol=1e-8):
                raise ValueError("reference-fixed head must have orthonormal rows")

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.head_w.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def make_encoder(channels: int = 8, pool_size: int = 7, feature_dim: int = 64,
                 seed: int = 0, variant: str = "reference-fixed") -> EncoderModel:
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 0.5, (channels, 1, 3, 3))
    b1 = rng.normal(0.0, 0.1, channels)
    w2 = rng.normal(0.0, 0.2, (channels, channels, 3, 3))
    b2 = rng.normal(0.0, 0.1, channels)
    k = channels * pool_size * pool_size
    if feature_dim > k:
        raise ValueError("feature_dim cannot exceed channels * pool_size^2")
    q, _ = np.linalg.qr(rng.normal(size=(k, feature_dim)))
    return EncoderModel(w1, b1, w2, b2, q.T, pool_size=pool_size, variant=variant, seed=seed)


def _backbone_forward(params: dict[str, np.ndarray], mag: np.ndarray):
    x0 = np.asarray(mag, dtype=float)[None]
    z1 = _conv3x3(x0, params["conv1_w"], params["conv1_b"])
    a1 = np.tanh(z1)
    z2 = _conv3x3(a1, params["conv2_w"], params["conv2_b"])
    a2 = np.tanh(z2)
    return a2, (x0, a1, a2)


def _backbone_backward(params: dict[str, np.ndarray], cache, g_a2: np.ndarray,
                       with_params: bool = False):
    x0, a1, a2 = cache
    g_z2 = g_a2 * (1.0 - a2 * a2)
    g_a1, g_w2, g_b2 = _conv3x3_backward(g_z2, a1, params["conv2_w"])
    g_z1 = g_a1 * (1.0 - a1 * a1)
    g_x0, g_w1, g_b1 = _conv3x3_backward(g_z1, x0, params["conv1_w"])
    if with_params:
        return g_x0[0], {"conv1_w": g_w1, "conv1_b": g_b1, "conv2_w": g_w2, "conv2_b": g_b2}
    return g_x0[0]


def backbone_features(model: EncoderModel, mag: np.ndarray) -> np.ndarray:
    """Feature map of a real magnitude image, shape (C, H, W)."""
    a2, _ = _backbone_forward(model.params(), mag)
    return a2


def _axis_samples(lo: float, extent: float, pool: int, size: int):
    coords = lo + (np.arange(pool) + 0.5) * extent / pool
    t = np.clip(coords - 0.5, 0.0, size - 1.0)
    i0 = np.minimum(np.floor(t).astype(int), size - 2)
    return i0, t - i0


def _roi_align_stack(fmap: np.ndarray, box: BoundingBox, pool: int) -> np.ndarray:
    _, h, w = fmap.shape
    iy, fy = _axis_samples(box.y_min, box.height, pool, h)
    ix, fx = _axis_samples(box.x_min, box.width, pool, w)
    wy, wx = fy[:, None], fx[None, :]
    return (fmap[:, iy[:, None], ix[None, :]] * (1 - wy) * (1 - wx)
            + fmap[:, iy[:, None], ix[None, :] + 1] * (1 - wy) * wx
            + fmap[:, iy[:, None] + 1, ix[None, :]] * wy * (1 - wx)
            + fmap[:, iy[:, None] + 1, ix[None, :] + 1] * wy * wx)


def _roi_scatter_stack(g_grid: np.ndarray, box: BoundingBox, pool: int,
                       shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = shape
    iy, fy = _axis_samples(box.y_min, box.height, pool, h)
    ix, fx = _axis_samples(box.x_min, box.width, pool, w)
    wy, wx = fy[:, None], fx[None, :]
    out = np.zeros(shape)
    flat = out.reshape(c, -1)
    cidx = np.arange(c)[:, None]
    for dy, wyv in ((0, 1 - wy), (1, wy)):
        for dx, wxv in ((0, 1 - wx), (1, wx)):
            idx = ((iy[:, None] + dy) * w + (ix[None, :] + dx)).ravel()
            np.add.at(flat, (cidx, idx[None, :]), (g_grid * (wyv * wxv)).reshape(c, -1))
    return out


def roi_align(img: np.ndarray, box: BoundingBox, pool_size: int = 7) -> np.ndarray:
    """Bilinear sampling of a real image at a PxP grid inside the box."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("roi_align expects a 2-D image")
    h, w = img.shape
    if not box.inside(w, h):
        raise ValueError(f"box {box.as_tuple()} extends outside the image")
    return _roi_align_stack(img[None], box, pool_size)[0]


def roi_align_backward(g_grid: np.ndarray, box: BoundingBox, image_shape: tuple[int, int],
                       pool_size: int = 7) -> np.ndarray:
    """Adjoint of roi_align: scatter a PxP gradient back to image pixels."""
    h, w = image_shape
    return _roi_scatter_stack(np.asarray(g_grid, dtype=float)[None], box, pool_size, (1, h, w))[0]


@dataclass(frozen=True)
class BoxFeatures:
    features: np.ndarray  # (n_boxes, D)
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2 or f.shape[0] != len(self.boxes):
            raise ValueError("need one feature vector per box")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", f)


def _check_boxes(model: EncoderModel, shape: tuple[int, int], boxes: Sequence[BoundingBox]):
    if not boxes:
        raise ValueError("box list is empty")
    h, w = shape
    for k, box in enumerate(boxes):
        if not box.inside(w, h):
            raise ValueError(f"box {k} {box.as_tuple()} extends outside the {h}x{w} image")


# Crop margin around a box for the per-box backbone pass. Must exceed the
# receptive field (2 px for two 3x3 convs) plus the 1 px bilinear halo, so the
# cropped feature map matches the full-image computation wherever the ROI
# samples it, and so the backward fold at non-border crop edges only touches
# zero gradients.
_CROP_MARGIN = 8


def _crop_window(box: BoundingBox, shape: tuple[int, int]) -> tuple[int, int, int, int]:
    h, w = shape
    y0 = max(0, int(np.floor(box.y_min)) - _CROP_MARGIN)
    y1 = min(h, int(np.ceil(box.y_max)) + _CROP_MARGIN)
    x0 = max(0, int(np.floor(box.x_min)) - _CROP_MARGIN)
    x1 = min(w, int(np.ceil(box.x_max)) + _CROP_MARGIN)
    return y0, y1, x0, x1


def _shift_box(box: BoundingBox, x0: int, y0: int) -> BoundingBox:
    return BoundingBox(box.x_min - x0, box.y_min - y0, box.x_max - x0, box.y_max - y0)


def _box_passes(params: dict[str, np.ndarray], model: EncoderModel, mag: np.ndarray,
                boxes: Sequence[BoundingBox]):
    """Per-box cropped backbone passes: (features, crop window, cache, grid box)."""
    passes = []
    for box in boxes:
        win = _crop_window(box, mag.shape)
        y0, y1, x0, x1 = win
        a2, cache = _backbone_forward(params, mag[y0:y1, x0:x1])
        local = _shift_box(box, x0, y0)
        grid = _roi_align_stack(a2, local, model.pool_size)
        passes.append((model.head_w @ grid.ravel(), win, cache, local))
    return passes


def encode_boxes(model: EncoderModel, x: np.ndarray, boxes: Sequence[BoundingBox]) -> BoxFeatures:
    """Per-box feature vectors: magnitude -> backbone -> ROI-align -> linear head.

    The backbone runs on a crop around each box; the crop margin exceeds the
    receptive field, so the result equals the full-image computation.
    """
    x = validate_image(x)
    _check_boxes(model, x.shape, boxes)
    mag = smooth_magnitude(x)
    passes = _box_passes(model.params(), model, mag, boxes)
    return BoxFeatures(np.stack([p[0] for p in passes]), tuple(boxes))


def feature_distance(a: BoxFeatures, b: BoxFeatures, aggregate: str = "sum") -> float:
    """Semantic distance between two reconstructions' box features.

    ``sum`` adds per-box l2 norms (the default); ``concat`` takes a single
    norm over the concatenated feature vectors.
    """
    if a.boxes != b.boxes:
        raise ValueError("box lists differ")
    diffs = a.features - b.features
    if aggregate == "sum":
        return float(np.linalg.norm(diffs, axis=1).sum())
    if aggregate == "concat":
        return float(np.linalg.norm(diffs))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def distance_gradient(model: EncoderModel, x_i: np.ndarray, others: Sequence[BoxFeatures],
                      boxes: Sequence[BoundingBox], aggregate: str = "sum") -> np.ndarray:
    """Gradient (image-shaped, complex) of sum_j d(x_i, x_j) with respect to x_i.

    Boxes whose per-term distance is exactly zero contribute the zero
    subgradient. The real/imaginary parts of the result are the partial
    derivatives with respect to the image's real/imaginary parts.
    """
    if not others:
        raise ValueError("need at least one other feature set")
    x_i = validate_image(x_i)
    _check_boxes(model, x_i.shape, boxes)
    boxes = tuple(boxes)
    params = model.params()
    mag = smooth_magnitude(x_i)
    passes = _box_passes(params, model, mag, boxes)
    feats = np.stack([p[0] for p in passes])

    g_feat = np.zeros_like(feats)
    for other in others:
        if other.boxes != boxes:
            raise ValueError("feature sets were computed on a different box list")
        diffs = feats - other.features
        if aggregate == "sum":
            norms = np.linalg.norm(diffs, axis=1)
            nz = norms > 0
            g_feat[nz] += diffs[nz] / norms[nz, None]
        elif aggregate == "concat":
            total = np.linalg.norm(diffs)
            if total > 0:
                g_feat += diffs / total
        else:
            raise ValueError(f"unknown aggregate {aggregate!r}")

    g_mag = np.zeros(mag.shape)
    for k, (_feat, win, cache, local) in enumerate(passes):
        y0, y1, x0, x1 = win
        a2 = cache[2]
        g_grid = (model.head_w.T @ g_feat[k]).reshape(a2.shape[0], model.pool_size, model.pool_size)
        g_a2 = _roi_scatter_stack(g_grid, local, model.pool_size, a2.shape)
        g_mag[y0:y1, x0:x1] += _backbone_backward(params, cache, g_a2)
    return _magnitude_backward(g_mag, x_i)


@dataclass(frozen=True)
class RobustTrainConfig:
    """Adversarial fine-tuning settings (desk-scale defaults)."""

    perturbation_budget: float = 0.5
    inner_pgd_steps: int = 5
    inner_step_size: float = 0.1
    outer_steps: int = 200
    outer_learning_rate: float = 3e-4
    batch_size: int = 8
    grad_clip: float = 10.0  # global-norm clip; raw gradients reach ~100x parameter norms

    def __post_init__(self):
        if self.perturbation_budget < 0:
            raise ValueError("perturbation_budget must be >= 0")
        for name in ("inner_pgd_steps", "inner_step_size", "outer_steps",
                     "outer_learning_rate", "batch_size", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# Full-scale reference constants for the robust fine-tuning recipe, kept as
# provenance only; desk-scale runs use the defaults above.
FULL_SCALE_ROBUST_TRAIN = RobustTrainConfig(
    perturbation_budget=10.0, inner_pgd_steps=5, inner_step_size=2.0,
    outer_steps=20_000, outer_learning_rate=3e-4, batch_size=16)


def _pgd_maximize(params: dict[str, np.ndarray], x: np.ndarray, target: np.ndarray,
                  radius: float, steps: int, step_size: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Inner maximizer: delta in the l2 ball maximizing ||g(x+delta) - target||^2."""
    if radius <= 0:
        return np.zeros_like(x)
    u = rng.standard_normal(x.shape)
    un = np.linalg.norm(u)
    delta = 0.5 * radius * u / un if un > 0 else np.zeros_like(x)
    for _ in range(steps):
        a2, cache = _backbone_forward(params, x + delta)
        g_in = _backbone_backward(params, cache, 2.0 * (a2 - target))
        gn = np.linalg.norm(g_in)
        if gn == 0:
            break
        delta = delta + step_size * g_in / gn
        dn = np.linalg.norm(delta)
        if dn > radius:
            delta *= radius / dn
    return delta


def robust_finetune(model: EncoderModel, images: Sequence[np.ndarray], cfg: RobustTrainConfig,
                    seed: int = 0) -> tuple[EncoderModel, list[tuple[int, float]]]:
    """Adversarially robust fine-tuning of the backbone.

    Minimizes sum_i max_{||delta|| <= r} ||g(x_i + delta) - g_org(x_i)||^2 by
    alternating the inner PGD maximization with SGD on the backbone
    parameters (the frozen original backbone supplies the targets). Returns
    the tuned model and a (step, batch objective) log.
    """
    if model.variant != "trainable":
        raise ValueError("robust_finetune requires a trainable model")
    if not images:
        raise ValueError("need at least one training image")
    imgs = [np.asarray(im, dtype=float) for im in images]
    params = {k: v.copy() for k, v in model.params().items()}
    org_params = {k: v.copy() for k, v in model.params().items()}
    targets = [_backbone_forward(org_params, im)[0] for im in imgs]
    rng = np.random.default_rng(seed)
    log: list[tuple[int, float]] = []
    for step in range(cfg.outer_steps):
        batch = rng.choice(len(imgs), size=min(cfg.batch_size, len(imgs)), replace=False)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        obj = 0.0
        for i in batch:
            delta = _pgd_maximize(params, imgs[i], targets[i], cfg.perturbation_budget,
                                  cfg.inner_pgd_steps, cfg.inner_step_size, rng)
            a2, cache = _backbone_forward(params, imgs[i] + delta)
            diff = a2 - targets[i]
            obj += float(np.sum(diff * diff))
            _, g = _backbone_backward(params, cache, 2.0 * diff, with_params=True)
            for k in grads:
                grads[k] += g[k]
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) / len(batch)
        clip = min(1.0, cfg.grad_clip / gnorm) if gnorm > 0 else 1.0
        scale = cfg.outer_learning_rate * clip / len(batch)
        for k in params:
            params[k] = params[k] - scale * grads[k]
            if not np.all(np.isfinite(params[k])):
                raise NumericFailure(f"fine-tuning diverged at outer step {step}", step=step)
        log.append((step, obj / len(batch)))
    tuned = replace(model, **params)
    return tuned, log


def estimate_feature_sensitivity(model: EncoderModel, x: np.ndarray, radius: float,
                                 steps: int = 20, step_size: float | None = None,
                                 target_model: EncoderModel | None = None,
                                 seed: int = 0) -> float:
    """PGD estimate of max_{||delta|| <= radius} ||g(x + delta) - g_ref(x)||.

    ``target_model`` defaults to ``model`` itself (self-sensitivity); passing
    the pre-training model measures the fine-tuning objective on held-out
    images.
    """
    x = np.asarray(x, dtype=float)
    params = model.params()
    ref = (target_model or model).params()
    target = _backbone_forward(ref, x)[0]
    if step_size is None:
        step_size = radius / 5 if radius > 0 else 0.0
    delta = _pgd_maximize(params, x, target, radius, steps, step_size,
                          np.random.default_rng(seed))
    a2, _ = _backbone_forward(params, x + delta)
    return float(np.linalg.norm(a2 - target))
