"""Projected gradient ascent on pairwise box-feature distances.

Starting from a data-consistent initial reconstruction, additional
reconstructions are seeded with Gaussian perturbations and then iteratively
pushed apart in the encoder's feature space. Every step re-applies the
l2-ball projection around the initial reconstruction followed by the
data-consistency projection, so all returned images satisfy both contracts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .detect import BoundingBox
from .encoder import BoxFeatures, EncoderModel, distance_gradient, encode_boxes, feature_distance
from .errors import NumericFailure
from .mri import AcquisitionData, validate_image
from .recon import BallConstraint, DcConfig, consistency_residual, data_consistency, project_ball


@dataclass(frozen=True)
class SdrParams:
    n_rec: int = 3
    n_opt: int = 50
    step_size: float = 0.1
    init_sigma: float = 0.01
    radius: float = 3.0
    # warm starts inside the loop exit via the tolerance after a few steps
    dc: DcConfig = field(default_factory=lambda: DcConfig(cg_iters=15, cg_tol=3e-5))
    seed: int = 0
    normalize_gradient: bool = True
    sweep: str = "gauss-seidel"  # or "jacobi": snapshot features per outer sweep
    aggregate: str = "sum"

    def __post_init__(self):
        if self.n_rec < 2:
            raise ValueError("n_rec must be >= 2")
        if self.n_opt < 0:
            raise ValueError("n_opt must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.sweep not in ("gauss-seidel", "jacobi"):
            raise ValueError(f"unknown sweep mode {self.sweep!r}")


@dataclass(frozen=True)
class ReconProvenance:
    index: int
    seed: int
    final_distance: float       # sum of feature distances to all others
    residual: float             # relative consistency residual
    ball_distance: float        # l2 distance to the initial reconstruction


@dataclass(frozen=True)
class ReconstructionSet:
    images: tuple[np.ndarray, ...]
    provenance: tuple[ReconProvenance, ...]
    boxes: tuple[BoundingBox, ...]
    params: SdrParams
    post_seed_mean_distance: float
    final_mean_distance: float

    @property
    def n_rec(self) -> int:
        return len(self.images)

    @property
    def diversity_gain(self) -> float:
        if self.post_seed_mean_distance == 0:
            return float("inf") if self.final_mean_distance > 0 else 1.0
        return self.final_mean_distance / self.post_seed_mean_distance


def _mean_pairwise(feats: Sequence[BoxFeatures], aggregate: str) -> float:
    pairs = list(itertools.combinations(range(len(feats)), 2))
    if not pairs:
        return 0.0
    return float(np.mean([feature_distance(feats[i], feats[j], aggregate) for i, j in pairs]))


def sdr_generate(acq: AcquisitionData, x1: np.ndarray, model: EncoderModel,
                 boxes: Sequence[BoundingBox], p: SdrParams,
                 progress: Callable[[int, int], None] | None = None) -> ReconstructionSet:
    """Generate a semantically diverse, data-consistent reconstruction set.

    The stored first element is the data-consistency projection of ``x1``
    (the input itself is never modified) and serves as the ball center. Each
    other element is seeded with Gaussian noise, projected, and then ascended
    on the summed feature distance to all other elements for ``n_opt``
    sweeps. ``progress`` is called after each sweep and may raise to abort.
    """
    x1 = validate_image(x1, "x1")
    if not boxes:
        raise ValueError("box list is empty")
    boxes = tuple(boxes)
    rng = np.random.default_rng(p.seed)

    # cold starts (the input and the Gaussian seeds) get a stronger CG budget
    # than the warm in-loop projections, so the consistency contract holds
    # even when x1 arrives raw
    seed_dc = DcConfig(cg_iters=max(p.dc.cg_iters, DcConfig().cg_iters),
                       cg_tol=min(p.dc.cg_tol, DcConfig().cg_tol),
                       replacement=p.dc.replacement)
    center = data_consistency(x1, acq, seed_dc)
    ball = BallConstraint(center, p.radius)
    images: list[np.ndarray] = [center.copy()]
    for i in range(1, p.n_rec):
        if p.init_sigma > 0:
            eps = p.init_sigma * (rng.standard_normal(center.shape)
                                  + 1j * rng.standard_normal(center.shape))
            seeded = project_ball(center + eps, ball)
            try:
                seeded = data_consistency(seeded, acq, seed_dc)
            except NumericFailure as e:
                raise NumericFailure(f"seeding reconstruction {i} failed: {e}", step=(i, -1)) from e
        else:
            seeded = center.copy()
        images.append(seeded)

    feats = [encode_boxes(model, im, boxes) for im in images]
    post_seed = _mean_pairwise(feats, p.aggregate)

    for k in range(p.n_opt):
        snapshot = list(feats) if p.sweep == "jacobi" else None
        for i in range(1, p.n_rec):
            pool = snapshot if snapshot is not None else feats
            others = [pool[j] for j in range(p.n_rec) if j != i]
            try:
                g = distance_gradient(model, images[i], others, boxes, p.aggregate)
                if p.normalize_gradient:
                    gn = float(np.linalg.norm(g.ravel()))
                    if gn > 0:
                        g = g / gn
                stepped = images[i] + p.step_size * g
                stepped = project_ball(stepped, ball)
                stepped = data_consistency(stepped, acq, p.dc)
            except NumericFailure as e:
                raise NumericFailure(
                    f"diversity ascent failed at reconstruction {i}, sweep {k}: {e}",
                    step=(i, k)) from e
            images[i] = stepped
            feats[i] = encode_boxes(model, stepped, boxes)
        if progress is not None:
            progress(k + 1, p.n_opt)

    # numerical guard: the final DC application may drift epsilon outside the
    # ball; clip back (a no-op whenever the distance is already feasible)
    for i in range(1, p.n_rec):
        clipped = project_ball(images[i], ball)
        if clipped is not images[i]:
            images[i] = clipped
            feats[i] = encode_boxes(model, clipped, boxes)

    provenance = []
    for i in range(p.n_rec):
        d_i = sum(feature_distance(feats[i], feats[j], p.aggregate)
                  for j in range(p.n_rec) if j != i)
        provenance.append(ReconProvenance(
            index=i,
            seed=p.seed,
            final_distance=float(d_i),
            residual=consistency_residual(images[i], acq),
            ball_distance=float(np.linalg.norm((images[i] - center).ravel())),
        ))
    final_mean = _mean_pairwise(feats, p.aggregate)
    return ReconstructionSet(
        images=tuple(images),
        provenance=tuple(provenance),
        boxes=boxes,
        params=p,
        post_seed_mean_distance=post_seed,
        final_mean_distance=final_mean,
    )


def diversity_matrix(recon_set: ReconstructionSet, model: EncoderModel,
                     boxes: Sequence[BoundingBox] | None = None) -> np.ndarray:
    """Symmetric matrix of pairwise feature distances, zero diagonal."""
    boxes = tuple(boxes) if boxes is not None else recon_set.boxes
    feats = [encode_boxes(model, im, boxes) for im in recon_set.images]
    n = len(feats)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = feature_distance(feats[i], feats[j],
                                                     recon_set.params.aggregate)
    return out
