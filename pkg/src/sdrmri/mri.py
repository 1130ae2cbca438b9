"""Synthetic MRI scenes and the undersampled multicoil acquisition model.

Complex images are plain 2-D ``complex128`` numpy arrays (row-major).
k-space grids are centered (DC bin at ``(H//2, W//2)``) and the DFT is
unitary in both directions, so the forward operator has operator norm 1 and
its adjoint passes an exact dot-product test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detect import BoundingBox, LesionTemplate

DISC = 0
RING = 1
RING_INNER_FRACTION = 0.55


def validate_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array")
    if not np.all(np.isfinite(arr.view(float) if np.iscomplexobj(arr) else arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr.astype(np.complex128, copy=False)


def _dft2_stack(arr: np.ndarray, direction: str) -> np.ndarray:
    """Centered unitary DFT over the last two axes (batched across leading axes)."""
    axes = (-2, -1)
    shifted = np.fft.ifftshift(arr, axes=axes)
    if direction == "forward":
        out = np.fft.fft2(shifted, axes=axes, norm="ortho")
    elif direction == "inverse":
        out = np.fft.ifft2(shifted, axes=axes, norm="ortho")
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return np.fft.fftshift(out, axes=axes)


def dft2(img: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Centered, unitary 2-D DFT (and its inverse)."""
    arr = np.asarray(img)
    if arr.ndim != 2 or min(arr.shape, default=0) < 2:
        raise ValueError("dft2 requires a 2-D image with both dimensions >= 2")
    return _dft2_stack(arr, direction)


@dataclass(frozen=True)
class SamplingMask:
    """Cartesian phase-encode undersampling: whole k-space columns on/off."""

    width: int
    columns: np.ndarray  # bool, shape (width,)
    acceleration: float
    acs_width: int

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=bool)
        if cols.shape != (self.width,):
            raise ValueError("column flags must have shape (width,)")
        object.__setattr__(self, "columns", cols)
        lo = self.width // 2 - self.acs_width // 2
        if not cols[lo : lo + self.acs_width].all():
            raise ValueError("ACS center columns must all be sampled")
        target = self.width / self.acceleration
        if abs(int(cols.sum()) - target) > 1.0 + 1e-9:
            raise ValueError("sampled-column count is off target by more than one column")

    @property
    def n_sampled(self) -> int:
        return int(self.columns.sum())

    def as_array(self, height: int) -> np.ndarray:
        """(height, width) float mask with 1 at sampled columns."""
        return np.broadcast_to(self.columns.astype(float), (height, self.width)).copy()


def make_sampling_mask(width: int, acceleration: float, acs_fraction: float = 0.08,
                       kind: str = "equispaced", seed: int = 0) -> SamplingMask:
    """Build a column mask with a fully sampled center (ACS) block.

    The total number of sampled columns is round(width / acceleration); the
    remainder outside the ACS block is chosen equispaced or uniformly at
    random (seeded).
    """
    if acceleration < 1:
        raise ValueError("acceleration must be >= 1")
    if not 0 < acs_fraction < 1:
        raise ValueError("acs_fraction must lie in (0, 1)")
    n_target = int(round(width / acceleration))
    acs = min(int(round(acs_fraction * width)), n_target)
    if acs < 1:
        acs = 1
    cols = np.zeros(width, dtype=bool)
    lo = width // 2 - acs // 2
    cols[lo : lo + acs] = True
    n_rest = n_target - acs
    others = np.nonzero(~cols)[0]
    if n_rest > len(others):
        n_rest = len(others)
    if n_rest > 0:
        if kind == "equispaced":
            pick = np.round(np.linspace(0, len(others) - 1, n_rest)).astype(int)
        elif kind == "random":
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(others), size=n_rest, replace=False)
        else:
            raise ValueError(f"unknown mask kind {kind!r}")
        cols[others[pick]] = True
    return SamplingMask(width=width, columns=cols, acceleration=float(acceleration), acs_width=acs)


@dataclass(frozen=True)
class CoilSensitivities:
    maps: np.ndarray  # complex, shape (n_coils, H, W)

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.complex128)
        if m.ndim != 3:
            raise ValueError("coil maps must have shape (n_coils, H, W)")
        if not np.all(np.isfinite(m.view(float))):
            raise ValueError("coil maps contain non-finite values")
        object.__setattr__(self, "maps", m)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]


def make_coil_sensitivities(height: int, width: int, n_coils: int = 4,
                            seed: int = 0) -> CoilSensitivities:
    """Smooth synthetic coil maps, pixel-wise normalized to sum |S|^2 = 1.

    Each coil is a Gaussian magnitude lobe centered outside the FOV edge with
    a gentle linear phase. ``n_coils=1`` yields the identity map (S == 1),
    used by the exactness tests.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    if n_coils == 1:
        return CoilSensitivities(np.ones((1, height, width), dtype=np.complex128))
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    sigma = 0.55 * max(height, width)
    maps = np.empty((n_coils, height, width), dtype=np.complex128)
    for c in range(n_coils):
        theta = 2 * np.pi * c / n_coils + rng.uniform(-0.15, 0.15)
        cx = width / 2 + 0.55 * width * np.cos(theta)
        cy = height / 2 + 0.55 * height * np.sin(theta)
        mag = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
        ax, ay = rng.uniform(-0.03, 0.03, size=2)
        phase = ax * xs + ay * ys + rng.uniform(0, 2 * np.pi)
        maps[c] = mag * np.exp(1j * phase)
    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= norm
    return CoilSensitivities(maps)


@dataclass(frozen=True)
class AcquisitionData:
    """Measured multicoil k-space plus the mask and coil maps that made it."""

    y: np.ndarray  # complex, shape (n_coils, H, W); zero at unsampled columns
    mask: SamplingMask
    sens: CoilSensitivities

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.complex128)
        if y.ndim != 3:
            raise ValueError("y must have shape (n_coils, H, W)")
        if y.shape[0] != self.sens.n_coils or y.shape[1:] != self.sens.shape:
            raise ValueError("k-space and coil-map shapes disagree")
        if y.shape[2] != self.mask.width:
            raise ValueError("k-space width disagrees with mask width")
        if np.any(y[:, :, ~self.mask.columns] != 0):
            raise ValueError("y must be zero at unsampled columns")
        object.__setattr__(self, "y", y)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sens.shape


def forward_op(x: np.ndarray, acq: AcquisitionData) -> np.ndarray:
    """A x = M F (S x), one k-space grid per coil (zero off-mask)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != acq.shape:
        raise ValueError(f"image shape {x.shape} does not match acquisition {acq.shape}")
    out = _dft2_stack(acq.sens.maps * x, "forward")
    out[:, :, ~acq.mask.columns] = 0
    return out


def adjoint_op(y: np.ndarray, acq: AcquisitionData) -> np.ndarray:
    """A^H y = sum_c conj(S_c) F^{-1} (M y_c)."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != acq.y.shape:
        raise ValueError(f"k-space shape {y.shape} does not match acquisition {acq.y.shape}")
    masked = y.copy()
    masked[:, :, ~acq.mask.columns] = 0
    return np.sum(np.conj(acq.sens.maps) * _dft2_stack(masked, "inverse"), axis=0)


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]  # (cx, cy), continuous pixels
    axes: tuple[float, float]    # semi-axes (a, b)
    angle_deg: float
    intensity: float


@dataclass(frozen=True)
class Lesion:
    shape: str  # "disc" | "ring"
    center: tuple[float, float]
    radius: float
    contrast: float
    class_id: int


@dataclass(frozen=True)
class PhantomSpec:
    height: int
    width: int
    ellipses: tuple[Ellipse, ...]
    lesions: tuple[Lesion, ...] = ()
    seed: int = 0
    texture_amp: float = 0.01


def _ellipse_mask(e: Ellipse, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    t = np.deg2rad(e.angle_deg)
    dx, dy = xs - e.center[0], ys - e.center[1]
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / e.axes[0]) ** 2 + (v / e.axes[1]) ** 2 <= 1.0


def lesion_profile(shape: str, radius: float, dist: np.ndarray) -> np.ndarray:
    """Unit-contrast lesion footprint with a 1 px soft edge.

    The same rasterizer renders phantom lesions and detector templates, so
    template matching sees the exact planted shape.
    """
    if shape == "disc":
        return np.clip(radius + 0.5 - dist, 0.0, 1.0)
    if shape == "ring":
        outer = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        inner = np.clip(RING_INNER_FRACTION * radius + 0.5 - dist, 0.0, 1.0)
        return outer - inner
    raise ValueError(f"unknown lesion shape {shape!r}")


def lesion_template(shape: str, radius: float, margin: int = 2):
    """Matching template for a lesion class.

    The pattern window extends ``margin`` pixels beyond the footprint so the
    correlation's local normalization penalizes structured surroundings; the
    detection box matches the lesion extent (side 2 * radius).
    """
    half = int(np.ceil(radius + 0.5)) + 1 + margin
    k = 2 * half + 1
    ys, xs = np.meshgrid(np.arange(k) + 0.5, np.arange(k) + 0.5, indexing="ij")
    dist = np.hypot(xs - k / 2, ys - k / 2)
    return LesionTemplate(lesion_profile(shape, radius, dist), box_size=2 * radius)


def make_phantom(spec: PhantomSpec) -> tuple[np.ndarray, list[tuple[BoundingBox, int]]]:
    """Render a phantom and the ground-truth box of every planted lesion.

    Intensity is normalized so the 99th-percentile magnitude equals 1; a
    faint smooth texture (seeded) keeps backgrounds from being exactly flat.
    """
    h, w = spec.height, spec.width
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    img = np.zeros((h, w))
    support = np.zeros((h, w), dtype=bool)
    for e in spec.ellipses:
        m = _ellipse_mask(e, xs, ys)
        img[m] += e.intensity
        support |= m
    if not support.any():
        raise ValueError("phantom spec has empty support")

    if spec.texture_amp > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.standard_normal((h, w))
        tex = ndimage.gaussian_filter(noise, sigma=4.0)
        tex /= max(tex.std(), 1e-12)
        img += spec.texture_amp * tex * support

    boxes: list[tuple[BoundingBox, int]] = []
    for k, les in enumerate(spec.lesions):
        dist = np.hypot(xs - les.center[0], ys - les.center[1])
        prof = lesion_profile(les.shape, les.radius, dist)
        if np.any((prof > 0) & ~support):
            raise ValueError(f"lesion {k} extends outside the phantom support")
        img += les.contrast * prof
        cx, cy = les.center
        r = les.radius
        boxes.append((BoundingBox(cx - r, cy - r, cx + r, cy + r), les.class_id))

    p99 = np.percentile(np.abs(img), 99)
    if p99 <= 0:
        raise ValueError("phantom is identically zero")
    return (img / p99).astype(np.complex128), boxes


def random_phantom_spec(height: int, width: int, seed: int, lesion_contrast: float,
                        mean_lesions: float = 2.0, disc_radius: float = 3.0,
                        ring_radius: float = 4.5, texture_amp: float = 0.01) -> PhantomSpec:
    """Sample a head-like phantom with a Poisson number of planted lesions."""
    rng = np.random.default_rng(seed)
    cx, cy = width / 2, height / 2
    ax = 0.40 * width * rng.uniform(0.95, 1.05)
    ay = 0.44 * height * rng.uniform(0.95, 1.05)
    ellipses = [Ellipse((cx, cy), (ax, ay), rng.uniform(-5, 5), 0.85)]
    for _ in range(3):
        ex = cx + rng.uniform(-0.35, 0.35) * ax
        ey = cy + rng.uniform(-0.35, 0.35) * ay
        ea = rng.uniform(0.08, 0.22) * min(ax, ay)
        eb = rng.uniform(0.08, 0.22) * min(ax, ay)
        ellipses.append(Ellipse((ex, ey), (ea, eb), rng.uniform(0, 180),
                                rng.uniform(-0.15, 0.15)))

    n_lesions = int(rng.poisson(mean_lesions))
    lesions: list[Lesion] = []
    attempts = 0
    while len(lesions) < n_lesions and attempts < 200:
        attempts += 1
        shape = "disc" if rng.integers(0, 2) == 0 else "ring"
        radius = disc_radius if shape == "disc" else ring_radius
        px = cx + rng.uniform(-0.6, 0.6) * ax
        py = cy + rng.uniform(-0.6, 0.6) * ay
        # keep the full footprint inside the main ellipse
        margin = (radius + 2.0)
        if ((px - cx) / (ax - margin)) ** 2 + ((py - cy) / (ay - margin)) ** 2 > 1.0:
            continue
        # keep the matching window clear of interior-ellipse edges so
        # detectability is limited by reconstruction, not by background
        window = radius + 8.0
        if any(np.hypot(px - e.center[0], py - e.center[1]) < max(e.axes) + window
               for e in ellipses[1:]):
            continue
        if any(np.hypot(px - l.center[0], py - l.center[1]) < 18.0 for l in lesions):
            continue
        class_id = DISC if shape == "disc" else RING
        lesions.append(Lesion(shape, (px, py), radius, lesion_contrast, class_id))
    return PhantomSpec(height, width, tuple(ellipses), tuple(lesions),
                       seed=seed, texture_amp=texture_amp)


def simulate_acquisition(phantom: np.ndarray, sens: CoilSensitivities, mask: SamplingMask,
                         noise_sigma: float = 0.0, seed: int = 0) -> AcquisitionData:
    """Measure the phantom: y = A x + masked complex Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    phantom = validate_image(phantom, "phantom")
    y = _dft2_stack(sens.maps * phantom, "forward")
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + noise_sigma * noise
    y[:, :, ~mask.columns] = 0
    return AcquisitionData(y=y, mask=mask, sens=sens)
