"""Image batches, synthetic datasets with ground truth, and landmark metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import DegenerateSynthesisError, InvalidArgumentError, LRDError
from .geometry import (
    TransformParams,
    TransformStack,
    centered_to_pixel,
    pixel_to_centered,
    warp,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".gif")
BASE_IMAGES = ("face", "blobs", "checkerboard")


@dataclass
class ImageBatch:
    """B equally sized grayscale frames with optional per-image landmarks.

    Landmarks are ``(n, 2)`` arrays of pixel ``(x, y)`` positions.
    """

    images: list[np.ndarray]
    source_ids: list[str] | None = None
    landmarks: list[np.ndarray] | None = None

    def __post_init__(self):
        self.images = [np.asarray(im, dtype=float) for im in self.images]
        if len(self.images) < 2:
            raise InvalidArgumentError("a batch needs at least 2 images")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise InvalidArgumentError(f"images must share one 2-D shape, got {sorted(shapes)}")
        if self.source_ids is None:
            self.source_ids = [f"img{i:03d}" for i in range(len(self.images))]
        if len(self.source_ids) != len(self.images):
            raise InvalidArgumentError("source_ids length differs from image count")
        if self.landmarks is not None:
            self.landmarks = [np.asarray(lm, dtype=float).reshape(-1, 2) for lm in self.landmarks]
            if len(self.landmarks) != len(self.images):
                raise InvalidArgumentError("landmarks length differs from image count")

    @property
    def shape(self) -> tuple[int, int]:
        return self.images[0].shape

    @property
    def matrix(self) -> np.ndarray:
        """Vectorised frames, one column per image."""
        return np.stack([im.reshape(-1) for im in self.images], axis=1)

    def __len__(self):
        return len(self.images)


# -- base images ------------------------------------------------------------


def _ellipse(shape, cx, cy, ax, ay, angle=0.0):
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(float)
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = x - cx, y - cy
    return ((c * dx + s * dy) / ax) ** 2 + ((-s * dx + c * dy) / ay) ** 2 <= 1.0


def make_face(shape=(48, 48), blur: float = 1.0):
    """Cartoon face on a dark background; returns the image and its two eye centres."""
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    img = np.zeros(shape)
    img[_ellipse(shape, cx, cy, 0.30 * w, 0.38 * h)] = 0.75
    eyes = np.array([[cx - 0.13 * w, cy - 0.08 * h], [cx + 0.13 * w, cy - 0.08 * h]])
    for ex, ey in eyes:
        img[_ellipse(shape, ex, ey - 0.07 * h, 0.08 * w, 0.025 * h)] = 0.35  # brow
        img[_ellipse(shape, ex, ey, 0.065 * w, 0.04 * h)] = 0.15
    img[_ellipse(shape, cx, cy + 0.06 * h, 0.035 * w, 0.08 * h)] = 0.9  # nose
    img[_ellipse(shape, cx, cy + 0.21 * h, 0.12 * w, 0.035 * h)] = 0.25  # mouth
    if blur > 0:
        img = gaussian_filter(img, blur)
    return np.clip(img, 0.0, 1.0), eyes


def make_blobs(shape=(48, 48), count: int = 5, seed: int = 7):
    h, w = shape
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w].astype(float)
    img = np.zeros(shape)
    for _ in range(count):
        bx, by = rng.uniform(0.25 * w, 0.75 * w), rng.uniform(0.25 * h, 0.75 * h)
        sig = rng.uniform(0.06, 0.14) * min(h, w)
        img += rng.uniform(0.4, 1.0) * np.exp(-((x - bx) ** 2 + (y - by) ** 2) / (2 * sig**2))
    return img / img.max(), None


def make_checkerboard(shape=(48, 48), cell: int = 8, blur: float = 1.5):
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    img = 0.2 + 0.6 * (((x // cell) + (y // cell)) % 2)
    return np.clip(gaussian_filter(img.astype(float), blur), 0.0, 1.0), None


def base_image(name: str, shape=(48, 48)):
    """Built-in base image by name; returns ``(image, landmarks_or_None)``."""
    if name == "face":
        return make_face(shape)
    if name == "blobs":
        return make_blobs(shape)
    if name == "checkerboard":
        return make_checkerboard(shape)
    raise InvalidArgumentError(f"unknown base image {name!r}; choose from {BASE_IMAGES}")


# -- synthesis --------------------------------------------------------------


@dataclass
class SynthSpec:
    """Recipe for a misaligned, corrupted batch derived from one base image.

    ``rotation_range`` is in degrees and ``shift_range`` in pixels; each image
    draws its angle and shift uniformly from ``[-range, range]``. With
    ``recenter`` the draws are shifted to zero batch mean (and shrunk back
    into range if needed) so that the batch's average pose is the base pose.
    Joint alignment only recovers poses up to a common warp, so this is what
    makes absolute landmark errors meaningful.
    """

    base: str = "face"
    count: int = 20
    shape: tuple[int, int] = (48, 48)
    rotation_range: float = 0.0
    shift_range: float = 0.0
    patch_count: int = 0
    patch_size: int = 0
    patch_intensity: float = 0.0
    gain_range: tuple[float, float] = (1.0, 1.0)
    noise_sigma: float = 0.0
    recenter: bool = True
    seed: int | None = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.gain_range = tuple(float(g) for g in self.gain_range)
        if self.seed is None:
            raise InvalidArgumentError("a seed is required for reproducible synthesis")
        if self.count < 2:
            raise InvalidArgumentError("count must be at least 2")
        for name in ("rotation_range", "shift_range", "patch_count", "patch_size", "noise_sigma"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        lo, hi = self.gain_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError("gain_range must satisfy 0 < low <= high")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["gain_range"] = list(self.gain_range)
        return d


@dataclass
class SynthResult:
    batch: ImageBatch
    truth: TransformStack
    truth_landmarks: list[np.ndarray] | None
    base: np.ndarray
    base_landmarks: np.ndarray | None
    occlusion_masks: list[np.ndarray] = field(default_factory=list)
    clean: list[np.ndarray] = field(default_factory=list)


def _recentered(draws: np.ndarray, limit: float) -> np.ndarray:
    draws = draws - draws.mean()
    peak = np.abs(draws).max()
    if peak > limit > 0:
        draws = draws * (limit / peak)
    return draws


def _place_patches(rng, shape, count, size):
    h, w = shape
    if count == 0 or size == 0:
        return np.zeros(shape, dtype=bool)
    if size > min(h, w):
        raise InvalidArgumentError("occlusion patch larger than the frame")
    mask = np.zeros(shape, dtype=bool)
    for _ in range(count):
        for _attempt in range(1000):
            r, c = rng.integers(0, h - size + 1), rng.integers(0, w - size + 1)
            if not mask[r:r + size, c:c + size].any():
                mask[r:r + size, c:c + size] = True
                break
        else:
            raise InvalidArgumentError("cannot fit the requested non-overlapping occlusion patches")
    return mask


def map_landmarks(t: TransformParams, points, shape) -> np.ndarray:
    """Map pixel-coordinate landmarks of the aligned frame into an image."""
    return centered_to_pixel(t.map_points(pixel_to_centered(points, shape)), shape)


def synthesize(spec: SynthSpec, base: np.ndarray | None = None,
               base_landmarks=None) -> SynthResult:
    """Generate a misaligned batch whose exact transforms are known.

    Image i is ``gain_i * (base o F_i^-1)`` with occlusion patches pasted on
    and Gaussian noise added, clipped to [0, 1]. ``F_i`` (a rotation about the
    frame centre followed by a shift) is returned as the ground-truth
    transform: warping image i by ``F_i`` recovers the base pose.
    """
    if base is None:
        base, base_landmarks = base_image(spec.base, spec.shape)
    base = np.asarray(base, dtype=float)
    shape = base.shape
    rng = np.random.default_rng(spec.seed)
    B = spec.count

    angles = rng.uniform(-spec.rotation_range, spec.rotation_range, B)
    shifts = rng.uniform(-spec.shift_range, spec.shift_range, (2, B))
    if spec.recenter:
        angles = _recentered(angles, spec.rotation_range)
        shifts = np.stack([_recentered(s, spec.shift_range) for s in shifts])
    angles = np.deg2rad(angles)
    if spec.rotation_range == 0:
        angles = np.zeros(B)
    if spec.shift_range == 0:
        shifts = np.zeros((2, B))

    base_mass = base.sum()
    images, clean, masks, truth, lms = [], [], [], [], []
    for i in range(B):
        F = TransformParams("similarity", [1.0, angles[i], shifts[0, i], shifts[1, i]])
        inverse = TransformParams.from_matrix("similarity", np.linalg.inv(F.to_matrix()))
        moved = warp(base, inverse)
        if base_mass > 0 and moved.sum() < 0.5 * base_mass:
            raise DegenerateSynthesisError(
                f"image {i} keeps only {moved.sum() / base_mass:.0%} of the base content"
            )
        gain = rng.uniform(*spec.gain_range)
        img = np.clip(gain * moved, 0.0, 1.0)
        clean.append(img.copy())
        mask = _place_patches(rng, shape, spec.patch_count, spec.patch_size)
        img[mask] = spec.patch_intensity
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, shape)
        images.append(np.clip(img, 0.0, 1.0))
        masks.append(mask)
        truth.append(F)
        if base_landmarks is not None:
            lms.append(map_landmarks(F, base_landmarks, shape))

    landmarks = lms if base_landmarks is not None else None
    batch = ImageBatch(images, [f"img{i:03d}" for i in range(B)], landmarks)
    return SynthResult(
        batch=batch,
        truth=TransformStack(truth),
        truth_landmarks=landmarks,
        base=base,
        base_landmarks=None if base_landmarks is None else np.asarray(base_landmarks, float),
        occlusion_masks=masks,
        clean=clean,
    )


def synthesize_curve(count: int = 40, shape=(16, 16), seed: int = 0,
                     corruption: float = 0.05, corruption_level: float = 1.0,
                     gain_range=(0.6, 1.4)):
    """Batch whose clean frames trace a smooth 1-D curve in image space.

    Frame ``t`` shows a Gaussian spot travelling along a circular arc while
    its width breathes with ``t``, so the clean columns are a nonlinear
    function of one latent scalar. A random gain and a fraction
    ``corruption`` of pixels overwritten with ``corruption_level`` are applied
    on top. Returns ``(batch, clean_frames, latent)``; clean frames carry the
    gain but not the corruption.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(float)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    latent = np.sort(rng.uniform(0.0, 1.0, count))
    images, clean = [], []
    for t in latent:
        ang = np.pi * (0.15 + 0.7 * t)
        px, py = cx + 0.3 * w * np.cos(ang), cy + 0.3 * h * np.sin(ang) - 0.1 * h
        sig = (0.12 + 0.06 * np.sin(2 * np.pi * t)) * min(h, w)
        spot = np.exp(-((x - px) ** 2 + (y - py) ** 2) / (2 * sig**2))
        frame = rng.uniform(*gain_range) * (0.15 + 0.7 * spot)
        clean.append(frame)
        noisy = frame.copy()
        hit = rng.random(shape) < corruption
        noisy[hit] = corruption_level
        images.append(noisy)
    return ImageBatch(images), clean, latent


# -- loading ----------------------------------------------------------------


def _to_gray(im: PILImage.Image) -> np.ndarray:
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=float)
        return arr / (65535.0 if arr.max() > 255 or im.mode.startswith("I;16") else 255.0)
    if im.mode == "F":
        return np.asarray(im, dtype=float)
    if im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    arr = np.asarray(im, dtype=float) / 255.0
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr


def resize(img: np.ndarray, target_dims) -> np.ndarray:
    """Bilinear resampling to ``(height, width)``."""
    h, w = target_dims
    if img.shape == (h, w):
        return img.copy()
    out = PILImage.fromarray(img.astype(np.float32), mode="F").resize(
        (w, h), PILImage.Resampling.BILINEAR
    )
    return np.asarray(out, dtype=float)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise LRDError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_batch(directory, target_dims=None) -> ImageBatch:
    """Read every image in ``directory`` in lexicographic order.

    Frames are converted to grayscale (channel average), resized to
    ``target_dims`` = ``(height, width)`` (default: the first image's size)
    and scaled to [0, 1].
    """
    paths = list_images(directory)
    if len(paths) < 2:
        raise LRDError(f"{directory}: need at least 2 images, found {len(paths)}")
    frames = []
    for p in paths:
        try:
            with PILImage.open(p) as im:
                im.load()
                arr = _to_gray(im)
        except (OSError, ValueError) as exc:
            raise LRDError(f"cannot read image {p}: {exc}") from exc
        frames.append(arr)
    dims = tuple(target_dims) if target_dims else frames[0].shape
    frames = [np.clip(resize(f, dims), 0.0, 1.0) for f in frames]
    return ImageBatch(frames, [p.stem for p in paths])


def save_png(img: np.ndarray, path, bits: int = 16) -> None:
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    if bits == 16:
        arr = np.round(img * 65535).astype(np.uint16)
    else:
        arr = np.round(img * 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


# -- landmark metrics -------------------------------------------------------


@dataclass
class AlignmentReport:
    mean_error: float
    error_std: float
    max_error: float
    per_image: list[float]

    def row(self, method: str) -> str:
        return f"{method} | {self.mean_error:.4f} | {self.error_std:.4f} | {self.max_error:.4f}"

    def to_dict(self) -> dict:
        return asdict(self)


REPORT_HEADER = "Method | Mean error | Error std. | Max error"


def landmark_error(estimated: TransformStack, truth_landmarks: Sequence, base_landmarks,
                   shape) -> AlignmentReport:
    """Distances between base landmarks mapped through each estimated
    transform and their true positions in each image.

    Mean, std and max are taken over all images and landmarks; ``per_image``
    holds each image's mean distance.
    """
    if truth_landmarks is None or base_landmarks is None:
        raise InvalidArgumentError("landmarks are required for the alignment report")
    if len(truth_landmarks) != len(estimated):
        raise InvalidArgumentError("one ground-truth landmark set per image is required")
    dists, per_image = [], []
    for t, truth in zip(estimated, truth_landmarks):
        est = map_landmarks(t, base_landmarks, shape)
        d = np.linalg.norm(est - np.asarray(truth, dtype=float).reshape(-1, 2), axis=1)
        dists.append(d)
        per_image.append(float(d.mean()))
    d = np.concatenate(dists)
    return AlignmentReport(float(d.mean()), float(d.std()), float(d.max()), per_image)
