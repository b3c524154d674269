"""Frame preprocessing: face detection, crop, resize, augmentation, normalization.

Images move through this module as float arrays of shape (H, W, 3) in RGB
order with values in [0, 1] until `normalize` applies the configured
channel statistics. All transforms are stateless and safe to run per-frame
in parallel; augmentation randomness comes from an explicit generator so
execution order cannot change results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

DETECTOR_CHOICES = ("metadata", "cascade_frontal_then_profile", "centered_heuristic")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box (x, y are the top-left corner)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self.as_tuple()}: width and height must be > 0")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def fits(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 224
    channel_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    channel_std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    hflip_probability: float = 0.5
    detector: str = "metadata"

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ValueError(f"target_size must be >= 1, got {self.target_size}")
        if len(self.channel_mean) != 3 or len(self.channel_std) != 3:
            raise ValueError("channel_mean and channel_std must each have 3 components")
        if any(s <= 0 for s in self.channel_std):
            raise ValueError(f"channel_std components must be > 0, got {self.channel_std}")
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ValueError(f"hflip_probability must be in [0, 1], got {self.hflip_probability}")
        if self.detector not in DETECTOR_CHOICES:
            raise ValueError(f"detector must be one of {DETECTOR_CHOICES}, got {self.detector!r}")


@dataclass
class DetectionStats:
    """Counters for the detection paths taken across a run.

    Frames where no stage finds a face are kept via the centered heuristic
    instead of being dropped; dropping them would silently skew the class
    balance, so the fallback count is tracked for reporting.
    """

    frames: int = 0
    metadata_hits: int = 0
    frontal_hits: int = 0
    profile_hits: int = 0
    heuristic_fallbacks: int = 0


# A stage detector takes an image and returns a box or None.
StageDetector = Callable[[np.ndarray], Optional[BoundingBox]]


@dataclass
class CascadePair:
    """Frontal detector with a profile fallback, both pluggable."""

    frontal: StageDetector
    profile: StageDetector


def opencv_cascade_pair() -> CascadePair:
    """Haar-cascade binding (frontal then profile) backed by OpenCV.

    Optional dependency: raises ImportError with instructions when cv2 is
    not installed.
    """
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImportError(
            "cascade_frontal_then_profile with the default binding needs opencv-python-headless; "
            "install it or pass an explicit CascadePair"
        ) from exc

    frontal = cv2.CascadeClassifier(cv2.data.haarcascades + "haarcascade_frontalface_default.xml")
    profile = cv2.CascadeClassifier(cv2.data.haarcascades + "haarcascade_profileface.xml")

    def _run(classifier, image: np.ndarray) -> Optional[BoundingBox]:
        gray = (np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
        gray = cv2.cvtColor(gray, cv2.COLOR_RGB2GRAY)
        hits = classifier.detectMultiScale(gray, scaleFactor=1.1, minNeighbors=3)
        if len(hits) == 0:
            return None
        x, y, w, h = max(hits, key=lambda b: b[2] * b[3])
        return BoundingBox(int(x), int(y), int(w), int(h))

    return CascadePair(
        frontal=lambda img: _run(frontal, img),
        profile=lambda img: _run(profile, img),
    )


def centered_box(height: int, width: int) -> BoundingBox:
    """Centered square covering 80% of the short image side."""
    side = int(round(0.8 * min(height, width)))
    side = max(side, 1)
    return BoundingBox(x=(width - side) // 2, y=(height - side) // 2, w=side, h=side)


def detect_face(
    image: np.ndarray,
    config: PreprocessConfig,
    metadata_box: Optional[BoundingBox] = None,
    cascade: Optional[CascadePair] = None,
    stats: Optional[DetectionStats] = None,
) -> BoundingBox:
    """Locate the face box for one frame according to the configured detector.

    metadata: trust the caller-provided box (synthetic-data path).
    cascade_frontal_then_profile: try the frontal stage, consult the
    profile stage only if the frontal one finds nothing.
    centered_heuristic: fixed centered square.

    A frame where no stage finds a face falls back to the centered
    heuristic and increments stats.heuristic_fallbacks.
    """
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected a non-empty (H, W, 3) image, got shape {image.shape}")
    height, width = image.shape[:2]
    if stats is None:
        stats = DetectionStats()
    stats.frames += 1

    if config.detector == "metadata":
        if metadata_box is not None and metadata_box.fits(height, width):
            stats.metadata_hits += 1
            return metadata_box
    elif config.detector == "cascade_frontal_then_profile":
        pair = cascade if cascade is not None else opencv_cascade_pair()
        box = pair.frontal(image)
        if box is not None and box.fits(height, width):
            stats.frontal_hits += 1
            return box
        box = pair.profile(image)
        if box is not None and box.fits(height, width):
            stats.profile_hits += 1
            return box

    if config.detector != "centered_heuristic":
        stats.heuristic_fallbacks += 1
    return centered_box(height, width)


def crop_resize(image: np.ndarray, box: BoundingBox, target_size: int) -> np.ndarray:
    """Crop the box and resize it to target_size x target_size bilinearly.

    The box is stretched to a square; aspect ratio is not preserved.
    Sampling uses half-pixel centers so cropping a region that is already
    target-sized returns it pixel for pixel.
    """
    height, width = image.shape[:2]
    if not box.fits(height, width):
        raise ValueError(f"box {box.as_tuple()} outside image bounds {height}x{width}")
    if target_size < 1:
        raise ValueError(f"target_size must be >= 1, got {target_size}")

    region = image[box.y : box.y + box.h, box.x : box.x + box.w].astype(np.float64, copy=False)

    def _axis_indices(src_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = (np.arange(target_size, dtype=np.float64) + 0.5) * (src_len / target_size) - 0.5
        coords = np.clip(coords, 0.0, src_len - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, src_len - 1)
        frac = coords - lo
        return lo, hi, frac

    r0, r1, rf = _axis_indices(box.h)
    c0, c1, cf = _axis_indices(box.w)

    rows = region[r0] * (1.0 - rf)[:, None, None] + region[r1] * rf[:, None, None]
    out = rows[:, c0] * (1.0 - cf)[None, :, None] + rows[:, c1] * cf[None, :, None]
    return out.astype(image.dtype, copy=False) if image.dtype == np.float64 else out.astype(np.float32)


def augment(image: np.ndarray, config: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    """Horizontal flip with the configured probability; identity otherwise.

    Training-time only; evaluation paths must not call this.
    """
    if rng.random() < config.hflip_probability:
        return np.ascontiguousarray(image[:, ::-1])
    return image


def normalize(image: np.ndarray, config: PreprocessConfig) -> np.ndarray:
    """Apply per-channel (value - mean) / std. Input values are in [0, 1]."""
    std = np.asarray(config.channel_std, dtype=np.float32)
    if np.any(std <= 0):
        raise ValueError(f"channel_std components must be > 0, got {config.channel_std}")
    mean = np.asarray(config.channel_mean, dtype=np.float32)
    return (image.astype(np.float32) - mean) / std


def denormalize(image: np.ndarray, config: PreprocessConfig) -> np.ndarray:
    """Inverse of `normalize`, mainly for round-trip checks and debugging."""
    std = np.asarray(config.channel_std, dtype=np.float32)
    mean = np.asarray(config.channel_mean, dtype=np.float32)
    return image.astype(np.float32) * std + mean


def load_image(path: Path | str) -> np.ndarray:
    """Read a PNG (or anything PIL handles) into a float RGB array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def frame_rng(global_seed: int, subject: str, sequence: str, frame: int) -> np.random.Generator:
    """Seeded generator unique to one frame.

    Hashing the identity tuple gives every frame its own stream, so
    parallel preprocessing order cannot change augmentation outcomes.
    """
    digest = hashlib.sha256(f"{global_seed}|{subject}|{sequence}|{frame}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def preprocess_frame(
    path: Path | str,
    config: PreprocessConfig,
    metadata_box: Optional[BoundingBox] = None,
    cascade: Optional[CascadePair] = None,
    stats: Optional[DetectionStats] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Full per-frame pipeline: load, detect, crop+resize, flip, normalize.

    Pass `rng` only for training frames; without it no augmentation runs.
    Returns a (3, S, S) float32 array ready to batch.
    """
    image = load_image(path)
    box = detect_face(image, config, metadata_box=metadata_box, cascade=cascade, stats=stats)
    face = crop_resize(image, box, config.target_size)
    if rng is not None:
        face = augment(face, config, rng)
    face = normalize(face, config)
    return np.ascontiguousarray(face.transpose(2, 0, 1))
