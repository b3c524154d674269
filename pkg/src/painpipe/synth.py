"""Synthetic face-frame generator.

Stands in for access-gated clinical footage: draws a procedural face
(oval head, brows, eyes, nose, mouth on a noisy background) whose geometry
deforms with the target action-unit intensities, so pixel content is
statistically predictive of the pain class. Writes the same on-disk layout
`dataset.ingest` reads, plus a sidecar with the true face box per frame,
and is byte-reproducible from its seed.

Deformations: au4 lowers and tilts the brows, au7 (with au6 shading the
cheeks) narrows the eye aperture, au43 closes the eyes, au9 adds wrinkle
lines across the nose bridge, au10 raises and opens the mouth.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from painpipe.dataset import FACE_BOX_SIDECAR, DatasetIndex, ingest
from painpipe.facs import PSPI_MAX, ActionUnitVector, class_score_range, compute_pspi, quantize_pspi


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    frames_per_subject: int = 100
    image_size: int = 48
    class_mix: tuple[float, ...] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_subjects < 1 or self.frames_per_subject < 1:
            raise ValueError("n_subjects and frames_per_subject must be >= 1")
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if len(self.class_mix) < 2:
            raise ValueError("class_mix needs at least 2 classes")
        if any(m < 0 for m in self.class_mix):
            raise ValueError("class_mix fractions must be >= 0")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must sum to 1, got {sum(self.class_mix)}")

    @property
    def n_bands(self) -> int:
        return len(self.class_mix)


def _largest_remainder_counts(mix: tuple[float, ...], total: int) -> list[int]:
    """Integer allocation matching the mix exactly up to rounding."""
    raw = [m * total for m in mix]
    counts = [int(np.floor(v)) for v in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(mix)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _sample_au_vector(band: int, n_bands: int, rng: np.random.Generator) -> ActionUnitVector:
    """Draw an AU vector whose pain score falls inside the requested band.

    The score is split across the four formula terms with uniform choices
    inside feasibility bounds; the units that drive the drawing (au4, au7,
    au10, au43) carry the term maxima so the rendered face encodes the
    score, while au6/au9 vary freely below them.
    """
    lo, hi = class_score_range(band, n_bands)
    score = int(rng.integers(lo, hi + 1))

    au43_lo, au43_hi = max(0, score - 15), min(1, score)
    au43 = int(rng.integers(au43_lo, au43_hi + 1))
    rest = score - au43
    au4_lo, au4_hi = max(0, rest - 10), min(5, rest)
    au4 = int(rng.integers(au4_lo, au4_hi + 1))
    rest -= au4
    e67_lo, e67_hi = max(0, rest - 5), min(5, rest)
    e67 = int(rng.integers(e67_lo, e67_hi + 1))
    e910 = rest - e67

    au = ActionUnitVector(
        au4=au4,
        au6=int(rng.integers(0, e67 + 1)),
        au7=e67,
        au9=int(rng.integers(0, e910 + 1)),
        au10=e910,
        au43=au43,
    )
    assert compute_pspi(au).value == score
    return au


@dataclass(frozen=True)
class _SubjectTraits:
    skin: tuple[int, int, int]
    dx: float
    dy: float
    rx_scale: float
    ry_scale: float

    @staticmethod
    def sample(rng: np.random.Generator) -> "_SubjectTraits":
        base = int(rng.integers(150, 215))
        return _SubjectTraits(
            skin=(base, int(base * 0.82), int(base * 0.68)),
            dx=float(rng.uniform(-0.03, 0.03)),
            dy=float(rng.uniform(-0.03, 0.03)),
            rx_scale=float(rng.uniform(0.29, 0.34)),
            ry_scale=float(rng.uniform(0.37, 0.42)),
        )


def _draw_face(
    size: int,
    traits: _SubjectTraits,
    au: ActionUnitVector,
    rng: np.random.Generator,
) -> tuple[Image.Image, tuple[int, int, int, int]]:
    """Render one frame; returns the image and the true face box (x, y, w, h)."""
    noise = rng.normal(loc=62.0, scale=9.0, size=(size, size, 3))
    canvas = Image.fromarray(np.clip(noise, 0, 255).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(canvas)

    cx = size * (0.5 + traits.dx)
    cy = size * (0.52 + traits.dy)
    rx = size * traits.rx_scale
    ry = size * traits.ry_scale
    jx = float(rng.uniform(-0.5, 0.5))
    jy = float(rng.uniform(-0.5, 0.5))

    draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=traits.skin)

    line_w = max(2, size // 24)
    dark = (40, 28, 24)

    eye_y = cy - ry * 0.30 + jy
    eye_dx = rx * 0.48
    eye_w = rx * 0.30
    squint = au.au7 / 5.0
    aperture = ry * 0.16 * (1.0 - 0.85 * squint)
    for side in (-1, 1):
        ex = cx + side * eye_dx + jx
        if au.au43:
            draw.line([ex - eye_w, eye_y, ex + eye_w, eye_y], fill=dark, width=line_w)
        else:
            half = max(aperture, 0.6)
            draw.ellipse([ex - eye_w, eye_y - half, ex + eye_w, eye_y + half], fill=(235, 235, 235))
            pr = min(half * 0.9, eye_w * 0.45)
            draw.ellipse([ex - pr, eye_y - pr, ex + pr, eye_y + pr], fill=(30, 30, 40))

    # Brows drop toward the eyes and tilt inward as au4 rises.
    brow_gap = ry * 0.24 * (1.0 - 0.8 * au.au4 / 5.0)
    inner_drop = ry * 0.12 * (au.au4 / 5.0)
    for side in (-1, 1):
        ex = cx + side * eye_dx + jx
        outer = (ex + side * eye_w * 1.1, eye_y - brow_gap - ry * 0.04)
        inner = (ex - side * eye_w * 0.9, eye_y - brow_gap + inner_drop)
        draw.line([outer, inner], fill=dark, width=line_w)

    nose_top = cy - ry * 0.05
    nose_bot = cy + ry * 0.22
    draw.line([cx + jx, nose_top, cx + jx, nose_bot], fill=dark, width=max(1, line_w - 1))

    # Nose-bridge wrinkle texture, count and contrast scale with au9.
    if au.au9 > 0:
        n_lines = int(np.ceil(au.au9 * 3 / 5))
        shade = int(95 - 13 * au.au9)
        span = rx * 0.42
        for i in range(n_lines):
            wy = eye_y + ry * (0.16 + 0.1 * i)
            draw.line([cx - span + jx, wy, cx + span + jx, wy], fill=(shade, shade, shade), width=1)

    # Cheek raiser shading under the eyes.
    if au.au6 > 0:
        shade = int(120 - 12 * au.au6)
        for side in (-1, 1):
            ex = cx + side * eye_dx + jx
            arc_y = eye_y + ry * 0.14
            draw.arc(
                [ex - eye_w, arc_y - ry * 0.06, ex + eye_w, arc_y + ry * 0.10],
                start=200 if side < 0 else 340,
                end=340 if side < 0 else 200,
                fill=(shade, shade // 2 + 30, shade // 2 + 20),
                width=1,
            )

    # Mouth rises and opens with au10.
    raise_frac = au.au10 / 5.0
    mouth_y = cy + ry * 0.56 - ry * 0.10 * raise_frac + jy
    mouth_w = rx * (0.44 + 0.18 * raise_frac)
    mouth_h = ry * (0.05 + 0.22 * raise_frac)
    draw.ellipse(
        [cx - mouth_w + jx, mouth_y - mouth_h, cx + mouth_w + jx, mouth_y + mouth_h],
        fill=(105, 38, 42) if au.au10 == 0 else (62, 20, 26),
    )
    if raise_frac > 0.4:  # bared upper teeth once the lip is well raised
        draw.rectangle(
            [cx - mouth_w * 0.6 + jx, mouth_y - mouth_h * 0.7, cx + mouth_w * 0.6 + jx, mouth_y - mouth_h * 0.15],
            fill=(220, 214, 200),
        )

    x0 = max(0, int(np.floor(cx - rx)))
    y0 = max(0, int(np.floor(cy - ry)))
    x1 = min(size, int(np.ceil(cx + rx)))
    y1 = min(size, int(np.ceil(cy + ry)))
    return canvas, (x0, y0, x1 - x0, y1 - y0)


def generate_synthetic(config: SynthConfig, out: Path | str) -> DatasetIndex:
    """Write a synthetic dataset to `out` and return its ingested index.

    `out` must not exist yet (or be an empty directory). Files are staged
    in a sibling directory and moved into place at the end, so a failed
    run leaves no partial dataset behind.
    """
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} already exists and is not empty")
    parent = out.absolute().parent
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"cannot write to {parent}")

    stage = parent / f".{out.name}.partial-{os.getpid()}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        boxes: dict[str, list[int]] = {}
        for s in range(config.n_subjects):
            subject_id = f"s{s:03d}"
            sequence_id = "seq0"
            subject_rng = np.random.default_rng(np.random.SeedSequence([config.seed, s]))
            traits = _SubjectTraits.sample(subject_rng)

            band_counts = _largest_remainder_counts(config.class_mix, config.frames_per_subject)
            bands = np.repeat(np.arange(config.n_bands), band_counts)
            subject_rng.shuffle(bands)

            image_dir = stage / "Images" / subject_id / sequence_id
            label_dir = stage / "Frame_Labels" / "FACS" / subject_id / sequence_id
            image_dir.mkdir(parents=True)
            label_dir.mkdir(parents=True)

            for f, band in enumerate(bands):
                rng = np.random.default_rng(np.random.SeedSequence([config.seed, s, f]))
                au = _sample_au_vector(int(band), config.n_bands, rng)
                image, box = _draw_face(config.image_size, traits, au, rng)
                image.save(image_dir / f"f{f:04d}.png")
                lines = [
                    f"{code} {value}"
                    for code, value in ((4, au.au4), (6, au.au6), (7, au.au7), (9, au.au9), (10, au.au10), (43, au.au43))
                    if value > 0
                ]
                (label_dir / f"f{f:04d}_facs.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
                boxes[f"{subject_id}/{sequence_id}/{f}"] = list(box)

        (stage / FACE_BOX_SIDECAR).write_text(json.dumps(boxes, indent=2, sort_keys=True))
        if out.exists():
            out.rmdir()  # empty by the check above
        os.replace(stage, out)
    except Exception:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return ingest(out, layout="synthetic", n_classes=config.n_bands)


def intended_band(au: ActionUnitVector, n_bands: int) -> int:
    """Band a generated AU vector was aimed at (for round-trip checks)."""
    return quantize_pspi(compute_pspi(au), n_bands).index


__all__ = ["SynthConfig", "generate_synthetic", "intended_band", "PSPI_MAX"]
