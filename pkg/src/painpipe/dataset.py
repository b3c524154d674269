"""Dataset ingestion, class balance analysis, resampling, and fold planning.

On-disk layout (shared by real and synthetic data so they are
interchangeable):

    <root>/Images/<subject>/<sequence>/<name><NNN>.png
    <root>/Frame_Labels/FACS/<subject>/<sequence>/<name><NNN>_facs.txt
    <root>/face_boxes.json                      (optional sidecar)

Each AU file holds one "<au_code> <intensity>" pair per line as decimal
numbers; action units missing from the file default to intensity 0. The
sidecar maps "<subject>/<sequence>/<frame_index>" to a true face box
[x, y, w, h].
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from painpipe.facs import (
    AU_DESCRIPTORS,
    DEFAULT_N_CLASSES,
    ActionUnitVector,
    AUValidationError,
    PainClass,
    PainScore,
    compute_pspi,
    quantize_pspi,
)
from painpipe.preprocess import BoundingBox

FACE_BOX_SIDECAR = "face_boxes.json"
LAYOUT_CHOICES = ("unbc_like", "synthetic")

_TRAILING_INT = re.compile(r"(\d+)$")


class IngestError(Exception):
    """Raised when a dataset directory cannot be turned into an index."""


@dataclass(frozen=True)
class FrameRecord:
    """One labeled frame: identity, image location, action units, labels."""

    subject_id: str
    sequence_id: str
    frame_index: int
    image_path: Path
    au: ActionUnitVector
    pspi: PainScore
    pain_class: PainClass
    face_box: Optional[BoundingBox] = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.sequence_id, self.frame_index)


@dataclass(frozen=True)
class DatasetIndex:
    """Immutable ordered collection of frame records plus roll-ups."""

    records: tuple[FrameRecord, ...]
    n_classes: int
    subjects: frozenset[str]
    skipped_frames: tuple[str, ...] = ()

    @staticmethod
    def build(
        records: Iterable[FrameRecord],
        n_classes: int,
        skipped_frames: Iterable[str] = (),
        allow_duplicates: bool = False,
    ) -> "DatasetIndex":
        recs = tuple(records)
        if not recs:
            raise IngestError("dataset index is empty: no ingestible frames")
        if not allow_duplicates:
            keys = [r.key for r in recs]
            if len(set(keys)) != len(keys):
                dupes = sorted({k for k in keys if keys.count(k) > 1})
                raise IngestError(f"duplicate (subject, sequence, frame) keys: {dupes[:5]}")
        for r in recs:
            if r.pain_class != quantize_pspi(r.pspi, n_classes):
                raise IngestError(
                    f"record {r.key}: pain_class {r.pain_class.index} does not match "
                    f"quantize(pspi={r.pspi.value}, n_classes={n_classes})"
                )
        return DatasetIndex(
            records=recs,
            n_classes=n_classes,
            subjects=frozenset(r.subject_id for r in recs),
            skipped_frames=tuple(skipped_frames),
        )

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, subjects: Iterable[str]) -> "DatasetIndex":
        wanted = frozenset(subjects)
        recs = tuple(r for r in self.records if r.subject_id in wanted)
        if not recs:
            raise ValueError(f"no records for subjects {sorted(wanted)}")
        return DatasetIndex(records=recs, n_classes=self.n_classes, subjects=frozenset(r.subject_id for r in recs))

    def labels(self) -> np.ndarray:
        return np.asarray([r.pain_class.index for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class ClassWeightTable:
    """Per-class loss weights: weight_c = (1 / n_c) * (N / C).

    C counts the classes that actually have samples; that is what makes
    sum_c n_c * weight_c == N hold exactly. Classes with zero samples get
    weight 0 and are listed in zero_sample_classes.
    """

    weights: Mapping[int, float]
    total_samples: int
    n_classes: int
    zero_sample_classes: tuple[int, ...] = ()

    def as_array(self) -> np.ndarray:
        out = np.zeros(self.n_classes, dtype=np.float64)
        for c, w in self.weights.items():
            out[c] = w
        return out

    @staticmethod
    def uniform(n_classes: int, total_samples: int) -> "ClassWeightTable":
        return ClassWeightTable(
            weights={c: 1.0 for c in range(n_classes)},
            total_samples=total_samples,
            n_classes=n_classes,
        )


@dataclass(frozen=True)
class Fold:
    """One cross-validation fold: disjoint subject sets covering everyone."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]


@dataclass(frozen=True)
class FoldPlan:
    """Subject-disjoint fold rotation; every subject is tested exactly once."""

    folds: tuple[Fold, ...]
    seed: int

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "folds": [
                {"train": sorted(f.train), "val": sorted(f.val), "test": sorted(f.test)} for f in self.folds
            ],
        }
        return json.dumps(payload, indent=2)

    @staticmethod
    def from_json(text: str) -> "FoldPlan":
        payload = json.loads(text)
        folds = tuple(
            Fold(train=frozenset(f["train"]), val=frozenset(f["val"]), test=frozenset(f["test"]))
            for f in payload["folds"]
        )
        return FoldPlan(folds=folds, seed=int(payload["seed"]))


def _parse_au_file(path: Path) -> ActionUnitVector:
    intensities: dict[int, int] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise IngestError(f"{path}:{lineno}: expected '<au_code> <intensity>', got {raw!r}")
        try:
            code_f = float(tokens[0])
            intensity_f = float(tokens[1])
        except ValueError:
            raise IngestError(f"{path}:{lineno}: non-numeric AU line {raw!r}") from None
        if not code_f.is_integer():
            raise IngestError(f"{path}:{lineno}: AU code {tokens[0]!r} is not an integer")
        if not intensity_f.is_integer():
            raise IngestError(f"{path}:{lineno}: fractional intensity {tokens[1]!r} (intensities are integers)")
        code = int(code_f)
        if code in AU_DESCRIPTORS:
            intensities[code] = int(intensity_f)
    try:
        return ActionUnitVector(
            au4=intensities.get(4, 0),
            au6=intensities.get(6, 0),
            au7=intensities.get(7, 0),
            au9=intensities.get(9, 0),
            au10=intensities.get(10, 0),
            au43=intensities.get(43, 0),
        )
    except AUValidationError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def _load_face_boxes(root: Path) -> dict[str, BoundingBox]:
    sidecar = root / FACE_BOX_SIDECAR
    if not sidecar.is_file():
        return {}
    payload = json.loads(sidecar.read_text())
    return {key: BoundingBox(*map(int, box)) for key, box in payload.items()}


def ingest(root: Path | str, layout: str = "unbc_like", n_classes: int = DEFAULT_N_CLASSES) -> DatasetIndex:
    """Walk a dataset directory and build the frame index.

    Frames without an AU file are skipped and reported via
    DatasetIndex.skipped_frames; a malformed AU line aborts ingestion. The
    face-box sidecar is attached when present (always written by the
    synthetic generator, optional for real data).
    """
    if layout not in LAYOUT_CHOICES:
        raise IngestError(f"layout must be one of {LAYOUT_CHOICES}, got {layout!r}")
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root {root} is not a directory")
    images_dir = root / "Images"
    facs_dir = root / "Frame_Labels" / "FACS"
    if not images_dir.is_dir():
        raise IngestError(f"missing Images/ directory under {root}")
    if not facs_dir.is_dir():
        raise IngestError(f"missing Frame_Labels/FACS/ directory under {root}")
    boxes = _load_face_boxes(root)
    if layout == "synthetic" and not boxes:
        raise IngestError(f"synthetic layout requires the {FACE_BOX_SIDECAR} sidecar under {root}")

    records: list[FrameRecord] = []
    skipped: list[str] = []
    for image_path in sorted(images_dir.glob("*/*/*.png")):
        sequence_id = image_path.parent.name
        subject_id = image_path.parent.parent.name
        match = _TRAILING_INT.search(image_path.stem)
        if match is None:
            raise IngestError(f"{image_path}: frame filename must end in a frame number")
        frame_index = int(match.group(1))
        au_path = facs_dir / subject_id / sequence_id / f"{image_path.stem}_facs.txt"
        if not au_path.is_file():
            skipped.append(str(image_path.relative_to(root)))
            continue
        au = _parse_au_file(au_path)
        pspi = compute_pspi(au)
        records.append(
            FrameRecord(
                subject_id=subject_id,
                sequence_id=sequence_id,
                frame_index=frame_index,
                image_path=image_path,
                au=au,
                pspi=pspi,
                pain_class=quantize_pspi(pspi, n_classes),
                face_box=boxes.get(f"{subject_id}/{sequence_id}/{frame_index}"),
            )
        )
    records.sort(key=lambda r: r.key)
    if not records:
        raise IngestError(f"no ingestible frames under {root} ({len(skipped)} skipped)")
    return DatasetIndex.build(records, n_classes=n_classes, skipped_frames=skipped)


def class_histogram(index: DatasetIndex) -> dict[int, int]:
    """Counts per pain class, keyed by the classes that actually occur."""
    counts: dict[int, int] = {}
    for record in index.records:
        counts[record.pain_class.index] = counts.get(record.pain_class.index, 0) + 1
    return dict(sorted(counts.items()))


def weights_from_counts(counts: Mapping[int, int], n_classes: int) -> ClassWeightTable:
    """Weight table from a class histogram; see ClassWeightTable for the rule."""
    total = sum(counts.values())
    if total <= 0:
        raise ValueError("cannot compute class weights from an empty histogram")
    present = [c for c in range(n_classes) if counts.get(c, 0) > 0]
    effective_classes = len(present)
    weights = {c: 0.0 for c in range(n_classes)}
    for c in present:
        weights[c] = (1.0 / counts[c]) * (total / effective_classes)
    zero = tuple(c for c in range(n_classes) if counts.get(c, 0) == 0)
    return ClassWeightTable(weights=weights, total_samples=total, n_classes=n_classes, zero_sample_classes=zero)


def compute_class_weights(index: DatasetIndex) -> ClassWeightTable:
    return weights_from_counts(class_histogram(index), index.n_classes)


def resample(index: DatasetIndex, strategy: str, seed: int) -> DatasetIndex:
    """Balance class counts by seeded oversampling or undersampling.

    oversample_minority duplicates minority-class records (with
    replacement) up to the majority count; undersample_majority keeps a
    random subset of each larger class down to the minority count. Copies
    keep their subject/sequence identity, so the output intentionally
    contains duplicate keys.
    """
    counts = class_histogram(index)
    if len(counts) < 2:
        raise ValueError(f"resampling needs >= 2 classes present, found {len(counts)}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[FrameRecord]] = {c: [] for c in counts}
    for record in index.records:
        by_class[record.pain_class.index].append(record)

    if strategy == "oversample_minority":
        target = max(counts.values())
        records = list(index.records)
        for c in sorted(by_class):
            pool = by_class[c]
            deficit = target - len(pool)
            if deficit > 0:
                picks = rng.integers(0, len(pool), size=deficit)
                records.extend(pool[i] for i in picks)
    elif strategy == "undersample_majority":
        target = min(counts.values())
        keep: set[int] = set()
        for c in sorted(by_class):
            pool = by_class[c]
            if len(pool) > target:
                chosen = rng.choice(len(pool), size=target, replace=False)
                keep.update(id(pool[i]) for i in chosen)
            else:
                keep.update(id(r) for r in pool)
        records = [r for r in index.records if id(r) in keep]
    else:
        raise ValueError(f"unknown resampling strategy {strategy!r}")

    return DatasetIndex.build(records, n_classes=index.n_classes, allow_duplicates=True)


def make_fold_plan(
    subjects: Iterable[str],
    k: int,
    n_train: int,
    n_val: int,
    n_test: int,
    seed: int,
) -> FoldPlan:
    """Plan k folds by rotating seeded subject blocks.

    Subjects are shuffled once and cut into k blocks of n_test. Fold i
    tests block i, validates on block i+1 (mod k), and trains on the rest,
    so every subject lands in exactly one test set.
    """
    names = sorted(set(subjects))
    total = len(names)
    if k < 2:
        raise ValueError(f"k must be >= 2 for the rotation scheme, got {k}")
    if n_train + n_val + n_test != total:
        raise ValueError(f"n_train + n_val + n_test = {n_train + n_val + n_test} must equal {total} subjects")
    if k * n_test != total:
        raise ValueError(f"k * n_test = {k * n_test} must equal {total} subjects so each tests exactly once")
    if n_val != n_test:
        raise ValueError(f"the rotation scheme requires n_val == n_test, got {n_val} != {n_test}")
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("each partition needs at least one subject")

    order = list(names)
    np.random.default_rng(seed).shuffle(order)
    blocks = [frozenset(order[i * n_test : (i + 1) * n_test]) for i in range(k)]
    folds = []
    for i in range(k):
        test = blocks[i]
        val = blocks[(i + 1) % k]
        train = frozenset(name for j, block in enumerate(blocks) if j not in (i, (i + 1) % k) for name in block)
        folds.append(Fold(train=train, val=val, test=test))
    return FoldPlan(folds=tuple(folds), seed=seed)


def ingest_summary(index: DatasetIndex) -> dict:
    """JSON-friendly roll-up used by the CLI after ingestion."""
    return {
        "n_frames": len(index.records),
        "n_subjects": len(index.subjects),
        "n_classes": index.n_classes,
        "skipped_missing_au": len(index.skipped_frames),
        "skipped_paths": list(index.skipped_frames[:20]),
        "histogram": class_histogram(index),
    }


def _replace_record_class(record: FrameRecord, n_classes: int) -> FrameRecord:
    return replace(record, pain_class=quantize_pspi(record.pspi, n_classes))


def with_n_classes(index: DatasetIndex, n_classes: int) -> DatasetIndex:
    """Re-bin an index under a different class count (labels recomputed)."""
    records = tuple(_replace_record_class(r, n_classes) for r in index.records)
    return DatasetIndex(
        records=records,
        n_classes=n_classes,
        subjects=index.subjects,
        skipped_frames=index.skipped_frames,
    )
