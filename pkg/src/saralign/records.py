"""Uniform record model for annotation manifests and its validation.

Records are immutable after parse. Validation is centralized here so the
same invariant checks back both the strict parse path and the standalone
report produced by :func:`validate_records`.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

from .errors import ValidationError
from .geometry import BoundingBox

SPLITS = ("train", "val", "test")


class RecordKind(enum.Enum):
    CLASSIFICATION = "classification"
    DETECTION = "detection"
    CAPTION = "caption"


@dataclass(frozen=True, slots=True)
class ImageMeta:
    image_id: str
    width: int
    height: int
    source: str
    split: str
    feature_ref: str


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    meta: ImageMeta
    kind: RecordKind
    class_label: str | None = None                                # classification
    detections: tuple[tuple[str, BoundingBox], ...] = ()          # detection
    captions: tuple[str, ...] = ()                                # caption


@dataclass
class ValidationReport:
    """Per-source/per-split counts plus every invariant breach found."""

    images_by_source: Counter = field(default_factory=Counter)
    images_by_split: Counter = field(default_factory=Counter)
    native_captions_by_source: Counter = field(default_factory=Counter)
    errors: list[str] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return sum(self.images_by_source.values())

    @property
    def ok(self) -> bool:
        return not self.errors

    def summary_lines(self) -> list[str]:
        lines = [f"images: {self.n_images}"]
        for source in sorted(self.images_by_source):
            n = self.images_by_source[source]
            caps = self.native_captions_by_source.get(source)
            extra = f", native captions {caps}" if caps else ""
            lines.append(f"  source {source}: {n} images{extra}")
        for split in sorted(self.images_by_split):
            lines.append(f"  split {split}: {self.images_by_split[split]} images")
        lines.append(f"errors: {len(self.errors)}")
        lines.extend(f"  {e}" for e in self.errors)
        return lines


def record_errors(record: AnnotationRecord) -> list[str]:
    """All invariant violations in a single record."""
    meta = record.meta
    rid = meta.image_id
    errs = []
    if not rid:
        errs.append("image with empty image_id")
        rid = "<missing>"
    if meta.width < 1 or meta.height < 1:
        errs.append(f"image {rid}: non-positive dimensions {meta.width}x{meta.height}")
    if meta.split not in SPLITS:
        errs.append(f"image {rid}: unknown split {meta.split!r}")
    if record.kind is RecordKind.CLASSIFICATION:
        if not record.class_label:
            errs.append(f"image {rid}: empty class label")
    elif record.kind is RecordKind.DETECTION:
        if not record.detections:
            errs.append(f"image {rid}: detection record with no boxes")
        for label, box in record.detections:
            if not label:
                errs.append(f"image {rid}: box with empty class label")
            if not box.is_valid():
                errs.append(
                    f"image {rid}: zero-area or inverted box "
                    f"({box.x_min},{box.y_min},{box.x_max},{box.y_max})"
                )
            elif not box.within(meta.width, meta.height):
                errs.append(
                    f"image {rid}: box ({box.x_min},{box.y_min},{box.x_max},{box.y_max}) "
                    f"outside image {meta.width}x{meta.height}"
                )
    elif record.kind is RecordKind.CAPTION:
        if not record.captions:
            errs.append(f"image {rid}: caption record with no captions")
        for text in record.captions:
            if not text.strip():
                errs.append(f"image {rid}: blank caption")
    return errs


def validate_records(records: list[AnnotationRecord]) -> ValidationReport:
    """Check every record invariant and tally per-source/per-split counts.

    Duplicate image ids are flagged per source (ids must be unique within a
    manifest; distinct sources may reuse ids).
    """
    report = ValidationReport()
    seen: set[tuple[str, str]] = set()
    for record in records:
        meta = record.meta
        report.errors.extend(record_errors(record))
        key = (meta.source, meta.image_id)
        if key in seen:
            report.errors.append(f"duplicate image_id {meta.image_id!r} in source {meta.source}")
        seen.add(key)
        report.images_by_source[meta.source] += 1
        report.images_by_split[meta.split] += 1
        if record.kind is RecordKind.CAPTION:
            report.native_captions_by_source[meta.source] += len(record.captions)
    return report


def check_records(records: list[AnnotationRecord], *, strict: bool,
                  error_sink: list[str] | None = None) -> list[AnnotationRecord]:
    """Gate records through validation.

    Strict mode raises on the first batch of violations; permissive mode
    drops offending records and reports them through ``error_sink``.
    """
    report = validate_records(records)
    if report.ok:
        return records
    if strict:
        raise ValidationError(
            "manifest validation failed:\n" + "\n".join(report.errors)
        )
    if error_sink is not None:
        error_sink.extend(report.errors)
    bad_ids = set()
    for record in records:
        if record_errors(record):
            bad_ids.add((record.meta.source, record.meta.image_id))
    kept, seen = [], set()
    for record in records:
        key = (record.meta.source, record.meta.image_id)
        if key in bad_ids or key in seen:
            continue
        seen.add(key)
        kept.append(record)
    return kept
