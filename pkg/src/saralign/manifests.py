"""Manifest parsing: COCO-style detection JSON, classification/caption CSV.

Schemas are documented field-by-field in docs/formats.md. Parsing is
deterministic: records come back sorted by image_id regardless of the
ordering in the file, and identical bytes always produce identical records.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ParseError, ValidationError
from .geometry import BoundingBox
from .records import AnnotationRecord, ImageMeta, RecordKind, check_records

DETECTION_MANIFEST_FORMAT = "saralign-detection-manifest"

_CSV_BASE_COLUMNS = ("image_id", "width", "height", "split", "source", "feature_ref")


def _require(mapping, key, *, path, context):
    if key not in mapping:
        raise ParseError(f"missing key {key!r} in {context}", path=path, field=key)
    return mapping[key]


def _as_int(value, *, path, field, context):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ParseError(f"{context}: {field} is not an integer: {value!r}",
                         path=path, field=field) from None
    return out


def parse_detection_manifest(path, *, strict: bool = True,
                             error_sink: list[str] | None = None) -> list[AnnotationRecord]:
    """Parse a detection manifest into one record per image.

    Boxes arrive as COCO-style [x_min, y_min, w, h] and are converted to
    half-open corner coordinates. Structural problems raise ParseError;
    invariant breaches (zero-area box, box outside the image, duplicate id)
    raise ValidationError in strict mode and drop the record otherwise.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("top-level document must be an object", path=path)

    source = doc.get("source") or path.stem
    images = _require(doc, "images", path=path, context="manifest")
    annotations = _require(doc, "annotations", path=path, context="manifest")

    metas: dict[str, ImageMeta] = {}
    order: list[str] = []
    for i, img in enumerate(images):
        context = f"images[{i}]"
        image_id = str(_require(img, "id", path=path, context=context))
        meta = ImageMeta(
            image_id=image_id,
            width=_as_int(_require(img, "width", path=path, context=context),
                          path=path, field="width", context=context),
            height=_as_int(_require(img, "height", path=path, context=context),
                           path=path, field="height", context=context),
            source=source,
            split=str(_require(img, "split", path=path, context=context)),
            feature_ref=str(img.get("feature_ref", "")),
        )
        if image_id in metas:
            raise ParseError(f"{context}: duplicate image id {image_id!r}",
                             path=path, field="id")
        order.append(image_id)
        metas[image_id] = meta

    boxes: dict[str, list[tuple[str, BoundingBox]]] = {image_id: [] for image_id in order}
    for i, ann in enumerate(annotations):
        context = f"annotations[{i}]"
        image_id = str(_require(ann, "image_id", path=path, context=context))
        if image_id not in metas:
            raise ParseError(f"{context}: unknown image_id {image_id!r}",
                             path=path, field="image_id")
        category = str(_require(ann, "category", path=path, context=context))
        bbox = _require(ann, "bbox", path=path, context=context)
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ParseError(f"{context}: bbox must be [x_min, y_min, w, h]",
                             path=path, field="bbox")
        x, y, w, h = (float(v) for v in bbox)
        boxes[image_id].append((category, BoundingBox(x, y, x + w, y + h)))

    records = [
        AnnotationRecord(meta=metas[image_id], kind=RecordKind.DETECTION,
                         detections=tuple(boxes[image_id]))
        for image_id in sorted(metas)
    ]
    return check_records(records, strict=strict, error_sink=error_sink)


def _parse_csv_manifest(path, value_column, *, strict, error_sink):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError("file not found", path=path) from None
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None:
        raise ParseError("empty file", path=path)
    missing = [c for c in (*_CSV_BASE_COLUMNS, value_column) if c not in reader.fieldnames]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", path=path)

    rows_by_id: dict[str, list] = {}
    metas: dict[str, ImageMeta] = {}
    for lineno, row in enumerate(reader, start=2):
        image_id = (row.get("image_id") or "").strip()
        if not image_id and not any((v or "").strip() for v in row.values()):
            continue  # blank line
        meta = ImageMeta(
            image_id=image_id,
            width=_as_int(row.get("width"), path=path, field="width", context=f"line {lineno}"),
            height=_as_int(row.get("height"), path=path, field="height", context=f"line {lineno}"),
            source=(row.get("source") or path.stem).strip(),
            split=(row.get("split") or "").strip(),
            feature_ref=(row.get("feature_ref") or "").strip(),
        )
        prior = metas.get(image_id)
        if prior is not None and prior != meta and value_column == "caption":
            raise ParseError(
                f"image {image_id!r}: conflicting metadata across caption rows",
                path=path, line=lineno)
        metas[image_id] = prior or meta
        rows_by_id.setdefault(image_id, []).append(row.get(value_column) or "")
    return metas, rows_by_id


def parse_classification_manifest(path, *, strict: bool = True,
                                  error_sink: list[str] | None = None) -> list[AnnotationRecord]:
    """Parse a classification CSV: one class label per image, one row per image."""
    metas, rows_by_id = _parse_csv_manifest(path, "class", strict=strict, error_sink=error_sink)
    records = []
    for image_id in sorted(metas):
        labels = rows_by_id[image_id]
        if len(labels) > 1:
            # exactly one class per image; repeated rows are duplicate ids
            msg = f"duplicate image_id {image_id!r} (one class row per image)"
            if strict:
                raise ValidationError(f"{path}: {msg}")
            if error_sink is not None:
                error_sink.append(msg)
            continue
        records.append(AnnotationRecord(meta=metas[image_id], kind=RecordKind.CLASSIFICATION,
                                        class_label=labels[0].strip()))
    return check_records(records, strict=strict, error_sink=error_sink)


def parse_caption_manifest(path, *, strict: bool = True,
                           error_sink: list[str] | None = None) -> list[AnnotationRecord]:
    """Parse a caption CSV: one or more native caption rows per image.

    Caption text is passed through verbatim; only blank captions are
    rejected.
    """
    metas, rows_by_id = _parse_csv_manifest(path, "caption", strict=strict, error_sink=error_sink)
    records = [
        AnnotationRecord(meta=metas[image_id], kind=RecordKind.CAPTION,
                         captions=tuple(rows_by_id[image_id]))
        for image_id in sorted(metas)
    ]
    return check_records(records, strict=strict, error_sink=error_sink)


def write_detection_manifest(records: list[AnnotationRecord], path) -> None:
    """Serialize detection records back to the canonical manifest form."""
    records = sorted(records, key=lambda r: r.meta.image_id)
    source = records[0].meta.source if records else ""
    doc = {
        "format": DETECTION_MANIFEST_FORMAT,
        "format_version": 1,
        "source": source,
        "images": [
            {
                "id": r.meta.image_id,
                "width": r.meta.width,
                "height": r.meta.height,
                "split": r.meta.split,
                "feature_ref": r.meta.feature_ref,
            }
            for r in records
        ],
        "annotations": [
            {
                "image_id": r.meta.image_id,
                "category": label,
                "bbox": [box.x_min, box.y_min, box.width, box.height],
            }
            for r in records
            for label, box in r.detections
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def _write_csv_manifest(records, path, value_column, row_values):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*_CSV_BASE_COLUMNS, value_column])
        for record in sorted(records, key=lambda r: r.meta.image_id):
            meta = record.meta
            base = [meta.image_id, meta.width, meta.height, meta.split,
                    meta.source, meta.feature_ref]
            for value in row_values(record):
                writer.writerow([*base, value])


def write_classification_manifest(records, path) -> None:
    _write_csv_manifest(records, path, "class", lambda r: [r.class_label])


def write_caption_manifest(records, path) -> None:
    _write_csv_manifest(records, path, "caption", lambda r: list(r.captions))


def load_manifest_dir(directory, *, strict: bool = True,
                      error_sink: list[str] | None = None) -> list[AnnotationRecord]:
    """Parse every manifest in a directory.

    ``*.json`` files are detection manifests; ``*.csv`` files are
    classification or caption manifests, told apart by their header.
    """
    directory = Path(directory)
    records: list[AnnotationRecord] = []
    paths = sorted(directory.glob("*.json")) + sorted(directory.glob("*.csv"))
    if not paths:
        raise ParseError("no manifest files found", path=directory)
    for path in paths:
        if path.suffix == ".json":
            records.extend(parse_detection_manifest(path, strict=strict, error_sink=error_sink))
        else:
            header = path.open(encoding="utf-8").readline().strip().split(",")
            if "caption" in header:
                parse = parse_caption_manifest
            elif "class" in header:
                parse = parse_classification_manifest
            else:
                raise ParseError("cannot tell classification from caption manifest "
                                 "(no 'class' or 'caption' column)", path=path)
            records.extend(parse(path, strict=strict, error_sink=error_sink))
    return records
