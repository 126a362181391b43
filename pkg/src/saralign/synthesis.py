"""Caption synthesis from annotation records and pair-corpus export.

Synthesis is a pure function of (records, seed, captions-per-image): each
record draws from its own sub-generator derived from the global seed and the
image id, so results are byte-identical under any parallelism, and export
writes records in sorted order through a single writer.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import cycle, islice
from pathlib import Path

from .errors import ParseError, TrainingError, ValidationError
from .geometry import RegionLabel, iou, region_boxes, relative_direction
from .meta import PAIR_CORPUS_FORMAT, PAIR_CORPUS_VERSION
from .records import AnnotationRecord, RecordKind
from .templates import (
    ABSOLUTE_TEMPLATES,
    COMPLEX_TEMPLATES,
    DIRECTION_PHRASES,
    GENERAL_TEMPLATES,
    REGION_PHRASES,
    RELATIVE_TEMPLATES,
    Caption,
    TemplateKind,
    fill_template,
    summarize_objects,
    verify_caption,
)

DEFAULT_CAPTIONS_PER_IMAGE = 5
MAX_REJECTION_RATE = 0.01

# one synthesis slot per caption; cycled to honor any captions-per-image
_DETECTION_PATTERN = ("general", "absolute", "general", "absolute", "relative")

_REGION_ORDER = {label: i for i, label in enumerate(RegionLabel)}


@dataclass(frozen=True, slots=True)
class PairRecord:
    image_id: str
    source: str
    split: str
    feature_ref: str
    caption: Caption


@dataclass
class CorpusStats:
    images: Counter = field(default_factory=Counter)    # (source, split) -> n
    captions: Counter = field(default_factory=Counter)  # (source, split) -> n
    rejected: int = 0

    @property
    def total_images(self) -> int:
        return sum(self.images.values())

    @property
    def total_captions(self) -> int:
        return sum(self.captions.values())

    def images_for_source(self, source: str) -> int:
        return sum(n for (src, _), n in self.images.items() if src == source)

    def captions_for_source(self, source: str) -> int:
        return sum(n for (src, _), n in self.captions.items() if src == source)

    def as_dict(self) -> dict:
        per_source: dict[str, dict] = {}
        for (source, split), n in sorted(self.images.items()):
            row = per_source.setdefault(source, {})
            row[split] = {"images": n, "captions": self.captions.get((source, split), 0)}
        return {
            "total_images": self.total_images,
            "total_captions": self.total_captions,
            "rejected": self.rejected,
            "per_source": per_source,
        }


def record_rng(seed: int, record: AnnotationRecord) -> random.Random:
    """Per-record generator: stable digest of (seed, source, image id)."""
    key = f"{seed}:{record.meta.source}:{record.meta.image_id}"
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def _sample_cycled(rng: random.Random, pool, n: int):
    """n picks, without replacement until the pool is exhausted, then again."""
    picks = []
    while len(picks) < n:
        picks.extend(rng.sample(pool, min(len(pool), n - len(picks))))
    return picks


def _classification_captions(record, rng, n):
    pool = GENERAL_TEMPLATES + COMPLEX_TEMPLATES
    if n > len(pool):
        raise ValidationError(
            f"captions-per-image {n} exceeds the general/complex pool size {len(pool)}")
    slots = {"class": record.class_label}
    return [fill_template(t, slots, record.meta.image_id) for t in rng.sample(pool, n)]


def _detection_captions(record, rng, n):
    meta = record.meta
    entries = record.detections
    image_id = meta.image_id

    plan = list(islice(cycle(_DETECTION_PATTERN), n))
    region_rects = region_boxes(meta.width, meta.height).items()
    regions = [
        max(region_rects, key=lambda item: (iou(box, item[1]), -_REGION_ORDER[item[0]]))[0]
        for _label, box in entries
    ]
    by_region: dict = {}
    for entry, region in zip(entries, regions):
        by_region.setdefault(region, []).append(entry)
    occupied = sorted(by_region, key=_REGION_ORDER.__getitem__)

    # relative captions need two targets with distinct centers
    pair_pool = [
        (i, j)
        for i, a in enumerate(entries)
        for j, b in enumerate(entries)
        if i != j and a[1].center != b[1].center
    ]
    if not pair_pool:
        plan = ["absolute" if kind == "relative" else kind for kind in plan]

    n_general = plan.count("general")
    n_absolute = plan.count("absolute")
    general_templates = iter(
        _sample_cycled(rng, GENERAL_TEMPLATES + COMPLEX_TEMPLATES, n_general))
    absolute_regions = iter(_sample_cycled(rng, occupied, n_absolute))
    absolute_templates = iter(_sample_cycled(rng, ABSOLUTE_TEMPLATES, n_absolute))

    whole_phrase = summarize_objects(entries)
    captions = []
    for kind in plan:
        if kind == "general":
            captions.append(fill_template(next(general_templates),
                                          {"class": whole_phrase}, image_id))
        elif kind == "absolute":
            region = next(absolute_regions)
            slots = {
                "class": summarize_objects(by_region[region]),
                "location": REGION_PHRASES[region],
            }
            captions.append(fill_template(next(absolute_templates), slots, image_id))
        else:
            i, j = rng.choice(pair_pool)
            a, b = entries[i], entries[j]
            slots = {
                "class1": a[0],
                "location1": REGION_PHRASES[regions[i]],
                "relative_direction": DIRECTION_PHRASES[relative_direction(a[1], b[1])],
                "class2": b[0],
                "location2": REGION_PHRASES[regions[j]],
            }
            captions.append(fill_template(rng.choice(RELATIVE_TEMPLATES), slots, image_id))
    return captions


def synthesize_captions(record: AnnotationRecord, rng: random.Random,
                        n: int = DEFAULT_CAPTIONS_PER_IMAGE) -> list[Caption]:
    """Generate the captions for one record.

    Classification records sample n templates from the general+complex pools
    without replacement. Detection records follow a fixed general/absolute/
    relative mix (2/2/1 at the default n=5), falling back to absolute
    captions when no two targets have distinct centers. Caption records pass
    their native texts through unchanged (n is ignored).
    """
    if n < 1:
        raise ValidationError("captions-per-image must be >= 1")
    if record.kind is RecordKind.CAPTION:
        return [Caption(text, "native", TemplateKind.NATIVE, record.meta.image_id)
                for text in record.captions]
    if record.kind is RecordKind.CLASSIFICATION:
        return _classification_captions(record, rng, n)
    return _detection_captions(record, rng, n)


def build_pairs(record: AnnotationRecord, captions: list[Caption],
                verifier=verify_caption) -> tuple[list[PairRecord], int]:
    """Pair records for one image: verified captions, 1:1 on the test split.

    Returns the kept pairs and the number of captions the verifier rejected.
    """
    meta = record.meta
    kept, rejected = [], 0
    for caption in captions:
        ok, _reason = verifier(caption)
        if not ok:
            rejected += 1
            continue
        kept.append(PairRecord(meta.image_id, meta.source, meta.split,
                               meta.feature_ref, caption))
        if meta.split == "test":
            break  # test images carry exactly one caption
    return kept, rejected


def synthesize_pairs(records: list[AnnotationRecord], *, seed: int,
                     captions_per_image: int = DEFAULT_CAPTIONS_PER_IMAGE,
                     threads: int = 1,
                     verifier=verify_caption) -> tuple[list[PairRecord], CorpusStats]:
    """Synthesize the full pair corpus, ordered by (image_id, source)."""
    ordered = sorted(records, key=lambda r: (r.meta.image_id, r.meta.source))

    def synth_one(record):
        captions = synthesize_captions(record, record_rng(seed, record), captions_per_image)
        return build_pairs(record, captions, verifier)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(synth_one, ordered, chunksize=256))
    else:
        results = [synth_one(r) for r in ordered]

    stats = CorpusStats()
    pairs: list[PairRecord] = []
    for record, (kept, rejected) in zip(ordered, results):
        key = (record.meta.source, record.meta.split)
        stats.images[key] += 1
        stats.captions[key] += len(kept)
        stats.rejected += rejected
        pairs.extend(kept)
    total = stats.total_captions + stats.rejected
    if total and stats.rejected / total > MAX_REJECTION_RATE:
        raise TrainingError(
            f"caption verification rejected {stats.rejected}/{total} captions "
            f"(>{MAX_REJECTION_RATE:.0%}); template pool is broken")
    return pairs, stats


def write_pairs(pairs: list[PairRecord], out, *, fingerprint: str, seed: int,
                captions_per_image: int = DEFAULT_CAPTIONS_PER_IMAGE) -> None:
    """Write the pair corpus: one JSON object per line after a header line."""
    header = {
        "format": PAIR_CORPUS_FORMAT,
        "format_version": PAIR_CORPUS_VERSION,
        "config_fingerprint": fingerprint,
        "seed": seed,
        "captions_per_image": captions_per_image,
    }
    dumps = json.dumps
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(dumps(header, sort_keys=True) + "\n")
        for p in pairs:
            fh.write(dumps({
                "image_id": p.image_id,
                "source": p.source,
                "split": p.split,
                "feature_ref": p.feature_ref,
                "caption_text": p.caption.text,
                "template_id": p.caption.template_id,
                "template_kind": p.caption.kind.value,
            }) + "\n")


def export_pairs(records: list[AnnotationRecord], out, *, seed: int,
                 captions_per_image: int = DEFAULT_CAPTIONS_PER_IMAGE,
                 fingerprint: str = "", threads: int = 1,
                 verifier=verify_caption) -> CorpusStats:
    """Synthesize, verify and write the corpus in one pass; returns stats."""
    pairs, stats = synthesize_pairs(
        records, seed=seed, captions_per_image=captions_per_image,
        threads=threads, verifier=verifier)
    write_pairs(pairs, out, fingerprint=fingerprint, seed=seed,
                captions_per_image=captions_per_image)
    return stats


def read_pairs(path) -> tuple[dict, list[PairRecord]]:
    """Load a pair corpus; returns (header, pairs)."""
    path = Path(path)
    pairs: list[PairRecord] = []
    header: dict | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from None
            if lineno == 1:
                if obj.get("format") != PAIR_CORPUS_FORMAT:
                    raise ParseError("missing pair-corpus header line", path=path, line=1)
                if obj.get("format_version") != PAIR_CORPUS_VERSION:
                    raise ParseError(
                        f"unsupported pair-corpus version {obj.get('format_version')}",
                        path=path, line=1)
                header = obj
                continue
            try:
                caption = Caption(obj["caption_text"], obj["template_id"],
                                  TemplateKind(obj["template_kind"]), obj["image_id"])
                pairs.append(PairRecord(obj["image_id"], obj["source"], obj["split"],
                                        obj["feature_ref"], caption))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad pair record: {exc}", path=path, line=lineno) from None
    if header is None:
        raise ParseError("empty corpus file", path=path)
    return header, pairs
