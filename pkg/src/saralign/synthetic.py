"""Built-in clustered benchmark corpus for CI and desk-scale experiments.

Each image is a latent (class, region, count) combination rendered two ways:
a feature vector (weighted sum of per-attribute prototype vectors plus
noise) and a caption naming all three attributes. Test combinations are
sampled without replacement so every test pair is uniquely identifiable,
which is what retrieval needs.

The "source" domain shares the attribute vocabulary but perturbs the
prototypes; pretraining on it and fine-tuning on the target domain is the
desk-scale analog of optical-to-SAR transfer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import write_feature_store
from .geometry import RegionLabel
from .manifests import write_classification_manifest
from .records import AnnotationRecord, ImageMeta, RecordKind
from .synthesis import PairRecord, write_pairs
from .templates import REGION_PHRASES, TemplateKind, Caption, count_word, pluralize

CLASS_NAMES = ("aircraft", "bridge", "building", "harbor",
               "runway", "ship", "tank", "truck")
COUNTS = (1, 2, 3, 4)
FEATURE_DIM = 32
FEATURE_STORE_NAME = "features.f64"

_CAPTION_TEMPLATE_ID = "a-01"


@dataclass
class SyntheticCorpus:
    features: np.ndarray
    image_ids: list[str]
    labels: dict[str, str]            # image_id -> class name
    train_pairs: list[PairRecord]
    test_pairs: list[PairRecord]
    seed: int
    domain: str

    def write(self, out_dir, fingerprint: str = "") -> dict[str, Path]:
        """Write feature store, train/test pair corpora and a labels manifest."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        store = out_dir / FEATURE_STORE_NAME
        write_feature_store(store, self.features, self.image_ids)
        paths = {
            "features": store,
            "train": out_dir / "pairs_train.jsonl",
            "test": out_dir / "pairs_test.jsonl",
            "labels": out_dir / "labels.csv",
        }
        write_pairs(self.train_pairs, paths["train"], fingerprint=fingerprint,
                    seed=self.seed, captions_per_image=1)
        write_pairs(self.test_pairs, paths["test"], fingerprint=fingerprint,
                    seed=self.seed, captions_per_image=1)
        records = [
            AnnotationRecord(
                meta=ImageMeta(image_id, 64, 64, f"synthetic-{self.domain}",
                               split, FEATURE_STORE_NAME),
                kind=RecordKind.CLASSIFICATION,
                class_label=self.labels[image_id])
            for image_id, split in self._splits()
        ]
        write_classification_manifest(records, paths["labels"])
        return paths

    def _splits(self):
        train_ids = {p.image_id for p in self.train_pairs}
        for image_id in self.image_ids:
            yield image_id, ("train" if image_id in train_ids else "test")


def _caption_text(class_name: str, region: RegionLabel, count: int) -> str:
    phrase = f"{count_word(count)} {pluralize(class_name, count)}"
    return f"A SAR image of {phrase} located in the {REGION_PHRASES[region]} of the image."


def make_synthetic_corpus(*, seed: int = 0, domain: str = "target",
                          n_train: int = 512, n_test: int = 128,
                          noise: float = 0.05) -> SyntheticCorpus:
    """Generate the clustered benchmark (8 classes x 5 regions x 4 counts).

    The class component carries twice the weight of region and count so
    class clusters stay dominant for zero-shot and probing, while region
    and count make individual pairs identifiable for retrieval.
    """
    if domain not in ("target", "source"):
        raise ValidationError(f"unknown domain {domain!r}")
    n_classes = len(CLASS_NAMES)
    regions = list(RegionLabel)
    combos_per_class = len(regions) * len(COUNTS)
    if n_test > n_classes * combos_per_class:
        raise ValidationError(
            f"n_test={n_test} exceeds the {n_classes * combos_per_class} distinct combinations")
    if n_train % n_classes or n_test % n_classes:
        raise ValidationError(f"corpus sizes must be multiples of {n_classes} for "
                              "stratified sampling")

    proto_rng = np.random.default_rng(seed)
    class_proto = proto_rng.normal(size=(n_classes, FEATURE_DIM))
    region_proto = proto_rng.normal(size=(len(regions), FEATURE_DIM))
    count_proto = proto_rng.normal(size=(len(COUNTS), FEATURE_DIM))
    if domain == "source":
        shift_rng = np.random.default_rng(seed + 7_654_321)
        class_proto = class_proto + 0.35 * shift_rng.normal(size=class_proto.shape)
        region_proto = region_proto + 0.35 * shift_rng.normal(size=region_proto.shape)
        count_proto = count_proto + 0.35 * shift_rng.normal(size=count_proto.shape)

    sample_rng = np.random.default_rng((seed, 1 if domain == "target" else 2))
    features, image_ids, labels = [], [], {}
    train_pairs, test_pairs = [], []
    source_name = f"synthetic-{domain}"

    def add_image(split, index, class_idx, region_idx, count_idx):
        image_id = f"{domain[0]}{split[:2]}{index:05d}"
        vec = (2.0 * class_proto[class_idx]
               + region_proto[region_idx]
               + count_proto[count_idx]
               + noise * sample_rng.normal(size=FEATURE_DIM))
        features.append(vec)
        image_ids.append(image_id)
        class_name = CLASS_NAMES[class_idx]
        labels[image_id] = class_name
        text = _caption_text(class_name, regions[region_idx], COUNTS[count_idx])
        caption = Caption(text, _CAPTION_TEMPLATE_ID,
                          TemplateKind.ABSOLUTE_REGION, image_id)
        pair = PairRecord(image_id, source_name, split, FEATURE_STORE_NAME, caption)
        (train_pairs if split == "train" else test_pairs).append(pair)

    per_class_train = n_train // n_classes
    per_class_test = n_test // n_classes
    index = 0
    for class_idx in range(n_classes):
        for _ in range(per_class_train):
            add_image("train", index, class_idx,
                      int(sample_rng.integers(len(regions))),
                      int(sample_rng.integers(len(COUNTS))))
            index += 1
    for class_idx in range(n_classes):
        combo_ids = sample_rng.permutation(combos_per_class)[:per_class_test]
        for combo in combo_ids:
            add_image("test", index, class_idx,
                      int(combo) // len(COUNTS), int(combo) % len(COUNTS))
            index += 1

    return SyntheticCorpus(
        features=np.stack(features), image_ids=image_ids, labels=labels,
        train_pairs=train_pairs, test_pairs=test_pairs, seed=seed, domain=domain)
