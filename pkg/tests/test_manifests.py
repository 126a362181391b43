import json
import random

import pytest

from saralign.errors import ParseError, ValidationError
from saralign.geometry import BoundingBox
from saralign.manifests import (
    load_manifest_dir,
    parse_caption_manifest,
    parse_classification_manifest,
    parse_detection_manifest,
    write_caption_manifest,
    write_classification_manifest,
    write_detection_manifest,
)
from saralign.records import (
    AnnotationRecord,
    ImageMeta,
    RecordKind,
    validate_records,
)


def det_manifest(tmp_path, images, annotations, source="unit"):
    path = tmp_path / "det.json"
    path.write_text(json.dumps({"source": source, "images": images, "annotations": annotations}))
    return path


def csv_manifest(tmp_path, rows, value_column, name="m.csv"):
    path = tmp_path / name
    header = f"image_id,width,height,split,source,feature_ref,{value_column}\n"
    path.write_text(header + "\n".join(rows) + "\n")
    return path


class TestDetectionManifest:
    def test_single_image_two_boxes(self, tmp_path):
        path = det_manifest(
            tmp_path,
            [{"id": "img_1", "width": 100, "height": 100, "split": "train", "feature_ref": "f"}],
            [
                {"image_id": "img_1", "category": "ship", "bbox": [0, 0, 10, 10]},
                {"image_id": "img_1", "category": "ship", "bbox": [20, 20, 10, 10]},
            ],
        )
        records = parse_detection_manifest(path)
        assert len(records) == 1
        rec = records[0]
        assert rec.kind is RecordKind.DETECTION
        assert len(rec.detections) == 2
        assert rec.detections[0][1] == BoundingBox(0, 0, 10, 10)

    def test_zero_width_box_rejected(self, tmp_path):
        path = det_manifest(
            tmp_path,
            [{"id": "img_1", "width": 100, "height": 100, "split": "train"}],
            [{"image_id": "img_1", "category": "ship", "bbox": [50, 50, 0, 30]}],
        )
        with pytest.raises(ValidationError, match="img_1"):
            parse_detection_manifest(path)

    def test_box_outside_image_rejected(self, tmp_path):
        path = det_manifest(
            tmp_path,
            [{"id": "img_1", "width": 100, "height": 100, "split": "train"}],
            [{"image_id": "img_1", "category": "ship", "bbox": [90, 90, 20, 20]}],
        )
        with pytest.raises(ValidationError, match="img_1"):
            parse_detection_manifest(path)

    def test_records_sorted_by_image_id(self, tmp_path):
        images = [
            {"id": f"img_{i}", "width": 10, "height": 10, "split": "train"} for i in (3, 1, 2)
        ]
        anns = [
            {"image_id": f"img_{i}", "category": "tank", "bbox": [1, 1, 2, 2]} for i in (3, 1, 2)
        ]
        records = parse_detection_manifest(det_manifest(tmp_path, images, anns))
        assert [r.meta.image_id for r in records] == ["img_1", "img_2", "img_3"]

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"images": [\n  {"id": }\n]}')
        with pytest.raises(ParseError, match="line"):
            parse_detection_manifest(path)

    def test_missing_field_named(self, tmp_path):
        path = det_manifest(tmp_path, [{"id": "a", "width": 4, "split": "train"}], [])
        with pytest.raises(ParseError, match="height"):
            parse_detection_manifest(path)

    def test_permissive_drops_only_bad_records(self, tmp_path):
        images = [{"id": f"i{k}", "width": 50, "height": 50, "split": "train"} for k in range(3)]
        anns = [{"image_id": "i0", "category": "c", "bbox": [0, 0, 5, 5]},
                {"image_id": "i1", "category": "c", "bbox": [49, 0, 5, 5]},  # runs outside
                {"image_id": "i2", "category": "c", "bbox": [1, 1, 5, 5]}]
        sink = []
        records = parse_detection_manifest(det_manifest(tmp_path, images, anns),
                                           strict=False, error_sink=sink)
        assert [r.meta.image_id for r in records] == ["i0", "i2"]
        assert len(sink) == 1


class TestClassificationManifest:
    def test_basic_row(self, tmp_path):
        path = csv_manifest(tmp_path, ["img_001,64,64,train,mock,f.feats,T-72"], "class")
        records = parse_classification_manifest(path)
        assert records[0].class_label == "T-72"
        assert records[0].meta.split == "train"

    def test_empty_class_rejected(self, tmp_path):
        path = csv_manifest(tmp_path, ["img_001,64,64,train,mock,f.feats,"], "class")
        with pytest.raises(ValidationError, match="img_001"):
            parse_classification_manifest(path)

    def test_duplicate_id_rejected(self, tmp_path):
        rows = ["a,64,64,train,mock,f,ship", "a,64,64,train,mock,f,tank"]
        with pytest.raises(ValidationError, match="'a'"):
            parse_classification_manifest(csv_manifest(tmp_path, rows, "class"))

    def test_unknown_columns_ignored(self, tmp_path):
        path = tmp_path / "extra.csv"
        path.write_text(
            "image_id,width,height,split,source,feature_ref,class,comment\n"
            "a,8,8,val,mock,f,ship,ignore me\n"
        )
        records = parse_classification_manifest(path)
        assert records[0].class_label == "ship"


class TestCaptionManifest:
    def test_multiple_captions_pass_through(self, tmp_path):
        rows = [
            'c1,32,32,train,mock,f,"A bridge spans the river."',
            'c1,32,32,train,mock,f,"Two ships, moored."',
            "c1,32,32,train,mock,f,Harbor scene.",
        ]
        records = parse_caption_manifest(csv_manifest(tmp_path, rows, "caption"))
        assert len(records) == 1
        assert records[0].captions == (
            "A bridge spans the river.", "Two ships, moored.", "Harbor scene.")

    def test_whitespace_caption_rejected(self, tmp_path):
        rows = ["c1,32,32,train,mock,f,   "]
        with pytest.raises(ValidationError, match="blank caption"):
            parse_caption_manifest(csv_manifest(tmp_path, rows, "caption"))

    def test_caption_counts_preserved(self, tmp_path):
        rng = random.Random(5)
        rows, total = [], 0
        for i in range(40):
            n = rng.randrange(1, 6)
            total += n
            rows.extend(f"img{i:03d},16,16,train,mock,f,Caption {i} variant {j}."
                        for j in range(n))
        records = parse_caption_manifest(csv_manifest(tmp_path, rows, "caption"))
        assert len(records) == 40
        assert sum(len(r.captions) for r in records) == total


class TestValidateRecords:
    @staticmethod
    def make_record(i, split="train", source="s"):
        meta = ImageMeta(f"img{i:04d}", 32, 32, source, split, "f")
        return AnnotationRecord(meta=meta, kind=RecordKind.CLASSIFICATION, class_label="tank")

    def test_all_valid(self):
        report = validate_records([self.make_record(i) for i in range(10)])
        assert report.ok
        assert report.n_images == 10

    def test_one_bad_among_100(self):
        records = [self.make_record(i) for i in range(99)]
        bad_meta = ImageMeta("bad", 32, 32, "s", "train", "f")
        records.append(AnnotationRecord(meta=bad_meta, kind=RecordKind.DETECTION,
                                        detections=(("t", BoundingBox(5, 5, 5, 9)),)))
        report = validate_records(records)
        assert len(report.errors) == 1
        assert "bad" in report.errors[0]

    def test_per_split_counts(self):
        records = [self.make_record(i, split=s)
                   for i, s in enumerate(["train"] * 3 + ["val"] * 2 + ["test"])]
        report = validate_records(records)
        assert report.images_by_split == {"train": 3, "val": 2, "test": 1}

    def test_fuzz_catches_every_injected_violation(self):
        rng = random.Random(99)
        records, n_bad = [], 0
        for i in range(200):
            meta = ImageMeta(f"img{i:04d}", 40, 40, "s", "train", "f")
            roll = rng.random()
            if roll < 0.1:   # zero-area box
                n_bad += 1
                rec = AnnotationRecord(meta=meta, kind=RecordKind.DETECTION,
                                       detections=(("t", BoundingBox(3, 3, 3, 10)),))
            elif roll < 0.2:  # box out of range
                n_bad += 1
                rec = AnnotationRecord(meta=meta, kind=RecordKind.DETECTION,
                                       detections=(("t", BoundingBox(30, 30, 45, 39)),))
            elif roll < 0.3:  # duplicate id
                n_bad += 1
                rec = AnnotationRecord(
                    meta=ImageMeta("img0000", 40, 40, "s", "train", "f"),
                    kind=RecordKind.CLASSIFICATION, class_label="t")
            else:
                rec = AnnotationRecord(meta=meta, kind=RecordKind.DETECTION,
                                       detections=(("t", BoundingBox(1, 1, 9, 9)),))
            records.append(rec)
        report = validate_records(records)
        assert len(report.errors) == n_bad


class TestRoundTrip:
    def test_detection_round_trip(self, tmp_path):
        images = [{"id": f"d{i}", "width": 60, "height": 40, "split": "train",
                   "feature_ref": "store.feats"} for i in range(5)]
        anns = [{"image_id": f"d{i}", "category": "ship", "bbox": [i, i, 10, 5]}
                for i in range(5)]
        first = parse_detection_manifest(det_manifest(tmp_path, images, anns))
        out = tmp_path / "rt.json"
        write_detection_manifest(first, out)
        assert parse_detection_manifest(out) == first

    def test_csv_round_trips(self, tmp_path):
        cls = parse_classification_manifest(csv_manifest(
            tmp_path, ["a,8,8,train,mock,f,ship", "b,8,8,val,mock,f,tank"], "class", "c.csv"))
        out = tmp_path / "rt.csv"
        write_classification_manifest(cls, out)
        assert parse_classification_manifest(out) == cls

        cap = parse_caption_manifest(csv_manifest(
            tmp_path, ['x,8,8,test,mock,f,"One, two."', "x,8,8,test,mock,f,Three."],
            "caption", "cap.csv"))
        out2 = tmp_path / "rt2.csv"
        write_caption_manifest(cap, out2)
        assert parse_caption_manifest(out2) == cap

    def test_identical_bytes_identical_records(self, tmp_path):
        images = [{"id": f"z{i}", "width": 9, "height": 9, "split": "test"} for i in range(4)]
        anns = [{"image_id": f"z{i}", "category": "c", "bbox": [0, 0, 2, 2]} for i in range(4)]
        path = det_manifest(tmp_path, images, anns)
        assert parse_detection_manifest(path) == parse_detection_manifest(path)


class TestManifestDir:
    def test_mixed_directory(self, tmp_path):
        det_manifest(tmp_path,
                     [{"id": "d1", "width": 30, "height": 30, "split": "train"}],
                     [{"image_id": "d1", "category": "ship", "bbox": [0, 0, 4, 4]}])
        csv_manifest(tmp_path, ["c1,8,8,train,cls,f,tank"], "class", "cls.csv")
        csv_manifest(tmp_path, ["p1,8,8,train,cap,f,A calm harbor."], "caption", "cap.csv")
        records = load_manifest_dir(tmp_path)
        kinds = sorted(r.kind.value for r in records)
        assert kinds == ["caption", "classification", "detection"]

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ParseError, match="no manifest"):
            load_manifest_dir(tmp_path)
