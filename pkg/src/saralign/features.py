"""Binary feature store: the desk-scale stand-in for image pixels.

The store is a raw little-endian float64 file, one row per image, with a
sidecar JSON index (``<store>.idx``) carrying the feature dimension and the
image_id -> row mapping. Pair records point at a store through their
feature_ref, resolved relative to the corpus file when not absolute.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

SIDECAR_SUFFIX = ".idx"


def write_feature_store(path, features: np.ndarray, image_ids) -> None:
    """Write an N x d_img float64 matrix plus its sidecar index."""
    path = Path(path)
    features = np.ascontiguousarray(features, dtype=np.float64)
    image_ids = list(image_ids)
    if features.ndim != 2 or features.shape[0] != len(image_ids):
        raise ValidationError("features must be N x d with one row per image id")
    path.write_bytes(features.astype("<f8").tobytes())
    sidecar = {
        "dim": features.shape[1],
        "rows": {image_id: row for row, image_id in enumerate(image_ids)},
    }
    Path(str(path) + SIDECAR_SUFFIX).write_text(json.dumps(sidecar), encoding="utf-8")


class FeatureStore:
    """Read-only view over one feature file."""

    def __init__(self, path):
        self.path = Path(path)
        sidecar_path = Path(str(self.path) + SIDECAR_SUFFIX)
        if not self.path.exists():
            raise ValidationError(f"feature store not found: {self.path}")
        if not sidecar_path.exists():
            raise ValidationError(f"feature store sidecar not found: {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        self.dim = int(sidecar["dim"])
        self.rows: dict[str, int] = {k: int(v) for k, v in sidecar["rows"].items()}
        raw = np.frombuffer(self.path.read_bytes(), dtype="<f8")
        if self.dim <= 0 or raw.size % self.dim != 0:
            raise ValidationError(f"feature store {self.path} size does not match dim {self.dim}")
        self.matrix = raw.reshape(-1, self.dim)
        if len(self.rows) > self.matrix.shape[0]:
            raise ValidationError(f"feature store sidecar indexes more rows than {self.path} has")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError(f"feature store {self.path} contains non-finite values")

    def get(self, image_id: str) -> np.ndarray:
        row = self.rows.get(image_id)
        if row is None:
            raise ValidationError(f"image_id {image_id!r} not in feature store {self.path}")
        return self.matrix[row]

    def gather(self, image_ids) -> np.ndarray:
        return self.matrix[[self._row(i) for i in image_ids]]

    def _row(self, image_id: str) -> int:
        row = self.rows.get(image_id)
        if row is None:
            raise ValidationError(f"image_id {image_id!r} not in feature store {self.path}")
        return row


class FeatureResolver:
    """Resolves (feature_ref, image_id) pairs across one or more stores."""

    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self._stores: dict[Path, FeatureStore] = {}

    def store_for(self, feature_ref: str) -> FeatureStore:
        if not feature_ref:
            raise ValidationError("record has an empty feature_ref")
        ref = Path(feature_ref)
        path = ref if ref.is_absolute() else self.base_dir / ref
        path = path.resolve()
        if path not in self._stores:
            self._stores[path] = FeatureStore(path)
        return self._stores[path]

    def gather(self, refs_and_ids) -> np.ndarray:
        """Feature matrix for [(feature_ref, image_id), ...], row-aligned."""
        rows = [self.store_for(ref).get(image_id) for ref, image_id in refs_and_ids]
        if not rows:
            raise ValidationError("no feature rows requested")
        dims = {r.shape[0] for r in rows}
        if len(dims) > 1:
            raise ValidationError(f"inconsistent feature dimensions across stores: {sorted(dims)}")
        return np.stack(rows)
