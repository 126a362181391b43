"""Run metadata: file format versions and config fingerprints.

Every artifact file the toolkit writes (pair corpora, checkpoints, loss
logs, reports, summary rows, exported embeddings) embeds the format version
and a fingerprint of the effective configuration, so downstream aggregation
can refuse to mix incompatible runs.
"""

import hashlib
import json

PAIR_CORPUS_FORMAT = "pair-corpus"
PAIR_CORPUS_VERSION = 1

CHECKPOINT_VERSION = 1

REPORT_FORMAT = "eval-report"
REPORT_VERSION = 1

SUMMARY_VERSION = 1

LOSS_LOG_VERSION = 1

EMBEDDINGS_VERSION = 1


def config_fingerprint(config: dict) -> str:
    """Stable short hash of a fully resolved configuration mapping.

    Keys are sorted and floats serialized by repr via json, so two runs with
    the same effective settings fingerprint identically across processes.
    """
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
