"""Versioned binary checkpoints for encoder weights and optimizer state.

Layout: magic string, u32 format version, u64 header length, JSON header
(stage tag, config snapshot, vocab tokens and hash, tensor manifest), then
raw little-endian float64 tensor payloads in manifest order, then optional
Adam moments. Tensors round-trip bit-exactly; writes go through a temp file
and an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .meta import CHECKPOINT_VERSION
from .network import EncoderParams
from .optim import AdamState
from .text import Vocab

MAGIC = b"SARCLIP-CKPT"
STAGE_TAGS = ("stage1", "stage2", "probe")


@dataclass
class Checkpoint:
    stage_tag: str
    params: EncoderParams
    vocab: Vocab
    config: dict
    fingerprint: str = ""
    adam: AdamState | None = None
    extra_tensors: dict[str, np.ndarray] = field(default_factory=dict)
    extra_meta: dict = field(default_factory=dict)

    def encoder_sha256(self) -> str:
        """Hash of the encoder weights; used to enforce freeze contracts."""
        import hashlib

        digest = hashlib.sha256()
        for name, tensor in self.params.named_tensors():
            digest.update(name.encode("utf-8"))
            digest.update(str(tensor.shape).encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        return digest.hexdigest()


def _params_from_named(named: dict[str, np.ndarray]) -> EncoderParams:
    def layer_arrays(prefix):
        ws, bs, l = [], [], 0
        while f"{prefix}.{l}.W" in named:
            ws.append(named[f"{prefix}.{l}.W"])
            bs.append(named[f"{prefix}.{l}.b"])
            l += 1
        return ws, bs

    img_w, img_b = layer_arrays("img")
    txt_w, txt_b = layer_arrays("txt")
    for key in ("txt.embed", "log_tau"):
        if key not in named:
            raise ValidationError(f"checkpoint is missing tensor {key}")
    if not img_w or not txt_w:
        raise ValidationError("checkpoint is missing tower layers")
    return EncoderParams(
        image_weights=img_w, image_biases=img_b,
        token_embedding=named["txt.embed"],
        text_weights=txt_w, text_biases=txt_b,
        log_tau=named["log_tau"],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    if ckpt.stage_tag not in STAGE_TAGS:
        raise ValidationError(f"unknown stage tag {ckpt.stage_tag!r}")
    named = ckpt.params.named_tensors() + sorted(ckpt.extra_tensors.items())
    header = {
        "stage_tag": ckpt.stage_tag,
        "config": ckpt.config,
        "config_fingerprint": ckpt.fingerprint,
        "vocab_tokens": list(ckpt.vocab.tokens),
        "vocab_sha256": ckpt.vocab.sha256(),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "n_extra": len(ckpt.extra_tensors),
        "extra_meta": ckpt.extra_meta,
        "has_moments": ckpt.adam is not None,
    }
    if ckpt.adam is not None:
        header["adam"] = {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                          "eps": ckpt.adam.eps, "step": ckpt.adam.step}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _name, tensor in named:
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        if ckpt.adam is not None:
            for name, tensor in named[: len(named) - len(ckpt.extra_tensors)]:
                m = ckpt.adam.m.get(name, np.zeros_like(tensor))
                v = ckpt.adam.v.get(name, np.zeros_like(tensor))
                fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise ValidationError(f"checkpoint not found: {path}") from None
    if blob[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: unsupported checkpoint version {version} "
            f"(expected {CHECKPOINT_VERSION})")
    (header_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    header = json.loads(blob[offset: offset + header_len].decode("utf-8"))
    offset += header_len

    def read_tensor(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += count * 8
        return arr.reshape(shape)

    named: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        named[entry["name"]] = read_tensor(entry["shape"])

    n_extra = header.get("n_extra", 0)
    core_entries = header["tensors"][: len(header["tensors"]) - n_extra]
    extra_entries = header["tensors"][len(header["tensors"]) - n_extra:]
    params = _params_from_named({e["name"]: named[e["name"]] for e in core_entries})

    adam = None
    if header.get("has_moments"):
        spec = header["adam"]
        adam = AdamState(beta1=spec["beta1"], beta2=spec["beta2"],
                         eps=spec["eps"], step=spec["step"])
        for entry in core_entries:
            adam.m[entry["name"]] = read_tensor(entry["shape"])
            adam.v[entry["name"]] = read_tensor(entry["shape"])

    vocab = Vocab.from_tokens(header["vocab_tokens"])
    if vocab.sha256() != header["vocab_sha256"]:
        raise ValidationError(f"{path}: vocab hash mismatch")
    return Checkpoint(
        stage_tag=header["stage_tag"],
        params=params,
        vocab=vocab,
        config=header["config"],
        fingerprint=header.get("config_fingerprint", ""),
        adam=adam,
        extra_tensors={e["name"]: named[e["name"]] for e in extra_entries},
        extra_meta=header.get("extra_meta", {}),
    )
