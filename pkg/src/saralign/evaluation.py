"""Evaluation: ranked retrieval, zero-shot classification, linear probing.

Ranking ties are broken by ascending item index so results are identical
across platforms. Probe training never touches the encoder; that contract
is enforced by hashing the encoder weights before and after.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .errors import TrainingError, ValidationError
from .network import cosine_similarity_matrix, image_forward, text_forward
from .optim import AdamState, adam_step
from .templates import GENERAL_TEMPLATES, fill_template
from .text import tokenize

DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalReport:
    direction: str                    # "image_to_text" | "text_to_image"
    recall_at: dict[int, float]

    def __post_init__(self):
        ks = sorted(self.recall_at)
        values = [self.recall_at[k] for k in ks]
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValidationError(f"recall must be non-decreasing in K: {self.recall_at}")

    @property
    def mean(self) -> float:
        return sum(self.recall_at.values()) / len(self.recall_at)


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    per_class: dict[str, float] = field(default_factory=dict)
    fingerprint: str = ""
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "task": self.task,
            "metrics": self.metrics,
            "per_class": self.per_class,
            "config_fingerprint": self.fingerprint,
            "notes": self.notes,
        }


def true_item_ranks(similarities: np.ndarray, ground_truth) -> np.ndarray:
    """0-based rank of each query's true item; ties broken by item index."""
    similarities = np.asarray(similarities, dtype=np.float64)
    truth = np.asarray(ground_truth, dtype=np.int64)
    if truth.shape[0] != similarities.shape[0]:
        raise ValidationError("ground truth must cover every query")
    if truth.min() < 0 or truth.max() >= similarities.shape[1]:
        raise ValidationError("ground-truth item index out of range")
    rows = np.arange(similarities.shape[0])
    true_scores = similarities[rows, truth]
    better = (similarities > true_scores[:, None]).sum(axis=1)
    tied_earlier = (
        (similarities == true_scores[:, None])
        & (np.arange(similarities.shape[1])[None, :] < truth[:, None])
    ).sum(axis=1)
    return better + tied_earlier


def recall_at_k(similarities: np.ndarray, ground_truth, k: int) -> float:
    """Fraction of queries whose true item ranks in the top k."""
    similarities = np.asarray(similarities, dtype=np.float64)
    if not 1 <= k <= similarities.shape[1]:
        raise ValidationError(f"k={k} out of range for {similarities.shape[1]} items")
    ranks = true_item_ranks(similarities, ground_truth)
    return float((ranks < k).mean())


def accuracy(predictions, labels) -> float:
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise ValidationError("predictions and labels differ in length")
    if not labels:
        raise ValidationError("cannot score an empty label set")
    return sum(p == l for p, l in zip(predictions, labels)) / len(labels)


def encode_corpus(pairs, resolver, ckpt: Checkpoint):
    """Unit-norm image and text embeddings for a pair corpus, row-aligned."""
    params, vocab = ckpt.params, ckpt.vocab
    features = resolver.gather([(p.feature_ref, p.image_id) for p in pairs])
    token_lists = []
    for p in pairs:
        tokens = tokenize(p.caption.text, vocab)
        if not tokens:
            raise ValidationError(f"caption for image {p.image_id!r} has no tokens")
        token_lists.append(tokens)
    zv, _ = image_forward(features, params)
    zt, _ = text_forward(token_lists, params)
    return zv, zt


def retrieval_eval(pairs, resolver, ckpt: Checkpoint,
                   ks=DEFAULT_KS) -> tuple[RetrievalReport, RetrievalReport, float]:
    """Both retrieval directions over a 1:1 test corpus.

    Returns (image_to_text, text_to_image, mean recall over all reported
    values). K values larger than the corpus are clamped (and then trivially
    1.0). Duplicate captions or feature references make retrieval ill-posed
    and raise a warning.
    """
    if not pairs:
        raise ValidationError("empty evaluation corpus")
    seen_images = set()
    for p in pairs:
        key = (p.source, p.image_id)
        if key in seen_images:
            raise ValidationError(
                f"retrieval corpus must be 1:1 but image {p.image_id!r} repeats")
        seen_images.add(key)

    texts = [p.caption.text for p in pairs]
    if len(set(texts)) < len(texts):
        warnings.warn("duplicate caption texts in the retrieval corpus; "
                      "R@K over duplicates is ill-defined", stacklevel=2)
    refs = [(p.feature_ref, p.image_id) for p in pairs]
    if len(set(refs)) < len(refs):
        warnings.warn("duplicate feature rows in the retrieval corpus", stacklevel=2)

    zv, zt = encode_corpus(pairs, resolver, ckpt)
    sims = cosine_similarity_matrix(zv, zt)
    n = len(pairs)
    truth = np.arange(n)
    ks = tuple(min(k, n) for k in ks)
    i2t = RetrievalReport("image_to_text",
                          {k: recall_at_k(sims, truth, k) for k in ks})
    t2i = RetrievalReport("text_to_image",
                          {k: recall_at_k(sims.T, truth, k) for k in ks})
    mean_recall = (sum(i2t.recall_at.values()) + sum(t2i.recall_at.values())) / (2 * len(ks))
    return i2t, t2i, mean_recall


def class_prompts(class_names, templates=GENERAL_TEMPLATES) -> dict[str, list[str]]:
    """Default prompt set: the general template pool filled per class."""
    if not class_names:
        raise ValidationError("no class names given")
    return {
        name: [fill_template(t, {"class": name}).text for t in templates]
        for name in class_names
    }


def class_embeddings(prompts: dict[str, list[str]], ckpt: Checkpoint):
    """L2-normalized mean prompt embedding per class, ordered by class list."""
    params, vocab = ckpt.params, ckpt.vocab
    names = list(prompts)
    rows = []
    for name in names:
        texts = prompts[name]
        if not texts:
            raise ValidationError(f"class {name!r} has no prompts")
        token_lists = [tokenize(t, vocab) for t in texts]
        if any(not t for t in token_lists):
            raise ValidationError(f"class {name!r} has an untokenizable prompt")
        z, _ = text_forward(token_lists, params)
        mean = z.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise TrainingError(f"class {name!r}: degenerate prompt embedding")
        rows.append(mean / norm)
    return names, np.stack(rows)


def zero_shot_classify(features, labels, ckpt: Checkpoint,
                       prompts: dict[str, list[str]] | None = None,
                       fingerprint: str = "") -> EvalReport:
    """Nearest class-prompt prediction over image features; reports accuracy."""
    labels = list(labels)
    if prompts is None:
        prompts = class_prompts(sorted(set(labels)))
    names, class_z = class_embeddings(prompts, ckpt)
    zv, _ = image_forward(np.asarray(features, dtype=np.float64), ckpt.params)
    sims = cosine_similarity_matrix(zv, class_z)
    predictions = [names[i] for i in sims.argmax(axis=1)]
    acc = accuracy(predictions, labels)
    per_class: dict[str, float] = {}
    for name in names:
        idx = [i for i, l in enumerate(labels) if l == name]
        if idx:
            per_class[name] = accuracy([predictions[i] for i in idx], [labels[i] for i in idx])
    return EvalReport(task="zeroshot", metrics={"accuracy": acc},
                      per_class=per_class, fingerprint=fingerprint)


@dataclass
class ProbeHead:
    weight: np.ndarray  # C x d
    bias: np.ndarray    # C
    classes: list[str]

    def logits(self, z: np.ndarray) -> np.ndarray:
        return z @ self.weight.T + self.bias

    def predict(self, z: np.ndarray) -> list[str]:
        return [self.classes[i] for i in self.logits(z).argmax(axis=1)]


@dataclass
class ProbeConfig:
    lr: float = 0.05
    max_steps: int = 2000
    eval_every: int = 10
    patience: int = 20       # evaluations without val improvement
    val_fraction: float = 0.25
    seed: int = 0


def _softmax_ce_grads(logits, y_idx):
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), y_idx].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), y_idx] -= 1.0
    return loss, grad / n


def train_linear_probe(features, labels, ckpt: Checkpoint,
                       config: ProbeConfig | None = None,
                       fingerprint: str = "") -> tuple[ProbeHead, EvalReport]:
    """Frozen-encoder linear probe with cross-entropy and early stopping.

    Image embeddings are computed once and cached; only the head trains.
    The encoder weights are hashed before and after as a hard guarantee.
    """
    config = config or ProbeConfig()
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationError("linear probe needs at least two classes")
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[l] for l in labels], dtype=np.int64)

    hash_before = ckpt.encoder_sha256()
    z, _ = image_forward(np.asarray(features, dtype=np.float64), ckpt.params)

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(labels))
    n_val = max(1, int(round(len(labels) * config.val_fraction)))
    if n_val >= len(labels):
        raise ValidationError("validation split would consume the whole label set")
    val_idx, train_idx = order[:n_val], order[n_val:]
    z_train, y_train = z[train_idx], y[train_idx]
    z_val, y_val = z[val_idx], y[val_idx]

    head = ProbeHead(weight=np.zeros((len(classes), z.shape[1])),
                     bias=np.zeros(len(classes)), classes=classes)
    adam = AdamState()
    named_params = [("probe.W", head.weight), ("probe.b", head.bias)]

    best = {"acc": -1.0, "weight": head.weight.copy(), "bias": head.bias.copy()}
    evals_since_best = 0
    for step in range(config.max_steps):
        loss, dlogits = _softmax_ce_grads(head.logits(z_train), y_train)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite probe loss at step {step}")
        grads = [("probe.W", dlogits.T @ z_train), ("probe.b", dlogits.sum(axis=0))]
        adam_step(named_params, grads, adam, config.lr)
        if (step + 1) % config.eval_every == 0:
            val_acc = float((head.logits(z_val).argmax(axis=1) == y_val).mean())
            if val_acc > best["acc"]:
                best = {"acc": val_acc, "weight": head.weight.copy(),
                        "bias": head.bias.copy()}
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    break
    head.weight[...] = best["weight"]
    head.bias[...] = best["bias"]

    if ckpt.encoder_sha256() != hash_before:
        raise TrainingError("probe training mutated the frozen encoder")

    train_acc = float((head.logits(z_train).argmax(axis=1) == y_train).mean())
    report = EvalReport(
        task="probe",
        metrics={"val_accuracy": best["acc"], "train_accuracy": train_acc,
                 "n_train": float(len(train_idx)), "n_val": float(len(val_idx))},
        fingerprint=fingerprint)
    return head, report
