"""Scikit-learn style estimators wrapping the contrastive model.

These expose fit/transform/predict with get_params so the aligner, the
zero-shot classifier and the linear probe compose with sklearn pipelines,
cross-validation and grid search. The file-based workflow (checkpoints,
corpora, CLI) drives the same underlying functions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .checkpoint import Checkpoint
from .errors import ValidationError
from .evaluation import (
    ProbeConfig,
    class_embeddings,
    class_prompts,
    train_linear_probe,
)
from .network import cosine_similarity_matrix, image_forward, text_forward
from .text import build_vocab, tokenize
from .training import TrainConfig, fit_contrastive


def _as_checkpoint(model) -> Checkpoint:
    if isinstance(model, Checkpoint):
        return model
    if isinstance(model, TwoTowerAligner):
        check_is_fitted(model, "checkpoint_")
        return model.checkpoint_
    raise ValidationError(
        "model must be a Checkpoint or a fitted TwoTowerAligner")


def _encode_texts(texts, ckpt: Checkpoint) -> np.ndarray:
    token_lists = []
    for text in texts:
        tokens = tokenize(text, ckpt.vocab)
        if not tokens:
            raise ValidationError(f"text has no tokens: {text!r}")
        token_lists.append(tokens)
    z, _ = text_forward(token_lists, ckpt.params)
    return z


class TwoTowerAligner(TransformerMixin, BaseEstimator):
    """Contrastive image-text aligner with a transform() into the shared space.

    fit(X, y) trains both towers on matched rows: X holds image feature
    vectors, y the caption strings. transform(X) returns unit-norm image
    embeddings; encode_texts() is the text-side counterpart.
    """

    def __init__(self, embed_dim=32, hidden_dim=64, n_layers=2, token_dim=32,
                 batch_size=256, epochs=10, base_lr=None, warmup_steps=None,
                 tau=0.07, tau_mode="fixed", image_trainable_layers=None,
                 text_trainable_layers=None, grad_clip=None, preset="mlp-small",
                 seed=0, init_checkpoint=None):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.token_dim = token_dim
        self.batch_size = batch_size
        self.epochs = epochs
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.tau = tau
        self.tau_mode = tau_mode
        self.image_trainable_layers = image_trainable_layers
        self.text_trainable_layers = text_trainable_layers
        self.grad_clip = grad_clip
        self.preset = preset
        self.seed = seed
        self.init_checkpoint = init_checkpoint

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, base_lr=self.base_lr,
            warmup_steps=self.warmup_steps, seed=self.seed, grad_clip=self.grad_clip,
            tau=self.tau, tau_mode=self.tau_mode,
            image_trainable_layers=self.image_trainable_layers,
            text_trainable_layers=self.text_trainable_layers,
            preset=self.preset, token_dim=self.token_dim,
            hidden_dim=self.hidden_dim, embed_dim=self.embed_dim,
            n_layers=self.n_layers)

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        captions = list(y)
        if len(captions) != X.shape[0]:
            raise ValidationError("X and caption list length mismatch")
        init = self.init_checkpoint
        vocab = init.vocab if init is not None else build_vocab(captions)
        token_lists = []
        for text in captions:
            tokens = tokenize(text, vocab)
            if not tokens:
                raise ValidationError(f"caption has no tokens: {text!r}")
            token_lists.append(tokens)
        ckpt, reports = fit_contrastive(X, token_lists, vocab,
                                        self._train_config(), init=init)
        self.checkpoint_ = ckpt
        self.vocab_ = vocab
        self.loss_history_ = [r.loss for r in reports]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        z, _ = image_forward(X, self.checkpoint_.params)
        return z

    def encode_texts(self, texts) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return _encode_texts(texts, self.checkpoint_)

    def similarity(self, X, texts) -> np.ndarray:
        """Image-to-text cosine similarity matrix."""
        return cosine_similarity_matrix(self.transform(X), self.encode_texts(texts))


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Classify image features by nearest class-prompt embedding.

    fit(X, y) only records the label set and builds one prompt-averaged
    embedding per class; no weights are trained, which is the point.
    """

    def __init__(self, model=None, prompts=None):
        self.model = model
        self.prompts = prompts

    def fit(self, X, y):
        ckpt = _as_checkpoint(self.model)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        prompts = self.prompts
        if prompts is None:
            prompts = class_prompts([str(c) for c in self.classes_])
        missing = [str(c) for c in self.classes_ if str(c) not in prompts]
        if missing:
            raise ValidationError(f"no prompts for classes: {', '.join(missing)}")
        names, class_z = class_embeddings(
            {str(c): prompts[str(c)] for c in self.classes_}, ckpt)
        self._class_names = names
        self.class_embeddings_ = class_z
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "class_embeddings_")
        X = check_array(X, dtype=np.float64)
        ckpt = _as_checkpoint(self.model)
        z, _ = image_forward(X, ckpt.params)
        return cosine_similarity_matrix(z, self.class_embeddings_)

    def predict(self, X) -> np.ndarray:
        sims = self.decision_function(X)
        return np.asarray([self._class_names[i] for i in sims.argmax(axis=1)])


class LinearProbeClassifier(ClassifierMixin, BaseEstimator):
    """Cross-entropy linear head over frozen encoder embeddings."""

    def __init__(self, model=None, lr=0.05, max_steps=2000, eval_every=10,
                 patience=20, val_fraction=0.25, seed=0):
        self.model = model
        self.lr = lr
        self.max_steps = max_steps
        self.eval_every = eval_every
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y):
        ckpt = _as_checkpoint(self.model)
        X = check_array(X, dtype=np.float64)
        labels = [str(l) for l in y]
        config = ProbeConfig(lr=self.lr, max_steps=self.max_steps,
                             eval_every=self.eval_every, patience=self.patience,
                             val_fraction=self.val_fraction, seed=self.seed)
        head, report = train_linear_probe(X, labels, ckpt, config)
        self.head_ = head
        self.report_ = report
        self.classes_ = np.asarray(head.classes)
        self.val_accuracy_ = report.metrics["val_accuracy"]
        self.train_accuracy_ = report.metrics["train_accuracy"]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "head_")
        X = check_array(X, dtype=np.float64)
        ckpt = _as_checkpoint(self.model)
        z, _ = image_forward(X, ckpt.params)
        return np.asarray(self.head_.predict(z))
