"""Contrastive training: config, the two-stage training loop, gradient checks.

A training run is a pure function of (corpus, config, init checkpoint):
batches come from a generator seeded by the config, the linear algebra is
pinned to one BLAS thread, and checkpoints serialize deterministically, so
fixed inputs reproduce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import Checkpoint
from .errors import TrainingError, ValidationError
from .losses import info_nce_loss_and_grads
from .meta import config_fingerprint
from .network import (
    EncoderParams,
    frozen_tensor_names,
    image_backward,
    image_forward,
    init_params,
    text_backward,
    text_forward,
    zero_grads,
)
from .optim import AdamState, adam_step, clip_grads_, global_grad_norm, lr_at_step
from .text import Vocab, build_vocab, tokenize

TAU_MIN, TAU_MAX = 0.01, 100.0

# architecture presets; the small MLP trains with the higher learning rate
PRESETS = {
    "mlp-small": {"hidden_dim": 64, "embed_dim": 32, "base_lr": 5e-4},
    "mlp-medium": {"hidden_dim": 128, "embed_dim": 48, "base_lr": 5e-5},
    "mlp-large": {"hidden_dim": 256, "embed_dim": 64, "base_lr": 5e-5},
}


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 10
    base_lr: float | None = None          # None: preset default
    warmup_steps: int | None = None       # None: 10% of total steps
    seed: int = 0
    grad_clip: float | None = None
    tau: float = 0.07
    tau_mode: str = "fixed"               # fixed | learnable
    image_trainable_layers: int | None = None   # None: all; 0: frozen tower
    text_trainable_layers: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    preset: str = "mlp-small"
    feature_dim: int | None = None        # None: taken from the feature store
    token_dim: int = 32
    hidden_dim: int | None = None         # None: preset default
    embed_dim: int | None = None
    n_layers: int = 2
    save_moments: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.tau_mode not in ("fixed", "learnable"):
            raise ValidationError(f"unknown tau_mode {self.tau_mode!r}")
        if self.preset not in PRESETS:
            raise ValidationError(
                f"unknown preset {self.preset!r} (choose from {sorted(PRESETS)})")
        if self.n_layers < 1:
            raise ValidationError("n_layers must be >= 1")

    def resolved(self, *, feature_dim: int | None = None) -> "TrainConfig":
        """Concrete copy with preset-dependent fields filled in."""
        self.validate()
        preset = PRESETS[self.preset]
        out = TrainConfig(**asdict(self))
        out.base_lr = self.base_lr if self.base_lr is not None else preset["base_lr"]
        out.hidden_dim = self.hidden_dim if self.hidden_dim is not None else preset["hidden_dim"]
        out.embed_dim = self.embed_dim if self.embed_dim is not None else preset["embed_dim"]
        if out.feature_dim is None:
            out.feature_dim = feature_dim
        elif feature_dim is not None and out.feature_dim != feature_dim:
            raise ValidationError(
                f"config feature_dim {out.feature_dim} != data feature dim {feature_dim}")
        return out

    def as_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return config_fingerprint(self.as_dict())

    @staticmethod
    def field_names() -> set[str]:
        return {f.name for f in fields(TrainConfig)}

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        unknown = set(data) - TrainConfig.field_names()
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        config = TrainConfig(**data)
        config.validate()
        return config


@dataclass
class LossReport:
    step: int
    epoch: int
    loss: float
    lr: float
    grad_norm: float


def _zero_frozen(grads: EncoderParams, frozen: set[str]) -> None:
    for name, tensor in grads.named_tensors():
        if name in frozen:
            tensor[...] = 0.0


def _clamp_log_tau(params: EncoderParams) -> None:
    params.log_tau[...] = np.clip(params.log_tau, math.log(TAU_MIN), math.log(TAU_MAX))


def train_step(params: EncoderParams, features: np.ndarray, token_lists,
               *, tau_learnable: bool) -> tuple[float, EncoderParams]:
    """Forward both towers, evaluate the loss, backprop into a grad pytree."""
    zv, cache_v = image_forward(features, params)
    zt, cache_t = text_forward(token_lists, params)
    loss, d_zv, d_zt, d_log_tau = info_nce_loss_and_grads(zv, zt, params.tau)
    grads = zero_grads(params)
    image_backward(d_zv, zv, cache_v, params, grads)
    text_backward(d_zt, zt, cache_t, params, grads)
    if tau_learnable:
        grads.log_tau[...] = d_log_tau
    return loss, grads


def resolve_schedule(config: TrainConfig, n_pairs: int) -> tuple[int, int, int]:
    """(steps_per_epoch, total_steps, warmup_steps) for a corpus size."""
    steps_per_epoch = n_pairs // config.batch_size
    if steps_per_epoch < 1:
        raise ValidationError(
            f"corpus of {n_pairs} pairs is smaller than one batch of {config.batch_size}")
    total = steps_per_epoch * config.epochs
    if config.warmup_steps is not None:
        warmup = config.warmup_steps
        if not 0 <= warmup < total:
            raise ValidationError(
                f"warmup_steps ({warmup}) must be < total steps ({total})")
    else:
        warmup = min(max(1, total // 10), total - 1)
    return steps_per_epoch, total, warmup


def fit_contrastive(features: np.ndarray, token_lists, vocab: Vocab,
                    config: TrainConfig, *, init: Checkpoint | None = None,
                    loss_sink=None) -> tuple[Checkpoint, list[LossReport]]:
    """Train the two towers on matched (feature row, token list) pairs.

    With ``init`` the run continues from that checkpoint's weights and is
    tagged stage2; otherwise weights are freshly initialized (stage1).
    """
    n = features.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty corpus")
    if len(token_lists) != n:
        raise ValidationError("feature rows and token lists are misaligned")
    config = config.resolved(feature_dim=features.shape[1])

    if init is not None:
        params = init.params.copy()
        _check_init_compat(params, vocab, init, config)
        stage_tag = "stage2"
    else:
        params = init_params(
            feature_dim=config.feature_dim, vocab_size=len(vocab),
            token_dim=config.token_dim, hidden_dim=config.hidden_dim,
            embed_dim=config.embed_dim, n_layers=config.n_layers,
            tau=config.tau, seed=config.seed)
        stage_tag = "stage1"

    steps_per_epoch, total, warmup = resolve_schedule(config, n)
    tau_learnable = config.tau_mode == "learnable"
    frozen = frozen_tensor_names(
        params, image_trainable_layers=config.image_trainable_layers,
        text_trainable_layers=config.text_trainable_layers,
        tau_learnable=tau_learnable)
    adam = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    reports: list[LossReport] = []

    step = 0
    with threadpool_limits(limits=1):  # bit-stable reductions at any --threads
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            for b in range(steps_per_epoch):  # the last partial batch is dropped
                idx = order[b * config.batch_size: (b + 1) * config.batch_size]
                loss, grads = train_step(
                    params, features[idx], [token_lists[i] for i in idx],
                    tau_learnable=tau_learnable)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at step {step} (epoch {epoch}); "
                        f"lower the learning rate or check the corpus")
                _zero_frozen(grads, frozen)
                named_grads = grads.named_tensors()
                if config.grad_clip is not None:
                    grad_norm = clip_grads_(named_grads, config.grad_clip, frozen)
                else:
                    grad_norm = global_grad_norm(named_grads, frozen)
                lr = lr_at_step(step, base_lr=config.base_lr,
                                warmup_steps=warmup, total_steps=total)
                adam_step(params.named_tensors(), named_grads, adam, lr, frozen)
                if tau_learnable:
                    _clamp_log_tau(params)
                report = LossReport(step=step, epoch=epoch, loss=loss,
                                    lr=lr, grad_norm=grad_norm)
                reports.append(report)
                if loss_sink is not None:
                    loss_sink(report)
                step += 1

    snapshot = config.as_dict()
    snapshot["warmup_steps"] = warmup
    ckpt = Checkpoint(
        stage_tag=stage_tag, params=params, vocab=vocab, config=snapshot,
        fingerprint=config.fingerprint(),
        adam=adam if config.save_moments else None)
    return ckpt, reports


def _check_init_compat(params: EncoderParams, vocab: Vocab,
                       init: Checkpoint, config: TrainConfig) -> None:
    if vocab.tokens != init.vocab.tokens:
        raise ValidationError(
            "stage-2 training must reuse the init checkpoint's vocabulary")
    mismatches = []
    if params.feature_dim != config.feature_dim:
        mismatches.append(
            f"feature_dim {params.feature_dim} != {config.feature_dim}")
    if params.embed_dim != config.embed_dim:
        mismatches.append(f"embed_dim {params.embed_dim} != {config.embed_dim}")
    if len(params.image_weights) != config.n_layers:
        mismatches.append(
            f"n_layers {len(params.image_weights)} != {config.n_layers}")
    if params.token_dim != config.token_dim:
        mismatches.append(f"token_dim {params.token_dim} != {config.token_dim}")
    if config.n_layers >= 2 and params.image_weights[0].shape[0] != config.hidden_dim:
        mismatches.append(
            f"hidden_dim {params.image_weights[0].shape[0]} != {config.hidden_dim}")
    if mismatches:
        raise ValidationError(
            "init checkpoint does not match the configured architecture: "
            + "; ".join(mismatches))


def prepare_corpus(pairs, resolver, vocab: Vocab | None = None):
    """(features, token_lists, vocab) for a pair-record list.

    The vocabulary is built from the corpus texts unless one is supplied
    (stage 2 must keep the stage-1 vocabulary so the embedding table lines
    up; unseen words fall back to <unk>).
    """
    if not pairs:
        raise ValidationError("empty pair corpus")
    if vocab is None:
        vocab = build_vocab(p.caption.text for p in pairs)
    features = resolver.gather([(p.feature_ref, p.image_id) for p in pairs])
    token_lists = []
    for p in pairs:
        tokens = tokenize(p.caption.text, vocab)
        if not tokens:
            raise ValidationError(
                f"caption for image {p.image_id!r} has no tokens: {p.caption.text!r}")
        token_lists.append(tokens)
    return features, token_lists, vocab


def train_stage(pairs, resolver, config: TrainConfig, *,
                init: Checkpoint | None = None,
                loss_sink=None) -> tuple[Checkpoint, list[LossReport]]:
    """Train on a pair corpus, resolving features through the given resolver."""
    vocab = init.vocab if init is not None else None
    features, token_lists, vocab = prepare_corpus(pairs, resolver, vocab)
    return fit_contrastive(features, token_lists, vocab, config,
                           init=init, loss_sink=loss_sink)


def finite_diff_gradcheck(params: EncoderParams, features: np.ndarray,
                          token_lists, *, tau_learnable: bool = True,
                          h: float = 1e-5,
                          frozen: set[str] = frozenset()) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every live parameter is perturbed by +-h. The relative error denominator
    is floored at 1e-4 to keep near-zero gradients from amplifying the
    O(1e-10) finite-difference noise floor. Frozen tensors must carry an
    exactly-zero analytic gradient.
    """

    def loss_value():
        zv, _ = image_forward(features, params)
        zt, _ = text_forward(token_lists, params)
        loss, _, _, _ = info_nce_loss_and_grads(zv, zt, params.tau)
        return loss

    loss, grads = train_step(params, features, token_lists, tau_learnable=tau_learnable)
    if not math.isfinite(loss):
        raise TrainingError("non-finite loss in gradient check")
    _zero_frozen(grads, frozen)
    grads_by_name = dict(grads.named_tensors())

    max_rel = 0.0
    for name, tensor in params.named_tensors():
        grad = grads_by_name[name]
        if name in frozen or (name == "log_tau" and not tau_learnable):
            if np.any(grad != 0.0):
                raise TrainingError(f"frozen tensor {name} has a nonzero gradient")
            continue
        flat = tensor.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(grad_flat[i]), 1e-4)
            max_rel = max(max_rel, abs(fd - grad_flat[i]) / denom)
    return max_rel
