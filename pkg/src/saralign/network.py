"""Two-tower encoder: small tanh MLPs over image features and pooled tokens.

Everything is float64 and written for analytic backprop: each forward
returns the caches its backward needs, and gradients flow through the final
L2 normalization so the contrastive loss sees true unit-norm embeddings.

Parameters are addressed by stable tensor names (``img.0.W``, ``txt.embed``,
``log_tau``...) used uniformly by the optimizer, the checkpoint format, the
freeze logic and the finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, ValidationError

_NORM_FLOOR = 1e-12


@dataclass
class EncoderParams:
    """Weights of both towers plus the (optionally learnable) temperature."""

    image_weights: list[np.ndarray]
    image_biases: list[np.ndarray]
    token_embedding: np.ndarray
    text_weights: list[np.ndarray]
    text_biases: list[np.ndarray]
    log_tau: np.ndarray  # 0-d array

    @property
    def feature_dim(self) -> int:
        return self.image_weights[0].shape[1]

    @property
    def token_dim(self) -> int:
        return self.token_embedding.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.image_weights[-1].shape[0]

    @property
    def vocab_size(self) -> int:
        return self.token_embedding.shape[0]

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for l, (w, b) in enumerate(zip(self.image_weights, self.image_biases)):
            out.append((f"img.{l}.W", w))
            out.append((f"img.{l}.b", b))
        out.append(("txt.embed", self.token_embedding))
        for l, (w, b) in enumerate(zip(self.text_weights, self.text_biases)):
            out.append((f"txt.{l}.W", w))
            out.append((f"txt.{l}.b", b))
        out.append(("log_tau", self.log_tau))
        return out

    def image_layer_names(self) -> list[tuple[str, ...]]:
        """Tensor-name groups per image-tower layer, bottom to top."""
        return [(f"img.{l}.W", f"img.{l}.b") for l in range(len(self.image_weights))]

    def text_layer_names(self) -> list[tuple[str, ...]]:
        """Tensor-name groups per text-tower layer; the embedding is layer 0."""
        return [("txt.embed",)] + [(f"txt.{l}.W", f"txt.{l}.b")
                                   for l in range(len(self.text_weights))]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            image_weights=[w.copy() for w in self.image_weights],
            image_biases=[b.copy() for b in self.image_biases],
            token_embedding=self.token_embedding.copy(),
            text_weights=[w.copy() for w in self.text_weights],
            text_biases=[b.copy() for b in self.text_biases],
            log_tau=self.log_tau.copy(),
        )


def _mlp_dims(in_dim: int, hidden_dim: int, out_dim: int, n_layers: int) -> list[tuple[int, int]]:
    if n_layers < 1:
        raise ValidationError("towers need at least one layer")
    if n_layers == 1:
        return [(out_dim, in_dim)]
    dims = [(hidden_dim, in_dim)]
    dims += [(hidden_dim, hidden_dim)] * (n_layers - 2)
    dims.append((out_dim, hidden_dim))
    return dims


def init_params(*, feature_dim: int, vocab_size: int, token_dim: int, hidden_dim: int,
                embed_dim: int, n_layers: int, tau: float, seed: int) -> EncoderParams:
    """Seeded parameter initialization: uniform +-1/sqrt(fan_in), zero biases."""
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    rng = np.random.default_rng(seed)

    def affine(dims):
        ws, bs = [], []
        for out_dim, in_dim in dims:
            bound = 1.0 / np.sqrt(in_dim)
            ws.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
            bs.append(np.zeros(out_dim))
        return ws, bs

    img_w, img_b = affine(_mlp_dims(feature_dim, hidden_dim, embed_dim, n_layers))
    txt_w, txt_b = affine(_mlp_dims(token_dim, hidden_dim, embed_dim, n_layers))
    embedding = rng.normal(0.0, 1.0 / np.sqrt(token_dim), size=(vocab_size, token_dim))
    return EncoderParams(
        image_weights=img_w, image_biases=img_b,
        token_embedding=embedding,
        text_weights=txt_w, text_biases=txt_b,
        log_tau=np.array(np.log(tau)),
    )


@dataclass
class _MlpCache:
    inputs: list[np.ndarray] = field(default_factory=list)   # input to each affine
    pre_acts: list[np.ndarray] = field(default_factory=list)  # affine outputs
    raw: np.ndarray | None = None                              # pre-normalization output
    norms: np.ndarray | None = None


def _mlp_forward(x, weights, biases):
    cache = _MlpCache()
    h = x
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        cache.inputs.append(h)
        a = h @ w.T + b
        cache.pre_acts.append(a)
        h = a if l == last else np.tanh(a)
    return h, cache


def _mlp_backward(dout, weights, cache, grads_w, grads_b):
    last = len(weights) - 1
    dh = dout
    for l in range(last, -1, -1):
        if l == last:
            da = dh
        else:
            post = cache.inputs[l + 1]  # tanh(pre_acts[l])
            da = dh * (1.0 - post * post)
        grads_w[l] += da.T @ cache.inputs[l]
        grads_b[l] += da.sum(axis=0)
        dh = da @ weights[l]
    return dh


def _normalize_rows(u):
    norms = np.sqrt((u * u).sum(axis=1))
    if np.any(norms < _NORM_FLOOR):
        raise TrainingError("degenerate embedding: zero vector before normalization")
    return u / norms[:, None], norms


def _normalize_backward(dz, z, norms):
    # d(u/|u|) = (dz - z (z . dz)) / |u|
    inner = (dz * z).sum(axis=1, keepdims=True)
    return (dz - z * inner) / norms[:, None]


def image_forward(features: np.ndarray, params: EncoderParams):
    """Batch image embeddings (unit rows) plus the backward cache."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != params.feature_dim:
        raise ValidationError(
            f"feature dim {features.shape[1]} != encoder input dim {params.feature_dim}")
    raw, cache = _mlp_forward(features, params.image_weights, params.image_biases)
    z, norms = _normalize_rows(raw)
    cache.raw, cache.norms = raw, norms
    return z, cache


def image_backward(dz, z, cache, params, grads):
    du = _normalize_backward(dz, z, cache.norms)
    _mlp_backward(du, params.image_weights, cache,
                  grads.image_weights, grads.image_biases)


def pool_tokens(token_lists, params: EncoderParams):
    """Mean-pooled token embeddings.

    Indices are pooled in sorted order so the sum (hence the whole forward
    pass) is invariant to token permutations down to the last bit.
    """
    n = len(token_lists)
    pooled = np.empty((n, params.token_dim))
    sorted_lists = []
    for i, tokens in enumerate(token_lists):
        if len(tokens) == 0:
            raise ValidationError("cannot encode an empty token list")
        idx = np.sort(np.asarray(tokens, dtype=np.int64))
        sorted_lists.append(idx)
        pooled[i] = params.token_embedding[idx].sum(axis=0) / len(idx)
    return pooled, sorted_lists


def text_forward(token_lists, params: EncoderParams):
    """Batch text embeddings (unit rows) plus the backward cache."""
    pooled, sorted_lists = pool_tokens(token_lists, params)
    raw, cache = _mlp_forward(pooled, params.text_weights, params.text_biases)
    z, norms = _normalize_rows(raw)
    cache.raw, cache.norms = raw, norms
    return z, (cache, sorted_lists)


def text_backward(dz, z, cache_and_tokens, params, grads):
    cache, sorted_lists = cache_and_tokens
    du = _normalize_backward(dz, z, cache.norms)
    dpooled = _mlp_backward(du, params.text_weights, cache,
                            grads.text_weights, grads.text_biases)
    lengths = np.array([len(t) for t in sorted_lists], dtype=np.float64)
    per_token = dpooled / lengths[:, None]
    flat_idx = np.concatenate(sorted_lists)
    flat_rows = np.repeat(per_token, [len(t) for t in sorted_lists], axis=0)
    np.add.at(grads.token_embedding, flat_idx, flat_rows)


def zero_grads(params: EncoderParams) -> EncoderParams:
    return EncoderParams(
        image_weights=[np.zeros_like(w) for w in params.image_weights],
        image_biases=[np.zeros_like(b) for b in params.image_biases],
        token_embedding=np.zeros_like(params.token_embedding),
        text_weights=[np.zeros_like(w) for w in params.text_weights],
        text_biases=[np.zeros_like(b) for b in params.text_biases],
        log_tau=np.zeros_like(params.log_tau),
    )


def encode_image(feature, params: EncoderParams) -> np.ndarray:
    """Unit-norm embedding of a single image feature vector."""
    z, _ = image_forward(np.asarray(feature, dtype=np.float64)[None, :], params)
    return z[0]


def encode_text(tokens, params: EncoderParams) -> np.ndarray:
    """Unit-norm embedding of a single token-index list."""
    z, _ = text_forward([tokens], params)
    return z[0]


def cosine_similarity_matrix(zv: np.ndarray, zt: np.ndarray) -> np.ndarray:
    """Pairwise dot products; cosine similarity for unit-norm inputs."""
    zv = np.asarray(zv, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if zv.ndim != 2 or zt.ndim != 2 or zv.shape[1] != zt.shape[1]:
        raise ValidationError("similarity needs N x d and M x d matrices with matching d")
    return zv @ zt.T


def frozen_tensor_names(params: EncoderParams, *, image_trainable_layers: int | None,
                        text_trainable_layers: int | None, tau_learnable: bool) -> set[str]:
    """Tensor names excluded from updates under the layer-freezing policy.

    ``k`` trainable layers means the top k layers of that tower stay live;
    0 freezes the tower completely and None keeps everything trainable.
    """
    frozen: set[str] = set()
    for trainable, groups in (
        (image_trainable_layers, params.image_layer_names()),
        (text_trainable_layers, params.text_layer_names()),
    ):
        if trainable is None:
            continue
        if trainable < 0:
            raise ValidationError("trainable layer counts must be >= 0")
        keep = min(trainable, len(groups))
        for group in groups[: len(groups) - keep]:
            frozen.update(group)
    if not tau_learnable:
        frozen.add("log_tau")
    return frozen
