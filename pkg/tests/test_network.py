import numpy as np
import pytest

from saralign.errors import TrainingError, ValidationError
from saralign.network import (
    cosine_similarity_matrix,
    encode_image,
    encode_text,
    frozen_tensor_names,
    image_forward,
    init_params,
    text_forward,
)
from saralign.text import Vocab, build_vocab, tokenize


@pytest.fixture
def params():
    return init_params(feature_dim=6, vocab_size=12, token_dim=5, hidden_dim=8,
                       embed_dim=4, n_layers=2, tau=0.07, seed=0)


class TestTokenize:
    def test_basic_sentence(self):
        vocab = build_vocab(["A SAR image of the tank"])
        indices = tokenize("A SAR image of the tank", vocab)
        assert [vocab.tokens[i] for i in indices] == ["a", "sar", "image", "of", "the", "tank"]

    def test_empty_text(self):
        vocab = build_vocab(["something"])
        assert tokenize("", vocab) == []

    def test_unknown_token_maps_to_unk(self):
        vocab = build_vocab(["known words only"])
        assert tokenize("unknownword", vocab) == [0]

    def test_hyphenated_class_stays_whole(self):
        vocab = build_vocab(["the T-72 tank"])
        assert "t-72" in vocab.tokens
        idx = tokenize("T-72", vocab)
        assert [vocab.tokens[i] for i in idx] == ["t-72"]

    def test_punctuation_split(self):
        vocab = build_vocab(["ships, moored; quickly."])
        assert sorted(vocab.tokens[1:]) == ["moored", "quickly", "ships"]

    def test_vocab_reserves_unk_at_zero(self):
        vocab = build_vocab(["b a c"])
        assert vocab.tokens[0] == "<unk>"
        assert vocab.lookup("<unk>") == 0
        with pytest.raises(ValidationError):
            Vocab.from_tokens(("a", "b"))


class TestEncoders:
    def test_image_embedding_unit_norm(self, params):
        rng = np.random.default_rng(1)
        z, _ = image_forward(rng.normal(size=(10, 6)), params)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)

    def test_text_embedding_unit_norm(self, params):
        z, _ = text_forward([[1, 2, 3], [4], [5, 6]], params)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)

    def test_token_permutation_invariance_is_exact(self, params):
        a = encode_text([3, 7, 1, 7, 2], params)
        b = encode_text([7, 1, 2, 7, 3], params)
        assert (a == b).all()

    def test_deterministic_forward(self, params):
        x = np.linspace(-1, 1, 6)
        assert (encode_image(x, params) == encode_image(x, params)).all()

    def test_empty_token_list_rejected(self, params):
        with pytest.raises(ValidationError, match="empty token"):
            encode_text([], params)

    def test_zero_feature_with_zero_biases_degenerate(self, params):
        with pytest.raises(TrainingError, match="degenerate"):
            encode_image(np.zeros(6), params)

    def test_input_scaling_changes_output(self, params):
        x = np.linspace(0.5, 2.0, 6)
        za = encode_image(x, params)
        zb = encode_image(3.0 * x, params)
        assert np.abs(za - zb).max() > 1e-9

    def test_feature_dim_mismatch_rejected(self, params):
        with pytest.raises(ValidationError, match="dim"):
            image_forward(np.zeros((2, 9)), params)


class TestCosineSimilarity:
    def test_orthonormal_rows_give_identity(self):
        z = np.eye(4)
        assert np.allclose(cosine_similarity_matrix(z, z), np.eye(4), atol=0)

    def test_transpose_property(self):
        rng = np.random.default_rng(0)
        zv = rng.normal(size=(5, 8))
        zv /= np.linalg.norm(zv, axis=1, keepdims=True)
        zt = rng.normal(size=(7, 8))
        zt /= np.linalg.norm(zt, axis=1, keepdims=True)
        assert np.allclose(cosine_similarity_matrix(zv, zt),
                           cosine_similarity_matrix(zt, zv).T, atol=1e-15)

    def test_matches_naive_loop_oracle(self):
        rng = np.random.default_rng(3)
        zv = rng.normal(size=(6, 10))
        zv /= np.linalg.norm(zv, axis=1, keepdims=True)
        zt = rng.normal(size=(9, 10))
        zt /= np.linalg.norm(zt, axis=1, keepdims=True)
        got = cosine_similarity_matrix(zv, zt)
        for i in range(6):
            for j in range(9):
                expected = sum(zv[i, k] * zt[j, k] for k in range(10))
                assert abs(got[i, j] - expected) < 1e-12

    def test_entries_bounded(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(50, 16))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        s = cosine_similarity_matrix(z, z)
        assert s.max() <= 1 + 1e-9 and s.min() >= -1 - 1e-9
        assert np.allclose(np.diag(s), 1.0, atol=1e-9)


class TestFreezeSpec:
    def test_fully_frozen_towers(self, params):
        frozen = frozen_tensor_names(params, image_trainable_layers=0,
                                     text_trainable_layers=0, tau_learnable=False)
        names = {name for name, _ in params.named_tensors()}
        assert frozen == names

    def test_top_layer_only(self, params):
        frozen = frozen_tensor_names(params, image_trainable_layers=1,
                                     text_trainable_layers=1, tau_learnable=True)
        assert "img.0.W" in frozen and "img.1.W" not in frozen
        assert "txt.embed" in frozen and "txt.0.W" in frozen and "txt.1.W" not in frozen
        assert "log_tau" not in frozen

    def test_none_means_all_trainable(self, params):
        frozen = frozen_tensor_names(params, image_trainable_layers=None,
                                     text_trainable_layers=None, tau_learnable=True)
        assert frozen == set()
