import numpy as np
import pytest

from saralign.errors import TrainingError, ValidationError
from saralign.evaluation import (
    EvalReport,
    ProbeConfig,
    RetrievalReport,
    accuracy,
    class_embeddings,
    class_prompts,
    recall_at_k,
    retrieval_eval,
    train_linear_probe,
    true_item_ranks,
    zero_shot_classify,
)
from saralign.features import FeatureResolver, write_feature_store
from saralign.network import init_params
from saralign.checkpoint import Checkpoint
from saralign.synthetic import make_synthetic_corpus
from saralign.text import Vocab, build_vocab, tokenize
from saralign.training import TrainConfig, fit_contrastive


def rank_oracle(similarities, truth, k):
    """Exhaustive per-row sort with (descending score, ascending index) order."""
    hits = 0
    for i, true_item in enumerate(truth):
        order = sorted(range(similarities.shape[1]),
                       key=lambda j: (-similarities[i, j], j))
        if order.index(true_item) < k:
            hits += 1
    return hits / len(truth)


class TestRecallAtK:
    def test_diagonal_dominant(self):
        s = np.eye(4) + 0.01
        assert recall_at_k(s, np.arange(4), 1) == 1.0

    def test_worked_three_by_three(self):
        s = np.array([[0.5, 0.8, 0.1],
                      [0.2, 0.7, 0.6],
                      [0.6, 0.1, 0.5]])
        truth = np.arange(3)
        assert rank_oracle(s, truth, 1) == pytest.approx(1 / 3)
        assert rank_oracle(s, truth, 2) == 1.0
        assert recall_at_k(s, truth, 1) == pytest.approx(1 / 3)
        assert recall_at_k(s, truth, 2) == 1.0

    def test_k_equal_to_item_count(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=(6, 9))
        assert recall_at_k(s, rng.integers(0, 9, size=6), 9) == 1.0

    def test_matches_exhaustive_oracle_on_random_matrices(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            s = rng.normal(size=(20, 20))
            truth = rng.integers(0, 20, size=20)
            for k in (1, 5, 10):
                assert recall_at_k(s, truth, k) == rank_oracle(s, truth, k)

    def test_ties_break_by_ascending_index(self):
        s = np.array([[0.5, 0.5, 0.5]])
        # all tied: item 0 ranks first, item 2 last
        assert recall_at_k(s, [0], 1) == 1.0
        assert recall_at_k(s, [2], 1) == 0.0
        assert recall_at_k(s, [2], 3) == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=(15, 30))
        truth = rng.integers(0, 30, size=15)
        values = [recall_at_k(s, truth, k) for k in range(1, 31)]
        assert values == sorted(values)

    def test_k_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="out of range"):
            recall_at_k(np.eye(3), np.arange(3), 4)

    def test_truth_must_cover_all_queries(self):
        with pytest.raises(ValidationError):
            true_item_ranks(np.eye(3), [0, 1])


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(["a", "b"], ["a", "b"]) == 1.0

    def test_all_wrong(self):
        assert accuracy(["a", "a"], ["b", "c"]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_binary_complement_symmetry(self):
        # flipping every prediction in a binary problem (the correct ones to
        # the wrong class; the wrong ones were already flipped) complements
        # the accuracy exactly
        labels = ["x", "y", "x", "y", "x"]
        preds = ["x", "y", "y", "y", "x"]
        flipped = ["y" if p == "x" else "x" for p in preds]
        assert accuracy(flipped, labels) == pytest.approx(1 - accuracy(preds, labels))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            accuracy([], [])


@pytest.fixture(scope="module")
def trained_setup(tmp_path_factory):
    """Synthetic corpus trained to convergence, with a feature store on disk."""
    corpus = make_synthetic_corpus(seed=0)
    out = tmp_path_factory.mktemp("corpus")
    corpus.write(out)
    resolver = FeatureResolver(out)
    id2row = {im: i for i, im in enumerate(corpus.image_ids)}
    texts = [p.caption.text for p in corpus.train_pairs]
    vocab = build_vocab(texts)
    toks = [tokenize(t, vocab) for t in texts]
    X = corpus.features[[id2row[p.image_id] for p in corpus.train_pairs]]
    config = TrainConfig(batch_size=64, epochs=40, base_lr=2e-3, seed=0,
                         token_dim=32, hidden_dim=64, embed_dim=32)
    ckpt, _ = fit_contrastive(X, toks, vocab, config)
    return corpus, resolver, ckpt, id2row


class TestRetrievalEval:
    def test_overfit_corpus_reaches_high_mean_recall(self, trained_setup):
        corpus, resolver, ckpt, _ = trained_setup
        i2t, t2i, mean_recall = retrieval_eval(corpus.test_pairs, resolver, ckpt)
        assert mean_recall >= 0.95
        assert set(i2t.recall_at) == {1, 5, 10}
        for report in (i2t, t2i):
            values = [report.recall_at[k] for k in sorted(report.recall_at)]
            assert values == sorted(values)

    def test_one_to_one_enforced(self, trained_setup):
        corpus, resolver, ckpt, _ = trained_setup
        doubled = corpus.test_pairs + corpus.test_pairs[:1]
        with pytest.raises(ValidationError, match="1:1"):
            retrieval_eval(doubled, resolver, ckpt)

    def test_duplicate_content_warns(self, trained_setup):
        corpus, resolver, ckpt, _ = trained_setup
        from dataclasses import replace
        pair = corpus.test_pairs[0]
        clones = [replace(pair, image_id=pair.image_id),
                  replace(pair, image_id=corpus.test_pairs[1].image_id)]
        with pytest.warns(UserWarning, match="duplicate caption"):
            retrieval_eval(clones, resolver, ckpt)

    def test_chance_level_for_untrained_model(self):
        n = 1000
        texts = [f"A scene with marker {i} present" for i in range(n)]
        vocab = build_vocab(texts)
        toks = [tokenize(t, vocab) for t in texts]
        rng = np.random.default_rng(0)
        params = init_params(feature_dim=16, vocab_size=len(vocab), token_dim=16,
                             hidden_dim=32, embed_dim=16, n_layers=2, tau=0.07, seed=0)
        from saralign.network import cosine_similarity_matrix, image_forward, text_forward
        zv, _ = image_forward(rng.normal(size=(n, 16)), params)
        zt, _ = text_forward(toks, params)
        sims = cosine_similarity_matrix(zv, zt)
        truth = np.arange(n)
        r1_i2t = recall_at_k(sims, truth, 1)
        r1_t2i = recall_at_k(sims.T, truth, 1)
        chance = 1 / n
        assert r1_i2t <= 5 * chance and r1_t2i <= 5 * chance
        assert (r1_i2t + r1_t2i) / 2 >= chance / 5

    def test_report_monotonicity_enforced(self):
        with pytest.raises(ValidationError, match="non-decreasing"):
            RetrievalReport("image_to_text", {1: 0.9, 5: 0.5})


class TestZeroShot:
    def test_trained_model_beats_chance_by_far(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.test_pairs]]
        labels = [corpus.labels[p.image_id] for p in corpus.test_pairs]
        report = zero_shot_classify(X, labels, ckpt)
        assert report.metrics["accuracy"] >= 0.8
        assert set(report.per_class) == set(corpus.labels.values())

    def test_single_class_prompt_set_forces_prediction(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.test_pairs]]
        labels = [corpus.labels[p.image_id] for p in corpus.test_pairs]
        report = zero_shot_classify(X, labels, ckpt,
                                    prompts=class_prompts(["ship"]))
        expected = sum(l == "ship" for l in labels) / len(labels)
        assert report.metrics["accuracy"] == pytest.approx(expected)

    def test_prompt_order_does_not_change_predictions(self, trained_setup):
        corpus, _, ckpt, _ = trained_setup
        prompts = class_prompts(["ship", "tank"])
        names_a, z_a = class_embeddings(prompts, ckpt)
        shuffled = {name: list(reversed(texts)) for name, texts in prompts.items()}
        names_b, z_b = class_embeddings(shuffled, ckpt)
        assert names_a == names_b
        assert np.allclose(z_a, z_b, atol=1e-12)

    def test_rescaling_invariance_of_argmax(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.test_pairs[:16]]]
        names, class_z = class_embeddings(class_prompts(list(set(corpus.labels.values()))), ckpt)
        from saralign.network import cosine_similarity_matrix, image_forward
        zv, _ = image_forward(X, ckpt.params)
        base = cosine_similarity_matrix(zv, class_z).argmax(axis=1)
        # positive rescaling before normalization cannot move the argmax
        scaled = class_z * 7.3
        scaled /= np.linalg.norm(scaled, axis=1, keepdims=True)
        rescaled = cosine_similarity_matrix(zv, scaled).argmax(axis=1)
        assert (base == rescaled).all()


class TestLinearProbe:
    def test_separable_features_reach_high_val_accuracy(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.train_pairs]]
        labels = [corpus.labels[p.image_id] for p in corpus.train_pairs]
        head, report = train_linear_probe(X, labels, ckpt)
        assert report.metrics["val_accuracy"] >= 0.95
        assert head.weight.shape == (len(set(labels)), ckpt.params.embed_dim)

    def test_shuffled_labels_stay_at_chance(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.train_pairs]]
        labels = [corpus.labels[p.image_id] for p in corpus.train_pairs]
        rng = np.random.default_rng(123)
        shuffled = list(rng.permutation(labels))
        _, report = train_linear_probe(X, shuffled, ckpt)
        n_val = report.metrics["n_val"]
        chance = 1 / len(set(labels))
        sigma = (chance * (1 - chance) / n_val) ** 0.5
        assert abs(report.metrics["val_accuracy"] - chance) <= 3 * sigma

    def test_encoder_untouched_by_probe(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[[id2row[p.image_id] for p in corpus.train_pairs]]
        labels = [corpus.labels[p.image_id] for p in corpus.train_pairs]
        before = ckpt.encoder_sha256()
        train_linear_probe(X, labels, ckpt)
        assert ckpt.encoder_sha256() == before

    def test_single_class_rejected(self, trained_setup):
        corpus, _, ckpt, id2row = trained_setup
        X = corpus.features[:10]
        with pytest.raises(ValidationError, match="two classes"):
            train_linear_probe(X, ["same"] * 10, ckpt)


class TestEvalReport:
    def test_as_dict_shape(self):
        report = EvalReport(task="zeroshot", metrics={"accuracy": 0.5},
                            per_class={"a": 1.0}, fingerprint="fp")
        d = report.as_dict()
        assert d["task"] == "zeroshot"
        assert d["config_fingerprint"] == "fp"
