import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hklm.corpus import build_vocab, generate_synthetic_corpus
from hklm.encoder import ModelConfig, init_params
from hklm.finetune import (
    FinetuneConfig,
    FinetuneError,
    EntityTyper,
    Ranker,
    _stage1_spans,
    decode_bio,
    evaluate_et,
    evaluate_ner,
    evaluate_rank,
    extract_open_triples,
    finetune_entity_typing,
    finetune_ranker,
    finetune_span_stage1,
    finetune_span_stage2,
    finetune_token_classifier,
    pointer_decode,
    rank_candidates,
)
from hklm.metrics import is_valid_bio
from hklm.tasks import make_et_data, make_ner_data, make_oie_data, make_rank_data

TAGSET = ["B-x", "B-y", "I-x", "I-y", "O"]


@pytest.fixture(scope="module")
def world():
    corpus, truth = generate_synthetic_corpus(31, 16)
    vocab = build_vocab(corpus, 1)
    cfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_heads=2, n_layers=1, max_seq_len=256)
    params = init_params(cfg, 0)
    return corpus, truth, vocab, cfg, params


class TestBioDecode:
    @given(st.integers(0, 10_000))
    def test_never_invalid(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(12, len(TAGSET)))
        tags = decode_bio(logits, TAGSET)
        assert is_valid_bio(tags)

    def test_oracle_logits_recovered(self):
        gold = ["O", "B-x", "I-x", "O", "B-y"]
        logits = np.full((5, len(TAGSET)), -10.0)
        for i, t in enumerate(gold):
            logits[i, TAGSET.index(t)] = 10.0
        assert decode_bio(logits, TAGSET) == gold

    def test_invalid_preference_masked_to_valid(self):
        # highest logit is I-x after O; decode must fall back to a legal tag
        logits = np.full((2, len(TAGSET)), -10.0)
        logits[0, TAGSET.index("O")] = 5.0
        logits[1, TAGSET.index("I-x")] = 9.0
        logits[1, TAGSET.index("B-x")] = 8.0
        assert decode_bio(logits, TAGSET) == ["O", "B-x"]


class TestSpanPrimitives:
    def test_theta_above_one_no_spans(self):
        p = np.full(6, 0.99)
        assert _stage1_spans(p, p, theta=1.01, cap=5) == []

    def test_oracle_probabilities_recover_spans(self):
        start = np.zeros(8)
        end = np.zeros(8)
        start[1] = 1.0
        end[2] = 1.0
        start[5] = 1.0
        end[5] = 1.0
        assert _stage1_spans(start, end, theta=0.5, cap=5) == [(1, 2), (5, 5)]

    def test_overlap_resolved_by_score_then_start(self):
        start = np.array([0.9, 0.8, 0.0])
        end = np.array([0.0, 0.9, 0.9])
        # candidates (0,1)=.81, (1,1)=.72, (0,2)=.81(tie, earlier), (1,2)=.72...
        spans = _stage1_spans(start, end, theta=0.5, cap=4)
        assert spans == [(0, 1)]

    def test_span_cap(self):
        start = np.zeros(20)
        end = np.zeros(20)
        start[0] = 1.0
        end[15] = 1.0
        assert _stage1_spans(start, end, theta=0.5, cap=10) == []

    def test_pointer_decode_constrains_end(self):
        start = np.array([0.1, 0.9, 0.2])
        end = np.array([0.99, 0.1, 0.5])
        assert pointer_decode(start, end) == (1, 3)

    def test_pointer_decode_deterministic(self):
        rng = np.random.default_rng(0)
        s, e = rng.random(10), rng.random(10)
        assert pointer_decode(s, e) == pointer_decode(s, e)


class TestEntityTyperLogic:
    def _oracle_typer(self, labels, gold_label):
        # zero-layer model whose [CLS] state is known in closed form, with a
        # head crafted to fire only on the gold label
        cfg = ModelConfig(vocab_size=40, d_model=8, n_heads=2, n_layers=0, max_seq_len=16)
        params = init_params(cfg, 0)
        from hklm.encoder import layer_norm
        from hklm.finetune import _simple_batch
        from hklm.encoder import encode

        batch = _simple_batch([[2, 20, 14, 21, 14, 3]], cfg.np_dtype)
        h, _ = encode(params, cfg, batch)
        cls = h[0, 0]
        w = np.zeros((8, len(labels)), dtype=cfg.np_dtype)
        for j, lab in enumerate(labels):
            scale = 10.0 if lab == gold_label else -10.0
            w[:, j] = scale * cls / float(cls @ cls)
        params["head_w"] = w
        params["head_b"] = np.zeros(len(labels), dtype=cfg.np_dtype)
        return EntityTyper(params=params, model_config=cfg, label_set=labels, threshold=0.5)

    def test_single_label_oracle_accuracy_one(self):
        from hklm.tasks import TaskExample

        typer = self._oracle_typer(["a", "b", "c"], "b")
        ex = TaskExample(example_id="x", variant="et", tokens=[20, 14, 21, 14], mention=(1, 4), labels=["b"])
        out = evaluate_et(typer, [ex])
        assert out["accuracy"] == 1.0 and out["micro_f1"] == 1.0

    def test_unreachable_threshold_empty_predictions(self):
        from hklm.tasks import TaskExample

        typer = self._oracle_typer(["a", "b"], "b")
        typer.threshold = 1.01
        ex = TaskExample(example_id="x", variant="et", tokens=[20, 14, 21, 14], mention=(1, 4), labels=["b"])
        assert typer.predict([ex]) == [set()]
        out = evaluate_et(typer, [ex])
        assert out["macro_f1"] == 0.0

    def test_missing_ent_pair_rejected(self, world):
        _, _, _, cfg, params = world
        from hklm.tasks import TaskExample

        bad = TaskExample(example_id="x", variant="et", tokens=[20, 21], mention=(0, 2), labels=["a"])
        with pytest.raises(FinetuneError, match="ENT"):
            finetune_entity_typing(params, cfg, [bad], FinetuneConfig(epochs=0))


class TestAdapters:
    def test_ner_finetune_fits_training_entities(self, world):
        corpus, truth, vocab, cfg, params = world
        train, evals = make_ner_data(truth, vocab, 5, n_train=80, n_eval=30, surface="title")
        model = finetune_token_classifier(params, cfg, train, FinetuneConfig(epochs=8, lr=5e-3, seed=1))
        out = evaluate_ner(model, evals)
        assert set(out) == {"precision", "recall", "f1"}
        # a scratch encoder cannot generalize to held-out entities, but the
        # training loop must at least fit the entities it saw
        assert evaluate_ner(model, train[:40])["f1"] > 0.9

    def test_ner_unknown_tag_rejected(self, world):
        _, truth, vocab, cfg, params = world
        train, _ = make_ner_data(truth, vocab, 5, n_train=4, n_eval=2)
        with pytest.raises(FinetuneError, match="tag"):
            finetune_token_classifier(params, cfg, train, FinetuneConfig(epochs=0), tagset=["O"])

    def test_all_o_predictions_zero_recall(self, world):
        corpus, truth, vocab, cfg, params = world
        _, evals = make_ner_data(truth, vocab, 5, n_train=4, n_eval=20)
        from hklm.finetune import TokenTagger

        p = {k: v.copy() for k, v in params.items()}
        rng = np.random.default_rng(0)
        tagset = ["B-nature", "B-building", "B-route", "I-nature", "I-building", "I-route", "O"]
        p["head_w"] = np.zeros((cfg.d_model, len(tagset)), dtype=cfg.np_dtype)
        p["head_b"] = np.zeros(len(tagset), dtype=cfg.np_dtype)
        p["head_b"][tagset.index("O")] = 10.0
        tagger = TokenTagger(params=p, model_config=cfg, tagset=tagset)
        out = evaluate_ner(tagger, evals)
        assert out["recall"] == 0.0 and out["f1"] == 0.0

    def test_perfect_predictions_give_f1_one(self, world):
        corpus, truth, vocab, cfg, params = world
        _, evals = make_ner_data(truth, vocab, 5, n_train=4, n_eval=10)
        from hklm.metrics import bio_tags_to_spans, compute_task_metrics

        gold = {ex.example_id: bio_tags_to_spans(ex.tags) for ex in evals}
        out = compute_task_metrics("ner", gold, gold)
        assert out == {"precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_oie_two_stage_end_to_end(self, world):
        corpus, truth, vocab, cfg, params = world
        train, evals = make_oie_data(truth, vocab, 5, n_train=60, n_eval=20)
        s1 = finetune_span_stage1(params, cfg, train, FinetuneConfig(epochs=4, lr=3e-3, seed=2))
        s2 = finetune_span_stage2(params, cfg, train, FinetuneConfig(epochs=2, lr=3e-3, seed=2))
        from hklm.finetune import evaluate_oie

        out = evaluate_oie(s1, s2, evals)
        assert set(out) == {"precision", "recall", "f1"}

    def test_oie_stage2_deterministic(self, world):
        corpus, truth, vocab, cfg, params = world
        train, evals = make_oie_data(truth, vocab, 5, n_train=30, n_eval=5)
        s1 = finetune_span_stage1(params, cfg, train, FinetuneConfig(epochs=1, seed=2))
        s2 = finetune_span_stage2(params, cfg, train, FinetuneConfig(epochs=1, seed=2))
        ex = evals[0]
        assert extract_open_triples(s1, s2, ex.tokens) == extract_open_triples(s1, s2, ex.tokens)

    def test_oie_overlong_sentence_rejected(self, world):
        _, _, _, cfg, params = world
        from hklm.finetune import SpanModel

        s = SpanModel(params=dict(params, head_w=np.zeros((cfg.d_model, 2), dtype=cfg.np_dtype),
                                  head_b=np.zeros(2, dtype=cfg.np_dtype)), model_config=cfg, stage=1)
        with pytest.raises(FinetuneError, match="max_seq_len"):
            extract_open_triples(s, s, list(range(16, 16 + 600)))

    def test_ranker_end_to_end(self, world):
        corpus, truth, vocab, cfg, params = world
        train, evals = make_rank_data(corpus, truth, vocab, 5, n_train=12, n_eval=6, n_candidates=8)
        ranker = finetune_ranker(params, cfg, train, FinetuneConfig(epochs=1, seed=3))
        out = evaluate_rank(ranker, evals)
        assert set(out) == {"map", "mrr@1", "mrr@5", "mrr@10"}
        scores, ranking = rank_candidates(ranker, evals[0].tokens, evals[0].candidates)
        assert len(scores) == len(evals[0].candidates)
        assert sorted(ranking, key=lambda i: (-scores[i], i)) == ranking

    def test_ranker_tie_breaks_by_index(self, world):
        _, _, _, cfg, params = world
        p = {k: v.copy() for k, v in params.items()}
        p["head_w"] = np.zeros((cfg.d_model, 2), dtype=cfg.np_dtype)
        p["head_b"] = np.zeros(2, dtype=cfg.np_dtype)
        ranker = Ranker(params=p, model_config=cfg)
        scores, ranking = rank_candidates(ranker, [20, 21], [[22], [23], [24]])
        assert scores == [0.5, 0.5, 0.5]
        assert ranking == [0, 1, 2]

    def test_ranker_empty_candidates_rejected(self, world):
        _, _, _, cfg, params = world
        p = dict(params, head_w=np.zeros((cfg.d_model, 2), dtype=cfg.np_dtype),
                 head_b=np.zeros(2, dtype=cfg.np_dtype))
        ranker = Ranker(params=p, model_config=cfg)
        with pytest.raises(FinetuneError, match="empty"):
            ranker.score([20], [])

    def test_dialog_metrics_shape(self, world):
        corpus, truth, vocab, cfg, params = world
        train, evals = make_rank_data(corpus, truth, vocab, 5, n_train=6, n_eval=4, n_candidates=6, dialog=True)
        ranker = finetune_ranker(params, cfg, train, FinetuneConfig(epochs=1, seed=3))
        out = evaluate_rank(ranker, evals, dialog=True)
        assert set(out) == {"hits@1", "hits@3", "distinct-1", "distinct-2", "distinct-3", "distinct-4"}
