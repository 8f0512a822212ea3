"""Synthetic downstream task sets derived from the corpus generator's truth.

Every generator splits by entity (seeded), builds sentences only from words
guaranteed to be in the corpus vocabulary, and records gold labels from the
side-channel truth, so all five task schemes run without external data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .align import TfIdfIndex, cosine, tfidf_vector
from .corpus import (
    ATTRIBUTE_POOLS,
    ENT_ID,
    RELATION_VERBS,
    SEP_ID,
    Corpus,
    Vocab,
    derive_seed,
    tokenize_text,
)


class TaskError(ValueError):
    pass


@dataclass
class TaskExample:
    example_id: str
    variant: str  # ner | et | oie | rank
    tokens: list[int]
    tags: list[str] | None = None                 # ner: BIO per token
    mention: tuple[int, int] | None = None        # et: [ENT] pair positions
    labels: list[str] | None = None               # et: gold label set
    triples: list[dict] | None = None             # oie: span triples
    candidates: list[list[int]] | None = None     # rank: candidate sequences
    gold: int | None = None                       # rank: gold candidate index

    def to_json(self) -> dict:
        obj = {"id": self.example_id, "variant": self.variant, "tokens": self.tokens}
        if self.tags is not None:
            obj["tags"] = self.tags
        if self.mention is not None:
            obj["mention"] = list(self.mention)
        if self.labels is not None:
            obj["labels"] = self.labels
        if self.triples is not None:
            obj["triples"] = self.triples
        if self.candidates is not None:
            obj["candidates"] = self.candidates
        if self.gold is not None:
            obj["gold"] = self.gold
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TaskExample":
        ex = cls(
            example_id=obj["id"],
            variant=obj["variant"],
            tokens=list(obj["tokens"]),
            tags=obj.get("tags"),
            mention=tuple(obj["mention"]) if "mention" in obj else None,
            labels=obj.get("labels"),
            triples=obj.get("triples"),
            candidates=obj.get("candidates"),
            gold=obj.get("gold"),
        )
        if ex.variant == "et" and ex.tokens.count(ENT_ID) != 2:
            raise TaskError(f"example {ex.example_id}: [ENT] markers must appear as a pair")
        return ex


def write_task_data(examples: list[TaskExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json()) + "\n")


def read_task_data(path) -> list[TaskExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TaskExample.from_json(json.loads(line)))
    return out


def split_entities(truth: list[dict], seed: int, eval_fraction: float = 0.3):
    order = np.random.default_rng(derive_seed(seed, "task-split")).permutation(len(truth))
    n_eval = max(1, round(eval_fraction * len(truth)))
    eval_idx = set(int(i) for i in order[:n_eval])
    train = [t for i, t in enumerate(truth) if i not in eval_idx]
    evals = [t for i, t in enumerate(truth) if i in eval_idx]
    return train, evals


# Sentence templates assembled from corpus-vocabulary words only.
_NER_TEMPLATES = [
    (["many", "visitors", "near"], ["in", "autumn"]),
    (["the", "famous"], ["is", "popular", "with", "travellers"]),
    (["a", "quiet", "footpath", "near"], ["and", "the", "old", "gallery"]),
    (["most", "local", "vendors", "near"], ["with", "pastry"]),
    ([], ["was", "restored", "in", "1901"]),
    (["the", "parade", "of"], ["in", "winter"]),
    (["this", "grand", "courtyards", "near"], ["is", "scenic"]),
    ([], ["is", "famous", "for", "its", "dumplings"]),
]

_ET_TEMPLATES = [
    (["the", "famous"], ["is", "scenic"]),
    (["the", "area", "near"], ["is", "quiet"]),
    (["pilgrims", "near"], ["in", "spring"]),
    (["a", "ferry", "near"], ["is", "popular"]),
]


def _surface_tokens(rec: dict, surface: str, rng) -> list[str]:
    title = [rec["name"], rec["kind"]]
    if surface == "title":
        return title
    if surface == "alias":
        return list(rec["alias"])
    return title if rng.random() < 0.5 else list(rec["alias"])


def _usable_templates(templates, vocab: Vocab):
    usable = [
        t for t in templates
        if all(w in vocab.token_to_id for w in list(t[0]) + list(t[1]))
    ]
    if not usable:
        raise TaskError("no sentence template is covered by this corpus vocabulary")
    return usable


def make_ner_data(
    truth: list[dict],
    vocab: Vocab,
    seed: int,
    n_train: int = 240,
    n_eval: int = 120,
    surface: str = "both",
    distractor_fraction: float = 0.35,
    typed: bool = True,
) -> tuple[list[TaskExample], list[TaskExample]]:
    """BIO-tagged sentences whose entity spans are corpus titles or aliases,
    typed by the entity's kind group (or a single 'ent' type when typed is
    False). surface='alias' yields the probe whose entities occur only in
    infobox triples, never in free text.

    A fraction of sentences fill the template slot with ordinary content
    words instead (all tags O), so the slot context alone cannot identify a
    span; tagging requires knowing the span tokens themselves.
    """
    if surface not in ("title", "alias", "both"):
        raise TaskError(f"unknown surface {surface!r}")
    train_recs, eval_recs = split_entities(truth, seed)
    filler_pool = sorted(
        {w for pool in ATTRIBUTE_POOLS.values() for val in pool for w in val.split()}
        & set(vocab.token_to_id)
    )
    templates = _usable_templates(_NER_TEMPLATES, vocab)

    def build(recs, count, tag_prefix):
        rng = np.random.default_rng(derive_seed(seed, "ner", tag_prefix))
        out = []
        for i in range(count):
            prefix, suffix = templates[int(rng.integers(0, len(templates)))]
            if rng.random() < distractor_fraction:
                span = [
                    filler_pool[int(rng.integers(0, len(filler_pool)))]
                    for _ in range(int(rng.integers(1, 3)))
                ]
                span_tags = ["O"] * len(span)
            else:
                rec = recs[int(rng.integers(0, len(recs)))]
                span = _surface_tokens(rec, surface, rng)
                group = rec["group"] if typed else "ent"
                span_tags = [f"B-{group}"] + [f"I-{group}"] * (len(span) - 1)
            tokens = list(prefix) + span + list(suffix)
            tags = ["O"] * len(prefix) + span_tags + ["O"] * len(suffix)
            out.append(
                TaskExample(
                    example_id=f"{tag_prefix}{i:05d}",
                    variant="ner",
                    tokens=vocab.encode_tokens(tokens),
                    tags=tags,
                )
            )
        return out

    return build(train_recs, n_train, "ner-tr-"), build(eval_recs, n_eval, "ner-ev-")


def make_et_data(
    truth: list[dict],
    vocab: Vocab,
    seed: int,
    n_train: int = 200,
    n_eval: int = 100,
) -> tuple[list[TaskExample], list[TaskExample]]:
    """Entity-typing sentences: the mention is bracketed by an [ENT] pair and
    the gold label set is the entity's hierarchical type path."""
    train_recs, eval_recs = split_entities(truth, seed)
    templates = _usable_templates(_ET_TEMPLATES, vocab)

    def build(recs, count, tag_prefix):
        rng = np.random.default_rng(derive_seed(seed, "et", tag_prefix))
        out = []
        for i in range(count):
            rec = recs[int(rng.integers(0, len(recs)))]
            prefix, suffix = templates[int(rng.integers(0, len(templates)))]
            mention = [rec["name"], rec["kind"]]
            tokens = (
                vocab.encode_tokens(prefix)
                + [ENT_ID]
                + vocab.encode_tokens(mention)
                + [ENT_ID]
                + vocab.encode_tokens(suffix)
            )
            m_start = len(prefix)
            out.append(
                TaskExample(
                    example_id=f"{tag_prefix}{i:05d}",
                    variant="et",
                    tokens=tokens,
                    mention=(m_start, m_start + len(mention) + 2),
                    labels=list(rec["type_path"]),
                )
            )
        return out

    return build(train_recs, n_train, "et-tr-"), build(eval_recs, n_eval, "et-ev-")


def make_oie_data(
    truth: list[dict],
    vocab: Vocab,
    seed: int,
    n_train: int = 220,
    n_eval: int = 110,
) -> tuple[list[TaskExample], list[TaskExample]]:
    """Open-IE sentences built as '<title> <verb> <title>' clauses with exact
    token spans; roughly a third carry two clauses sharing the subject."""
    train_recs, eval_recs = split_entities(truth, seed)
    pool_words = sorted(
        {w for pool in ATTRIBUTE_POOLS.values() for val in pool for w in val.split()}
        & set(vocab.token_to_id)
    )

    def clause_obj(rng, recs):
        # objects alternate between other entities and attribute-pool words
        if rng.random() < 0.5:
            other = recs[int(rng.integers(0, len(recs)))]
            return [other["name"], other["kind"]]
        return ["the", pool_words[int(rng.integers(0, len(pool_words)))]]

    def build(recs, count, tag_prefix):
        rng = np.random.default_rng(derive_seed(seed, "oie", tag_prefix))
        out = []
        for i in range(count):
            rec = recs[int(rng.integers(0, len(recs)))]
            subj = [rec["name"], rec["kind"]]
            tokens = ["the"] + subj
            subj_span = (1, 3)
            triples = []
            n_clauses = 2 if rng.random() < 0.35 else 1
            for c in range(n_clauses):
                if c > 0:
                    tokens.append("and")
                verb = RELATION_VERBS[int(rng.integers(0, len(RELATION_VERBS)))]
                pred_start = len(tokens)
                tokens.append(verb)
                obj = clause_obj(rng, recs)
                obj_start = len(tokens) + (1 if obj[0] == "the" else 0)
                obj_core = obj[1:] if obj[0] == "the" else obj
                tokens.extend(obj)
                triples.append(
                    {
                        "subj": list(subj_span),
                        "pred": [pred_start, pred_start + 1],
                        "obj": [obj_start, obj_start + len(obj_core)],
                    }
                )
            out.append(
                TaskExample(
                    example_id=f"{tag_prefix}{i:05d}",
                    variant="oie",
                    tokens=vocab.encode_tokens(tokens),
                    triples=triples,
                )
            )
        return out

    return build(train_recs, n_train, "oie-tr-"), build(eval_recs, n_eval, "oie-ev-")


def _entity_sentences(corpus: Corpus, max_len: int = 24) -> dict[str, list[tuple[str, list[str]]]]:
    """Per-entity candidate answer pool: (heading, paragraph-prefix tokens)."""
    out: dict[str, list[tuple[str, list[str]]]] = {}
    for doc in corpus:
        sents = []
        for sec in doc.sections:
            for para in sec.paragraphs:
                toks = tokenize_text(para)[:max_len]
                if toks:
                    sents.append((sec.heading, toks))
        out[doc.entity_id] = sents
    return out


def make_rank_data(
    corpus: Corpus,
    truth: list[dict],
    vocab: Vocab,
    seed: int,
    n_train: int = 80,
    n_eval: int = 40,
    n_candidates: int = 30,
    dialog: bool = False,
) -> tuple[list[TaskExample], list[TaskExample]]:
    """Candidate-ranking sets for QA and dialogue.

    The query names an entity and a topic; the gold candidate is a paragraph
    prefix of that entity under that topic, distractors are the closest other
    entities' sentences by TF-IDF similarity. Dialogue mode prepends a second
    turn and joins turns with [SEP].
    """
    by_id = {rec["entity_id"]: rec for rec in truth}
    sentences = _entity_sentences(corpus)
    train_recs, eval_recs = split_entities(truth, seed)

    # candidate universe across entities, encoded once
    universe: list[tuple[str, list[int]]] = []
    for eid, sents in sorted(sentences.items()):
        for heading, toks in sents:
            universe.append((eid, vocab.encode_tokens(toks)))
    index = TfIdfIndex.from_token_docs([ids for _, ids in universe])
    uni_vecs = [tfidf_vector(ids, index) for _, ids in universe]

    def build(recs, count, tag_prefix):
        rng = np.random.default_rng(derive_seed(seed, "rank", tag_prefix, dialog))
        out = []
        usable = [r for r in recs if sentences.get(r["entity_id"])]
        for i in range(count):
            rec = usable[int(rng.integers(0, len(usable)))]
            eid = rec["entity_id"]
            heading, gold_toks = sentences[eid][int(rng.integers(0, len(sentences[eid])))]
            query = vocab.encode_tokens([rec["name"], rec["kind"]]) + vocab.encode(heading)
            if dialog:
                turn1 = vocab.encode_tokens(["travellers", "near", rec["name"], rec["kind"]])
                query = turn1 + [SEP_ID] + query
            gold_ids = vocab.encode_tokens(gold_toks)
            qvec = tfidf_vector(query, index)
            scored = sorted(
                (
                    (cosine(qvec, uni_vecs[j]), j)
                    for j, (cand_eid, _) in enumerate(universe)
                    if cand_eid != eid
                ),
                key=lambda sj: (-sj[0], sj[1]),
            )
            distractors = [universe[j][1] for _, j in scored[: n_candidates - 1]]
            gold_pos = int(rng.integers(0, len(distractors) + 1))
            candidates = distractors[:gold_pos] + [gold_ids] + distractors[gold_pos:]
            out.append(
                TaskExample(
                    example_id=f"{tag_prefix}{i:05d}",
                    variant="rank",
                    tokens=query,
                    candidates=candidates,
                    gold=gold_pos,
                )
            )
        return out

    prefix = "dlg" if dialog else "qa"
    return build(train_recs, n_train, f"{prefix}-tr-"), build(eval_recs, n_eval, f"{prefix}-ev-")
