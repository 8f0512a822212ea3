"""Document fragmentation, TF-IDF indexing, and per-fragment triple retrieval."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import NUM_SPECIAL, Corpus, Document, Triple, Vocab, triple_token_ids

DEFAULT_MAX_FRAGMENT_LEN = 400
DEFAULT_TAU = 0.05
DEFAULT_K_MAX = 8


class AlignError(ValueError):
    pass


@dataclass
class Fragment:
    """A contiguous slice of one section's paragraphs, <= max_len tokens."""

    entity_id: str
    heading: str
    token_ids: list[int]
    section_index: int
    para_start: int
    para_end: int  # exclusive
    index: int = 0  # position within the document's fragment list


@dataclass
class AlignedFragment:
    fragment: Fragment
    triples: list[tuple[Triple, float]]  # score-descending


def fragment_document(doc: Document, vocab: Vocab, max_len: int = DEFAULT_MAX_FRAGMENT_LEN) -> list[Fragment]:
    """Greedy packing of paragraphs into fragments, never crossing sections.

    A paragraph longer than max_len is split at token boundaries; every
    source token lands in exactly one fragment.
    """
    if max_len < 16:
        raise AlignError(f"max_len must be >= 16, got {max_len}")
    fragments: list[Fragment] = []

    def emit(tokens, sec_idx, p_start, p_end, heading):
        fragments.append(
            Fragment(
                entity_id=doc.entity_id,
                heading=heading,
                token_ids=tokens,
                section_index=sec_idx,
                para_start=p_start,
                para_end=p_end,
                index=len(fragments),
            )
        )

    for sec_idx, section in enumerate(doc.sections):
        cur: list[int] = []
        cur_start = 0
        for p_idx, para in enumerate(section.paragraphs):
            ptoks = vocab.encode(para)
            if not ptoks:
                continue
            if len(ptoks) > max_len:
                if cur:
                    emit(cur, sec_idx, cur_start, p_idx, section.heading)
                    cur = []
                for off in range(0, len(ptoks), max_len):
                    emit(ptoks[off : off + max_len], sec_idx, p_idx, p_idx + 1, section.heading)
                cur_start = p_idx + 1
                continue
            if cur and len(cur) + len(ptoks) > max_len:
                emit(cur, sec_idx, cur_start, p_idx, section.heading)
                cur = []
            if not cur:
                cur_start = p_idx
            cur.extend(ptoks)
        if cur:
            emit(cur, sec_idx, cur_start, len(section.paragraphs), section.heading)
    return fragments


def fragment_corpus(corpus: Corpus, vocab: Vocab, max_len: int = DEFAULT_MAX_FRAGMENT_LEN) -> dict[str, list[Fragment]]:
    return {doc.entity_id: fragment_document(doc, vocab, max_len) for doc in corpus}


# ---------------------------------------------------------------------------
# TF-IDF
# ---------------------------------------------------------------------------


def _terms(token_ids: list[int]) -> list[int]:
    # Special ids (incl. [UNK]) carry no lexical content and are not terms.
    return [t for t in token_ids if t >= NUM_SPECIAL]


@dataclass
class SparseVec:
    weights: dict[int, float]
    norm: float = field(default=0.0)

    @classmethod
    def from_weights(cls, weights: dict[int, float]) -> "SparseVec":
        return cls(weights=weights, norm=math.sqrt(sum(w * w for w in weights.values())))


def cosine(a: SparseVec, b: SparseVec) -> float:
    if a.norm == 0.0 or b.norm == 0.0:
        return 0.0
    if len(b.weights) < len(a.weights):
        a, b = b, a
    dot = sum(w * b.weights[t] for t, w in a.weights.items() if t in b.weights)
    return dot / (a.norm * b.norm)


@dataclass
class TfIdfIndex:
    """Document frequencies over the corpus of all fragments plus all triples."""

    n_docs: int
    df: dict[int, int]
    idf: dict[int, float]

    @classmethod
    def from_token_docs(cls, docs: list[list[int]]) -> "TfIdfIndex":
        if not docs:
            raise AlignError("cannot build a TF-IDF index from zero documents")
        df: Counter[int] = Counter()
        for tokens in docs:
            df.update(set(_terms(tokens)))
        n = len(docs)
        idf = {t: math.log(n / n_t) for t, n_t in df.items()}
        return cls(n_docs=n, df=dict(df), idf=idf)


def build_tfidf_index(
    corpus: Corpus,
    vocab: Vocab,
    max_fragment_len: int = DEFAULT_MAX_FRAGMENT_LEN,
    fragments: dict[str, list[Fragment]] | None = None,
) -> TfIdfIndex:
    if len(corpus) == 0:
        raise AlignError("cannot index an empty corpus")
    if fragments is None:
        fragments = fragment_corpus(corpus, vocab, max_fragment_len)
    docs = [frag.token_ids for frags in fragments.values() for frag in frags]
    for doc in corpus:
        for triple in doc.infobox:
            docs.append(triple_token_ids(triple, vocab))
    return TfIdfIndex.from_token_docs(docs)


def tfidf_vector(token_ids: list[int], index: TfIdfIndex) -> SparseVec:
    """Term weight = (tf / total terms in text) * ln(N / n_t); unindexed terms drop out."""
    terms = _terms(token_ids)
    total = len(terms)
    if total == 0:
        return SparseVec.from_weights({})
    counts = Counter(terms)
    weights = {
        t: (n / total) * index.idf[t] for t, n in counts.items() if t in index.idf
    }
    return SparseVec.from_weights(weights)


def retrieve_triples(
    fragment: Fragment,
    candidates: list[Triple],
    index: TfIdfIndex,
    vocab: Vocab,
    tau: float = DEFAULT_TAU,
    k_max: int = DEFAULT_K_MAX,
) -> AlignedFragment:
    """Entity-local retrieval: candidates are the fragment's own infobox triples.

    Keeps candidates scoring >= tau, sorted by score descending with ties in
    infobox order, truncated to k_max.
    """
    fvec = tfidf_vector(fragment.token_ids, index)
    scored: list[tuple[Triple, float]] = []
    for triple in candidates:
        score = cosine(fvec, tfidf_vector(triple_token_ids(triple, vocab), index))
        if score >= tau:
            scored.append((triple, score))
    scored.sort(key=lambda ts: -ts[1])  # stable: ties keep infobox order
    return AlignedFragment(fragment=fragment, triples=scored[:k_max])


def align_corpus(
    corpus: Corpus,
    vocab: Vocab,
    tau: float = DEFAULT_TAU,
    k_max: int = DEFAULT_K_MAX,
    max_fragment_len: int = DEFAULT_MAX_FRAGMENT_LEN,
    index: TfIdfIndex | None = None,
    threads: int = 1,
) -> list[AlignedFragment]:
    """Fragment, index, and retrieve for every document; output in corpus order."""
    fragments = fragment_corpus(corpus, vocab, max_fragment_len)
    if index is None:
        index = build_tfidf_index(corpus, vocab, max_fragment_len, fragments=fragments)

    def align_doc(doc: Document) -> list[AlignedFragment]:
        return [
            retrieve_triples(frag, doc.infobox, index, vocab, tau, k_max)
            for frag in fragments[doc.entity_id]
        ]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_doc = list(pool.map(align_doc, corpus.documents))
    else:
        per_doc = [align_doc(doc) for doc in corpus.documents]
    return [af for doc_afs in per_doc for af in doc_afs]


def alignment_coverage(
    corpus: Corpus,
    vocab: Vocab,
    tau: float = DEFAULT_TAU,
    k_max: int = DEFAULT_K_MAX,
    max_fragment_len: int = DEFAULT_MAX_FRAGMENT_LEN,
) -> float:
    """Fraction of fragments paired with at least one triple."""
    aligned = align_corpus(corpus, vocab, tau, k_max, max_fragment_len)
    if not aligned:
        return 0.0
    return sum(1 for af in aligned if af.triples) / len(aligned)


def aligned_json_line(af: AlignedFragment) -> str:
    return json.dumps(
        {
            "entity_id": af.fragment.entity_id,
            "heading": af.fragment.heading,
            "tokens": af.fragment.token_ids,
            "triples": [
                {"s": t.subject, "p": t.predicate, "o": t.object, "score": float(f"{score:.9g}")}
                for t, score in af.triples
            ],
        },
        ensure_ascii=False,
    )


def write_aligned(aligned: list[AlignedFragment], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for af in aligned:
            fh.write(aligned_json_line(af) + "\n")
