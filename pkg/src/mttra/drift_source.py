"""Retrieval-confidence drift signal.

A query is scored against a small TF-IDF corpus; the confidence is the best
cosine similarity over all documents. The drift check flags a fault when the
confidence falls below a threshold and otherwise injects random tool or
confidence faults at a configurable rate.
"""

from __future__ import annotations

import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .telemetry import TriggerKind

_TOKEN = re.compile(r"[a-z0-9]+")

DEFAULT_QUERY_POOL = (
    "LangGraph recovery reflexes",
    "agent orchestration reliability",
    "rollback sandbox audit snapshots",
    "tool retries and backoff",
    "consensus voting disagreement",
    "policy thresholds and approvals",
    "governance and risk tiers",
    "observability telemetry signals",
    "drift detection and confidence",
    "mttra and mtbf calculation",
    "normalized reliability index",
    "incident playbooks escalation",
    "global memory reconciliation",
    "safe mode fallback routes",
    "retrieval reranking grounding",
    "planning decomposition tools",
)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable TF-IDF index.

    Weights use raw term counts and the smoothed inverse document frequency
    ``ln((1 + N) / (1 + df)) + 1``, so every in-vocabulary term carries a
    strictly positive weight.
    """

    documents: tuple[tuple[int, str], ...]
    vocabulary: Mapping[str, int]
    idf: np.ndarray
    doc_vectors: np.ndarray
    _unit_docs: np.ndarray = field(repr=False)

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> Corpus:
        docs = tuple((i, t) for i, t in enumerate(texts) if tokenize(t))
        if not docs:
            raise ValueError("corpus has no document with at least one token")
        counts = [Counter(tokenize(text)) for _, text in docs]
        terms = sorted(set().union(*counts))
        vocabulary = {term: i for i, term in enumerate(terms)}

        df = np.zeros(len(terms))
        for c in counts:
            for term in c:
                df[vocabulary[term]] += 1
        n = len(docs)
        idf = np.log((1.0 + n) / (1.0 + df)) + 1.0

        tf = np.zeros((n, len(terms)))
        for row, c in enumerate(counts):
            for term, k in c.items():
                tf[row, vocabulary[term]] = k
        vectors = tf * idf
        unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        for arr in (idf, vectors, unit):
            arr.setflags(write=False)
        return cls(docs, vocabulary, idf, vectors, unit)

    @classmethod
    def from_file(cls, path: str | Path) -> Corpus:
        with open(path, encoding="utf-8") as fh:
            return cls.from_texts([line.rstrip("\n") for line in fh])

    def __len__(self) -> int:
        return len(self.documents)


def default_corpus() -> Corpus:
    text = resources.files("mttra").joinpath("data/corpus.txt").read_text(encoding="utf-8")
    return Corpus.from_texts(text.splitlines())


def load_query_pool(path: str | Path | None = None) -> tuple[str, ...]:
    if path is None:
        return DEFAULT_QUERY_POOL
    with open(path, encoding="utf-8") as fh:
        queries = tuple(line.strip() for line in fh if line.strip())
    if not queries:
        raise ValueError(f"query pool {path} is empty")
    return queries


def vectorize(text: str, corpus: Corpus) -> np.ndarray:
    """TF-IDF vector of ``text`` over the corpus vocabulary.

    Out-of-vocabulary terms are dropped; a text with no known term maps to
    the zero vector.
    """
    vec = np.zeros(len(corpus.vocabulary))
    for term, k in Counter(tokenize(text)).items():
        idx = corpus.vocabulary.get(term)
        if idx is not None:
            vec[idx] = k * corpus.idf[idx]
    return vec


def confidence(query_vec: np.ndarray, corpus: Corpus) -> tuple[float, int | None]:
    """Best cosine similarity against the corpus and the doc id attaining it.

    A zero query vector models a complete retrieval failure and yields
    ``(0.0, None)``. Ties go to the lowest doc id.
    """
    norm = float(np.linalg.norm(query_vec))
    if norm == 0.0:
        return 0.0, None
    sims = corpus._unit_docs @ (query_vec / norm)
    best = int(np.argmax(sims))
    c = min(1.0, max(-1.0, float(sims[best])))
    return c, corpus.documents[best][0]


def query_confidence(text: str, corpus: Corpus) -> tuple[float, int | None]:
    return confidence(vectorize(text, corpus), corpus)


@dataclass(frozen=True)
class DriftConfig:
    tau_drift: float = 0.6
    perturbation_prob: float = 0.35
    # share of injected faults that are tool errors; the rest are low-confidence
    tool_error_share: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_drift <= 1.0:
            raise ValueError("tau_drift must lie in (0, 1]")
        if not 0.0 <= self.perturbation_prob <= 1.0:
            raise ValueError("perturbation_prob must lie in [0, 1]")
        if not 0.0 <= self.tool_error_share <= 1.0:
            raise ValueError("tool_error_share must lie in [0, 1]")


def check_drift(c: float, config: DriftConfig, rng: np.random.Generator) -> TriggerKind | None:
    # Two uniforms are drawn on every call so the random stream stays aligned
    # whatever branch is taken.
    u_fault, u_kind = rng.random(2)
    if c < config.tau_drift:
        return TriggerKind.DRIFT_OBSERVED
    if u_fault < config.perturbation_prob:
        return TriggerKind.TOOL_ERROR if u_kind < config.tool_error_share else TriggerKind.LOW_CONFIDENCE
    return None


def drift_fraction(queries: Sequence[str], corpus: Corpus, tau_drift: float) -> float:
    """Share of ``queries`` whose confidence falls below ``tau_drift``."""
    low = sum(query_confidence(q, corpus)[0] < tau_drift for q in queries)
    return low / len(queries)


def fault_probability(queries: Sequence[str], corpus: Corpus, config: DriftConfig) -> float:
    """Per-cycle fault probability under uniform query sampling."""
    d = drift_fraction(queries, corpus, config.tau_drift)
    return d + (1.0 - d) * config.perturbation_prob
