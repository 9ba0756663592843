"""Latent Dirichlet allocation by collapsed Gibbs sampling, and UMass coherence."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

_WORD = re.compile(r"[a-z0-9]+")


class TopicModelError(ValueError):
    pass


def tokenize(raw_text: str, stopwords: Iterable[str] = (), min_count: int = 1,
             counts: Counter | None = None) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords.

    When ``counts`` (corpus-wide word counts) is given, words seen fewer than
    ``min_count`` times in the corpus are dropped as well.
    """
    stop = {w.lower() for w in stopwords}
    words = [w for w in _WORD.findall(raw_text.lower()) if w not in stop]
    if counts is not None and min_count > 1:
        words = [w for w in words if counts[w] >= min_count]
    return words


def tokenize_corpus(texts: Sequence[str], stopwords: Iterable[str] = (), min_count: int = 1) -> list[list[str]]:
    stop = frozenset(stopwords)
    first = [tokenize(t, stop) for t in texts]
    counts = Counter(w for bag in first for w in bag)
    return [tokenize(t, stop, min_count, counts) for t in texts]


@dataclass
class TopicModel:
    """Fitted topic model. ``assignment`` is 1-based (topic 1..K)."""

    K: int
    phi: np.ndarray
    theta: np.ndarray
    assignment: np.ndarray
    vocab: list
    word_counts: np.ndarray
    alpha: float
    beta: float

    def top_words(self, k: int, n: int) -> list[str]:
        """Top ``n`` words of 1-based topic ``k`` among words with nonzero count."""
        counts = self.word_counts[k - 1]
        order = np.lexsort((np.arange(counts.size), -self.phi[k - 1]))
        return [self.vocab[i] for i in order if counts[i] > 0][:n]


def _encode(corpus: Sequence[Sequence]):
    vocab = sorted({w for bag in corpus for w in bag}, key=str)
    if not vocab:
        raise TopicModelError("empty vocabulary")
    index = {w: i for i, w in enumerate(vocab)}
    doc_ids = np.fromiter((d for d, bag in enumerate(corpus) for _ in bag), dtype=np.int64)
    word_ids = np.fromiter((index[w] for bag in corpus for w in bag), dtype=np.int64)
    return vocab, doc_ids, word_ids


def fit_lda(corpus: Sequence[Sequence], K: int, iterations: int = 200, alpha: float | None = None,
            beta: float = 0.01, seed: int = 0) -> TopicModel:
    """Fit LDA with ``iterations`` collapsed-Gibbs sweeps.

    ``alpha`` defaults to 50/K. Topic-word and document-topic estimates come
    from the final sweep's counts with Dirichlet smoothing.
    """
    if K < 2:
        raise TopicModelError(f"K must be at least 2, got {K}")
    if iterations < 1:
        raise TopicModelError("iterations must be at least 1")
    if len(corpus) == 0:
        raise TopicModelError("empty corpus")
    alpha = 50.0 / K if alpha is None else float(alpha)
    vocab, doc_ids, word_ids = _encode(corpus)
    D, V = len(corpus), len(vocab)
    rng = np.random.default_rng(seed)

    z = rng.integers(0, K, size=word_ids.size).astype(np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (doc_ids, z), 1)
    np.add.at(nkw, (z, word_ids), 1)
    nk = nkw.sum(axis=1)

    for _ in range(iterations):
        u = rng.random(word_ids.size)
        _kernels.gibbs_sweep(doc_ids, word_ids, z, ndk, nkw, nk, u, alpha, float(beta))

    phi = (nkw + beta) / (nk[:, None] + V * beta)
    theta = (ndk + alpha) / (ndk.sum(axis=1)[:, None] + K * alpha)
    # argmax returns the first maximum: ties go to the lowest topic index
    assignment = np.argmax(theta, axis=1) + 1
    return TopicModel(K, phi, theta, assignment, vocab, nkw, alpha, float(beta))


def _docs_by_word(corpus, vocab):
    index = {w: i for i, w in enumerate(vocab)}
    docs = [set() for _ in vocab]
    for d, bag in enumerate(corpus):
        for w in bag:
            if w in index:
                docs[index[w]].add(d)
    return docs


def coherence(model: TopicModel, corpus: Sequence[Sequence], top_n: int = 10):
    """UMass coherence per topic and the mean over topics.

    For top words w_1..w_N of a topic (by probability), sums
    log((D(w_m, w_l) + 1) / D(w_l)) over pairs l < m, where D counts
    documents containing the word(s).
    """
    if top_n < 2:
        raise TopicModelError("top_n must be at least 2")
    docs = _docs_by_word(corpus, model.vocab)
    index = {w: i for i, w in enumerate(model.vocab)}
    scores = np.zeros(model.K)
    for k in range(1, model.K + 1):
        words = [index[w] for w in model.top_words(k, top_n)]
        if len(words) < top_n:
            log.warning("topic %d has only %d words with nonzero count; scoring those", k, len(words))
        total = 0.0
        for m, l in ((m, l) for m in range(1, len(words)) for l in range(m)):
            wl, wm = words[l], words[m]
            if not docs[wl]:
                continue
            co = len(docs[wl] & docs[wm])
            total += math.log((co + 1) / len(docs[wl]))
        scores[k - 1] = total
    return scores, float(scores.mean())


def select_topic_count(corpus, K_range: Iterable[int], iterations: int = 200, seed: int = 0,
                       alpha: float | None = None, beta: float = 0.01, top_n: int = 10):
    """Return ``(K*, curve)`` where ``curve`` maps K to mean coherence.

    The smallest K wins ties.
    """
    ks = sorted(set(int(k) for k in K_range))
    if not ks or ks[0] < 2 or ks[-1] > 50:
        raise TopicModelError(f"K range must lie within [2, 50], got {ks}")
    curve = {}
    for K in ks:
        model = fit_lda(corpus, K, iterations, alpha, beta, seed)
        curve[K] = coherence(model, corpus, top_n)[1]
    best = max(ks, key=lambda K: (curve[K], -K))
    return best, curve


def topic_purity(assignment: Sequence[int], truth: Sequence[int]) -> float:
    """Best-matching accuracy between two labelings, over all one-to-one maps.

    Brute force over permutations; meant for small label counts.
    """
    a = np.asarray(assignment)
    t = np.asarray(truth)
    la = sorted(set(a.tolist()))
    lt = sorted(set(t.tolist()))
    if len(la) > len(lt):
        lt = lt + [None] * (len(la) - len(lt))
    best = 0
    for perm in permutations(lt, len(la)):
        hits = sum(int(np.sum((a == x) & (t == y))) for x, y in zip(la, perm) if y is not None)
        best = max(best, hits)
    return best / a.size


__all__ = [
    "TopicModel", "TopicModelError", "tokenize", "tokenize_corpus", "fit_lda", "coherence",
    "select_topic_count", "topic_purity",
]
