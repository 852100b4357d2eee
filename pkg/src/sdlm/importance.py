"""Per-token importance scores and masking-order buckets.

A token's importance inside a sentence combines two normalized shares:
its tf-idf weight within the sentence and its unigram entropy in the
training split. Tokens are then sorted by importance and divided into m
near-equal buckets; bucket 1 holds the most important tokens, which the
forward process corrupts first.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .corpus import Corpus, TokenSequence


class NoiseStrategy(str, Enum):
    """Forward-corruption orderings, in the order the ablation reports them.

    GAUSSIAN_UNIFORM bypasses staging entirely: every token is active from
    step 1, which reduces the forward process to uniform Gaussian noising.
    The remaining strategies only change the order fed into the buckets.
    """

    GAUSSIAN_UNIFORM = "gaussian"
    RANDOM_MASK = "random-mask"
    MASK_POS = "mask-pos"
    MASK_ENTROPY = "mask-entropy"
    MASK_RELEVANCY = "mask-rel"
    MASK_ENTROPY_REL = "mask-entropy-rel"


# Noun before verb before everything else, for the POS-ordered ablation.
_POS_RANK = {"NOUN": 2.0, "VERB": 1.0}


@dataclass(frozen=True)
class ImportanceProfile:
    """Per-token scores for one sentence.

    `corpus_frequency` is carried along because bucket ties are broken by
    rarer-first before position.
    """

    token_ids: tuple[int, ...]
    tf_idf: tuple[float, ...]
    entropy: tuple[float, ...]
    importance: tuple[float, ...]
    corpus_frequency: tuple[int, ...]
    sentence_id: int | str | None = None

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class BucketAssignment:
    """Bucket index in [1, m] per token; lower bucket = more important."""

    buckets: tuple[int, ...]
    m: int

    def __len__(self) -> int:
        return len(self.buckets)


def tf_idf(word: int, sentence: TokenSequence, corpus: Corpus) -> float:
    """tf-idf weight of `word` within `sentence`.

    (count in sentence / sentence length) * ln(N / (1 + document frequency)),
    clamped at zero: when a word appears in every sentence the log term goes
    slightly negative and a negative share would break the normalization.
    """
    if word not in sentence.ids:
        raise ValueError(f"token id {word} does not occur in the sentence")
    tf = sentence.ids.count(word) / len(sentence)
    df = corpus.document_frequency.get(word, 0)
    idf = math.log(corpus.n_sentences / (1 + df))
    return max(0.0, tf * idf)


def entropy(word: int, corpus: Corpus) -> float:
    """Unigram entropy contribution -p(w) ln p(w) over the split.

    Unseen words fall back to the UNK frequency; a zero probability
    contributes zero.
    """
    total = corpus.total_tokens
    if total == 0:
        raise ValueError("corpus has zero total token frequency")
    freq = corpus.token_frequency.get(word, 0)
    if freq == 0:
        freq = corpus.token_frequency.get(corpus.vocab.unk_id, 0)
    p = freq / total
    if p == 0.0:
        return 0.0
    return -p * math.log(p)


def combine_scores(tf_scores: list[float], entropy_scores: list[float]) -> list[float]:
    """Sum of the two normalized shares per token position.

    Each term is normalized over the sentence's token positions so it sums
    to one; a zero denominator degrades that term to a uniform 1/l share.
    Scaling either raw score list by a positive constant leaves the result
    unchanged.
    """
    length = len(tf_scores)
    if length == 0 or length != len(entropy_scores):
        raise ValueError("score lists must be nonempty and equal-length")
    tf_total = sum(tf_scores)
    h_total = sum(entropy_scores)
    tf_share = [t / tf_total if tf_total > 0 else 1.0 / length for t in tf_scores]
    h_share = [h / h_total if h_total > 0 else 1.0 / length for h in entropy_scores]
    return [a + b for a, b in zip(tf_share, h_share)]


def importance(
    sentence: TokenSequence,
    corpus: Corpus,
    sentence_id: int | str | None = None,
) -> ImportanceProfile:
    """Combined importance per token: tf-idf share plus entropy share."""
    if len(sentence) < 1:
        raise ValueError("empty sentence")
    tf_scores = [tf_idf(w, sentence, corpus) for w in sentence.ids]
    h_scores = [entropy(w, corpus) for w in sentence.ids]
    combined = combine_scores(tf_scores, h_scores)
    freqs = [corpus.token_frequency.get(w, 0) for w in sentence.ids]
    return ImportanceProfile(
        token_ids=tuple(sentence.ids),
        tf_idf=tuple(tf_scores),
        entropy=tuple(h_scores),
        importance=tuple(combined),
        corpus_frequency=tuple(freqs),
        sentence_id=sentence_id,
    )


def _split_sizes(length: int, m: int) -> list[int]:
    # Near-equal split, larger buckets first; with m > length the leading
    # buckets get one token each and the rest stay empty.
    base, rem = divmod(length, m)
    return [base + 1 if i < rem else base for i in range(m)]


def _bucketize_scores(
    scores: list[float], frequencies: list[int], m: int
) -> BucketAssignment:
    if m < 1:
        raise ValueError("bucket count must be >= 1")
    length = len(scores)
    # Higher score first; ties broken by lower corpus frequency, then by
    # position, so the assignment is a deterministic function of its inputs.
    order = sorted(
        range(length), key=lambda i: (-scores[i], frequencies[i], i)
    )
    buckets = [0] * length
    cursor = 0
    for bucket_idx, size in enumerate(_split_sizes(length, m), start=1):
        for pos in order[cursor : cursor + size]:
            buckets[pos] = bucket_idx
        cursor += size
    return BucketAssignment(buckets=tuple(buckets), m=m)


def bucketize(profile: ImportanceProfile, m: int) -> BucketAssignment:
    """Assign each token to one of m importance-ordered buckets."""
    return _bucketize_scores(
        list(profile.importance), list(profile.corpus_frequency), m
    )


def strategy_scores(
    strategy: NoiseStrategy,
    sentence: TokenSequence,
    corpus: Corpus,
    tagger: Callable[[str], str] | None = None,
    rng: random.Random | None = None,
) -> list[float]:
    """Raw per-token ordering scores for a corruption strategy.

    Higher score means earlier corruption. MASK_POS needs a `tagger`
    (word -> tag) and RANDOM_MASK an explicit `rng`.
    """
    if strategy is NoiseStrategy.MASK_ENTROPY_REL:
        return list(importance(sentence, corpus).importance)
    if strategy is NoiseStrategy.MASK_ENTROPY:
        return [entropy(w, corpus) for w in sentence.ids]
    if strategy is NoiseStrategy.MASK_RELEVANCY:
        return [tf_idf(w, sentence, corpus) for w in sentence.ids]
    if strategy is NoiseStrategy.MASK_POS:
        if tagger is None:
            raise ValueError("MASK_POS ordering requires a tagger")
        words = [corpus.vocab.token_for(w) for w in sentence.ids]
        return [_POS_RANK.get(tagger(w), 0.0) for w in words]
    if strategy is NoiseStrategy.RANDOM_MASK:
        if rng is None:
            raise ValueError("RANDOM_MASK ordering requires an rng")
        return [rng.random() for _ in sentence.ids]
    if strategy is NoiseStrategy.GAUSSIAN_UNIFORM:
        return [0.0] * len(sentence)
    raise ValueError(f"unknown strategy {strategy!r}")


def assign_buckets(
    strategy: NoiseStrategy,
    sentence: TokenSequence,
    corpus: Corpus,
    m: int,
    tagger: Callable[[str], str] | None = None,
    rng: random.Random | None = None,
) -> BucketAssignment:
    """Bucket a sentence under a corruption strategy.

    GAUSSIAN_UNIFORM puts every token in bucket 1 so that all of them
    activate at step 1 (no staging).
    """
    if strategy is NoiseStrategy.GAUSSIAN_UNIFORM:
        return BucketAssignment(buckets=tuple(1 for _ in sentence.ids), m=m)
    scores = strategy_scores(strategy, sentence, corpus, tagger=tagger, rng=rng)
    freqs = [corpus.token_frequency.get(w, 0) for w in sentence.ids]
    return _bucketize_scores(scores, freqs, m)
