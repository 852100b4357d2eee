"""Corpus ingestion: vocabulary construction, tokenization, and split statistics.

Sentences are lowercased and split on whitespace and punctuation. Corpus
statistics (document and token frequencies) feed the importance scores and
are computed per split, never pooled across splits.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD_TOKEN = "<pad>"
MASK_TOKEN = "<mask>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, MASK_TOKEN, UNK_TOKEN)

DEFAULT_MAX_LEN = 64

# Word runs (with an optional internal apostrophe, "don't") or single
# punctuation marks. Lowercasing happens before matching.
_TOKEN_RE = re.compile(r"\w+(?:'\w+)?|[^\w\s]")


def word_tokens(text: str) -> list[str]:
    """Split raw text into lowercase word/punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between token strings and contiguous integer ids.

    The special tokens PAD, MASK and UNK always occupy ids 0, 1 and 2.
    """

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    def id_for(self, token: str) -> int:
        """Id of `token`, falling back to UNK for out-of-vocabulary tokens."""
        return self.token_to_id.get(token, self.unk_id)

    def token_for(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def content_hash(self) -> str:
        """Stable hash of the mapping, stored in checkpoints."""
        blob = json.dumps(self.token_to_id, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        ordered = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        mapping = {tok: i for i, tok in enumerate(ordered)}
        return cls(token_to_id=mapping, id_to_token=tuple(ordered))

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, indent=2, ensure_ascii=False)

    @classmethod
    def from_mapping(cls, token_to_id: dict[str, int]) -> "Vocabulary":
        for special in SPECIAL_TOKENS:
            if special not in token_to_id:
                raise ValueError(f"vocabulary missing special token {special!r}")
        inverse = [""] * len(token_to_id)
        for tok, idx in token_to_id.items():
            inverse[idx] = tok
        return cls(token_to_id=dict(token_to_id), id_to_token=tuple(inverse))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_mapping(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocabulary(raw_sentences: list[str], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from raw sentences.

    Tokens occurring fewer than `min_count` times map to UNK. The specials
    are always present. Tokens are ordered by descending count then
    alphabetically, so construction is deterministic.
    """
    if not raw_sentences:
        raise ValueError("empty corpus")
    counts: Counter[str] = Counter()
    for text in raw_sentences:
        counts.update(word_tokens(text))
    if not counts:
        raise ValueError("empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(kept)


@dataclass(frozen=True)
class TokenSequence:
    """A tokenized sentence: vocabulary ids plus the original string."""

    ids: tuple[int, ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def tokenize(text: str, vocab: Vocabulary, n_max: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Tokenize `text` against `vocab`; OOV maps to UNK, truncated at n_max."""
    tokens = word_tokens(text)
    if not tokens:
        raise ValueError("empty sentence")
    ids = tuple(vocab.id_for(t) for t in tokens[:n_max])
    return TokenSequence(ids=ids, source=text)


def detokenize(ids, vocab: Vocabulary) -> str:
    """Inverse of tokenize up to casing and whitespace normalization."""
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    return " ".join(vocab.token_for(i) for i in ids)


@dataclass
class Corpus:
    """One split of tokenized sentences with the frequency statistics that
    the importance scores need (document frequency and token frequency)."""

    sentences: list[TokenSequence]
    split: str
    vocab: Vocabulary
    document_frequency: dict[int, int] = field(default_factory=dict)
    token_frequency: dict[int, int] = field(default_factory=dict)
    attributes: list[dict[str, str] | None] = field(default_factory=list)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def total_tokens(self) -> int:
        return sum(self.token_frequency.values())

    def __len__(self) -> int:
        return len(self.sentences)


def corpus_from_sequences(
    sequences: list[TokenSequence],
    vocab: Vocabulary,
    split: str = "train",
    attributes: list[dict[str, str] | None] | None = None,
) -> Corpus:
    """Assemble a Corpus and populate its frequency tables."""
    doc_freq: Counter[int] = Counter()
    tok_freq: Counter[int] = Counter()
    for seq in sequences:
        tok_freq.update(seq.ids)
        doc_freq.update(set(seq.ids))
    if attributes is None:
        attributes = [None] * len(sequences)
    return Corpus(
        sentences=list(sequences),
        split=split,
        vocab=vocab,
        document_frequency=dict(doc_freq),
        token_frequency=dict(tok_freq),
        attributes=list(attributes),
    )


def read_jsonl(path: str | Path) -> list[dict]:
    """Read a JSONL corpus file; malformed lines raise with their line number."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: malformed JSONL line: {err}") from err
            if not isinstance(row, dict) or "text" not in row:
                raise ValueError(f"{path}:{lineno}: expected an object with a 'text' field")
            rows.append(row)
    return rows


def load_corpus(
    path: str | Path,
    vocab: Vocabulary,
    split: str = "train",
    n_max: int = DEFAULT_MAX_LEN,
) -> Corpus:
    """Load a JSONL file ({text, attributes?} per line) into a Corpus."""
    rows = read_jsonl(path)
    if not rows:
        raise ValueError("empty corpus")
    sequences = []
    attributes: list[dict[str, str] | None] = []
    for row in rows:
        sequences.append(tokenize(row["text"], vocab, n_max=n_max))
        attrs = row.get("attributes")
        attributes.append(dict(attrs) if isinstance(attrs, dict) else None)
    return corpus_from_sequences(sequences, vocab, split=split, attributes=attributes)
