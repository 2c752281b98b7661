"""Word-vector store, character vocabulary, and minimal tweet tokenization.

The store serves pretrained vectors loaded from the plain-text export format
(optional ``<count> <dim>`` header, then one ``<word> <v1> ... <vdim>`` line
each). Out-of-vocabulary words get a vector drawn uniformly from
[-0.25, 0.25], derived from a keyed hash of (seed, word) so the same word
always maps to the same vector, in this process or any other.
"""

from __future__ import annotations

import hashlib
import string
import threading
from typing import Iterator

import numpy as np

from .tensor import Param

OOV_RANGE = 0.25

_PUNCT = frozenset(string.punctuation)


class VectorFormatError(ValueError):
    """A word-vector file line does not match the expected layout."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing ASCII punctuation.

    Peeled punctuation becomes separate single-character tokens. A leading
    ``@`` or ``#`` stays attached when it prefixes content, so handles and
    hashtags survive whole; URLs survive because their punctuation is
    internal. No other cleanup is applied.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        tail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            if chunk[0] in "@#" and len(chunk) > 1:
                break
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


def _oov_vector(seed: int, word: str, dim: int) -> np.ndarray:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=16, key=key).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return gen.uniform(-OOV_RANGE, OOV_RANGE, dim)


class WordVectorStore:
    """Pretrained word vectors plus a deterministic OOV cache.

    Vectors are held as :class:`Param` so they can be fine-tuned during
    training when ``trainable`` is set. Lookup is read-mostly; OOV inserts
    are serialized by a lock so warm-up is safe under concurrent readers.
    """

    def __init__(self, dim: int, seed: int = 0, trainable: bool = True):
        if dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.trainable = trainable
        self._table: dict[str, Param] = {}
        self._oov: dict[str, Param] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, word: str) -> bool:
        return word in self._table

    def add(self, word: str, vec: np.ndarray) -> None:
        """Insert a pretrained vector; the first occurrence of a word wins."""
        if len(vec) != self.dim:
            raise VectorFormatError(f"vector for {word!r} has {len(vec)} values, expected {self.dim}")
        if word not in self._table:
            self._table[word] = Param(np.asarray(vec, dtype=np.float64))

    def param(self, word: str) -> Param:
        p = self._table.get(word)
        if p is not None:
            return p
        p = self._oov.get(word)
        if p is not None:
            return p
        with self._lock:
            p = self._oov.get(word)
            if p is None:
                p = Param(_oov_vector(self.seed, word, self.dim))
                self._oov[word] = p
        return p

    def lookup(self, word: str) -> np.ndarray:
        """The word's vector: pretrained if known, else its cached OOV draw."""
        return self.param(word).data

    def params(self) -> Iterator[tuple[str, Param]]:
        """All (word, Param) pairs in insertion order, pretrained first."""
        yield from self._table.items()
        yield from self._oov.items()

    def save(self, path) -> None:
        """Write every held vector (pretrained and OOV) in the text format."""
        entries = list(self.params())
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(entries)} {self.dim}\n")
            for word, p in entries:
                fh.write(word + " " + " ".join(repr(v) for v in p.data) + "\n")


def load_word_vectors(path, limit: int | None = None, seed: int = 0,
                      trainable: bool = True) -> WordVectorStore:
    """Load a text-format vector file into a store.

    The dimension comes from the header when present, otherwise from the
    first data line. Malformed lines and mid-file dimension changes raise
    :class:`VectorFormatError` naming the offending line number.
    """
    store: WordVectorStore | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if store is None and lineno == 1 and len(parts) == 2:
                try:
                    count, dim = int(parts[0]), int(parts[1])
                except ValueError:
                    pass
                else:
                    store = WordVectorStore(dim, seed=seed, trainable=trainable)
                    continue
            if store is None:
                if len(parts) < 2:
                    raise VectorFormatError(f"line {lineno}: expected a word and at least one value")
                store = WordVectorStore(len(parts) - 1, seed=seed, trainable=trainable)
            if len(parts) - 1 != store.dim:
                raise VectorFormatError(
                    f"line {lineno}: expected {store.dim} values, got {len(parts) - 1}")
            if limit is not None and len(store) >= limit:
                break
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise VectorFormatError(f"line {lineno}: {exc}") from None
            store.add(parts[0], vec)
    if store is None:
        raise VectorFormatError(f"{path}: empty vector file")
    return store


class CharVocab:
    """Characters mapped to dense ids 0..n-1 plus an unknown id at n."""

    def __init__(self, chars: str):
        seen = []
        ids = {}
        for ch in chars:
            if ch not in ids:
                ids[ch] = len(seen)
                seen.append(ch)
        self.chars = "".join(seen)
        self._ids = ids
        self.unk_id = len(seen)

    @classmethod
    def default(cls) -> "CharVocab":
        # printable ASCII; anything else maps to the unknown id
        return cls("".join(chr(c) for c in range(32, 127)))

    def __len__(self) -> int:
        # table size including the unknown slot
        return len(self.chars) + 1

    def id_of(self, ch: str) -> int:
        return self._ids.get(ch, self.unk_id)

    def ids(self, text: str) -> list[int]:
        return [self._ids.get(ch, self.unk_id) for ch in text]
