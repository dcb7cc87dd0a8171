"""Vocabulary and the frozen word-vector table."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RngStream

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
OOV_SCALE = 0.01
DEFAULT_DIM = 300


class Vocabulary:
    """Token <-> id table. Id 0 is PAD; id 1 is the shared unknown-token entry."""

    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, 1)

    def ids(self, tokens) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, token_lists) -> "Vocabulary":
        """Vocabulary over every token seen, in first-seen order."""
        vocab = cls()
        for tokens in token_lists:
            for tok in tokens:
                vocab.add(tok)
        return vocab

    def save(self, path):
        # One token per line; id = line index + 1 (PAD is implicit).
        Path(path).write_text("".join(t + "\n" for t in self.itos[1:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or lines[0] != UNK:
            raise ValueError(f"{path}: first line must be {UNK!r}")
        vocab = cls()
        for tok in lines[1:]:
            if tok in vocab.stoi:
                raise ValueError(f"{path}: duplicate token {tok!r}")
            vocab.add(tok)
        return vocab

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in self.itos[1:]:
            h.update(tok.encode("utf-8") + b"\n")
        return h.hexdigest()


@dataclass
class EmbeddingTable:
    """|V| x k matrix of frozen word vectors. Row 0 (PAD) is all zero."""

    vectors: np.ndarray
    hits: int = 0
    misses: int = 0
    source_hash: str = "none"

    frozen = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def lookup(self, ids) -> np.ndarray:
        return self.vectors[np.asarray(ids, dtype=np.int64)]

    def astype(self, dtype) -> "EmbeddingTable":
        return EmbeddingTable(self.vectors.astype(dtype), self.hits, self.misses, self.source_hash)

    def save(self, path):
        np.save(path, self.vectors)

    @classmethod
    def load(cls, path, source_hash="none") -> "EmbeddingTable":
        return cls(np.load(path), source_hash=source_hash)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes()).hexdigest()


def init_oov(n: int, dim: int, rng: RngStream) -> np.ndarray:
    """``n`` vectors with components i.i.d. uniform on (-0.01, 0.01)."""
    return rng.uniform(-OOV_SCALE, OOV_SCALE, size=(n, dim))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_pretrained(path, vocab: Vocabulary, rng: RngStream, dim: int | None = DEFAULT_DIM) -> EmbeddingTable:
    """Fill a table for ``vocab`` from a GloVe-style text file.

    Lines with the wrong number of values or unparsable numbers are skipped
    with a warning naming the line. When ``dim`` is None the first line fixes
    it. A file whose lines are mostly of another width is rejected outright.
    Tokens absent from the file get OOV vectors; PAD stays zero.
    """
    found, good, bad_arity = {}, 0, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                bad_arity += 1
                log.warning("%s:%d: expected %d values, got %d; line skipped",
                            path, lineno, dim, len(values))
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                log.warning("%s:%d: unparsable number; line skipped", path, lineno)
                continue
            good += 1
            if token in vocab.stoi and token not in found:
                found[token] = vec
    if bad_arity > good:
        raise ValueError(f"{path}: {bad_arity} lines disagree with dimension {dim} "
                         f"(only {good} agree); wrong file or wrong --dim")
    vectors = np.zeros((len(vocab), dim))
    missing = [i for i, tok in enumerate(vocab.itos) if i != PAD_ID and tok not in found]
    for tok, vec in found.items():
        vectors[vocab.stoi[tok]] = vec
    vectors[missing] = init_oov(len(missing), dim, rng)
    return EmbeddingTable(vectors, hits=len(found), misses=len(missing), source_hash=file_digest(path))


def random_table(vocab: Vocabulary, dim: int, rng: RngStream) -> EmbeddingTable:
    """Table with every non-PAD row OOV-initialized (no pretrained file)."""
    vectors = np.zeros((len(vocab), dim))
    vectors[1:] = init_oov(len(vocab) - 1, dim, rng)
    return EmbeddingTable(vectors, hits=0, misses=len(vocab) - 1)


def encode(tokens, vocab: Vocabulary, table: EmbeddingTable) -> np.ndarray:
    """n x k sentence matrix; unknown tokens share the persisted UNK row."""
    return table.lookup(vocab.ids(tokens)) if len(tokens) else np.zeros((0, table.dim))
