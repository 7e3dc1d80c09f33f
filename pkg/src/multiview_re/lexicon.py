"""External-lexicon view: trie matching, BMES word sets, pooled set vectors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import DataValidationError
from .nn import Linear, ParamStore, name_rng
from .tensor import Tensor

NONE_ID = 0
SET_NAMES = ("B", "M", "E", "S")


class Lexicon:
    """Word inventory; word ids start at 1, id 0 is the trainable NONE row."""

    def __init__(self, words: Iterable[str] = (), vectors: dict[str, np.ndarray] | None = None):
        self.words: list[str] = []
        self._ids: dict[str, int] = {}
        for w in words:
            self.add(w)
        self.vectors = dict(vectors or {})

    def add(self, word: str) -> int:
        if not word:
            raise DataValidationError("lexicon words must have length >= 1")
        if word not in self._ids:
            self.words.append(word)
            self._ids[word] = len(self.words)
        return self._ids[word]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def word_id(self, word: str) -> int:
        return self._ids[word]

    def word(self, wid: int) -> str:
        return self.words[wid - 1]

    @property
    def vector_dim(self) -> int | None:
        for v in self.vectors.values():
            return len(v)
        return None

    def to_dict(self) -> dict:
        return {"words": self.words}

    @classmethod
    def from_dict(cls, d: dict) -> "Lexicon":
        return cls(d["words"])

    def write(self, path: str | Path, precision: int = 17) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for w in self.words:
                vec = self.vectors.get(w)
                if vec is None:
                    fh.write(w + "\n")
                else:
                    fh.write(w + " " + " ".join(f"{x:.{precision}g}" for x in vec) + "\n")


def load_lexicon(path: str | Path) -> Lexicon:
    """One word per line, optionally followed by whitespace-separated floats."""
    lex = Lexicon()
    dim = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            word, rest = parts[0], parts[1:]
            if word in lex:
                continue
            lex.add(word)
            if rest:
                try:
                    vec = np.array([float(x) for x in rest])
                except ValueError:
                    raise DataValidationError(f"{path}:{lineno}: non-numeric vector entry") from None
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise DataValidationError(f"{path}:{lineno}: vector has {len(vec)} dims, expected {dim}")
                lex.vectors[word] = vec
    return lex


class _Node:
    __slots__ = ("children", "word_id")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.word_id: int | None = None


class MatchTrie:
    """Character prefix tree over the lexicon's words."""

    def __init__(self, lexicon: Lexicon):
        self.root = _Node()
        self.max_depth = 0
        for w in lexicon.words:
            node = self.root
            for ch in w:
                node = node.children.setdefault(ch, _Node())
            node.word_id = lexicon.word_id(w)
            self.max_depth = max(self.max_depth, len(w))

    def __contains__(self, word: str) -> bool:
        node = self.root
        for ch in word:
            node = node.children.get(ch)
            if node is None:
                return False
        return node.word_id is not None and len(word) > 0

    def occurrences(self, chars: Sequence[str]) -> list[tuple[int, int, int]]:
        """All ``(start, end, word_id)`` with ``chars[start:end]`` a lexicon word."""
        out = []
        n = len(chars)
        for i in range(n):
            node = self.root
            for j in range(i, n):
                node = node.children.get(chars[j])
                if node is None:
                    break
                if node.word_id is not None:
                    out.append((i, j + 1, node.word_id))
        return out


@dataclass(frozen=True)
class BmesSets:
    B: frozenset
    M: frozenset
    E: frozenset
    S: frozenset

    def as_tuple(self) -> tuple[frozenset, frozenset, frozenset, frozenset]:
        return (self.B, self.M, self.E, self.S)


def match_bmes(chars: Sequence[str], trie: MatchTrie) -> list[BmesSets]:
    n = len(chars)
    sets = [([], [], [], []) for _ in range(n)]
    for start, end, wid in trie.occurrences(chars):
        if end - start == 1:
            sets[start][3].append(wid)
            continue
        sets[start][0].append(wid)
        sets[end - 1][2].append(wid)
        for k in range(start + 1, end - 1):
            sets[k][1].append(wid)
    return [BmesSets(*(frozenset(s) for s in row)) for row in sets]


def pool_set(word_ids: Iterable[int], embeddings: Tensor) -> Tensor:
    """Arithmetic mean of the member rows; the NONE row for an empty set."""
    ids = sorted(set(word_ids))
    if not ids:
        ids = [NONE_ID]
    w = np.full((1, len(ids)), 1.0 / len(ids))
    return T.embedding_bag(embeddings, np.array([ids]), w).reshape(embeddings.shape[1])


class LexiconEncoder:
    """Per character: concat of the four pooled BMES vectors, projected to ``out_dim``."""

    def __init__(
        self,
        store: ParamStore,
        lexicon: Lexicon,
        d_word: int = 50,
        out_dim: int = 100,
        prefix: str = "lexicon",
    ):
        self.lexicon = lexicon
        self.trie = MatchTrie(lexicon)
        self.d_word = d_word
        name = f"{prefix}.word_embedding"
        table = name_rng(store.seed, name).normal(0.0, 1.0, size=(len(lexicon) + 1, d_word))
        for w, vec in lexicon.vectors.items():
            if len(vec) != d_word:
                raise DataValidationError(f"lexicon vector for {w!r} has {len(vec)} dims, model expects {d_word}")
            table[lexicon.word_id(w)] = vec
        self.embedding = store.constant(name, table)
        self.proj = Linear(store, f"{prefix}.proj", 4 * d_word, out_dim)
        self.out_dim = out_dim
        self._cache: dict[tuple[str, ...], list[BmesSets]] = {}

    def bmes(self, chars: Sequence[str]) -> list[BmesSets]:
        key = tuple(chars)
        hit = self._cache.get(key)
        if hit is None:
            hit = match_bmes(key, self.trie)
            self._cache[key] = hit
        return hit

    def bag(self, sentences: Sequence[Sequence[str]], t_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Id and weight matrices ``[b*t*4, K]`` for :func:`tensor.embedding_bag`."""
        rows: list[list[int]] = []
        for chars in sentences:
            per_pos = self.bmes(chars)
            for i in range(t_max):
                groups = per_pos[i].as_tuple() if i < len(chars) else ((), (), (), ())
                for g in groups:
                    rows.append(sorted(g) or [NONE_ID])
        k = max(len(r) for r in rows)
        ids = np.full((len(rows), k), NONE_ID, dtype=np.int64)
        weights = np.zeros((len(rows), k))
        for r, members in enumerate(rows):
            ids[r, : len(members)] = members
            weights[r, : len(members)] = 1.0 / len(members)
        return ids, weights

    def __call__(self, sentences: Sequence[Sequence[str]], t_max: int | None = None) -> Tensor:
        t_max = t_max if t_max is not None else max(len(s) for s in sentences)
        ids, weights = self.bag(sentences, t_max)
        pooled = T.embedding_bag(self.embedding, ids, weights)  # [b*t*4, d_w]
        feats = pooled.reshape(len(sentences) * t_max, 4 * self.d_word)
        return self.proj(feats).reshape(len(sentences), t_max, self.out_dim)


def encode_lexicon(chars: Sequence[str], encoder: LexiconEncoder) -> Tensor:
    """Lexicon-view vectors ``[t, out_dim]`` for one sentence."""
    return encoder([list(chars)]).reshape(len(chars), encoder.out_dim)
