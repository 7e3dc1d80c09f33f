"""Structural-component (radical) decomposition and the character CNN over it."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import PAD, PAD_ID, UNK, Vocab
from .errors import DataValidationError
from .nn import Linear, ParamStore
from .tensor import Tensor


class RadicalDictionary:
    """Character -> ordered component sequence, with a component vocabulary.

    Lookup is total: a character without an entry decomposes to itself.
    """

    def __init__(self, entries: dict[str, tuple[str, ...]] | None = None):
        self.entries: dict[str, tuple[str, ...]] = {}
        self.components = Vocab((PAD, UNK), unk=UNK)
        for ch, comps in (entries or {}).items():
            self.add(ch, comps)

    def add(self, ch: str, comps: Sequence[str]) -> None:
        comps = tuple(comps)
        if not comps:
            raise DataValidationError(f"empty decomposition for {ch!r}")
        if ch in self.entries:
            return
        self.entries[ch] = comps
        for c in comps:
            self.components.add(c)

    def decompose(self, ch: str) -> tuple[str, ...]:
        return self.entries.get(ch, (ch,))

    def extend_fallbacks(self, chars: Iterable[str]) -> None:
        """Give undecomposable characters their own singleton component id."""
        for ch in chars:
            if ch not in self.entries:
                self.components.add(ch)

    def component_ids(self, ch: str) -> list[int]:
        return self.components.ids(self.decompose(ch))

    @property
    def max_length(self) -> int:
        return max((len(c) for c in self.entries.values()), default=1)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ch: str) -> bool:
        return ch in self.entries

    def to_dict(self) -> dict:
        return {"entries": {k: list(v) for k, v in self.entries.items()}, "components": self.components.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RadicalDictionary":
        rd = cls()
        rd.entries = {k: tuple(v) for k, v in d["entries"].items()}
        rd.components = Vocab.from_dict(d["components"])
        return rd

    def write_tsv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for ch, comps in self.entries.items():
                fh.write(f"{ch}\t{' '.join(comps)}\n")


def parse_line(line: str) -> tuple[str, tuple[str, ...]]:
    """``char<TAB>components``.

    Components are space-separated; when the remainder has spaces, further
    TAB-separated fields are alternative decompositions (chaizi layout) and
    only the first is kept. Without spaces, TAB itself separates components.
    """
    ch, _, rest = line.partition("\t")
    ch = ch.strip()
    if not ch or not rest.strip():
        raise ValueError("expected 'character<TAB>components'")
    if " " in rest.strip():
        first = next(f for f in rest.split("\t") if f.strip())
        comps = first.split()
    else:
        comps = rest.split()
    if not comps:
        raise ValueError("empty component list")
    return ch, tuple(comps)


def load_dictionary(path: str | Path) -> RadicalDictionary:
    rd = RadicalDictionary()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            try:
                ch, comps = parse_line(line)
            except ValueError as exc:
                raise DataValidationError(f"{path}:{lineno}: {exc}") from None
            rd.add(ch, comps)
    return rd


class RadicalEncoder:
    """Embed components, convolve (window ``w``), max-pool, project to ``out_dim``.

    Every character's component sequence is padded to one fixed length, so
    the computation for character ``i`` never depends on its neighbours.
    """

    def __init__(
        self,
        store: ParamStore,
        dictionary: RadicalDictionary,
        d_radical: int = 50,
        d_conv: int = 100,
        window: int = 3,
        out_dim: int = 100,
        max_len: int | None = None,
        prefix: str = "radical",
    ):
        self.dictionary = dictionary
        self.window = window
        self.max_len = max(window, max_len if max_len is not None else dictionary.max_length)
        self.d_radical = d_radical
        self.embedding = store.normal(
            f"{prefix}.component_embedding", (len(dictionary.components), d_radical), pad_rows=(PAD_ID,)
        )
        self.conv = Linear(store, f"{prefix}.conv", window * d_radical, d_conv)
        self.proj = Linear(store, f"{prefix}.proj", d_conv, out_dim)
        self.out_dim = out_dim
        self._cache: dict[str, list[int]] = {}

    def _ids(self, ch: str) -> list[int]:
        ids = self._cache.get(ch)
        if ids is None:
            ids = self.dictionary.component_ids(ch)[: self.max_len]
            self._cache[ch] = ids
        return ids

    def component_matrix(self, sentences: Sequence[Sequence[str]], t_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Window id tensor ``[b*t, P, w]`` and window mask ``[b*t, P]``."""
        b, L, w = len(sentences), self.max_len, self.window
        ids = np.full((b * t_max, L), PAD_ID, dtype=np.int64)
        lengths = np.ones(b * t_max, dtype=np.int64)
        for r, chars in enumerate(sentences):
            for i, ch in enumerate(chars):
                comp = self._ids(ch)
                ids[r * t_max + i, : len(comp)] = comp
                lengths[r * t_max + i] = len(comp)
        P = L - w + 1
        windows = np.stack([ids[:, p:p + w] for p in range(P)], axis=1)
        valid = np.maximum(lengths, w) - w + 1
        mask = np.arange(P)[None, :] < valid[:, None]
        return windows, mask

    def __call__(self, sentences: Sequence[Sequence[str]], t_max: int | None = None) -> Tensor:
        t_max = t_max if t_max is not None else max(len(s) for s in sentences)
        windows, mask = self.component_matrix(sentences, t_max)
        n, P, w = windows.shape
        emb = T.take(self.embedding, windows, padding_idx=PAD_ID)  # [n, P, w, d_r]
        conv = self.conv(emb.reshape(n * P, w * self.d_radical)).reshape(n, P, -1)
        pooled = T.max_pool(conv, mask)
        out = self.proj(pooled)
        return out.reshape(len(sentences), t_max, self.out_dim)


def encode_radical(chars: Sequence[str], encoder: RadicalEncoder) -> Tensor:
    """Per-character radical-view vectors ``[t, out_dim]`` for one sentence."""
    return encoder([list(chars)]).reshape(len(chars), encoder.out_dim)
