"""Contextual character encoder: embeddings + bidirectional LSTM + projection."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import MAX_POS, PAD, PAD_ID, UNK, Batch, RelationInstance, Vocab
from .nn import Linear, ParamStore
from .tensor import Tensor

END = "</s>"


def bigrams(chars: Sequence[str]) -> list[str]:
    """``(c_i, c_{i+1})`` per position, ``(c_n, END)`` at the last one."""
    nxt = list(chars[1:]) + [END]
    return [f"{a}\t{b}" for a, b in zip(chars, nxt)]


def build_biword_vocab(instances: Iterable[RelationInstance]) -> Vocab:
    v = Vocab((PAD, UNK), unk=UNK)
    for inst in instances:
        for bg in bigrams(inst.chars):
            v.add(bg)
    return v


class LSTMCell:
    """Gate layout along the 4h axis: input, forget, candidate, output."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int):
        self.hidden = hidden
        self.w_x = store.uniform(f"{name}.w_x", (d_in, 4 * hidden), fan_in=d_in)
        self.w_h = store.uniform(f"{name}.w_h", (hidden, 4 * hidden), fan_in=hidden)
        self.bias = store.uniform(f"{name}.bias", (4 * hidden,), fan_in=hidden)
        self.bias.data[hidden:2 * hidden] += 1.0

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.hidden
        z = x @ self.w_x + h @ self.w_h + self.bias
        i = T.sigmoid(z[:, 0:n])
        f = T.sigmoid(z[:, n:2 * n])
        g = T.tanh(z[:, 2 * n:3 * n])
        o = T.sigmoid(z[:, 3 * n:4 * n])
        c_new = f * c + i * g
        return o * T.tanh(c_new), c_new


def run_direction(cell: LSTMCell, x: Tensor, mask: np.ndarray, reverse: bool) -> list[Tensor]:
    """Hidden state per position. State is carried unchanged across masked steps."""
    b, t, _ = x.shape
    h = c = Tensor(np.zeros((b, cell.hidden)))
    out: list[Tensor | None] = [None] * t
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for s in steps:
        h_new, c_new = cell(x[:, s, :], h, c)
        keep = mask[:, s:s + 1]
        h = T.where(keep, h_new, h)
        c = T.where(keep, c_new, c)
        out[s] = h
    return out


class SemanticEncoder:
    def __init__(
        self,
        store: ParamStore,
        char_vocab: Vocab,
        d_char: int = 100,
        d_pos: int = 20,
        hidden: int = 100,
        out_dim: int = 100,
        max_pos: int = MAX_POS,
        biword_vocab: Vocab | None = None,
        prefix: str = "semantic",
    ):
        self.char_vocab = char_vocab
        self.biword_vocab = biword_vocab
        self.char_embedding = store.normal(f"{prefix}.char_embedding", (len(char_vocab), d_char), pad_rows=(PAD_ID,))
        n_pos = 2 * max_pos + 2  # + padding row
        self.head_embedding = store.normal(f"{prefix}.head_pos_embedding", (n_pos, d_pos), pad_rows=(PAD_ID,))
        self.tail_embedding = store.normal(f"{prefix}.tail_pos_embedding", (n_pos, d_pos), pad_rows=(PAD_ID,))
        self.biword_embedding = None
        if biword_vocab is not None:
            self.biword_embedding = store.normal(
                f"{prefix}.biword_embedding", (len(biword_vocab), d_char), pad_rows=(PAD_ID,)
            )
        d_in = d_char + 2 * d_pos
        self.fwd = LSTMCell(store, f"{prefix}.lstm_fwd", d_in, hidden)
        self.bwd = LSTMCell(store, f"{prefix}.lstm_bwd", d_in, hidden)
        self.proj = Linear(store, f"{prefix}.proj", 2 * hidden, out_dim)
        self.out_dim = out_dim

    def biword_ids(self, batch: Batch) -> np.ndarray:
        ids = np.zeros(batch.char_ids.shape, dtype=np.int64)
        for r, inst in enumerate(batch.instances):
            ids[r, : len(inst.chars)] = self.biword_vocab.ids(bigrams(inst.chars))
        return ids

    def embed(self, batch: Batch) -> Tensor:
        chars = T.take(self.char_embedding, batch.char_ids, padding_idx=PAD_ID)
        if self.biword_embedding is not None:
            chars = chars + T.take(self.biword_embedding, self.biword_ids(batch), padding_idx=PAD_ID)
        head = T.take(self.head_embedding, batch.head_pos, padding_idx=PAD_ID)
        tail = T.take(self.tail_embedding, batch.tail_pos, padding_idx=PAD_ID)
        return T.concat([chars, head, tail], axis=-1)

    def encode(self, embedded: Tensor, mask: np.ndarray) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        fwd = run_direction(self.fwd, embedded, mask, reverse=False)
        bwd = run_direction(self.bwd, embedded, mask, reverse=True)
        rows = [self.proj(T.concat([f, b], axis=-1)) for f, b in zip(fwd, bwd)]
        return T.stack(rows, axis=1)

    def __call__(self, batch: Batch) -> Tensor:
        return self.encode(self.embed(batch), batch.mask)


def embed_input(batch: Batch, encoder: SemanticEncoder) -> Tensor:
    return encoder.embed(batch)


def encode_semantic(embedded: Tensor, mask: np.ndarray, encoder: SemanticEncoder) -> Tensor:
    return encoder.encode(embedded, mask)
