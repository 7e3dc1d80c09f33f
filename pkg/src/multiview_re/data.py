"""Corpus ingestion, vocabularies and padded batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
MAX_POS = 50
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class RelationInstance:
    chars: tuple[str, ...]
    head: tuple[int, int]
    tail: tuple[int, int]
    relation: str

    def __post_init__(self):
        object.__setattr__(self, "chars", tuple(self.chars))
        object.__setattr__(self, "head", tuple(int(x) for x in self.head))
        object.__setattr__(self, "tail", tuple(int(x) for x in self.tail))
        n = len(self.chars)
        for role, (s, e) in (("head", self.head), ("tail", self.tail)):
            if not 0 <= s < e <= n:
                raise DataValidationError(f"{role} span [{s},{e}) out of range for a {n}-character sentence")
        if self.head == self.tail:
            raise DataValidationError(f"head and tail spans are identical: {list(self.head)}")

    @property
    def text(self) -> str:
        return "".join(self.chars)

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "head": {"start": self.head[0], "end": self.head[1]},
            "tail": {"start": self.tail[0], "end": self.tail[1]},
            "relation": self.relation,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RelationInstance":
        try:
            head = (obj["head"]["start"], obj["head"]["end"])
            tail = (obj["tail"]["start"], obj["tail"]["end"])
            return cls(tuple(obj["text"]), head, tail, str(obj["relation"]))
        except (KeyError, TypeError) as exc:
            raise DataValidationError(f"missing or malformed field: {exc}") from None


def load_jsonl(path: str | Path) -> list[RelationInstance]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataValidationError(f"{path}:{lineno}: expected a JSON object")
            try:
                out.append(RelationInstance.from_json(obj))
            except DataValidationError as exc:
                raise DataValidationError(f"{path}:{lineno}: {exc}") from None
    logger.info("loaded %d instances from %s", len(out), path)
    return out


def write_jsonl(instances: Iterable[RelationInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_splits(data_dir: str | Path, required: Sequence[str] = ("train", "dev")) -> dict[str, list[RelationInstance]]:
    data_dir = Path(data_dir)
    splits = {}
    for name in SPLITS:
        p = data_dir / f"{name}.jsonl"
        if p.exists():
            splits[name] = load_jsonl(p)
        elif name in required:
            raise FileNotFoundError(f"missing split file {p}")
    logger.info("split sizes: %s", {k: len(v) for k, v in splits.items()})
    return splits


class Vocab:
    """Bidirectional token <-> id map; ids follow first occurrence after the reserved ones."""

    def __init__(self, reserved: Sequence[str] = (), unk: str | None = None):
        self._itos: list[str] = []
        self._stoi: dict[str, int] = {}
        self.reserved = tuple(reserved)
        self.unk = unk
        for tok in reserved:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self._stoi:
            self._stoi[tok] = len(self._itos)
            self._itos.append(tok)
        return self._stoi[tok]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self._stoi

    def id(self, tok: str) -> int:
        try:
            return self._stoi[tok]
        except KeyError:
            if self.unk is None:
                raise DataValidationError(f"unknown token {tok!r}") from None
            return self._stoi[self.unk]

    def ids(self, toks: Iterable[str]) -> list[int]:
        return [self.id(t) for t in toks]

    def token(self, i: int) -> str:
        return self._itos[i]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def to_dict(self) -> dict:
        return {"tokens": self._itos, "reserved": list(self.reserved), "unk": self.unk}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        v = cls(d.get("reserved", ()), d.get("unk"))
        for tok in d["tokens"]:
            v.add(tok)
        return v


def build_char_vocab(instances: Iterable[RelationInstance]) -> Vocab:
    v = Vocab((PAD, UNK), unk=UNK)
    for inst in instances:
        for ch in inst.chars:
            v.add(ch)
    return v


def build_label_vocab(instances: Iterable[RelationInstance]) -> Vocab:
    v = Vocab()
    for inst in instances:
        v.add(inst.relation)
    return v


def relative_offsets(n: int, span: tuple[int, int], max_pos: int = MAX_POS) -> np.ndarray:
    """Signed distance of every position to the nearest index inside ``span``, clipped."""
    i = np.arange(n)
    start, end = span
    rel = np.where(i < start, i - start, np.where(i >= end, i - (end - 1), 0))
    return np.clip(rel, -max_pos, max_pos)


def position_ids(n: int, span: tuple[int, int], max_pos: int = MAX_POS) -> np.ndarray:
    # id 0 is padding; real offsets map to 1 .. 2*max_pos+1
    return relative_offsets(n, span, max_pos) + max_pos + 1


@dataclass
class Batch:
    char_ids: np.ndarray  # [b, t] int64
    mask: np.ndarray  # [b, t] bool
    head_pos: np.ndarray  # [b, t] int64
    tail_pos: np.ndarray  # [b, t] int64
    labels: np.ndarray  # [b] int64
    instances: tuple[RelationInstance, ...] = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.instances)

    @property
    def t_max(self) -> int:
        return self.char_ids.shape[1]


def make_batch(
    instances: Sequence[RelationInstance],
    char_vocab: Vocab,
    label_vocab: Vocab,
    indices: Sequence[int] | None = None,
    max_pos: int = MAX_POS,
) -> Batch:
    b = len(instances)
    t = max(len(x.chars) for x in instances)
    char_ids = np.zeros((b, t), dtype=np.int64)
    mask = np.zeros((b, t), dtype=bool)
    head = np.zeros((b, t), dtype=np.int64)
    tail = np.zeros((b, t), dtype=np.int64)
    for r, inst in enumerate(instances):
        n = len(inst.chars)
        char_ids[r, :n] = char_vocab.ids(inst.chars)
        mask[r, :n] = True
        head[r, :n] = position_ids(n, inst.head, max_pos)
        tail[r, :n] = position_ids(n, inst.tail, max_pos)
    labels = np.array([label_vocab.id(x.relation) for x in instances], dtype=np.int64)
    idx = np.arange(b) if indices is None else np.asarray(indices, dtype=np.int64)
    return Batch(char_ids, mask, head, tail, labels, tuple(instances), idx)


def batchify(
    instances: Sequence[RelationInstance],
    char_vocab: Vocab,
    label_vocab: Vocab,
    batch_size: int = 32,
    shuffle_seed=None,
    max_pos: int = MAX_POS,
) -> list[Batch]:
    """Split into padded batches; ``shuffle_seed=None`` keeps file order."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    n = len(instances)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    batches = []
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        batches.append(make_batch([instances[i] for i in idx], char_vocab, label_vocab, idx, max_pos))
    return batches
