"""Synthetic relation corpora with planted, generator-controlled label cues.

Every sentence is ``filler ENTITY [cue] filler ENTITY filler [noise cues]``.
The signal view's cue is a function of the label; views listed as noise get a
cue drawn independently of the label; the remaining views carry no cue.

* lexicon cue: a two-character word between the entities.  Each relation has
  training words and disjoint held-out words (dev/test only) built from one
  shared character pool, so only the lexicon's pretrained vectors (relation
  prototype plus jitter) carry the label to unseen words.
* radical cue: a character whose first component is the relation's radical;
  held-out characters again appear only in dev/test.
* semantic cue: the order of head, tail and marker characters.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import SPLITS, RelationInstance, write_jsonl
from .errors import ConfigError
from .lexicon import Lexicon
from .radical import RadicalDictionary

SIGNALS = ("semantic", "lexicon", "radical")
CJK_START, CJK_END = 0x4E00, 0x9FA6
KANGXI_START, KANGXI_END = 0x2F00, 0x2FD6

N_FILLER_CHARS = 30
N_ENTITY_CHARS = 16
N_ENTITY_NAMES = 24
TRAIN_CUES, HELDOUT_CUES = 12, 4
WORD_DIM = 50
PROTOTYPE_JITTER = 0.3


@dataclass
class SynthCorpus:
    splits: dict[str, list[RelationInstance]]
    lexicon: Lexicon
    radical_dict: RadicalDictionary
    cue_table: dict = field(default_factory=dict)


def split_sizes(n: int) -> tuple[int, int, int]:
    """80/10/10 with floors on train and dev; test takes the remainder."""
    n_train = math.floor(0.8 * n)
    n_dev = math.floor(0.1 * n)
    return n_train, n_dev, n - n_train - n_dev


def _orders(n_relations: int) -> tuple[int, list[tuple[str, ...]]]:
    """Smallest item count ``m`` (head, tail, m-2 markers) with ``m! >= K``."""
    m = 3
    while math.factorial(m) < n_relations:
        m += 1
    items = ("H", "T") + tuple(f"M{i}" for i in range(m - 2))
    return m, [tuple(p) for p in itertools.permutations(items)][:n_relations]


def synth_generate(
    n_sentences: int,
    n_relations: int,
    seed: int = 0,
    signal: str = "lexicon",
    noise_views: Iterable[str] = (),
) -> SynthCorpus:
    if n_relations < 2:
        raise ConfigError("need at least two relations")
    if n_sentences < 1:
        raise ConfigError("need at least one sentence")
    if signal not in SIGNALS:
        raise ConfigError(f"signal must be one of {SIGNALS}, got {signal!r}")
    noise = set(noise_views)
    if noise - set(SIGNALS):
        raise ConfigError(f"unknown noise views {sorted(noise - set(SIGNALS))}")
    if signal in noise:
        raise ConfigError(f"the signal view {signal!r} cannot also be a noise view")

    rng = np.random.default_rng(seed)
    k = n_relations
    relations = [f"rel_{i}" for i in range(k)]
    m, orders = _orders(k)

    pool_size = max(8, math.ceil(math.sqrt((TRAIN_CUES + HELDOUT_CUES) * k)) + 2)
    n_radical_chars = k * (TRAIN_CUES + HELDOUT_CUES)
    n_chars = N_FILLER_CHARS + N_ENTITY_CHARS + pool_size + (m - 2) + n_radical_chars
    chars = [chr(c) for c in rng.choice(np.arange(CJK_START, CJK_END), size=n_chars, replace=False)]
    take = iter(chars)
    filler = [next(take) for _ in range(N_FILLER_CHARS)]
    entity_chars = [next(take) for _ in range(N_ENTITY_CHARS)]
    word_pool = [next(take) for _ in range(pool_size)]
    markers = [next(take) for _ in range(m - 2)]
    radical_chars = [next(take) for _ in range(n_radical_chars)]

    comps = [chr(c) for c in rng.permutation(np.arange(KANGXI_START, KANGXI_END))]
    relation_radicals = comps[:k]
    plain_comps = comps[k:]

    # radical dictionary: plain characters never touch relation radicals
    rd = RadicalDictionary()
    for ch in filler + entity_chars + word_pool + markers:
        rd.add(ch, [plain_comps[i] for i in rng.choice(len(plain_comps), size=3, replace=False)])
    radical_cues: dict[str, list[list[str]]] = {"train": [], "heldout": []}
    for r in range(k):
        own = radical_chars[r * (TRAIN_CUES + HELDOUT_CUES):(r + 1) * (TRAIN_CUES + HELDOUT_CUES)]
        for ch in own:
            rest = [plain_comps[i] for i in rng.choice(len(plain_comps), size=2, replace=False)]
            rd.add(ch, [relation_radicals[r]] + rest)
        radical_cues["train"].append(own[:TRAIN_CUES])
        radical_cues["heldout"].append(own[TRAIN_CUES:])

    # lexicon cue words: distinct ordered pairs from the shared pool
    pairs = [a + b for a, b in itertools.permutations(word_pool, 2)]
    chosen = [pairs[i] for i in rng.choice(len(pairs), size=k * (TRAIN_CUES + HELDOUT_CUES), replace=False)]
    lexicon_cues: dict[str, list[list[str]]] = {"train": [], "heldout": []}
    for r in range(k):
        own = chosen[r * (TRAIN_CUES + HELDOUT_CUES):(r + 1) * (TRAIN_CUES + HELDOUT_CUES)]
        lexicon_cues["train"].append(own[:TRAIN_CUES])
        lexicon_cues["heldout"].append(own[TRAIN_CUES:])

    names: list[str] = []
    while len(names) < N_ENTITY_NAMES:
        a, b = rng.choice(len(entity_chars), size=2, replace=False)
        name = entity_chars[a] + entity_chars[b]
        if name not in names:
            names.append(name)

    lex = Lexicon()
    prototypes = rng.normal(0.0, 1.0, size=(k, WORD_DIM))
    for r in range(k):
        for w in lexicon_cues["train"][r] + lexicon_cues["heldout"][r]:
            lex.add(w)
            lex.vectors[w] = prototypes[r] + PROTOTYPE_JITTER * rng.normal(0.0, 1.0, size=WORD_DIM)
    for name in names:
        lex.add(name)
        lex.vectors[name] = rng.normal(0.0, 1.0, size=WORD_DIM)

    def fill(lo: int, hi: int) -> list[str]:
        return [filler[i] for i in rng.integers(0, len(filler), size=int(rng.integers(lo, hi + 1)))]

    def cue(view: str, r: int, pool: str) -> list[str]:
        if view == "lexicon":
            words = lexicon_cues[pool][r]
            return list(words[int(rng.integers(len(words)))])
        chars_ = radical_cues[pool][r]
        return [chars_[int(rng.integers(len(chars_)))]]

    def sentence(r: int, pool: str) -> RelationInstance:
        if signal == "semantic":
            order = orders[r]
        elif "semantic" in noise:
            order = orders[int(rng.integers(k))]
        else:
            order = ("H", "T")
        head_name, tail_name = (names[i] for i in rng.choice(len(names), size=2, replace=False))
        seq = fill(1, 3)
        spans: dict[str, tuple[int, int]] = {}
        first_entity = True
        for item in order:
            if item in ("H", "T"):
                start = len(seq)
                seq += list(head_name if item == "H" else tail_name)
                spans[item] = (start, len(seq))
                if first_entity and signal != "semantic":
                    seq += cue(signal, r, pool)
                first_entity = False
            else:
                seq.append(markers[int(item[1:])])
            seq += fill(1, 2)
        for view in ("lexicon", "radical"):
            if view in noise:
                seq += cue(view, int(rng.integers(k)), pool)
                seq += fill(1, 2)
        return RelationInstance(tuple(seq), spans["H"], spans["T"], relations[r])

    splits: dict[str, list[RelationInstance]] = {}
    for split, size in zip(SPLITS, split_sizes(n_sentences)):
        labels = rng.permutation(np.arange(size) % k)
        pool = "train" if split == "train" else "heldout"
        splits[split] = [sentence(int(r), pool) for r in labels]

    cue_table = {
        "signal": signal,
        "noise_views": sorted(noise),
        "relations": relations,
        "lexicon": {w: relations[r] for pool in ("train", "heldout") for r in range(k) for w in lexicon_cues[pool][r]},
        "radical": {relation_radicals[r]: relations[r] for r in range(k)},
        "semantic": {"markers": markers, "orders": {relations[r]: list(orders[r]) for r in range(k)}},
    }
    return SynthCorpus(splits, lex, rd, cue_table)


# ---------------------------------------------------------------------------
# rule oracle over the cue table


def _first_entity_end(inst: RelationInstance) -> int:
    return inst.head[1] if inst.head[0] < inst.tail[0] else inst.tail[1]


def _item_order(inst: RelationInstance, markers: Sequence[str]) -> list[str]:
    located = [(inst.head[0], "H"), (inst.tail[0], "T")]
    for i, mk in enumerate(markers):
        if mk in inst.chars:
            located.append((inst.chars.index(mk), f"M{i}"))
    return [name for _, name in sorted(located)]


def cue_oracle(inst: RelationInstance, cue_table: dict, radical_dict: RadicalDictionary | None = None) -> str | None:
    """Label predicted from the planted signal cue alone (``None`` if absent)."""
    signal = cue_table["signal"]
    at = _first_entity_end(inst)
    if signal == "lexicon":
        return cue_table["lexicon"].get("".join(inst.chars[at:at + 2]))
    if signal == "radical":
        if radical_dict is None:
            raise ConfigError("the radical oracle needs the radical dictionary")
        return cue_table["radical"].get(radical_dict.decompose(inst.chars[at])[0])
    order = _item_order(inst, cue_table["semantic"]["markers"])
    for rel, pattern in cue_table["semantic"]["orders"].items():
        if list(pattern) == order:
            return rel
    return None


def oracle_accuracy(instances: Sequence[RelationInstance], cue_table: dict, radical_dict=None) -> float:
    if not instances:
        return 0.0
    hits = sum(cue_oracle(x, cue_table, radical_dict) == x.relation for x in instances)
    return hits / len(instances)


# ---------------------------------------------------------------------------
# on-disk layout

LEXICON_FILE = "lexicon.txt"
RADICAL_FILE = "radicals.tsv"
CUE_TABLE_FILE = "cue_table.json"


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for split, items in corpus.splits.items():
        path = out / f"{split}.jsonl"
        write_jsonl(items, path)
        written.append(path)
    corpus.lexicon.write(out / LEXICON_FILE)
    corpus.radical_dict.write_tsv(out / RADICAL_FILE)
    (out / CUE_TABLE_FILE).write_text(
        json.dumps(corpus.cue_table, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return written + [out / LEXICON_FILE, out / RADICAL_FILE, out / CUE_TABLE_FILE]
