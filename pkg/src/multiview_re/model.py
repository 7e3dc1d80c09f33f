"""The assembled multi-view relation classifier."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .classifier import Classifier, nll_from_logits, sentence_pool
from .data import MAX_POS, Batch, RelationInstance, Vocab, build_char_vocab, build_label_vocab
from .errors import ConfigError, NumericalError
from .fusion import FUSIONS, VIEW_ORDER, AttentionFusion, ConcatFusion, MoVEFusion, concat_views
from .lexicon import Lexicon, LexiconEncoder
from .nn import ParamStore
from .radical import RadicalDictionary, RadicalEncoder
from .semantic import SemanticEncoder, build_biword_vocab
from .tensor import Tensor

VERSION = "0.1.0"


@dataclass
class ModelConfig:
    views: tuple[str, ...] = VIEW_ORDER
    fusion: str = "move"
    view_dim: int = 100
    d_char: int = 100
    d_pos: int = 20
    hidden: int = 100
    d_radical: int = 50
    d_conv: int = 100
    window: int = 3
    d_word: int = 50
    max_pos: int = MAX_POS
    biword: bool = False
    expert_relu: bool = True
    expert_input: str = "full"
    pooling: str = "max"
    radical_max_len: int | None = None

    def __post_init__(self):
        unknown = set(self.views) - set(VIEW_ORDER)
        if unknown:
            raise ConfigError(f"unknown views {sorted(unknown)}")
        self.views = tuple(v for v in VIEW_ORDER if v in set(self.views))
        if not self.views:
            raise ConfigError("at least one view must be enabled")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "views" in kw:
            kw["views"] = tuple(kw["views"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["views"] = list(self.views)
        return d


@dataclass
class ForwardOutput:
    logits: Tensor
    fused: Tensor  # [b, t, d]
    weights: Tensor | None = None  # gate or attention distribution [b*t, E]
    views: dict[str, Tensor] = field(default_factory=dict)

    @property
    def probs(self) -> np.ndarray:
        z = self.logits.data
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)


class MultiViewModel:
    def __init__(
        self,
        config: ModelConfig,
        char_vocab: Vocab,
        label_vocab: Vocab,
        lexicon: Lexicon | None = None,
        radical_dict: RadicalDictionary | None = None,
        biword_vocab: Vocab | None = None,
        seed: int = 0,
    ):
        self.config = c = replace(config)
        self.seed = seed
        self.char_vocab = char_vocab
        self.label_vocab = label_vocab
        self.params = ParamStore(seed)
        self.semantic = self.lexicon = self.radical = None
        if "semantic" in c.views:
            if c.biword and biword_vocab is None:
                raise ConfigError("biword channel enabled but no bigram vocabulary given")
            self.semantic = SemanticEncoder(
                self.params, char_vocab, c.d_char, c.d_pos, c.hidden, c.view_dim, c.max_pos,
                biword_vocab if c.biword else None,
            )
        if "lexicon" in c.views:
            if lexicon is None:
                raise ConfigError("lexicon view enabled but no lexicon given")
            self.lexicon = LexiconEncoder(self.params, lexicon, c.d_word, c.view_dim)
        if "radical" in c.views:
            if radical_dict is None:
                raise ConfigError("radical view enabled but no radical dictionary given")
            self.radical = RadicalEncoder(
                self.params, radical_dict, c.d_radical, c.d_conv, c.window, c.view_dim, c.radical_max_len
            )
            c.radical_max_len = self.radical.max_len
        n = len(c.views)
        if c.fusion == "move":
            self.fusion = MoVEFusion(self.params, n, c.view_dim, c.view_dim, c.expert_relu, c.expert_input)
        elif c.fusion == "concat":
            self.fusion = ConcatFusion(self.params, n, c.view_dim, c.view_dim)
        else:
            self.fusion = AttentionFusion(self.params, c.view_dim, c.view_dim)
        self.classifier = Classifier(self.params, len(label_vocab), c.view_dim)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def for_corpus(
        cls,
        config: ModelConfig,
        train: Sequence[RelationInstance],
        lexicon: Lexicon | None = None,
        radical_dict: RadicalDictionary | None = None,
        seed: int = 0,
    ) -> "MultiViewModel":
        char_vocab = build_char_vocab(train)
        label_vocab = build_label_vocab(train)
        biword_vocab = build_biword_vocab(train) if config.biword else None
        if radical_dict is not None and "radical" in config.views:
            radical_dict = copy.deepcopy(radical_dict)
            radical_dict.extend_fallbacks(char_vocab.tokens[2:])
        return cls(config, char_vocab, label_vocab, lexicon, radical_dict, biword_vocab, seed)

    # -- forward --------------------------------------------------------------

    def view_features(self, batch: Batch) -> dict[str, Tensor]:
        sentences = [inst.chars for inst in batch.instances]
        t = batch.t_max
        out = {}
        if self.semantic is not None:
            out["semantic"] = self.semantic(batch)
        if self.lexicon is not None:
            out["lexicon"] = self.lexicon(sentences, t)
        if self.radical is not None:
            out["radical"] = self.radical(sentences, t)
        return out

    def forward(self, batch: Batch, topk: int | None = None, gate_logits: np.ndarray | None = None) -> ForwardOutput:
        views = self.view_features(batch)
        b, t = batch.char_ids.shape
        d = self.config.view_dim
        flat = [views[v].reshape(b * t, d) for v in self.config.views]
        weights = None
        if isinstance(self.fusion, MoVEFusion):
            fused, weights = self.fusion(concat_views(flat, d), topk=topk, gate_logits=gate_logits)
        elif isinstance(self.fusion, ConcatFusion):
            fused = self.fusion(concat_views(flat, d))
        else:
            fused, weights = self.fusion(flat)
        fused = fused.reshape(b, t, d)
        pooled = sentence_pool(fused, batch.mask, self.config.pooling)
        return ForwardOutput(self.classifier.logits(pooled), fused, weights, views)

    def loss(self, batch: Batch) -> Tensor:
        return nll_from_logits(self.forward(batch).logits, batch.labels)

    # -- persistence ----------------------------------------------------------

    def meta(self) -> dict:
        m = {
            "tool_version": VERSION,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "char_vocab": self.char_vocab.to_dict(),
            "label_vocab": self.label_vocab.to_dict(),
        }
        if self.lexicon is not None:
            m["lexicon"] = self.lexicon.lexicon.to_dict()
        if self.radical is not None:
            m["radical"] = self.radical.dictionary.to_dict()
        if self.semantic is not None and self.semantic.biword_vocab is not None:
            m["biword_vocab"] = self.semantic.biword_vocab.to_dict()
        return m

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        return checkpoint.to_bytes(self.params.snapshot(), meta)

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(extra_meta))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MultiViewModel":
        values, meta = checkpoint.from_bytes(blob)
        config = ModelConfig.from_dict(meta["config"])
        model = cls(
            config,
            Vocab.from_dict(meta["char_vocab"]),
            Vocab.from_dict(meta["label_vocab"]),
            Lexicon.from_dict(meta["lexicon"]) if "lexicon" in meta else None,
            RadicalDictionary.from_dict(meta["radical"]) if "radical" in meta else None,
            Vocab.from_dict(meta["biword_vocab"]) if "biword_vocab" in meta else None,
            seed=meta.get("seed", 0),
        )
        model.params.load(values)
        return model

    @classmethod
    def load(cls, path: str | Path) -> "MultiViewModel":
        return cls.from_bytes(Path(path).read_bytes())

    def parameter_count(self) -> int:
        return self.params.count()


def check_finite(model: MultiViewModel) -> None:
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericalError(f"non-finite values in parameter {name}")
