"""Optimization (AdamW + warmup/linear decay), evaluation, and the comparison harnesses."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .classifier import nll_from_logits, predict
from .data import Batch, RelationInstance, batchify
from .errors import ConfigError, ContractError, DataValidationError, NumericalError
from .fusion import FUSIONS, VIEW_ORDER, MoVEFusion
from .lexicon import Lexicon
from .metrics import MetricsReport, compute_metrics
from .model import ModelConfig, MultiViewModel
from .nn import ParamStore
from .radical import RadicalDictionary

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    warmup_ratio: float = 0.10
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    debug_simplex: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must be in (0, 1), got {self.warmup_ratio}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("lr", "batch_size", "epochs", "warmup_ratio", "weight_decay", "eps", "seed")}
        d["betas"] = list(self.betas)
        d["debug_simplex"] = self.debug_simplex
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(model=model, **d)


# ---------------------------------------------------------------------------
# schedule and optimizer


def warmup_steps(total_steps: int, warmup_ratio: float = 0.10) -> int:
    # round() guards against 0.1 * n landing a hair above an integer
    return math.ceil(round(warmup_ratio * total_steps, 9))


def lr_schedule(step: int, total_steps: int, lr_peak: float = 1e-3, warmup_ratio: float = 0.10) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then linear decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(total_steps, warmup_ratio)
    if step <= warm:
        # ratio first so the boundary returns lr_peak exactly
        return lr_peak * (step / warm) if warm else lr_peak
    return lr_peak * ((total_steps - step) / (total_steps - warm))


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
    decay_exempt_rows: Mapping[str, Sequence[int]] | None = None,
) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``.
    Parameters with no gradient are treated as having a zero gradient.
    """
    b1, b2 = betas
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    exempt = decay_exempt_rows or {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        decay = weight_decay * theta
        rows = exempt.get(name)
        if rows:
            decay[list(rows)] = 0.0
        theta -= lr * (update + decay)


class AdamW:
    """Stateful wrapper binding :func:`adamw_step` to a :class:`ParamStore`."""

    def __init__(self, store: ParamStore, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.store = store
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self, lr: float) -> None:
        params = {n: t.data for n, t in self.store.items()}
        grads = {n: t.grad for n, t in self.store.items()}
        adamw_step(params, grads, self.state, lr, self.betas, self.eps, self.weight_decay, self.store.pad_rows)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Prediction:
    index: int
    gold: str
    pred: str
    probs: list[float]

    def to_json(self) -> dict:
        return {"index": self.index, "gold": self.gold, "pred": self.pred, "probs": self.probs}


def check_labels(model: MultiViewModel, instances: Sequence[RelationInstance]) -> None:
    for i, inst in enumerate(instances):
        if inst.relation not in model.label_vocab:
            raise DataValidationError(
                f"instance {i}: label {inst.relation!r} is not in the checkpoint's label inventory"
            )


def predict_dataset(
    model: MultiViewModel, instances: Sequence[RelationInstance], batch_size: int = 32, topk: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities ``[n, Y]`` and predicted ids ``[n]`` in dataset order."""
    check_labels(model, instances)
    probs = np.zeros((len(instances), len(model.label_vocab)))
    for batch in batchify(instances, model.char_vocab, model.label_vocab, batch_size, max_pos=model.config.max_pos):
        probs[batch.indices] = model.forward(batch, topk=topk).probs
    return probs, predict(probs)


def evaluate(
    model: MultiViewModel, instances: Sequence[RelationInstance], batch_size: int = 32, topk: int | None = None
) -> tuple[MetricsReport, list[Prediction]]:
    probs, pred = predict_dataset(model, instances, batch_size, topk)
    gold = np.array([model.label_vocab.id(x.relation) for x in instances], dtype=np.int64)
    labels = model.label_vocab.tokens
    report = compute_metrics(gold, pred, len(labels), labels)
    preds = [
        Prediction(i, labels[g], labels[p], [float(x) for x in row])
        for i, (g, p, row) in enumerate(zip(gold, pred, probs))
    ]
    return report, preds


def gate_rows(model: MultiViewModel, instances: Sequence[RelationInstance], batch_size: int = 32):
    """Per real token: ``(sentence_index, position, char, alpha...)`` from the MoVE gate."""
    if not isinstance(model.fusion, MoVEFusion):
        raise ConfigError(f"gate inspection needs a MoVE checkpoint, this one uses {model.config.fusion!r}")
    check_labels(model, instances)
    rows = []
    for batch in batchify(instances, model.char_vocab, model.label_vocab, batch_size, max_pos=model.config.max_pos):
        hm_views = model.view_features(batch)
        b, t = batch.char_ids.shape
        d = model.config.view_dim
        from .fusion import concat_views

        hm = concat_views([hm_views[v].reshape(b * t, d) for v in model.config.views], d)
        alpha = model.fusion.gate_distribution(hm).data.reshape(b, t, -1)
        for r, inst in enumerate(batch.instances):
            for i, ch in enumerate(inst.chars):
                rows.append((int(batch.indices[r]), i, ch, alpha[r, i].tolist()))
    rows.sort(key=lambda x: (x[0], x[1]))
    return rows


def gate_mass(model: MultiViewModel, instances: Sequence[RelationInstance]) -> dict[str, float]:
    """Mean gate weight per expert over all real tokens."""
    rows = gate_rows(model, instances)
    mean = np.mean(np.array([r[3] for r in rows]), axis=0)
    return {v: float(m) for v, m in zip(model.config.views, mean)}


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    step: int
    lr: float
    train_loss: float
    dev_macro_f1: float


@dataclass
class TrainResult:
    config: TrainConfig
    model: MultiViewModel  # parameters after the last epoch
    best_checkpoint: bytes  # best dev macro-F1 (initial model when epochs == 0)
    best_epoch: int
    log: list[EpochLog]
    batch_digest: str  # hash of the training batch order, for seed audits
    simplex_checks: int = 0
    simplex_max_deviation: float = 0.0

    def best_model(self) -> MultiViewModel:
        return MultiViewModel.from_bytes(self.best_checkpoint)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "step", "lr", "train_loss", "dev_macro_f1"])
        for e in self.log:
            w.writerow([e.epoch, e.step, repr(e.lr), repr(e.train_loss), repr(e.dev_macro_f1)])
        return buf.getvalue()


def train(
    cfg: TrainConfig,
    train_set: Sequence[RelationInstance],
    dev_set: Sequence[RelationInstance] | None = None,
    lexicon: Lexicon | None = None,
    radical_dict: RadicalDictionary | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    model = MultiViewModel.for_corpus(cfg.model, train_set, lexicon, radical_dict, seed=cfg.seed)
    opt = AdamW(model.params, cfg.betas, cfg.eps, cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    dev_set = dev_set or []
    best_blob, best_f1, best_epoch = model.to_bytes({"epoch": 0}), -1.0, 0
    log: list[EpochLog] = []
    digest = hashlib.sha256()
    step = 0
    monitor = T.check_simplex() if cfg.debug_simplex else None
    mon = monitor.__enter__() if monitor else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            batches = batchify(
                train_set, model.char_vocab, model.label_vocab, cfg.batch_size,
                shuffle_seed=[cfg.seed, epoch], max_pos=cfg.model.max_pos,
            )
            losses = []
            lr = 0.0
            for batch in batches:
                digest.update(batch.indices.astype("<i8").tobytes())
                lr = lr_schedule(step + 1, total, cfg.lr, cfg.warmup_ratio)
                model.params.zero_grad()
                out = model.forward(batch)
                if mon is not None:
                    mon.observe(out.probs, -1, "classifier")
                loss = nll_from_logits(out.logits, batch.labels)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"loss diverged ({value}) at epoch {epoch}, step {step + 1}")
                loss.backward()
                opt.step(lr)
                step += 1
                losses.append(value)
            dev_f1 = evaluate(model, dev_set, cfg.batch_size)[0].macro_f1 if dev_set else float("nan")
            entry = EpochLog(epoch, step, lr, float(np.mean(losses)), dev_f1)
            log.append(entry)
            logger.info("epoch %d step %d lr %.3g loss %.4f dev macro-F1 %.4f", epoch, step, lr, entry.train_loss, dev_f1)
            if on_epoch:
                on_epoch(entry)
            score = dev_f1 if dev_set else -entry.train_loss
            if score > best_f1:
                best_f1, best_epoch = score, epoch
                best_blob = model.to_bytes({"epoch": epoch})
    finally:
        if monitor:
            monitor.__exit__(None, None, None)
    return TrainResult(
        cfg, model, best_blob, best_epoch, log, digest.hexdigest(),
        mon.checks if mon else 0, mon.max_deviation if mon else 0.0,
    )


def loss_curve_csv(curves: Mapping[str, Sequence[EpochLog]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "strategy", "train_loss", "dev_macro_f1"])
    for name, log in curves.items():
        for e in log:
            w.writerow([e.epoch, name, repr(e.train_loss), repr(e.dev_macro_f1)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# harnesses


def _report_row(name: str, views: Sequence[str], result: TrainResult, splits) -> dict:
    model = result.best_model()
    row = {"variant": name, "views": list(views), "best_epoch": result.best_epoch,
           "parameters": model.parameter_count(), "parameter_names": model.params.names()}
    for split in ("dev", "test"):
        if splits.get(split):
            rep = evaluate(model, splits[split])[0]
            row[split] = {
                "precision": rep.macro_precision, "recall": rep.macro_recall, "f1": rep.macro_f1,
                "micro_f1": rep.micro_f1, "report": rep.to_dict(),
            }
    return row


def ablate_views(
    cfg: TrainConfig,
    splits: Mapping[str, Sequence[RelationInstance]],
    lexicon: Lexicon | None = None,
    radical_dict: RadicalDictionary | None = None,
) -> list[dict]:
    """Full model plus one run per removed view, identical seeds."""
    views = tuple(cfg.model.views)
    if len(views) < 2:
        raise ConfigError("ablation needs at least two views (removing the only view leaves none)")
    variants = [("full", views)] + [(f"w/o {v}", tuple(x for x in views if x != v)) for v in views]
    rows = []
    for name, vs in variants:
        run_cfg = replace(cfg, model=replace(cfg.model, views=vs))
        result = train(run_cfg, splits["train"], splits.get("dev"), lexicon, radical_dict)
        rows.append(_report_row(name, vs, result, splits))
    return rows


def ablation_table(rows: Sequence[dict], split: str = "dev") -> str:
    lines = [f"{'Model variant':<24}{'Precision':>10}{'Recall':>10}{'F1':>10}"]
    for r in rows:
        m = r.get(split)
        if m:
            lines.append(f"{r['variant']:<24}{100 * m['precision']:>10.2f}{100 * m['recall']:>10.2f}{100 * m['f1']:>10.2f}")
    return "\n".join(lines)


def time_inference(model: MultiViewModel, instances: Sequence[RelationInstance], batch_size: int = 32, repeats: int = 3) -> float:
    """Mean wall-clock seconds per forward batch (relative comparisons only)."""
    batches = batchify(instances, model.char_vocab, model.label_vocab, batch_size, max_pos=model.config.max_pos)
    if not batches:
        return 0.0
    start = time.perf_counter()
    for _ in range(repeats):
        for b in batches:
            model.forward(b)
    return (time.perf_counter() - start) / (repeats * len(batches))


def compare_fusion(
    cfg: TrainConfig,
    splits: Mapping[str, Sequence[RelationInstance]],
    lexicon: Lexicon | None = None,
    radical_dict: RadicalDictionary | None = None,
    strategies: Sequence[str] = FUSIONS,
) -> dict:
    runs = {}
    curves = {}
    digests = {}
    eval_set = splits.get("dev") or splits["train"]
    for name in strategies:
        run_cfg = replace(cfg, model=replace(cfg.model, fusion=name))
        result = train(run_cfg, splits["train"], splits.get("dev"), lexicon, radical_dict)
        curves[name] = result.log
        digests[name] = result.batch_digest
        row = _report_row(name, run_cfg.model.views, result, splits)
        row["inference_seconds_per_batch"] = time_inference(result.model, eval_set, cfg.batch_size)
        if name == "move":
            row["gate_mass"] = gate_mass(result.model, eval_set)
        row.pop("parameter_names")
        runs[name] = row
    return {
        "runs": runs,
        "batch_digests": digests,
        "seed_audit_passed": len(set(digests.values())) == 1,
        "loss_curves_csv": loss_curve_csv(curves),
    }
