"""Per-token fusion of the view vectors: mixture of view experts, concat, attention."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Linear, ParamStore
from .tensor import Tensor

VIEW_ORDER = ("semantic", "lexicon", "radical")
FUSIONS = ("move", "concat", "attention")


def concat_views(views: Sequence[Tensor], view_dim: int = 100) -> Tensor:
    """``h^m``: view vectors side by side in the fixed semantic/lexicon/radical order."""
    for v in views:
        if v.shape[-1] != view_dim:
            raise DimensionError(f"view vector has {v.shape[-1]} dims, expected {view_dim}")
    return T.concat(list(views), axis=-1)


def top_k_gate(alpha: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest weights per row (lower index wins ties), renormalize."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n_experts = alpha.shape[-1]
    if not 1 <= k <= n_experts:
        raise ConfigError(f"gate top-k must be in [1, {n_experts}], got {k}")
    if k == n_experts:
        return alpha.copy()
    order = np.argsort(-alpha, axis=-1, kind="stable")
    keep = np.zeros_like(alpha, dtype=bool)
    np.put_along_axis(keep, order[..., :k], True, axis=-1)
    sparse = np.where(keep, alpha, 0.0)
    return sparse / sparse.sum(axis=-1, keepdims=True)


class MoVEFusion:
    """Mixture of view experts.

    Expert ``k`` is ``L2_k(relu(L1_k(x)))``; the gate is ``softmax(Linear(h^m))``
    and the fused token vector is the gate-weighted sum of expert outputs.
    With ``expert_input="full"`` every expert reads all of ``h^m``; with
    ``"view"`` expert ``k`` reads only view ``k``'s slice.
    """

    def __init__(
        self,
        store: ParamStore,
        n_views: int,
        view_dim: int = 100,
        d_out: int = 100,
        expert_relu: bool = True,
        expert_input: str = "full",
        prefix: str = "fusion",
    ):
        if expert_input not in ("full", "view"):
            raise ConfigError(f"expert_input must be 'full' or 'view', got {expert_input!r}")
        self.n_experts = n_views
        self.view_dim = view_dim
        self.expert_input = expert_input
        self.expert_relu = expert_relu
        d_in = n_views * view_dim
        d_exp = d_in if expert_input == "full" else view_dim
        self.experts = [
            (
                Linear(store, f"{prefix}.expert{k}.l1", d_exp, d_exp),
                Linear(store, f"{prefix}.expert{k}.l2", d_exp, d_out),
            )
            for k in range(n_views)
        ]
        self.gate = Linear(store, f"{prefix}.gate", d_in, n_views)
        self.d_out = d_out

    def expert_outputs(self, hm: Tensor) -> list[Tensor]:
        outs = []
        for k, (l1, l2) in enumerate(self.experts):
            x = hm if self.expert_input == "full" else hm[:, k * self.view_dim:(k + 1) * self.view_dim]
            hidden = l1(x)
            if self.expert_relu:
                hidden = T.relu(hidden)
            outs.append(l2(hidden))
        return outs

    def gate_distribution(self, hm: Tensor, gate_logits: np.ndarray | None = None) -> Tensor:
        logits = self.gate(hm) if gate_logits is None else Tensor(np.broadcast_to(gate_logits, (hm.shape[0], self.n_experts)))
        return T.softmax(logits, axis=-1, what="gate")

    def __call__(
        self, hm: Tensor, topk: int | None = None, gate_logits: np.ndarray | None = None
    ) -> tuple[Tensor, Tensor]:
        """``hm`` is ``[N, D]``; returns ``(h^f [N, d_out], alpha [N, E])``.

        ``topk`` sparsifies the gate (inference only, no gradient through it);
        ``gate_logits`` overrides the gate's logits (test hook).
        """
        alpha = self.gate_distribution(hm, gate_logits)
        if topk is not None and topk != self.n_experts:
            alpha = Tensor(top_k_gate(alpha.data, topk))
        experts = T.stack(self.expert_outputs(hm), axis=1)
        return T.mix(alpha, experts), alpha


def move_fuse(hm: Tensor, fusion: MoVEFusion, **kwargs) -> tuple[Tensor, Tensor]:
    return fusion(hm, **kwargs)


class ConcatFusion:
    """A single affine map from ``h^m`` to the fused dimension."""

    def __init__(self, store: ParamStore, n_views: int, view_dim: int = 100, d_out: int = 100, prefix: str = "fusion"):
        self.linear = Linear(store, f"{prefix}.concat", n_views * view_dim, d_out)

    def __call__(self, hm: Tensor) -> Tensor:
        return self.linear(hm)


def concat_fuse(hm: Tensor, fusion: ConcatFusion) -> Tensor:
    return fusion(hm)


class AttentionFusion:
    """Scaled dot-product attention of a learned query over the view vectors."""

    def __init__(self, store: ParamStore, view_dim: int = 100, d_out: int = 100, prefix: str = "fusion"):
        self.query = store.uniform(f"{prefix}.attention.query", (view_dim, 1), fan_in=view_dim)
        self.value = Linear(store, f"{prefix}.attention.value", view_dim, d_out)
        self.view_dim = view_dim
        self.d_out = d_out

    def __call__(self, views: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
        """``views`` are ``[N, view_dim]`` each; returns ``(fused [N, d_out], weights [N, E])``."""
        n, e = views[0].shape[0], len(views)
        keys = T.stack(list(views), axis=1).reshape(n * e, self.view_dim)
        scores = T.scale(keys @ self.query, 1.0 / np.sqrt(self.view_dim)).reshape(n, e)
        weights = T.softmax(scores, axis=-1, what="attention")
        values = self.value(keys).reshape(n, e, self.d_out)
        return T.mix(weights, values), weights


def attention_fuse(views: Sequence[Tensor], fusion: AttentionFusion) -> tuple[Tensor, Tensor]:
    return fusion(views)
