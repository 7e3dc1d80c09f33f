"""Named parameter registry and the few layer helpers the model uses."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


def name_rng(seed: int, name: str) -> np.random.Generator:
    # per-name stream: dropping a view's parameters leaves every other init unchanged
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered, uniquely named set of trainable tensors."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.pad_rows: dict[str, tuple[int, ...]] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def register(self, name: str, value: np.ndarray, pad_rows: tuple[int, ...] = ()) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        value = np.ascontiguousarray(value, dtype=np.float64)
        for r in pad_rows:
            value[r] = 0.0
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        if pad_rows:
            self.pad_rows[name] = tuple(pad_rows)
        return t

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        fan_in = fan_in if fan_in is not None else shape[0]
        bound = np.sqrt(1.0 / fan_in)
        return self.register(name, name_rng(self.seed, name).uniform(-bound, bound, size=shape))

    def normal(self, name: str, shape: tuple[int, ...], std: float = 1.0, pad_rows=()) -> Tensor:
        return self.register(name, name_rng(self.seed, name).normal(0.0, std, size=shape), pad_rows)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.register(name, np.zeros(shape))

    def constant(self, name: str, value: np.ndarray, pad_rows=()) -> Tensor:
        return self.register(name, np.array(value, dtype=np.float64), pad_rows)

    def count(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self._params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, t in self._params.items():
            if values[n].shape != t.shape:
                raise ConfigError(f"{n}: checkpoint shape {values[n].shape} != model shape {t.shape}")
            t.data = np.array(values[n], dtype=np.float64)


class Linear:
    """``y = x W + b`` with ``W`` stored as ``[in, out]``."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.weight = store.uniform(f"{name}.weight", (d_in, d_out), fan_in=d_in)
        self.bias = store.uniform(f"{name}.bias", (d_out,), fan_in=d_in) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x if x.ndim == 2 else x.reshape(-1, self.d_in)
        y = flat @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y if x.ndim == 2 else y.reshape(*lead, self.d_out)

