"""Minimal numpy layers with hand-written backward passes.

Parameters of a model live in one flat float64 vector; each layer holds
views into it (and into a matching gradient vector), so optimizers and
checkpoints work on the flat arrays directly.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class UsageError(RuntimeError):
    pass


class ParamStore:
    """Allocates named parameter blocks inside shared flat value/grad buffers."""

    def __init__(self):
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._offsets: dict[str, int] = {}
        self.size = 0
        self.flat: Optional[np.ndarray] = None
        self.grad: Optional[np.ndarray] = None

    def declare(self, name: str, shape: tuple[int, ...]) -> None:
        if self.flat is not None:
            raise UsageError("store already finalized")
        if name in self._shapes:
            raise KeyError(f"duplicate parameter {name}")
        self._shapes[name] = tuple(shape)
        self._offsets[name] = self.size
        self.size += int(np.prod(shape))

    def finalize(self) -> None:
        self.flat = np.zeros(self.size)
        self.grad = np.zeros(self.size)

    def names(self) -> list[str]:
        return list(self._shapes)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def slice(self, name: str) -> slice:
        off = self._offsets[name]
        return slice(off, off + int(np.prod(self._shapes[name])))

    def value(self, name: str) -> np.ndarray:
        return self.flat[self.slice(name)].reshape(self._shapes[name])

    def gradient(self, name: str) -> np.ndarray:
        return self.grad[self.slice(name)].reshape(self._shapes[name])


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out
        store.declare(f"{name}.w", (n_in, n_out))
        store.declare(f"{name}.b", (n_out,))
        self.store = store
        self._x = None

    def init(self, rng: np.random.Generator, gain: float = 1.0) -> None:
        w = self.store.value(f"{self.name}.w")
        w[...] = rng.normal(0.0, gain / math.sqrt(self.n_in), size=w.shape)
        self.store.value(f"{self.name}.b")[...] = 0.0

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        if keep:
            self._x = x
        return x @ self.store.value(f"{self.name}.w") + self.store.value(f"{self.name}.b")

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> Optional[np.ndarray]:
        x = self._x
        if x is None:
            raise UsageError(f"{self.name}: backward without a recorded forward")
        self.store.gradient(f"{self.name}.w")[...] += x.T @ dy
        self.store.gradient(f"{self.name}.b")[...] += dy.sum(axis=0)
        self._x = None
        return dy @ self.store.value(f"{self.name}.w").T if need_dx else None


class Conv2d:
    """3x3-style strided convolution on channels-last (B, H, W, C) tensors via im2col."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int = 3, stride: int = 2, padding: int = 1):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        store.declare(f"{name}.w", (c_in * kernel * kernel, c_out))
        store.declare(f"{name}.b", (c_out,))
        self.store = store
        self._cache = None

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def init(self, rng: np.random.Generator, gain: float = 1.0) -> None:
        w = self.store.value(f"{self.name}.w")
        w[...] = rng.normal(0.0, gain / math.sqrt(w.shape[0]), size=w.shape)
        self.store.value(f"{self.name}.b")[...] = 0.0

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        b, h, w, c = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.out_shape(h, w)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
        cols = win.reshape(b * ho * wo, c * k * k)
        if keep:
            self._cache = (cols, x.shape, xp.shape, ho, wo)
        y = cols @ self.store.value(f"{self.name}.w") + self.store.value(f"{self.name}.b")
        return y.reshape(b, ho, wo, self.c_out)

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> Optional[np.ndarray]:
        if self._cache is None:
            raise UsageError(f"{self.name}: backward without a recorded forward")
        cols, x_shape, xp_shape, ho, wo = self._cache
        self._cache = None
        dy2 = dy.reshape(-1, self.c_out)
        self.store.gradient(f"{self.name}.w")[...] += cols.T @ dy2
        self.store.gradient(f"{self.name}.b")[...] += dy2.sum(axis=0)
        if not need_dx:
            return None
        k, s, p = self.kernel, self.stride, self.padding
        b = x_shape[0]
        dcols = (dy2 @ self.store.value(f"{self.name}.w").T).reshape(b, ho, wo, self.c_in, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[..., i, j]
        if p:
            dxp = dxp[:, p:-p, p:-p, :]
        return dxp


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))
