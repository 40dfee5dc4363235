"""In-place first-order optimizers."""
from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"step": np.array([self.step_count], dtype=np.float64)}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(np.asarray(state["step"]).reshape(-1)[0])


class SGD(Optimizer):
    """Plain or heavy-ball SGD: ``v = momentum * v + g; p -= lr * v``."""

    def __init__(self, params, lr: float = 0.01, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= p.data.dtype.type(self.lr) * p.grad

    def state_dict(self) -> dict:
        state = super().state_dict()
        for i, v in enumerate(self.velocity):
            state[f"velocity.{i}"] = v
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        for i, v in enumerate(self.velocity):
            v[...] = state[f"velocity.{i}"]


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._buffers = {}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        step_size = self.lr * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            # one scratch buffer per dtype keeps the update free of full-size temporaries
            buf = self._scratch(p.data)
            np.multiply(g, 1.0 - b1, out=buf)
            m *= b1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1.0 - b2
            v *= b2
            v += buf
            np.sqrt(v, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= step_size
            p.data -= buf

    def _scratch(self, like: np.ndarray) -> np.ndarray:
        flat = self._buffers.get(like.dtype)
        if flat is None or flat.size < like.size:
            flat = np.empty(max(p.size for p in self.params), dtype=like.dtype)
            self._buffers[like.dtype] = flat
        return flat[: like.size].reshape(like.shape)

    def state_dict(self) -> dict:
        state = super().state_dict()
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            m[...] = state[f"m.{i}"]
            v[...] = state[f"v.{i}"]


def build_optimizer(kind: str, params, **hyper) -> Optimizer:
    kind = kind.lower()
    if kind == "adam":
        return Adam(params, **hyper)
    if kind == "sgd":
        return SGD(params, **hyper)
    raise ValueError(f"unknown optimizer {kind!r} (expected 'adam' or 'sgd')")
