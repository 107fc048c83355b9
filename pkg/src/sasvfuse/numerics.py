"""Numeric primitives: stable softmax, two-class cross-entropy, the
bias-corrected Adam update, and a seeded portable random generator.

All arithmetic is 64-bit floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_PI = 2.0 * math.pi


class Rng:
    """Deterministic 64-bit generator (splitmix64 recurrence).

    Each draw advances the state and mixes it, with all arithmetic mod 2**64:

        state += 0x9E3779B97F4A7C15
        z = state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        output = z ^ (z >> 31)

    Doubles take the top 53 bits of the output divided by 2**53. Normal
    deviates use the Box-Muller transform (two uniforms per draw, the sine
    partner is discarded so the state stays a single integer). Bounded
    integers use the multiply-high reduction ``(output * n) >> 64``. The same
    seed therefore yields the same sequence on every platform.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) / 9007199254740992.0  # 2**53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - self.random()  # (0, 1], keeps log() finite
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(_TWO_PI * u2)

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ConfigError(f"randint: n must be positive, got {n}")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def uniform_array(self, n: int, lo: float, hi: float) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64)

    def normal_array(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mu, sigma) for _ in range(n)], dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(f"matmul: expected 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax: shifts by the max before exponentiating."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ConfigError("softmax: empty input")
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def log_sum_exp(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    m = float(np.max(v))
    return m + math.log(float(np.sum(np.exp(v - m))))


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Two-class cross-entropy loss and its gradient w.r.t. the logits.

    loss = -log softmax(logits)[label], grad = softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (2,):
        raise ConfigError(f"cross_entropy: expected 2 logits, got shape {logits.shape}")
    if label not in (0, 1):
        raise ConfigError(f"cross_entropy: label must be 0 or 1, got {label}")
    loss = log_sum_exp(logits) - float(logits[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


@dataclass
class AdamState:
    """Optimizer state for one parameter set (a fixed-order list of arrays)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step=0,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ConfigError(
            f"adam_step: expected {len(state.m)} arrays, got "
            f"{len(params)} params and {len(grads)} grads")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != m.shape or g.shape != m.shape:
            raise ConfigError(
                f"adam_step: shape mismatch, state {m.shape}, "
                f"param {p.shape}, grad {g.shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
