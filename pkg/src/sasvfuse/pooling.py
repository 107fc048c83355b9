"""First-level fusion of n projected countermeasure embeddings into one
vector: concatenation (cat), temporal average pooling (tap), temporal
statistics pooling (tsp), self-attentive pooling (sap), and attentive
statistics pooling (asp). Every mode has an exact analytical backward pass.

The input is a matrix H of shape (embed_dim, n) whose columns are the
projected embeddings, one per countermeasure model.

sap computes an annotation vector A = softmax(tanh(H^T W_hidden) W_score)
over the n columns and returns the attention-weighted mean H A. asp returns
that mean concatenated with the attention-weighted standard deviation
sqrt(sum_i A_i h_i * h_i - mean * mean), elementwise. tsp is the uniform
special case (plain mean and population standard deviation). Variances are
floored at zero and stabilized with VAR_EPS before the square root, which
also keeps the gradient finite at zero variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError, SasvFuseError
from .numerics import Rng, matmul, softmax

POOL_MODES = ("cat", "tap", "tsp", "sap", "asp")
ATTENTIVE_MODES = ("sap", "asp")

VAR_EPS = 1e-8


@dataclass
class PoolConfig:
    mode: str
    embed_dim: int
    attn_dim: int = 8
    heads: int = 1  # only single-head attention is supported

    def __post_init__(self):
        if self.mode not in POOL_MODES:
            raise ConfigError(f"unknown pool mode {self.mode!r}, expected one of {POOL_MODES}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.attn_dim < 1:
            raise ConfigError(f"attn_dim must be >= 1, got {self.attn_dim}")
        if self.heads != 1:
            raise ConfigError(f"only heads=1 is supported, got {self.heads}")


@dataclass
class PoolParams:
    """Attention weights for sap/asp: w_hidden (embed_dim x attn_dim) and
    w_score (attn_dim x 1)."""

    w_hidden: np.ndarray
    w_score: np.ndarray


@dataclass
class Pooled:
    vector: np.ndarray
    cache: dict


def init_pool_params(cfg: PoolConfig, rng: Rng) -> Optional[PoolParams]:
    """Seeded uniform(-1/sqrt(embed_dim), 1/sqrt(embed_dim)) init for both
    attention matrices; None for modes without parameters."""
    if cfg.mode not in ATTENTIVE_MODES:
        return None
    bound = 1.0 / np.sqrt(cfg.embed_dim)
    w_hidden = rng.uniform_array(cfg.embed_dim * cfg.attn_dim, -bound, bound)
    w_score = rng.uniform_array(cfg.attn_dim, -bound, bound)
    return PoolParams(w_hidden.reshape(cfg.embed_dim, cfg.attn_dim),
                      w_score.reshape(cfg.attn_dim, 1))


def pool_output_dim(cfg: PoolConfig, n: int) -> int:
    if cfg.mode == "cat":
        return n * cfg.embed_dim
    if cfg.mode in ("tap", "sap"):
        return cfg.embed_dim
    return 2 * cfg.embed_dim  # tsp, asp


def _attention(H: np.ndarray, params: PoolParams) -> tuple[np.ndarray, np.ndarray]:
    pre = matmul(H.T, params.w_hidden)  # (n, attn_dim)
    t = np.tanh(pre)
    energy = (t @ params.w_score)[:, 0]  # (n,)
    return softmax(energy), t


def pool_forward(H: np.ndarray, cfg: PoolConfig,
                 params: Optional[PoolParams] = None) -> Pooled:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != cfg.embed_dim:
        raise ConfigError(
            f"pool_forward: H has shape {H.shape}, expected ({cfg.embed_dim}, n)")
    n = H.shape[1]
    if n == 0:
        raise DegenerateInputError("pool_forward: no embeddings to pool")
    if cfg.mode in ATTENTIVE_MODES and params is None:
        raise ConfigError(f"pool mode {cfg.mode!r} requires attention parameters")

    cache: dict = {"mode": cfg.mode, "n": n}
    if cfg.mode == "cat":
        vec = H.T.reshape(-1).copy()
    elif cfg.mode == "tap":
        vec = H.mean(axis=1)
    elif cfg.mode == "tsp":
        mean = H.mean(axis=1)
        var_raw = (H * H).mean(axis=1) - mean * mean
        std = np.sqrt(np.maximum(var_raw, 0.0) + VAR_EPS)
        vec = np.concatenate([mean, std])
        cache.update(mean=mean, std=std, pos_var=var_raw > 0.0)
    elif cfg.mode == "sap":
        attn, t = _attention(H, params)
        vec = H @ attn
        cache.update(attn=attn, tanh=t)
    else:  # asp
        attn, t = _attention(H, params)
        mu = H @ attn
        second = (H * H) @ attn
        var_raw = second - mu * mu
        sigma = np.sqrt(np.maximum(var_raw, 0.0) + VAR_EPS)
        vec = np.concatenate([mu, sigma])
        cache.update(attn=attn, tanh=t, mu=mu, sigma=sigma, pos_var=var_raw > 0.0)
    return Pooled(vector=vec, cache=cache)


def _attention_backward(H: np.ndarray, params: PoolParams, attn: np.ndarray,
                        t: np.ndarray, g_attn: np.ndarray):
    """Backprop a gradient on the annotation vector through softmax, the
    scoring matrix, and tanh; returns (g_H, g_w_hidden, g_w_score)."""
    g_energy = attn * (g_attn - np.dot(attn, g_attn))
    g_w_score = t.T @ g_energy[:, None]  # (attn_dim, 1)
    g_t = np.outer(g_energy, params.w_score[:, 0])  # (n, attn_dim)
    g_pre = g_t * (1.0 - t * t)
    g_w_hidden = H @ g_pre  # (embed_dim, attn_dim)
    g_H = params.w_hidden @ g_pre.T  # (embed_dim, n)
    return g_H, g_w_hidden, g_w_score


def pool_backward(pooled: Pooled, grad_out: np.ndarray, H: np.ndarray,
                  cfg: PoolConfig, params: Optional[PoolParams] = None):
    """Gradients of pool_forward: returns (grad_H, grad_w_hidden, grad_w_score),
    the last two None for modes without attention parameters."""
    H = np.asarray(H, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    cache = pooled.cache
    n = H.shape[1]
    if cache.get("mode") != cfg.mode or cache.get("n") != n:
        raise SasvFuseError("pool_backward: cache does not match inputs")
    if grad_out.shape != (pool_output_dim(cfg, n),):
        raise ConfigError(
            f"pool_backward: grad has shape {grad_out.shape}, expected "
            f"({pool_output_dim(cfg, n)},)")
    d = cfg.embed_dim

    if cfg.mode == "cat":
        return grad_out.reshape(n, d).T.copy(), None, None

    if cfg.mode == "tap":
        return np.tile(grad_out[:, None] / n, (1, n)), None, None

    if cfg.mode == "tsp":
        g_mean, g_std = grad_out[:d], grad_out[d:]
        mean, std = cache["mean"], cache["std"]
        # d std / d var is zero where the variance was clamped at zero
        g_var = np.where(cache["pos_var"], g_std / (2.0 * std), 0.0)
        g_H = g_mean[:, None] / n + g_var[:, None] * (2.0 / n) * (H - mean[:, None])
        return g_H, None, None

    attn, t = cache["attn"], cache["tanh"]
    if cfg.mode == "sap":
        g_attn = H.T @ grad_out
        g_H_attn, g_w_hidden, g_w_score = _attention_backward(H, params, attn, t, g_attn)
        g_H = np.outer(grad_out, attn) + g_H_attn
        return g_H, g_w_hidden, g_w_score

    # asp
    g_mu_direct, g_sigma = grad_out[:d], grad_out[d:]
    mu, sigma = cache["mu"], cache["sigma"]
    g_var = np.where(cache["pos_var"], g_sigma / (2.0 * sigma), 0.0)
    g_second = g_var
    g_mu = g_mu_direct - 2.0 * g_var * mu
    g_attn = H.T @ g_mu + (H * H).T @ g_second
    g_H_attn, g_w_hidden, g_w_score = _attention_backward(H, params, attn, t, g_attn)
    g_H = (np.outer(g_mu, attn)
           + 2.0 * g_second[:, None] * H * attn[None, :]
           + g_H_attn)
    return g_H, g_w_hidden, g_w_score
