"""The trainable fusion system: per-model projection layers, embedding
pooling, a CM block producing a two-logit countermeasure score, and a
predictor that fuses that score with the ASV cosine scores into the final
two-logit decision.

Score/label conventions: class index 1 is the accept class. The final score
is the softmax probability of class 1 under the predictor logits, so it
lies in (0, 1) and systems can be ensembled by plain averaging. The
predictor is always trained target-vs-rest. The CM head label is
configurable: "target-vs-rest" (default) or "bonafide-vs-spoof".

Checkpoint file: magic ``SASVCKPT``, u32 byte length of a UTF-8 key=value
config block, the block itself, then every parameter as little-endian f64
in the flatten() traversal order (projection layers in model order, weight
then bias; attention w_hidden then w_score when present; CM block layers;
predictor layers).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataio import LABELS, TrialFeatures
from .errors import ConfigError, DataError, DegenerateInputError
from .numerics import Rng, cross_entropy, softmax
from .pooling import (ATTENTIVE_MODES, PoolConfig, PoolParams, Pooled,
                      init_pool_params, pool_backward, pool_forward,
                      pool_output_dim)

CM_LABEL_SCHEMES = ("target-vs-rest", "bonafide-vs-spoof")

CHECKPOINT_MAGIC = b"SASVCKPT"


@dataclass
class ModelConfig:
    n_asv: int
    cm_input_dims: list[int]
    pool: PoolConfig
    cm_block_dims: list[int] = field(default_factory=list)
    predictor_dims: list[int] = field(default_factory=list)
    cm_loss_weight: float = 1.0
    pred_loss_weight: float = 1.0
    cm_label_scheme: str = "target-vs-rest"

    def __post_init__(self):
        if self.n_asv < 1:
            raise ConfigError(f"n_asv must be >= 1, got {self.n_asv}")
        if not self.cm_input_dims:
            raise ConfigError("cm_input_dims must be non-empty")
        for dims, name in ((self.cm_input_dims, "cm_input_dims"),
                           (self.cm_block_dims, "cm_block_dims"),
                           (self.predictor_dims, "predictor_dims")):
            if any(d < 1 for d in dims):
                raise ConfigError(f"{name} contains a zero-width layer: {dims}")
        if self.cm_label_scheme not in CM_LABEL_SCHEMES:
            raise ConfigError(
                f"unknown cm_label_scheme {self.cm_label_scheme!r}, "
                f"expected one of {CM_LABEL_SCHEMES}")

    @property
    def n_cm(self) -> int:
        return len(self.cm_input_dims)

    def cm_block_widths(self) -> list[int]:
        pooled = pool_output_dim(self.pool, self.n_cm)
        return [pooled, *self.cm_block_dims, 2]

    def predictor_widths(self) -> list[int]:
        return [2 + self.n_asv, *self.predictor_dims, 2]


@dataclass
class AffineLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)


@dataclass
class FusionParams:
    proj: list[AffineLayer]
    pool: Optional[PoolParams]
    cm_block: list[AffineLayer]
    predictor: list[AffineLayer]

    def flatten(self) -> list[np.ndarray]:
        """All parameter arrays in the fixed traversal order shared by the
        initializer, the optimizer, and the checkpoint format."""
        arrays: list[np.ndarray] = []
        for layer in self.proj:
            arrays += [layer.weight, layer.bias]
        if self.pool is not None:
            arrays += [self.pool.w_hidden, self.pool.w_score]
        for layer in self.cm_block + self.predictor:
            arrays += [layer.weight, layer.bias]
        return arrays

    def copy(self) -> "FusionParams":
        def dup(layers):
            return [AffineLayer(l.weight.copy(), l.bias.copy()) for l in layers]
        pool = None
        if self.pool is not None:
            pool = PoolParams(self.pool.w_hidden.copy(), self.pool.w_score.copy())
        return FusionParams(dup(self.proj), pool, dup(self.cm_block), dup(self.predictor))


@dataclass
class ForwardTrace:
    s_cm: np.ndarray
    y_hat: np.ndarray
    final_score: float
    cache: dict


def _init_affine(din: int, dout: int, rng: Rng) -> AffineLayer:
    bound = 1.0 / np.sqrt(din)
    w = rng.uniform_array(din * dout, -bound, bound).reshape(din, dout)
    b = rng.uniform_array(dout, -bound, bound)
    return AffineLayer(w, b)


def _init_stack(widths: list[int], rng: Rng) -> list[AffineLayer]:
    return [_init_affine(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]


def init_model(cfg: ModelConfig, rng: Rng) -> FusionParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, drawn in the
    flatten() traversal order."""
    proj = [_init_affine(din, cfg.pool.embed_dim, rng) for din in cfg.cm_input_dims]
    pool = init_pool_params(cfg.pool, rng)
    cm_block = _init_stack(cfg.cm_block_widths(), rng)
    predictor = _init_stack(cfg.predictor_widths(), rng)
    return FusionParams(proj, pool, cm_block, predictor)


def zero_grads(cfg: ModelConfig) -> FusionParams:
    def zeros(widths):
        return [AffineLayer(np.zeros((a, b)), np.zeros(b))
                for a, b in zip(widths[:-1], widths[1:])]
    pool = None
    if cfg.pool.mode in ATTENTIVE_MODES:
        pool = PoolParams(np.zeros((cfg.pool.embed_dim, cfg.pool.attn_dim)),
                          np.zeros((cfg.pool.attn_dim, 1)))
    proj = [AffineLayer(np.zeros((din, cfg.pool.embed_dim)), np.zeros(cfg.pool.embed_dim))
            for din in cfg.cm_input_dims]
    return FusionParams(proj, pool, zeros(cfg.cm_block_widths()),
                        zeros(cfg.predictor_widths()))


# ---------------------------------------------------------------------------
# forward / backward


def _mlp_forward(layers: list[AffineLayer], x: np.ndarray):
    """ReLU MLP: activation after every layer except the last. Returns the
    output and the (input, pre-activation) pairs needed by the backward pass."""
    cache = []
    h = x
    for i, layer in enumerate(layers):
        z = h @ layer.weight + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    return h, cache


def _mlp_backward(layers: list[AffineLayer], cache, grad_out: np.ndarray):
    """Returns (grad wrt block input, per-layer (grad_w, grad_b) list)."""
    grads: list = [None] * len(layers)
    g = grad_out
    for i in reversed(range(len(layers))):
        x, z = cache[i]
        gz = g if i == len(layers) - 1 else g * (z > 0.0)
        grads[i] = (np.outer(x, gz), gz.copy())
        g = layers[i].weight @ gz
    return g, grads


def _check_features(feat: TrialFeatures, cfg: ModelConfig) -> None:
    if len(feat.asv_scores) != cfg.n_asv:
        raise ConfigError(
            f"expected {cfg.n_asv} ASV scores, got {len(feat.asv_scores)}")
    if len(feat.cm_embeddings) != cfg.n_cm:
        raise ConfigError(
            f"expected {cfg.n_cm} CM embeddings, got {len(feat.cm_embeddings)}")
    for i, (emb, dim) in enumerate(zip(feat.cm_embeddings, cfg.cm_input_dims)):
        if emb.shape != (dim,):
            raise ConfigError(
                f"CM embedding {i} has shape {emb.shape}, expected ({dim},)")


def forward(feat: TrialFeatures, params: FusionParams, cfg: ModelConfig) -> ForwardTrace:
    """Project each CM embedding, pool, run the CM block to the two-logit
    countermeasure score, then feed [s_cm, asv scores] through the predictor."""
    _check_features(feat, cfg)
    d = cfg.pool.embed_dim
    n = cfg.n_cm
    H = np.empty((d, n), dtype=np.float64)
    for i, layer in enumerate(params.proj):
        H[:, i] = feat.cm_embeddings[i] @ layer.weight + layer.bias
    pooled = pool_forward(H, cfg.pool, params.pool)
    s_cm, cm_cache = _mlp_forward(params.cm_block, pooled.vector)
    u = np.concatenate([s_cm, np.asarray(feat.asv_scores, dtype=np.float64)])
    y_hat, pred_cache = _mlp_forward(params.predictor, u)
    final_score = float(softmax(y_hat)[1])
    cache = {"H": H, "pooled": pooled, "cm_cache": cm_cache,
             "pred_cache": pred_cache}
    return ForwardTrace(s_cm=s_cm, y_hat=y_hat, final_score=final_score, cache=cache)


def binary_labels(label: str, scheme: str) -> tuple[int, int]:
    """(predictor label, CM-head label) for one trial label."""
    if label not in LABELS:
        raise DataError(f"unknown trial label {label!r}")
    label_pred = 1 if label == "target" else 0
    if scheme == "target-vs-rest":
        label_cm = label_pred
    else:  # bonafide-vs-spoof
        label_cm = 0 if label == "spoof" else 1
    return label_pred, label_cm


def loss_and_grads(feat: TrialFeatures, label: str, params: FusionParams,
                   cfg: ModelConfig) -> tuple[float, FusionParams]:
    """Weighted sum of the two cross-entropies and exact gradients for every
    parameter, including the attention and projection layers."""
    trace = forward(feat, params, cfg)
    label_pred, label_cm = binary_labels(label, cfg.cm_label_scheme)

    loss_cm, g_cm_logits = cross_entropy(trace.s_cm, label_cm)
    loss_pred, g_y = cross_entropy(trace.y_hat, label_pred)
    loss = cfg.cm_loss_weight * loss_cm + cfg.pred_loss_weight * loss_pred

    cache = trace.cache
    g_u, pred_grads = _mlp_backward(params.predictor, cache["pred_cache"],
                                    cfg.pred_loss_weight * g_y)
    # s_cm feeds both its own loss and the predictor input
    g_s_cm = cfg.cm_loss_weight * g_cm_logits + g_u[:2]
    g_pooled, cm_grads = _mlp_backward(params.cm_block, cache["cm_cache"], g_s_cm)
    g_H, g_w_hidden, g_w_score = pool_backward(
        cache["pooled"], g_pooled, cache["H"], cfg.pool, params.pool)

    proj_grads = []
    for i in range(cfg.n_cm):
        g_col = g_H[:, i]
        proj_grads.append(AffineLayer(np.outer(feat.cm_embeddings[i], g_col),
                                      g_col.copy()))
    pool_grads = None
    if params.pool is not None:
        pool_grads = PoolParams(g_w_hidden, g_w_score)
    grads = FusionParams(
        proj=proj_grads,
        pool=pool_grads,
        cm_block=[AffineLayer(gw, gb) for gw, gb in cm_grads],
        predictor=[AffineLayer(gw, gb) for gw, gb in pred_grads])
    return loss, grads


# ---------------------------------------------------------------------------
# comparison scorers


def score_sum_baseline(asv_scores, cm_score: float) -> float:
    """Plain score-level fusion: mean of the ASV cosine scores plus one scalar
    CM score. Provided for comparison; the scores share no common scale, so a
    wide CM range drowns out the bounded cosine term."""
    asv_scores = np.asarray(asv_scores, dtype=np.float64)
    if asv_scores.size == 0:
        raise ConfigError("score_sum_baseline: need at least one ASV score")
    return float(np.mean(asv_scores) + cm_score)


def asv_mean_score(feat: TrialFeatures) -> float:
    """ASV-only scorer: mean cosine score across the ASV models."""
    return float(np.mean(feat.asv_scores))


def fit_cm_axis(features: list[TrialFeatures]) -> list[np.ndarray]:
    """Per-CM-model unit axis pointing from the spoofed-class mean to the
    bona fide mean, estimated from labeled features. Targets and nontargets
    are both bona fide speech."""
    bona = [f for f in features if f.label != "spoof"]
    spoof = [f for f in features if f.label == "spoof"]
    if not bona or not spoof:
        raise DegenerateInputError(
            "fit_cm_axis: need both bona fide and spoofed examples")
    axes = []
    for i in range(len(features[0].cm_embeddings)):
        axis = (np.mean([f.cm_embeddings[i] for f in bona], axis=0)
                - np.mean([f.cm_embeddings[i] for f in spoof], axis=0))
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise DegenerateInputError(f"fit_cm_axis: degenerate axis for model {i}")
        axes.append(axis / norm)
    return axes


def cm_axis_score(feat: TrialFeatures, axes: list[np.ndarray]) -> float:
    """CM-only scorer: mean cosine between each CM embedding and its model's
    bona-vs-spoof axis. Carries no speaker information by construction."""
    from .dataio import cosine_score
    return float(np.mean([cosine_score(emb, axis)
                          for emb, axis in zip(feat.cm_embeddings, axes)]))


# ---------------------------------------------------------------------------
# checkpoints

_CONFIG_KEYS = ("n_asv", "cm_input_dims", "pool_mode", "embed_dim", "attn_dim",
                "cm_block_dims", "predictor_dims", "cm_loss_weight",
                "pred_loss_weight", "cm_label_scheme")


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _config_block(cfg: ModelConfig) -> bytes:
    lines = [
        f"n_asv={cfg.n_asv}",
        "cm_input_dims=" + ",".join(str(d) for d in cfg.cm_input_dims),
        f"pool_mode={cfg.pool.mode}",
        f"embed_dim={cfg.pool.embed_dim}",
        f"attn_dim={cfg.pool.attn_dim}",
        "cm_block_dims=" + ",".join(str(d) for d in cfg.cm_block_dims),
        "predictor_dims=" + ",".join(str(d) for d in cfg.predictor_dims),
        f"cm_loss_weight={cfg.cm_loss_weight!r}",
        f"pred_loss_weight={cfg.pred_loss_weight!r}",
        f"cm_label_scheme={cfg.cm_label_scheme}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(block: bytes) -> ModelConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(block.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DataError(f"checkpoint config line {lineno}: missing '='")
        key, _, val = line.partition("=")
        if key not in _CONFIG_KEYS:
            raise DataError(f"checkpoint config: unknown key {key!r}")
        values[key] = val
    missing = [k for k in _CONFIG_KEYS if k not in values]
    if missing:
        raise DataError(f"checkpoint config: missing keys {missing}")
    pool = PoolConfig(mode=values["pool_mode"], embed_dim=int(values["embed_dim"]),
                      attn_dim=int(values["attn_dim"]))
    return ModelConfig(
        n_asv=int(values["n_asv"]),
        cm_input_dims=_int_list(values["cm_input_dims"]),
        pool=pool,
        cm_block_dims=_int_list(values["cm_block_dims"]),
        predictor_dims=_int_list(values["predictor_dims"]),
        cm_loss_weight=float(values["cm_loss_weight"]),
        pred_loss_weight=float(values["pred_loss_weight"]),
        cm_label_scheme=values["cm_label_scheme"])


def save_checkpoint(path, params: FusionParams, cfg: ModelConfig) -> None:
    block = _config_block(cfg)
    arrays = params.flatten()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(block)))
        fh.write(block)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[FusionParams, ModelConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated header")
    (block_len,) = struct.unpack_from("<I", blob, 8)
    if 12 + block_len > len(blob):
        raise DataError(f"{path}: truncated config block")
    cfg = _parse_config_block(blob[12:12 + block_len])

    template = zero_grads(cfg)
    arrays = template.flatten()
    expected = sum(a.size for a in arrays)
    payload = blob[12 + block_len:]
    if len(payload) != 8 * expected:
        raise DataError(
            f"{path}: parameter payload is {len(payload)} bytes, "
            f"expected {8 * expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    off = 0
    for a in arrays:
        a[...] = flat[off:off + a.size].reshape(a.shape)
        off += a.size
    return template, cfg
