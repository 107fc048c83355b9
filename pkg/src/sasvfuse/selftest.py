"""Built-in verification suite runnable from the CLI: spot gradient checks
for every pool mode, the interpolated EER against a direct threshold sweep,
and the attention degeneracies. Meant as a quick install check; the full
test suite lives in the package's tests.
"""

from __future__ import annotations

import numpy as np

from .dataio import TrialFeatures
from .fusion import ModelConfig, init_model, loss_and_grads
from .metrics import eer
from .numerics import Rng
from .pooling import (POOL_MODES, PoolConfig, PoolParams, init_pool_params,
                      pool_forward)

GRAD_TOL = 1e-5


def _tiny_config(mode: str) -> ModelConfig:
    return ModelConfig(n_asv=2, cm_input_dims=[3, 4, 5],
                       pool=PoolConfig(mode, embed_dim=4, attn_dim=3),
                       cm_block_dims=[5], predictor_dims=[5])


def _random_features(cfg: ModelConfig, rng: Rng) -> TrialFeatures:
    asv = np.array([rng.uniform(-1.0, 1.0) for _ in range(cfg.n_asv)])
    embs = [rng.normal_array(d, sigma=2.0) for d in cfg.cm_input_dims]
    label = ("target", "nontarget", "spoof")[rng.randint(3)]
    return TrialFeatures(asv, embs, label)


def max_grad_error(cfg: ModelConfig, rng: Rng, h: float = 1e-5) -> float:
    """Worst deviation between analytic gradients and central finite
    differences, as a relative error floored at the loss scale."""
    params = init_model(cfg, rng)
    feat = _random_features(cfg, rng)
    _, grads = loss_and_grads(feat, feat.label, params, cfg)

    worst = 0.0
    arrays = params.flatten()
    grad_arrays = grads.flatten()
    for arr, g_arr in zip(arrays, grad_arrays):
        flat = arr.reshape(-1)
        g_flat = g_arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_and_grads(feat, feat.label, params, cfg)
            flat[j] = orig - h
            lm, _ = loss_and_grads(feat, feat.label, params, cfg)
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            err = abs(g_flat[j] - fd) / max(1.0, abs(g_flat[j]), abs(fd))
            worst = max(worst, err)
    return worst


def _sweep_eer(pos, neg) -> float:
    """Direct threshold sweep over midpoints with explicit counting."""
    values = sorted(set(float(x) for x in pos) | set(float(x) for x in neg))
    thresholds = [values[0] - 1.0]
    thresholds += [(a + b) / 2.0 for a, b in zip(values, values[1:])]
    thresholds += [values[-1] + 1.0]
    points = []
    for t in thresholds:
        frr = sum(1 for x in pos if x < t) / len(pos)
        far = sum(1 for x in neg if x >= t) / len(neg)
        points.append((far, frr))
    for (f0, r0), (f1, r1) in zip(points, points[1:]):
        if r1 - f1 >= 0.0:
            denom = (r1 - r0) - (f1 - f0)
            s = (f0 - r0) / denom
            return r0 + s * (r1 - r0)
    raise AssertionError("no crossing found")


def run_selftest(n_grad_instances: int = 3, n_eer_instances: int = 50):
    """Returns a list of (name, passed, detail) triples."""
    results = []
    rng = Rng(20240229)

    for mode in POOL_MODES:
        cfg = _tiny_config(mode)
        worst = max(max_grad_error(cfg, rng) for _ in range(n_grad_instances))
        results.append((f"gradients[{mode}]", worst < GRAD_TOL,
                        f"max relative error {worst:.2e}"))

    worst_eer = 0.0
    for _ in range(n_eer_instances):
        n_pos = 2 + rng.randint(40)
        n_neg = 2 + rng.randint(40)
        pos = [rng.normal(0.5, 1.0) for _ in range(n_pos)]
        neg = [rng.normal(-0.5, 1.0) for _ in range(n_neg)]
        fast, _ = eer(pos, neg)
        worst_eer = max(worst_eer, abs(fast - _sweep_eer(pos, neg)))
    results.append(("eer-vs-sweep", worst_eer < 1e-12,
                    f"max deviation {worst_eer:.2e}"))

    # zeroed attention makes sap/asp collapse onto their uniform counterparts
    d, n = 6, 4
    H = np.array([[rng.normal() for _ in range(n)] for _ in range(d)])
    zero = PoolParams(np.zeros((d, 3)), np.zeros((3, 1)))
    sap = pool_forward(H, PoolConfig("sap", d, 3), zero).vector
    tap = pool_forward(H, PoolConfig("tap", d)).vector
    asp = pool_forward(H, PoolConfig("asp", d, 3), zero).vector
    tsp = pool_forward(H, PoolConfig("tsp", d)).vector
    dev = max(float(np.abs(sap - tap).max()), float(np.abs(asp - tsp).max()))
    results.append(("uniform-attention-degeneracy", dev < 1e-9,
                    f"max deviation {dev:.2e}"))

    return results
