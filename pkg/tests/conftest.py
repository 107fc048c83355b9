"""Shared test helpers: finite-difference gradient oracles and small
feature/model builders."""

from __future__ import annotations

import numpy as np
import pytest

from sasvfuse import (ModelConfig, PoolConfig, Rng, SynthSpec, TrialFeatures,
                      assemble_features, generate_synthetic)


def finite_diff(loss_fn, arrays, h=1e-5):
    """Central finite differences of a scalar function w.r.t. every entry of
    every array, perturbing in place and restoring."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        g_flat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn()
            flat[j] = orig - h
            lm = loss_fn()
            flat[j] = orig
            g_flat[j] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric) -> float:
    """Worst per-entry deviation, relative with a unit floor (the losses under
    test are O(1), so tiny gradients are compared absolutely)."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


def tiny_model_config(mode: str, cm_label_scheme: str = "target-vs-rest",
                      cm_loss_weight: float = 1.0) -> ModelConfig:
    return ModelConfig(n_asv=2, cm_input_dims=[3, 4, 5],
                       pool=PoolConfig(mode, embed_dim=4, attn_dim=3),
                       cm_block_dims=[5], predictor_dims=[5],
                       cm_loss_weight=cm_loss_weight,
                       cm_label_scheme=cm_label_scheme)


def random_features(cfg: ModelConfig, rng: Rng) -> TrialFeatures:
    asv = np.array([rng.uniform(-1.0, 1.0) for _ in range(cfg.n_asv)])
    embs = [rng.normal_array(d, sigma=2.0) for d in cfg.cm_input_dims]
    label = ("target", "nontarget", "spoof")[rng.randint(3)]
    return TrialFeatures(asv, embs, label)


@pytest.fixture(scope="session")
def synth_default():
    """The default synthetic dataset with features assembled per split."""
    data = generate_synthetic(SynthSpec())
    features = {
        split: assemble_features(data.trials[split], data.asv_stores,
                                 data.cm_stores, data.enrollment_map)
        for split in ("train", "dev", "eval")
    }
    return data, features


@pytest.fixture(scope="session")
def synth_small():
    """A lighter dataset for fast end-to-end trainer tests."""
    spec = SynthSpec(n_speakers=8, utts_per_speaker=18)
    data = generate_synthetic(spec)
    features = {
        split: assemble_features(data.trials[split], data.asv_stores,
                                 data.cm_stores, data.enrollment_map)
        for split in ("train", "dev", "eval")
    }
    return data, features
