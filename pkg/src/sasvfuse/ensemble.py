"""Combine the final scores of several trained systems by per-trial
averaging, and pick the top-k systems by SASV-EER.

Score files are UTF-8 CSV with header ``trial_index,score,label``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import LABELS
from .errors import ConfigError, DataError
from .metrics import EvalReport


@dataclass
class SystemScores:
    system_id: str
    indices: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_entries(cls, system_id: str, entries) -> "SystemScores":
        """Build from (trial_index, score, label) tuples, e.g. evaluate_scores output."""
        return cls(system_id,
                   np.array([e[0] for e in entries], dtype=np.int64),
                   np.array([e[1] for e in entries], dtype=np.float64),
                   np.array([e[2] for e in entries]))


def write_score_csv(scores: SystemScores, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial_index,score,label\n")
        for idx, score, label in zip(scores.indices, scores.scores, scores.labels):
            fh.write(f"{int(idx)},{float(score)!r},{label}\n")


def read_score_csv(path, system_id: str | None = None) -> SystemScores:
    indices, scores, labels = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "trial_index,score,label":
            raise DataError(f"{path}: bad score CSV header {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields")
            try:
                indices.append(int(fields[0]))
                scores.append(float(fields[1]))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if fields[2] not in LABELS:
                raise DataError(f"{path}: line {lineno}: unknown label {fields[2]!r}")
            labels.append(fields[2])
    return SystemScores(system_id or str(path), np.asarray(indices, dtype=np.int64),
                        np.asarray(scores, dtype=np.float64), np.asarray(labels))


def ensemble_mean(systems: list[SystemScores]) -> SystemScores:
    """Per-trial arithmetic mean of the systems' final scores. All systems
    must cover the identical trial list in identical order."""
    if not systems:
        raise ConfigError("ensemble_mean: need at least one system")
    ref = systems[0]
    for sys_scores in systems[1:]:
        if len(sys_scores.indices) != len(ref.indices):
            raise ConfigError(
                f"ensemble_mean: {sys_scores.system_id!r} has "
                f"{len(sys_scores.indices)} trials, expected {len(ref.indices)}")
        mismatch = (sys_scores.indices != ref.indices) | (sys_scores.labels != ref.labels)
        if mismatch.any():
            first = int(np.argmax(mismatch))
            raise ConfigError(
                f"ensemble_mean: trial lists diverge at index {first} "
                f"({sys_scores.system_id!r} vs {ref.system_id!r})")
    mean = np.mean([s.scores for s in systems], axis=0)
    name = "ensemble(" + "+".join(s.system_id for s in systems) + ")"
    return SystemScores(name, ref.indices.copy(), mean, ref.labels.copy())


def select_top_k(reports: list[tuple[str, EvalReport]], k: int) -> list[str]:
    """Ids of the k systems with the smallest SASV-EER; ties break by id."""
    if k < 1:
        raise ConfigError(f"select_top_k: k must be >= 1, got {k}")
    if k > len(reports):
        raise ConfigError(
            f"select_top_k: k={k} exceeds the {len(reports)} available systems")
    def key(item):
        system_id, report = item
        value = np.inf if report.sasv_eer is None else report.sasv_eer
        return (value, system_id)
    ranked = sorted(reports, key=key)
    return [system_id for system_id, _ in ranked[:k]]
