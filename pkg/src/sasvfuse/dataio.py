"""Trial protocols, embedding stores, per-trial feature assembly, and a
seed-deterministic synthetic dataset generator for desk-scale experiments.

File formats
------------
Protocol: UTF-8 text, one trial per line, ``<enroll_id> <test_utt> <label>``
with label in {target, nontarget, spoof}; ``#``-prefixed lines and blank
lines are skipped.

Enrollment map: UTF-8 text, lines ``<enroll_id> <utt_id>``, repeatable per id.

Embedding file (binary, little-endian): magic ``SASVEMB1`` (8 bytes),
u32 dim, u32 count, then ``count`` records of [u16 id-length, id bytes
(UTF-8), dim x f32]. Values are stored as f32 and promoted to f64 on read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError
from .numerics import Rng

LABELS = ("target", "nontarget", "spoof")

EMBEDDING_MAGIC = b"SASVEMB1"

# Bona fide utterances reserved per speaker to define its enrollment identity.
ENROLL_UTTS_PER_SPEAKER = 2

SPLITS = ("train", "dev", "eval")


@dataclass
class Trial:
    """One evaluation unit: claimed identity, test utterance, ground truth."""

    enroll_id: str
    test_utt: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"unknown trial label {self.label!r}")


@dataclass
class EmbeddingStore:
    """utterance-id -> fixed-dimension vector map for one backbone model."""

    model_id: str
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, utt_id: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DataError(
                f"store {self.model_id!r}: vector for {utt_id!r} has shape "
                f"{vec.shape}, expected ({self.dim},)")
        if utt_id in self.entries:
            raise DataError(f"store {self.model_id!r}: duplicate utterance id {utt_id!r}")
        self.entries[utt_id] = vec

    def get(self, utt_id: str) -> np.ndarray:
        try:
            return self.entries[utt_id]
        except KeyError:
            raise DataError(
                f"utterance {utt_id!r} missing from store {self.model_id!r}") from None


@dataclass
class TrialFeatures:
    """Assembled per-trial model inputs: ASV cosine scores plus CM embeddings."""

    asv_scores: np.ndarray
    cm_embeddings: list[np.ndarray]
    label: str


@dataclass
class SynthSpec:
    """Configuration for the synthetic dataset generator.

    ``speaker_separation`` scales speaker cluster centers relative to the
    unit within-cluster noise in each ASV space; ``spoof_cm_separation`` is
    the distance between the bona fide and spoof cluster centers in each CM
    space. With ``spoof_mimics_target`` set, spoofed utterances draw their
    ASV embeddings from the targeted speaker's cluster (successful mimicry);
    otherwise they sit in a speaker-unrelated cluster at the origin.
    """

    n_speakers: int = 20
    utts_per_speaker: int = 40
    asv_dims: tuple[int, ...] = (16, 20, 24)
    cm_dims: tuple[int, ...] = (12, 16, 20)
    speaker_separation: float = 4.0
    spoof_cm_separation: float = 6.0
    spoof_mimics_target: bool = True
    seed: int = 42

    def validate(self) -> None:
        # Nontarget trials need a second speaker to borrow utterances from.
        if self.n_speakers < 2:
            raise ConfigError(f"n_speakers must be >= 2, got {self.n_speakers}")
        # 2 enrollment + at least 3 bona fide and 3 spoofed test utterances,
        # so every split owns at least one utterance of each kind.
        if self.utts_per_speaker < ENROLL_UTTS_PER_SPEAKER + 6:
            raise ConfigError(
                f"utts_per_speaker must be >= {ENROLL_UTTS_PER_SPEAKER + 6}, "
                f"got {self.utts_per_speaker}")
        if not self.asv_dims or not self.cm_dims:
            raise ConfigError("asv_dims and cm_dims must be non-empty")
        if any(d < 1 for d in self.asv_dims) or any(d < 1 for d in self.cm_dims):
            raise ConfigError("all embedding dimensions must be >= 1")
        if self.speaker_separation < 0 or self.spoof_cm_separation < 0:
            raise ConfigError("separations must be >= 0")


class SynthData(NamedTuple):
    trials: dict[str, list[Trial]]
    asv_stores: list[EmbeddingStore]
    cm_stores: list[EmbeddingStore]
    enrollment_map: dict[str, list[str]]


# ---------------------------------------------------------------------------
# protocol and enrollment-map files


def parse_protocol(path) -> list[Trial]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise DataError(
                    f"{path}: line {lineno}: expected 3 fields, got {len(fields)}")
            enroll_id, test_utt, label = fields
            if label not in LABELS:
                raise DataError(f"{path}: line {lineno}: unknown label {label!r}")
            trials.append(Trial(enroll_id, test_utt, label))
    return trials


def write_protocol(trials: list[Trial], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.enroll_id} {t.test_utt} {t.label}\n")


def parse_enrollment_map(path) -> dict[str, list[str]]:
    mapping: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 2:
                raise DataError(
                    f"{path}: line {lineno}: expected 2 fields, got {len(fields)}")
            mapping.setdefault(fields[0], []).append(fields[1])
    return mapping


def write_enrollment_map(mapping: dict[str, list[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for enroll_id, utts in mapping.items():
            for utt in utts:
                fh.write(f"{enroll_id} {utt}\n")


# ---------------------------------------------------------------------------
# embedding files


def write_embeddings(store: EmbeddingStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", store.dim, len(store.entries)))
        for utt_id, vec in store.entries.items():
            idb = utt_id.encode("utf-8")
            if len(idb) > 0xFFFF:
                raise DataError(f"utterance id too long: {utt_id[:32]!r}...")
            fh.write(struct.pack("<H", len(idb)))
            fh.write(idb)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def read_embeddings(path, model_id: str | None = None) -> EmbeddingStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: bad magic, not an embedding file")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated header")
    dim, count = struct.unpack_from("<II", blob, 8)
    store = EmbeddingStore(model_id=model_id or str(path), dim=dim)
    off = 16
    vec_bytes = 4 * dim
    for i in range(count):
        if off + 2 > len(blob):
            raise DataError(f"{path}: truncated at record {i}")
        (idlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + idlen + vec_bytes > len(blob):
            raise DataError(f"{path}: truncated at record {i}")
        utt_id = blob[off:off + idlen].decode("utf-8")
        off += idlen
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += vec_bytes
        store.add(utt_id, vec)
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes after {count} records")
    return store


# ---------------------------------------------------------------------------
# scoring and feature assembly


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    """Cosine similarity, in [-1, 1]."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ConfigError(f"cosine_score: shapes differ, {e1.shape} vs {e2.shape}")
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateInputError("cosine_score: zero-norm vector")
    return float(np.clip(np.dot(e1, e2) / (n1 * n2), -1.0, 1.0))


def assemble_features(trials: list[Trial], asv_stores: list[EmbeddingStore],
                      cm_stores: list[EmbeddingStore],
                      enrollment_map: dict[str, list[str]]) -> list[TrialFeatures]:
    """Build per-trial inputs: one cosine score per ASV model (enrollment
    embedding = mean over that identity's enrollment utterances) and the test
    utterance's embedding from every CM model."""
    enroll_means: list[dict[str, np.ndarray]] = []
    for store in asv_stores:
        means: dict[str, np.ndarray] = {}
        for enroll_id, utts in enrollment_map.items():
            if not utts:
                raise DataError(f"identity {enroll_id!r} has no enrollment utterances")
            means[enroll_id] = np.mean([store.get(u) for u in utts], axis=0)
        enroll_means.append(means)

    features = []
    for trial in trials:
        scores = np.empty(len(asv_stores), dtype=np.float64)
        for k, store in enumerate(asv_stores):
            if trial.enroll_id not in enroll_means[k]:
                raise DataError(
                    f"identity {trial.enroll_id!r} missing from enrollment map "
                    f"(store {store.model_id!r})")
            scores[k] = cosine_score(enroll_means[k][trial.enroll_id],
                                     store.get(trial.test_utt))
        cm_embs = [store.get(trial.test_utt) for store in cm_stores]
        features.append(TrialFeatures(scores, cm_embs, trial.label))
    return features


# ---------------------------------------------------------------------------
# synthetic data


def _f32(vec: np.ndarray) -> np.ndarray:
    # Quantize to f32 so in-memory values match an embedding-file round trip
    # bit for bit; downstream arithmetic stays f64.
    return vec.astype(np.float32).astype(np.float64)


def _split_counts(n: int) -> dict[str, int]:
    """Per-speaker allocation of n test utterances of one kind: roughly 25%
    to dev, 20% to eval (at least one each), the rest to train. Dev gets the
    larger share because epoch selection keys on dev metrics and a too-small
    dev set makes early spurious perfect splits likely."""
    n_dev = max(1, round(n * 0.25))
    n_eval = max(1, round(n * 0.2))
    return {"train": n - n_dev - n_eval, "dev": n_dev, "eval": n_eval}


def generate_synthetic(spec: SynthSpec) -> SynthData:
    """Generate Gaussian-cluster embeddings plus balanced trial lists.

    Speakers are isotropic unit-noise clusters in each ASV space, with
    centers scaled by ``speaker_separation``; bona fide and spoofed
    utterances are unit-noise clusters in each CM space whose centers sit
    ``spoof_cm_separation`` apart. Every draw comes from a single seeded
    generator in a fixed order, so identical specs give bit-identical data.
    """
    spec.validate()
    rng = Rng(spec.seed)
    speakers = [f"spk{i:03d}" for i in range(spec.n_speakers)]

    asv_centers = []  # per model: speaker id -> center
    for dim in spec.asv_dims:
        asv_centers.append({
            s: spec.speaker_separation * rng.normal_array(dim) for s in speakers})

    cm_centers = []  # per model: (bona_center, spoof_center)
    for dim in spec.cm_dims:
        axis = rng.normal_array(dim)
        axis /= np.linalg.norm(axis)
        half = 0.5 * spec.spoof_cm_separation * axis
        cm_centers.append((half, -half))

    asv_stores = [EmbeddingStore(f"asv{k}", dim) for k, dim in enumerate(spec.asv_dims)]
    cm_stores = [EmbeddingStore(f"cm{k}", dim) for k, dim in enumerate(spec.cm_dims)]

    n_test = spec.utts_per_speaker - ENROLL_UTTS_PER_SPEAKER
    n_spoof = n_test // 2
    n_bona = n_test - n_spoof

    def add_utt(utt_id: str, speaker: str, spoofed: bool) -> None:
        for k, dim in enumerate(spec.asv_dims):
            if spoofed and not spec.spoof_mimics_target:
                center = np.zeros(dim)
            else:
                center = asv_centers[k][speaker]
            asv_stores[k].add(utt_id, _f32(center + rng.normal_array(dim)))
        for k, dim in enumerate(spec.cm_dims):
            center = cm_centers[k][1] if spoofed else cm_centers[k][0]
            cm_stores[k].add(utt_id, _f32(center + rng.normal_array(dim)))

    enrollment_map: dict[str, list[str]] = {}
    bona_utts: dict[str, list[str]] = {}
    spoof_utts: dict[str, list[str]] = {}
    for s in speakers:
        enrollment_map[s] = []
        for j in range(ENROLL_UTTS_PER_SPEAKER):
            utt = f"{s}_e{j:03d}"
            add_utt(utt, s, spoofed=False)
            enrollment_map[s].append(utt)
        bona_utts[s] = []
        for j in range(n_bona):
            utt = f"{s}_b{j:03d}"
            add_utt(utt, s, spoofed=False)
            bona_utts[s].append(utt)
        spoof_utts[s] = []
        for j in range(n_spoof):
            utt = f"{s}_s{j:03d}"
            add_utt(utt, s, spoofed=True)
            spoof_utts[s].append(utt)

    bona_alloc = _split_counts(n_bona)
    spoof_alloc = _split_counts(n_spoof)

    def split_slice(utts: list[str], alloc: dict[str, int], split: str) -> list[str]:
        start = sum(alloc[s] for s in SPLITS[:SPLITS.index(split)])
        return utts[start:start + alloc[split]]

    trials: dict[str, list[Trial]] = {}
    for split in SPLITS:
        # Equal class counts per split: targets and spoofs use each utterance
        # once, nontargets are sampled to match.
        per_spk = min(bona_alloc[split], spoof_alloc[split])
        split_bona = {s: split_slice(bona_utts[s], bona_alloc, split) for s in speakers}
        split_trials: list[Trial] = []
        for s in speakers:
            for utt in split_bona[s][:per_spk]:
                split_trials.append(Trial(s, utt, "target"))
        for i, s in enumerate(speakers):
            for _ in range(per_spk):
                other = speakers[(i + 1 + rng.randint(spec.n_speakers - 1)) % spec.n_speakers]
                utt = split_bona[other][rng.randint(len(split_bona[other]))]
                split_trials.append(Trial(s, utt, "nontarget"))
        for s in speakers:
            for utt in split_slice(spoof_utts[s], spoof_alloc, split)[:per_spk]:
                split_trials.append(Trial(s, utt, "spoof"))
        trials[split] = split_trials

    return SynthData(trials, asv_stores, cm_stores, enrollment_map)
