"""The tri-class equal-error-rate family for spoofing-aware speaker
verification, plus DET operating points and histogram data for score plots.

Metric definitions over one score list with target/nontarget/spoof labels:

* SV-EER:   targets (positive) vs nontargets (negative)
* SPF-EER:  targets vs spoofs
* SASV-EER: targets vs the union of nontargets and spoofs

Threshold convention: a trial is accepted when score >= threshold, so
FRR(t) = frac(positives < t) and FAR(t) = frac(negatives >= t). Candidate
thresholds are the midpoints between consecutive distinct scores plus one
sentinel below and above all scores; no candidate ever equals a score, which
fixes tie handling. The EER is read off the piecewise-linear curve through
the resulting (FAR, FRR) operating points at its crossing with FAR = FRR.
Because the operating points are rank statistics, the EER is invariant under
strictly increasing score transforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataio import LABELS
from .errors import ConfigError, DataError, DegenerateInputError


@dataclass
class ScoredTrial:
    score: float
    label: str


@dataclass
class EvalReport:
    sv_eer: Optional[float]
    spf_eer: Optional[float]
    sasv_eer: Optional[float]
    sv_threshold: Optional[float]
    spf_threshold: Optional[float]
    sasv_threshold: Optional[float]
    n_target: int
    n_nontarget: int
    n_spoof: int


@dataclass
class HistogramData:
    bin_edges: np.ndarray
    target: np.ndarray
    nontarget: np.ndarray
    spoof: np.ndarray


def _score_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigError(f"{name}: expected a 1-d score list")
    if arr.size and not np.isfinite(arr).all():
        raise DataError(f"{name}: scores contain NaN or Inf")
    return arr


def det_curve(positives, negatives):
    """Operating points (far, frr, thresholds) swept from accept-everything
    to reject-everything."""
    pos = np.sort(_score_array(positives, "positives"))
    neg = np.sort(_score_array(negatives, "negatives"))
    if pos.size == 0 or neg.size == 0:
        raise DegenerateInputError("det_curve: empty score class")
    uniq = np.unique(np.concatenate([pos, neg]))
    thr = np.empty(uniq.size + 1, dtype=np.float64)
    thr[0] = uniq[0] - 1.0
    thr[-1] = uniq[-1] + 1.0
    if uniq.size > 1:
        thr[1:-1] = (uniq[:-1] + uniq[1:]) / 2.0
    frr = np.searchsorted(pos, thr, side="left") / pos.size
    far = (neg.size - np.searchsorted(neg, thr, side="left")) / neg.size
    return far, frr, thr


def _eer_sorted(pos_arrays: list[np.ndarray], neg_arrays: list[np.ndarray]
                ) -> tuple[float, float]:
    """Crossing of the operating-point polyline, located by binary search
    instead of materializing every threshold. Arithmetic is identical to
    reading the crossing off det_curve, but runs in O(log^2) probes, which
    keeps multi-million-trial reports sorting-dominated.

    Each class may be split across several sorted arrays (their virtual
    concatenation is the class), so callers can reuse per-class sorts.
    """
    n_pos = sum(a.size for a in pos_arrays)
    n_neg = sum(a.size for a in neg_arrays)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("eer: empty score class")

    def count_lt(arrays, x, side):
        return sum(int(np.searchsorted(a, x, side=side)) for a in arrays)

    def point(x, side):
        frr = count_lt(pos_arrays, x, side) / n_pos
        far = (n_neg - count_lt(neg_arrays, x, side)) / n_neg
        return far, frr

    def crossed(x) -> bool:
        # FRR - FAR for a threshold just above x; nondecreasing in x
        far, frr = point(x, "right")
        return frr - far >= 0.0

    # smallest score value whose just-above operating point has crossed
    x_star = None
    for arr in (*pos_arrays, *neg_arrays):
        lo, hi = 0, arr.size
        while lo < hi:
            mid = (lo + hi) // 2
            if crossed(float(arr[mid])):
                hi = mid
            else:
                lo = mid + 1
        if lo < arr.size:
            v = float(arr[lo])
            if x_star is None or v < x_star:
                x_star = v
    # the just-above point at the maximum has frr=1, far=0, so x_star exists
    assert x_star is not None

    far0, frr0 = point(x_star, "left")  # last point before the crossing
    far1, frr1 = point(x_star, "right")
    denom = (frr1 - frr0) - (far1 - far0)
    s = (far0 - frr0) / denom
    value = frr0 + s * (frr1 - frr0)

    # bracketing candidate thresholds: midpoints to the neighboring distinct
    # values, or the +-1 sentinels at the extremes
    below = None
    above = None
    for arr in (*pos_arrays, *neg_arrays):
        i = int(np.searchsorted(arr, x_star, side="left"))
        if i > 0:
            v = float(arr[i - 1])
            below = v if below is None else max(below, v)
        j = int(np.searchsorted(arr, x_star, side="right"))
        if j < arr.size:
            v = float(arr[j])
            above = v if above is None else min(above, v)
    t0 = (below + x_star) / 2.0 if below is not None else x_star - 1.0
    t1 = (x_star + above) / 2.0 if above is not None else x_star + 1.0
    threshold = t0 + s * (t1 - t0)
    return float(value), float(threshold)


def eer(positives, negatives) -> tuple[float, float]:
    """Interpolated equal error rate and its threshold."""
    pos = np.sort(_score_array(positives, "positives"))
    neg = np.sort(_score_array(negatives, "negatives"))
    return _eer_sorted([pos], [neg])


def _normalize_scored(scored, labels):
    if labels is None:
        scores = np.fromiter((t.score for t in scored), dtype=np.float64,
                             count=len(scored))
        labels = np.asarray([t.label for t in scored])
    else:
        scores = _score_array(scored, "scores")
        labels = np.asarray(labels)
    if scores.shape[0] != labels.shape[0]:
        raise ConfigError(
            f"scores and labels differ in length: {scores.shape[0]} vs {labels.shape[0]}")
    return scores, labels


def _partition(scores: np.ndarray, labels: np.ndarray):
    """Scores split by class, validating that every label is known."""
    masks = {lab: labels == lab for lab in LABELS}
    n_known = sum(int(m.sum()) for m in masks.values())
    if n_known != labels.shape[0]:
        unknown = ~(masks["target"] | masks["nontarget"] | masks["spoof"])
        raise DataError(f"unknown trial label {labels[unknown][0]!r}")
    return {lab: scores[m] for lab, m in masks.items()}


def eval_report(scored, labels=None) -> EvalReport:
    """All three EERs from one score list.

    Accepts either a list of ScoredTrial or separate score/label arrays.
    Sub-metrics whose negative class is absent are reported as None; at least
    one target and one non-target-class trial are required overall.
    """
    scores, labels = _normalize_scored(scored, labels)
    parts = _partition(scores, labels)
    tar = np.sort(parts["target"])
    non = np.sort(parts["nontarget"])
    spf = np.sort(parts["spoof"])
    if tar.size == 0:
        raise DegenerateInputError("eval_report: no target trials")
    if non.size == 0 and spf.size == 0:
        raise DegenerateInputError("eval_report: no negative trials")

    # per-class sorts are shared by all three metrics; the SASV negatives are
    # the two sorted arrays viewed as one class, no merge needed
    sv = _eer_sorted([tar], [non]) if non.size else (None, None)
    spoof_eer = _eer_sorted([tar], [spf]) if spf.size else (None, None)
    sasv = _eer_sorted([tar], [a for a in (non, spf) if a.size])
    return EvalReport(
        sv_eer=sv[0], spf_eer=spoof_eer[0], sasv_eer=sasv[0],
        sv_threshold=sv[1], spf_threshold=spoof_eer[1], sasv_threshold=sasv[1],
        n_target=int(tar.size), n_nontarget=int(non.size), n_spoof=int(spf.size))


def histogram(scored, labels=None, n_bins: int = 30) -> HistogramData:
    """Per-class counts over uniform bins spanning [min, max] of all scores.
    If every score is identical the result is one degenerate bin."""
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    scores, labels = _normalize_scored(scored, labels)
    if scores.size == 0:
        raise DegenerateInputError("histogram: no scores")
    parts = _partition(scores, labels)
    lo, hi = float(scores.min()), float(scores.max())
    per_class = {}
    if lo == hi:
        edges = np.array([lo, hi])
        for lab in LABELS:
            per_class[lab] = np.array([parts[lab].size])
    else:
        edges = np.histogram_bin_edges(scores, bins=n_bins, range=(lo, hi))
        for lab in LABELS:
            counts, _ = np.histogram(parts[lab], bins=edges)
            per_class[lab] = counts
    return HistogramData(bin_edges=edges, target=per_class["target"],
                         nontarget=per_class["nontarget"], spoof=per_class["spoof"])


# ---------------------------------------------------------------------------
# CSV emitters


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def format_report_csv(report: EvalReport) -> str:
    n_sasv_neg = report.n_nontarget + report.n_spoof
    rows = [
        ("sv", report.sv_eer, report.sv_threshold, report.n_target, report.n_nontarget),
        ("spf", report.spf_eer, report.spf_threshold, report.n_target, report.n_spoof),
        ("sasv", report.sasv_eer, report.sasv_threshold, report.n_target, n_sasv_neg),
    ]
    lines = ["metric,eer,threshold,n_pos,n_neg"]
    for name, value, thr, n_pos, n_neg in rows:
        lines.append(f"{name},{_fmt(value)},{_fmt(thr)},{n_pos},{n_neg}")
    return "\n".join(lines) + "\n"


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report_csv(report))


def write_histogram_csv(hist: HistogramData, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,target,nontarget,spoof\n")
        for i in range(len(hist.target)):
            fh.write(f"{float(hist.bin_edges[i])!r},{float(hist.bin_edges[i + 1])!r},"
                     f"{int(hist.target[i])},{int(hist.nontarget[i])},{int(hist.spoof[i])}\n")
