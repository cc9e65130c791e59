"""Detection metrics. Decision rule: ``spoofness >= threshold`` means spoof."""

from __future__ import annotations

import math

import numpy as np


def _scores(live, spoof) -> tuple[np.ndarray, np.ndarray]:
    live = np.asarray(live, dtype=np.float64).ravel()
    spoof = np.asarray(spoof, dtype=np.float64).ravel()
    if live.size == 0 or spoof.size == 0:
        raise ValueError("live and spoof score lists must be nonempty")
    if not (np.all(np.isfinite(live)) and np.all(np.isfinite(spoof))):
        raise ValueError("scores must be finite")
    return live, spoof


def _candidates(live: np.ndarray, spoof: np.ndarray) -> np.ndarray:
    """Every distinct score plus +inf: all thresholds that can change a rate."""
    return np.append(np.unique(np.concatenate([live, spoof])), np.inf)


def _rate_at_or_above(sorted_scores: np.ndarray, t: np.ndarray) -> np.ndarray:
    return (sorted_scores.size - np.searchsorted(sorted_scores, t, side="left")) / sorted_scores.size


def _rate_below(sorted_scores: np.ndarray, t: np.ndarray) -> np.ndarray:
    # counted directly rather than as 1 - rate, which would round differently
    return np.searchsorted(sorted_scores, t, side="left") / sorted_scores.size


def tdr_at_fdr(live_scores, spoof_scores, fdr_target: float) -> tuple[float, float]:
    """Smallest threshold whose live false-detection rate is <= ``fdr_target``
    and the spoof detection rate there.

    The threshold sits on an observed score, or at +inf when every
    observed score would admit too many lives.
    """
    if not 0.0 <= fdr_target < 1.0:
        raise ValueError("fdr_target must lie in [0, 1)")
    live, spoof = _scores(live_scores, spoof_scores)
    cands = _candidates(live, spoof)
    fdr = _rate_at_or_above(np.sort(live), cands)
    # fdr is non-increasing in the threshold, so the first admissible one is the smallest
    t = float(cands[np.argmax(fdr <= fdr_target)])
    tdr = float(np.mean(spoof >= t))
    return tdr, t


def error_rates(live_scores, spoof_scores, threshold: float) -> tuple[float, float]:
    """(live misclassified as spoof, spoof misclassified as live)."""
    live, spoof = _scores(live_scores, spoof_scores)
    return float(np.mean(live >= threshold)), float(np.mean(spoof < threshold))


def ace(live_scores, spoof_scores, threshold: float = 0.5) -> float:
    """Average classification error at a fixed threshold."""
    far, frr = error_rates(live_scores, spoof_scores, threshold)
    return 0.5 * (far + frr)


def eer(live_scores, spoof_scores) -> float:
    """Equal error rate, interpolated linearly between the two adjacent
    candidate thresholds where (live error - spoof error) changes sign."""
    return eer_with_threshold(live_scores, spoof_scores)[0]


def eer_with_threshold(live_scores, spoof_scores) -> tuple[float, float]:
    live, spoof = _scores(live_scores, spoof_scores)
    cands = _candidates(live, spoof)
    far = _rate_at_or_above(np.sort(live), cands)  # non-increasing
    frr = _rate_below(np.sort(spoof), cands)  # non-decreasing
    diff = far - frr  # non-increasing, starts >= 0 and ends <= 0
    zero = np.flatnonzero(diff == 0)
    if zero.size:
        i = zero[0]
        return float(far[i]), float(cands[i])
    i = int(np.flatnonzero(diff < 0)[0])  # first negative; diff[i - 1] > 0
    d0, d1 = diff[i - 1], diff[i]
    w = d0 / (d0 - d1)
    rate = (1 - w) * far[i - 1] + w * far[i]
    rate_b = (1 - w) * frr[i - 1] + w * frr[i]
    t0, t1 = cands[i - 1], cands[i]
    t = t0 if not math.isfinite(t1) else (1 - w) * t0 + w * t1
    return float(0.5 * (rate + rate_b)), float(t)


def best_ace(live_scores, spoof_scores) -> tuple[float, float]:
    """Minimum ACE over all candidate thresholds and the threshold reaching it."""
    live, spoof = _scores(live_scores, spoof_scores)
    cands = _candidates(live, spoof)
    far = _rate_at_or_above(np.sort(live), cands)
    frr = _rate_below(np.sort(spoof), cands)
    i = int(np.argmin(far + frr))
    return float(0.5 * (far[i] + frr[i])), float(cands[i])


def weighted_mean_std(values, weights) -> tuple[float, float]:
    """Weighted arithmetic mean and weighted population standard deviation."""
    v = np.asarray(values, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if v.shape != w.shape:
        raise ValueError(f"{v.size} values but {w.size} weights")
    if v.size == 0:
        raise ValueError("need at least one value")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    mean = float(np.sum(w * v) / np.sum(w))
    var = float(np.sum(w * (v - mean) ** 2) / np.sum(w))
    return mean, math.sqrt(max(var, 0.0))


def image_score(patch_scores) -> float:
    """Mean of per-patch spoofness, summed in sorted order so the result
    does not depend on patch order."""
    s = np.sort(np.asarray(patch_scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("an image needs at least one patch score")
    return float(math.fsum(s.tolist()) / s.size)
