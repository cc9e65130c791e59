"""Reference values and brute-force oracles shared by the unit and
acceptance suites."""

import math

# per-material image counts and TDR (%) at FDR = 0.2%, baseline and augmented
PUBLISHED_TDRS = [
    ("Silicone", 1160, 67.62, 98.64),
    ("Monster Liquid Latex", 882, 94.77, 96.24),
    ("Play Doh", 715, 58.42, 72.36),
    ("2D Printed Paper", 481, 55.44, 80.22),
    ("Wood Glue", 397, 86.38, 98.97),
    ("Gold Fingers", 295, 88.22, 88.59),
    ("Gelatin", 294, 54.95, 97.96),
    ("Dragon Skin", 285, 97.48, 100.00),
    ("Latex Body Paint", 176, 76.35, 89.72),
    ("Transparency", 137, 95.83, 100.00),
    ("Conductive Ink on Paper", 50, 90.00, 100.00),
    ("3D Universal Targets", 40, 95.00, 100.00),
]


# ---------------------------------------------------------------------------
# brute-force oracles: plain loops over every threshold that can matter


def _thresholds(live, spoof):
    return sorted(set(live) | set(spoof)) + [math.inf]


def far(live, t):
    return sum(1 for v in live if v >= t) / len(live)


def frr(spoof, t):
    return sum(1 for v in spoof if v < t) / len(spoof)


def brute_tdr(live, spoof, target):
    for t in _thresholds(live, spoof):
        if far(live, t) <= target:
            return sum(1 for v in spoof if v >= t) / len(spoof), t
    raise AssertionError("+inf always qualifies")


def brute_eer(live, spoof):
    prev = None
    for t in _thresholds(live, spoof):
        fa, fr = far(live, t), frr(spoof, t)
        if fa == fr:
            return fa
        if fa < fr:
            _, pfa, pfr = prev
            d0, d1 = pfa - pfr, fa - fr
            w = d0 / (d0 - d1)
            return 0.5 * (((1 - w) * pfa + w * fa) + ((1 - w) * pfr + w * fr))
        prev = (t, fa, fr)
    raise AssertionError("rates must cross")


def random_score_sets(rng):
    n_l, n_s = rng.integers(1, 201, size=2)
    if rng.random() < 0.5:  # coarse grid: many ties
        live = rng.integers(0, 20, n_l) / 20
        spoof = rng.integers(0, 20, n_s) / 20
    else:
        live = rng.beta(2, 5, n_l)
        spoof = rng.beta(5, 2, n_s)
    return [float(v) for v in live], [float(v) for v in spoof]
