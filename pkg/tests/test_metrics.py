import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import PUBLISHED_TDRS, brute_eer, brute_tdr, far, frr, random_score_sets
from umg.metrics import ace, best_ace, eer, error_rates, image_score, tdr_at_fdr, weighted_mean_std


def test_tdr_hand_example():
    tdr, t = tdr_at_fdr([0.1, 0.2, 0.3, 0.4], [0.35, 0.5, 0.6, 0.9], 0.0)
    assert tdr == 0.75 and t == 0.5


def test_tdr_boundary_just_below_one():
    tdr, _ = tdr_at_fdr([0.1, 0.2, 0.3, 0.4], [0.35, 0.5, 0.6, 0.9], 0.999)
    assert tdr == 1.0
    with pytest.raises(ValueError):
        tdr_at_fdr([0.1], [0.2], 1.0)


def test_ace_and_eer_hand_examples():
    assert ace([0.2, 0.7], [0.6, 0.4], 0.5) == 0.5
    assert error_rates([0.2, 0.7], [0.6, 0.4], 0.5) == (0.5, 0.5)
    assert eer([0.1, 0.2, 0.3, 0.6], [0.4, 0.7, 0.8, 0.9]) == 0.25


def test_perfect_separation():
    live, spoof = [0.1, 0.2, 0.3], [0.7, 0.8]
    assert best_ace(live, spoof)[0] == 0.0
    assert eer(live, spoof) == 0.0
    assert tdr_at_fdr(live, spoof, 0.0)[0] == 1.0


def test_metrics_match_brute_force_on_1000_sets():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        live, spoof = random_score_sets(rng)
        target = float(rng.choice([0.0, 0.002, 0.01, 0.05, 0.2, 0.5]))
        assert tdr_at_fdr(live, spoof, target) == brute_tdr(live, spoof, target)
        t = float(rng.random())
        assert ace(live, spoof, t) == 0.5 * (far(live, t) + frr(spoof, t))
        assert eer(live, spoof) == brute_eer(live, spoof)


def test_metric_input_validation():
    with pytest.raises(ValueError):
        tdr_at_fdr([], [0.5], 0.01)
    with pytest.raises(ValueError):
        eer([0.1, float("nan")], [0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_eer_lies_between_best_ace_and_half(live, spoof):
    e = eer(live, spoof)
    assert 0.0 <= e <= 1.0
    assert best_ace(live, spoof)[0] <= e + 1e-12


def test_tdr_monotone_in_target():
    rng = np.random.default_rng(1)
    live, spoof = rng.random(100), rng.random(80) + 0.3
    rates = [tdr_at_fdr(live, spoof, f)[0] for f in (0.0, 0.01, 0.05, 0.1, 0.5)]
    assert rates == sorted(rates)


def test_table_ii_weighted_means():
    counts = [r[1] for r in PUBLISHED_TDRS]
    base, sd_base = weighted_mean_std([r[2] for r in PUBLISHED_TDRS], counts)
    umg, sd_umg = weighted_mean_std([r[3] for r in PUBLISHED_TDRS], counts)
    assert abs(base - 75.24) <= 0.01
    assert abs(umg - 91.78) <= 0.01
    # the population spreads come out near the printed ones (see the notes)
    assert abs(sd_base - 15.21) < 1.0 and abs(sd_umg - 9.43) < 1.0


def test_weighted_mean_trivial_cases():
    assert weighted_mean_std([1.0, 2.0, 6.0], [1, 1, 1])[0] == pytest.approx(3.0)
    assert weighted_mean_std([4.2], [9]) == (4.2, 0.0)
    with pytest.raises(ValueError):
        weighted_mean_std([1.0], [0])
    with pytest.raises(ValueError):
        weighted_mean_std([1.0, 2.0], [1])


def test_image_score():
    assert image_score([0.2, 0.4]) == pytest.approx(0.3, abs=1e-15)
    assert image_score([0.37]) == 0.37
    rng = np.random.default_rng(0)
    s = rng.random(57)
    assert abs(image_score(s) - image_score(rng.permutation(s))) <= 1e-12
    with pytest.raises(ValueError):
        image_score([])
