import numpy as np
import pytest

from unitarity_lab.experiments.gambler import gambler_exact, gambler_oracle, gambler_trials, win_probabilities


@pytest.mark.parametrize("alpha2", [0.2, 0.5, 0.64, 0.9])
@pytest.mark.parametrize("gain", [0.1, 0.01, 0.001])
def test_exact_win_probability_equals_initial_weight(alpha2, gain):
    # optional stopping on the bounded martingale w1; final weights sit within the threshold of 0 or 1
    assert gambler_exact(alpha2, gain) == pytest.approx(alpha2, abs=1e-6)


def test_martingale_rule_keeps_expected_weight():
    gain = 0.03
    lo, hi, p = win_probabilities(0.3, gain)
    j = np.arange(lo, hi + 1)
    w = 1 / (1 + np.exp(-(np.log(0.3 / 0.7) + j * np.log1p(gain))))
    up = w * (1 + gain) / (1 + gain * w)
    down = w / (1 + gain * (1 - w))
    assert np.allclose(p * up + (1 - p) * down, w, rtol=0, atol=1e-15)


def test_symmetric_game():
    assert gambler_oracle(0.5, 10_000, 0.05, seed=1) == pytest.approx(0.5, abs=0.02)


def test_simulation_agrees_with_exact_solution():
    n = 10_000
    f = gambler_oracle(0.64, n, 0.05, seed=2)
    ci = 1.96 * np.sqrt(0.64 * 0.36 / n)
    assert abs(f - gambler_exact(0.64, 0.05)) < ci


def test_gain_sensitivity():
    assert abs(gambler_exact(0.64, 0.01) - gambler_exact(0.64, 0.001)) < 0.01
    f1 = gambler_oracle(0.64, 4000, 0.05, seed=3)
    f2 = gambler_oracle(0.64, 4000, 0.1, seed=4)
    assert abs(f1 - f2) < 2 * 1.96 * np.sqrt(0.64 * 0.36 / 4000)


def test_proportional_rule_favours_majority():
    assert gambler_exact(0.64, 0.01, rule="proportional") > 0.99
    assert gambler_oracle(0.64, 500, 0.01, seed=5, rule="proportional") > 0.99


def test_oracle_is_deterministic():
    a = gambler_trials(0.3, 300, 0.1, seed=9)
    b = gambler_trials(0.3, 300, 0.1, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = gambler_trials(0.3, 300, 0.1, seed=10)
    assert not np.array_equal(a[1], c[1])


def test_argument_checks():
    with pytest.raises(ValueError):
        gambler_exact(1.0, 0.01)
    with pytest.raises(ValueError):
        gambler_exact(0.5, 0.0)
    with pytest.raises(ValueError):
        gambler_exact(0.5, 0.01, rule="greedy")
