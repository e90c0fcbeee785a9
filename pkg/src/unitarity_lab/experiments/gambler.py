"""Two-weight ruin game: an oracle for collapse statistics that involves no PDE.

Two weights ``(w1, w2)`` start at ``(alpha2, 1 - alpha2)``.  At every round
one of them is multiplied by ``1 + gain`` and the pair is renormalized, so
the log-ratio ``log(w1 / w2)`` moves by ``+-log(1 + gain)`` on a fixed
lattice.  The game ends when one weight reaches ``1 - threshold``.

Rules for picking the winner of a round:

``martingale`` (default)
    component 1 with probability ``(1 + gain * w1) / (2 + gain)``.  This is
    the unique choice making ``w1`` a martingale, so by optional stopping
    component 1 wins with probability ``alpha2`` (up to the overshoot at the
    threshold).
``proportional``
    component 1 with probability ``w1``.  The expected gain then favours the
    larger weight and the majority component wins almost surely.
"""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = ["gambler_oracle", "gambler_trials", "gambler_exact", "win_probabilities"]

RULES = ("martingale", "proportional")


def _lattice(alpha2: float, gain: float, threshold: float):
    if not 0.0 < alpha2 < 1.0:
        raise ValueError("alpha2 must lie strictly between 0 and 1")
    if not 0.0 < gain < 1.0:
        raise ValueError("gain must lie in (0, 1)")
    if not 0.0 < threshold < 0.5:
        raise ValueError("threshold must lie in (0, 0.5)")
    start = math.log(alpha2 / (1.0 - alpha2))
    s = math.log1p(gain)
    upper = math.log((1.0 - threshold) / threshold)
    hi = math.ceil((upper - start) / s)
    while start + (hi - 1) * s >= upper:
        hi -= 1
    while start + hi * s < upper:
        hi += 1
    lo = math.floor((-upper - start) / s)
    while start + (lo + 1) * s <= -upper:
        lo += 1
    while start + lo * s > -upper:
        lo -= 1
    j = np.arange(lo, hi + 1)
    w1 = 1.0 / (1.0 + np.exp(-(start + j * s)))
    return lo, hi, w1


def win_probabilities(alpha2: float, gain: float, threshold: float = 1e-6, rule: str = "martingale"):
    """Per-lattice-site probability of moving towards component 1, with the site range."""
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    lo, hi, w1 = _lattice(alpha2, gain, threshold)
    p = (1.0 + gain * w1) / (2.0 + gain) if rule == "martingale" else w1.copy()
    return lo, hi, p


@numba.njit(cache=True)
def _play(p, lo, hi, seeds, wins, steps):
    for i in range(seeds.shape[0]):
        np.random.seed(seeds[i])
        j = 0
        n = 0
        while lo < j < hi:
            if np.random.random() < p[j - lo]:
                j += 1
            else:
                j -= 1
            n += 1
        wins[i] = 1 if j >= hi else 0
        steps[i] = n


def gambler_trials(
    alpha2: float,
    n_trials: int,
    gain: float,
    seed: int,
    threshold: float = 1e-6,
    rule: str = "martingale",
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_trials`` games.  Returns (component-1 wins as 0/1, rounds played)."""
    lo, hi, p = win_probabilities(alpha2, gain, threshold, rule)
    seeds = np.random.SeedSequence(int(seed)).generate_state(int(n_trials), dtype=np.uint32)
    wins = np.zeros(int(n_trials), dtype=np.int8)
    steps = np.zeros(int(n_trials), dtype=np.int64)
    _play(p, lo, hi, seeds, wins, steps)
    return wins, steps


def gambler_oracle(
    alpha2: float,
    n_trials: int,
    gain: float,
    seed: int,
    threshold: float = 1e-6,
    rule: str = "martingale",
) -> float:
    """Component-1 win frequency over ``n_trials`` simulated games."""
    wins, _ = gambler_trials(alpha2, n_trials, gain, seed, threshold, rule)
    return float(wins.mean())


def gambler_exact(alpha2: float, gain: float, threshold: float = 1e-6, rule: str = "martingale") -> float:
    """Exact component-1 win probability of the game (absorption of a birth-death chain).

    With up-probability ``p_j`` and ``rho_k = prod_{i <= k} (1 - p_i) / p_i``
    over interior sites, the win probability from site ``j`` is the partial
    sum of ``rho`` up to ``j`` over the full sum.
    """
    lo, hi, p = win_probabilities(alpha2, gain, threshold, rule)
    inner = p[1:-1]
    log_ratio = np.concatenate(([0.0], np.cumsum(np.log1p(-inner) - np.log(inner))))
    m = log_ratio.max()
    rho = np.exp(log_ratio - m)
    start = -lo  # index of site 0 counted from lo
    return float(rho[:start].sum() / rho.sum())
