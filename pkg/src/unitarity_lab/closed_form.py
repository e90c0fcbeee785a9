"""Closed-form results used as independent references for the integrator.

Nothing here touches the grid or the split-step engine.  Units: a Gaussian
``psi = exp(-A x^2 + B x)`` in the continuum, total mass ``M = N m``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "localization_time_estimate",
    "relocation_time_estimate",
    "spreading_time_estimate",
    "free_spread",
    "decay_spread",
    "GaussianTrack",
    "continuum_localization_time",
    "uniform_spread",
]


def localization_time_estimate(n_particles, mass, omega, spacing=1.0, hbar=1.0):
    """hbar / (2 N m Omega^2 a^2): time for the bare decay to shrink a flat state to width a."""
    return hbar / (2.0 * n_particles * mass * omega**2 * spacing**2)


def spreading_time_estimate(n_particles, mass, distance, hbar=1.0):
    """2 N m d^2 / hbar: time for a free packet of width ~a to spread over d."""
    return 2.0 * n_particles * mass * distance**2 / hbar


def relocation_time_estimate(distance, omega, spacing=1.0):
    """|X_i - X0| / (a Omega), the geometric mean of the two estimates above."""
    return abs(distance) / (spacing * omega)


def free_spread(sigma0, t, total_mass, hbar=1.0):
    """Width of a free Gaussian packet after time ``t``."""
    return np.sqrt(sigma0**2 + (hbar * t / (2.0 * total_mass * sigma0)) ** 2)


def decay_spread(kappa, t, hbar=1.0):
    """Width of ``exp(-kappa x^2 t / hbar)`` (density ``exp(-2 kappa x^2 t / hbar)``)."""
    return np.sqrt(hbar / (4.0 * kappa * t))


def uniform_spread(n_points, spacing=1.0):
    """Standard deviation of the discrete uniform distribution on the grid."""
    return np.sqrt((n_points**2 - 1) / 12.0) * spacing


def _principal(z):
    z = complex(z)
    return z if z.real > 0 else -z


class GaussianTrack:
    """Exact evolution of a Gaussian under the non-Hermitian trap.

    ``psi = exp(-A x^2 + B x)`` (with ``X0 = 0``) stays Gaussian and

        A' = kappa / hbar - (2 i hbar / M) A^2,     B' = -(2 i hbar / M) A B,

    solved by ``A = A_inf tanh(g t + phi0)``, ``B = B0 cosh(phi0) / cosh(g t + phi0)``
    with ``g = sqrt(2 i kappa / M)`` and ``A_inf = sqrt(kappa M / (2 i hbar^2))``.
    """

    def __init__(self, kappa, total_mass, sigma0=None, center=0.0, hbar=1.0):
        self.kappa = float(kappa)
        self.total_mass = float(total_mass)
        self.hbar = float(hbar)
        self.g = _principal(np.sqrt(2j * kappa / total_mass))
        self.a_inf = _principal(np.sqrt(kappa * total_mass / (2j * hbar**2)))
        a0 = 0.0 if sigma0 is None else 1.0 / (4.0 * sigma0**2)
        self.phi0 = np.arctanh(a0 / self.a_inf)
        self.b0 = 2.0 * a0 * center

    def coefficients(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.g * t + self.phi0
        a = self.a_inf * np.tanh(arg)
        b = self.b0 * np.cosh(self.phi0) / np.cosh(arg)
        return a, b

    def mean(self, t):
        a, b = self.coefficients(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return b.real / (2.0 * a.real)

    def spread(self, t):
        a, _ = self.coefficients(t)
        with np.errstate(divide="ignore"):
            return np.sqrt(1.0 / (4.0 * a.real))

    def first_time(self, predicate, t_end, samples=400_001):
        """First time on a uniform mesh of [0, t_end] where ``predicate`` holds."""
        t = np.linspace(0.0, t_end, samples)
        hit = predicate(self, t)
        if not np.any(hit):
            return np.nan
        return float(t[np.argmax(hit)])


def continuum_localization_time(kappa, total_mass, spacing=1.0, hbar=1.0, t_end=None):
    """Time for an initially flat continuum state to reach width ``spacing``, kinetic term included."""
    track = GaussianTrack(kappa, total_mass, None, 0.0, hbar)
    if t_end is None:
        t_end = 40.0 * hbar / (4.0 * kappa * spacing**2)
    return track.first_time(lambda tr, t: tr.spread(t) <= spacing, t_end)
