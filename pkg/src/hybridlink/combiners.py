"""Post-detection phase combinations and the phase-error model terms."""
from __future__ import annotations

import numpy as np

from .timeseries import FreqKind, FrequencySeries, PhaseSeries, affine, require_same_grid


def ltw_local(pd4a: PhaseSeries, pd4b: PhaseSeries) -> PhaseSeries:
    """Two-way comparison from the local photodiode only: ``pd4a - pd4b/2``."""
    return affine([(1.0, pd4a), (-0.5, pd4b)])


def ltw_remote(pd3a: PhaseSeries, pd3b: PhaseSeries) -> PhaseSeries:
    """Two-way comparison from the remote photodiode only: ``pd3a + pd3b/2``."""
    return affine([(1.0, pd3a), (0.5, pd3b)])


def ctw(pd4a: PhaseSeries, pd3a: PhaseSeries) -> PhaseSeries:
    """Conventional two-way: ``(pd4a + pd3a)/2``; both ends must be sampled synchronously."""
    return affine([(0.5, pd4a), (0.5, pd3a)])


def uni_directional_two_way(fiber1_noise_est: PhaseSeries, fiber2_noise_est: PhaseSeries) -> PhaseSeries:
    """Difference of two one-way fiber-noise estimates (uplink and downlink on separate fibers).

    Typical inputs are the fiber-1 round-trip beat and ``pd4b``, each halved.
    """
    return affine([(1.0, fiber1_noise_est), (-1.0, fiber2_noise_est)])


def phi_drift(nu1: FrequencySeries, nu2: FrequencySeries, tau: float) -> PhaseSeries:
    """Phase error from a drifting laser frequency difference over delay ``tau``:
    ``-2*pi*tau*[(nu1 - nu2)(t) - (nu1 - nu2)(t0)]``.

    ``t0`` is the first sample outside both inputs' warm-up.
    """
    grid = require_same_grid(nu1, nu2)
    for f in (nu1, nu2):
        if f.kind not in (FreqKind.INSTANT, FreqKind.LAMBDA):
            raise ValueError(f"phi_drift takes Instant or Lambda frequency data, got {f.kind.value}")
        if f.fractional:
            raise ValueError("phi_drift needs frequencies in Hz")
    warm = max(nu1.warmup, nu2.warmup)
    diff = np.asarray(nu1.values) - np.asarray(nu2.values)
    ref = diff[min(warm, grid.n - 1)]
    return PhaseSeries(grid, -2 * np.pi * tau * (diff - ref), warmup=warm)


def residual(ltw_minus_lm: PhaseSeries, drift: PhaseSeries, local: PhaseSeries,
             remote: PhaseSeries) -> PhaseSeries:
    """What is left of the comparison error after removing the three modeled terms."""
    return affine([(1.0, ltw_minus_lm), (-1.0, drift), (-1.0, local), (-1.0, remote)])


def zero_like(s: PhaseSeries) -> PhaseSeries:
    return PhaseSeries(s.grid, np.zeros(s.grid.n), s.carrier, s.warmup)
