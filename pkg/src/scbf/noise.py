"""Trace-class noise model and reproducible counter-based normal streams.

Every normal increment is addressed by (seed, lane, window, path, slot) and
generated through a Philox counter keyed on (seed, lane) with the window in
the counter, so the value of any increment is independent of thread
scheduling, chunk boundaries, and the number of paths in the run.  Lanes keep
the slow equation, the fast equation, and the frozen equation on disjoint
streams; the frozen lane plays the role of the independent driving noise of
the frozen dynamics.

A window is one integrator step (for the fast lane, one substep).  Slots
within a path are laid out as [re(mode 0..m-1), im(mode 0..m-1)], padded to a
multiple of four values so that path offsets land on Philox block boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .spectral import BasisSet

__all__ = ["NoiseModel", "LANE_SLOW", "LANE_FAST", "LANE_FROZEN", "normal_block"]

LANE_SLOW = 1
LANE_FAST = 2
LANE_FROZEN = 3

# Generator.random maps one raw uint64 to one double in [0, 1); 0 is possible
# and must be kept out of the inverse CDF.
_U_LO = 2.0 ** -64
_U_HI = 1.0 - 2.0 ** -53


def _values_per_path(n_values: int) -> int:
    return 4 * ((n_values + 3) // 4)


def normal_block(
    seed: int,
    lane: int,
    window: int,
    n_values: int,
    path0: int = 0,
    n_paths: int = 1,
) -> np.ndarray:
    """Standard normals for paths [path0, path0+n_paths) in one window.

    Returns shape (n_paths, n_values).  Slicing by path ranges reproduces the
    corresponding rows of any larger block bit for bit.
    """
    vpp = _values_per_path(n_values)
    key = np.array([seed, lane], dtype=np.uint64)
    counter = np.array([0, 0, window, 0], dtype=np.uint64)
    bg = Philox(counter=counter, key=key)
    if path0:
        bg.advance((path0 * vpp) // 4)  # advance counts blocks of 4 doubles
    u = Generator(bg).random(n_paths * vpp).reshape(n_paths, vpp)[:, :n_values]
    return ndtri(np.clip(u, _U_LO, _U_HI))


def complex_normals(
    seed: int,
    lane: int,
    window: int,
    n_modes: int,
    path0: int = 0,
    n_paths: int = 1,
) -> np.ndarray:
    """Per-mode complex increments with independent N(0,1) real and imaginary parts."""
    block = normal_block(seed, lane, window, 2 * n_modes, path0, n_paths)
    return block[:, :n_modes] + 1j * block[:, n_modes:]


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal noise with per-mode amplitudes q_k = q0 * |k|^(-s).

    q1 drives the slow equation, q2 the fast equation.  The decay exponents
    must exceed 2 so that the amplitude sequence over the full 2D lattice is
    summable (trace class with room to spare).
    """

    q1_amplitude: float = 0.5
    q1_decay: float = 3.0
    q2_amplitude: float = 0.5
    q2_decay: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for name, s in (("q1_decay", self.q1_decay), ("q2_decay", self.q2_decay)):
            if s <= 2.0:
                raise ValueError(f"{name} must exceed 2 for a trace-class covariance, got {s}")
        if self.q1_amplitude < 0 or self.q2_amplitude < 0:
            raise ValueError("noise amplitudes must be >= 0")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must fit in 64 bits")

    def q1(self, basis: BasisSet) -> np.ndarray:
        return self.q1_amplitude * basis.eigenvalues ** (-self.q1_decay / 2.0)

    def q2(self, basis: BasisSet) -> np.ndarray:
        return self.q2_amplitude * basis.eigenvalues ** (-self.q2_decay / 2.0)

    def slow_increments(self, window: int, n_modes: int, path0: int = 0, n_paths: int = 1) -> np.ndarray:
        return complex_normals(self.seed, LANE_SLOW, window, n_modes, path0, n_paths)

    def fast_increments(self, window: int, n_modes: int, path0: int = 0, n_paths: int = 1) -> np.ndarray:
        return complex_normals(self.seed, LANE_FAST, window, n_modes, path0, n_paths)

    def frozen_increments(self, window: int, n_modes: int, path0: int = 0, n_paths: int = 1) -> np.ndarray:
        return complex_normals(self.seed, LANE_FROZEN, window, n_modes, path0, n_paths)
