"""Model constants: coupling maps, noise multipliers, and standing assumptions.

The coupling functions act mode-wise on the H-orthonormal coordinates of the
fields, so zero-mean divergence-free structure is preserved automatically and
every Lipschitz constant is elementary to read off.  The noise multipliers
depend on the slow state only through its H-norm; in particular the fast
noise map is independent of y, which makes its y-Lipschitz constant zero and
the boundedness-in-y assumption trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AssumptionViolationError
from .noise import NoiseModel

__all__ = ["CouplingSpec", "ModelParams", "LAMBDA_1"]

# smallest Stokes eigenvalue on the unit-period torus basis (zero-mean fields)
LAMBDA_1 = 1.0

_VARIANTS = ("linear", "saturated")


def _sat(s: float, cap: float) -> float:
    """Bounded, globally 1-Lipschitz ramp s/(1+s/cap); identically 0 when cap = 0."""
    if cap == 0.0:
        return 0.0
    return s / (1.0 + s / cap)


@dataclass(frozen=True)
class CouplingSpec:
    """Concrete slow-fast coupling maps F, G and noise multipliers sigma1, sigma2.

    linear variant:    F(x,y) = c_F*(y + x),  G(x,y) = c_G*x - L_G*y
    saturated variant: the same with each coordinate passed through the
                       1-Lipschitz saturation cap*tanh(./cap)

    sigma_i(x) scales the per-mode noise amplitudes by
    gain*(1 + sat(||x||_H)); neither depends on y, so L_sigma2 = 0 unless a
    larger constant is declared for conservative assumption checking.
    """

    variant: str = "linear"
    c_F: float = 0.5
    c_G: float = 0.5
    L_G: float = 0.25
    L_sigma2: float = 0.0
    sigma1_gain: float = 1.0
    sigma2_gain: float = 1.0
    sat_cap: float = 1.0

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")
        if self.L_G < 0 or self.L_sigma2 < 0:
            raise ValueError("Lipschitz constants must be >= 0")
        if self.sat_cap < 0:
            raise ValueError("sat_cap must be >= 0")

    # -- drift couplings (H-orthonormal coordinates) ------------------------

    def _saturate(self, a: np.ndarray) -> np.ndarray:
        cap = self.sat_cap
        if cap == 0.0:
            return a
        return cap * (np.tanh(a.real / cap) + 1j * np.tanh(a.imag / cap))

    def F(self, ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
        if self.variant == "linear":
            return self.c_F * (ay + ax)
        return self.c_F * (self._saturate(ay) + self._saturate(ax))

    def G(self, ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
        if self.variant == "linear":
            return self.c_G * ax - self.L_G * ay
        return self.c_G * self._saturate(ax) - self.L_G * self._saturate(ay)

    # -- noise multipliers ---------------------------------------------------

    def sigma1_mult(self, norm_x: np.ndarray | float) -> np.ndarray | float:
        if self.sat_cap == 0.0:
            return self.sigma1_gain * np.ones_like(np.asarray(norm_x, dtype=float))
        return self.sigma1_gain * (1.0 + norm_x / (1.0 + norm_x / self.sat_cap))

    def sigma2_mult(self, norm_x: np.ndarray | float) -> np.ndarray | float:
        if self.sat_cap == 0.0:
            return self.sigma2_gain * np.ones_like(np.asarray(norm_x, dtype=float))
        return self.sigma2_gain * (1.0 + norm_x / (1.0 + norm_x / self.sat_cap))

    # -- exposed constants for assumption (A1)-(A3) --------------------------

    @property
    def lipschitz_F(self) -> float:
        """Lipschitz constant of F in each argument."""
        return abs(self.c_F)

    @property
    def lipschitz_G_x(self) -> float:
        return abs(self.c_G)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants, time scales, and the coupling/noise specification."""

    mu: float = 1.0
    alpha: float = 0.5
    beta: float = 0.0
    r: float = 3.0
    eps: float = 0.1
    delta: float = 0.01
    T: float = 1.0
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if not (0 < self.eps <= 1):
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if not (0 < self.delta <= 1):
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    def a3_margin(self) -> float:
        """mu*lambda_1 + 2*alpha - 2*L_G - 2*L_sigma2^2; must be positive."""
        c = self.coupling
        return self.mu * LAMBDA_1 + 2.0 * self.alpha - 2.0 * c.L_G - 2.0 * c.L_sigma2 ** 2

    def check_a3(self) -> None:
        margin = self.a3_margin()
        if margin <= 0:
            raise AssumptionViolationError(
                "dissipativity condition fails: "
                f"mu*lambda_1 + 2*alpha - 2*L_G - 2*L_sigma2^2 = {margin:.6g} <= 0"
            )

    def check_a4(self, cap: float = 0.5) -> None:
        ratio = self.delta / self.eps
        if ratio > cap:
            raise AssumptionViolationError(
                f"time-scale separation too weak: delta/eps = {ratio:.6g} exceeds cap {cap:.6g}"
            )

    def predicted_zeta(self) -> float:
        """Mixing rate lower bound 2*mu*lambda_1 + 2*alpha - 2*L_G - L_sigma2^2."""
        c = self.coupling
        return 2.0 * self.mu * LAMBDA_1 + 2.0 * self.alpha - 2.0 * c.L_G - c.L_sigma2 ** 2

    def with_scales(self, eps: float, delta: float) -> "ModelParams":
        return replace(self, eps=eps, delta=delta)
