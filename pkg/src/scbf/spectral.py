"""Divergence-free Fourier basis on the 2D torus.

Velocity fields are stored through their stream function: u = curl(psi),
so u_k = i*(k2, -k1)*psi_k for every wave vector k.  Incompressibility is
therefore structural, not a runtime property.  The domain is the periodic
box [0, 2pi)^2 with zero-mean fields (k = 0 excluded), which makes the
smallest eigenvalue of the Stokes operator exactly 1.

Coefficients are kept for one representative of each conjugate pair
{k, -k}; the full real field is reconstructed with conjugate symmetry.
Most routines accept batched coefficient arrays of shape (..., n_modes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

__all__ = [
    "BasisSet",
    "SpectralField",
    "build_basis",
    "leray_project",
    "apply_A",
    "norms",
    "transform_roundtrip",
    "random_field",
]


def _representative(k1: int, k2: int) -> bool:
    """One mode per conjugate pair: keep k1 > 0, plus the k2 > 0 half of the k1 = 0 axis."""
    return k1 > 0 or (k1 == 0 and k2 > 0)


@dataclass(frozen=True)
class BasisSet:
    """Truncated divergence-free Fourier basis with |k| <= N.

    modes[i] is the representative wave vector of pair i, eigenvalues[i] the
    Stokes eigenvalue |k|^2, sorted nondecreasing.  grid_size is the default
    physical grid (per axis) used for pseudo-spectral products; finer padded
    grids are derived on demand via grid_for().
    """

    max_wavenumber: int
    dealias_factor: float
    modes: np.ndarray          # (n_modes, 2) int64
    eigenvalues: np.ndarray    # (n_modes,) float64, sorted nondecreasing
    grid_size: int

    # amplitude scale turning psi_k into H-orthonormal coordinates:
    # a_k = amp_scale_k * psi_k  with  ||u||_H^2 = sum |a_k|^2
    amp_scale: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.modes.setflags(write=False)
        self.eigenvalues.setflags(write=False)
        if self.amp_scale is None:
            scale = math.sqrt(2.0) * (2.0 * math.pi) * np.sqrt(self.eigenvalues)
            object.__setattr__(self, "amp_scale", scale)
        self.amp_scale.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def grid_for(self, pad_factor: float) -> int:
        """Smallest even grid >= pad_factor*(2N+1)."""
        return _even_ceil(pad_factor * (2 * self.max_wavenumber + 1))

    def scatter_indices(self, m: int):
        """(pos, neg) flat indices of each mode and its conjugate on an m*m grid."""
        return _scatter_indices(self, m)

    def __eq__(self, other):
        if not isinstance(other, BasisSet):
            return NotImplemented
        return (
            self.max_wavenumber == other.max_wavenumber
            and self.dealias_factor == other.dealias_factor
        )

    def __hash__(self):
        return hash((self.max_wavenumber, self.dealias_factor))


@dataclass(frozen=True)
class SpectralField:
    """A divergence-free velocity field: stream-function coefficient per mode."""

    basis: BasisSet
    psi: np.ndarray  # (n_modes,) complex128

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.complex128)
        if psi.shape != (self.basis.n_modes,):
            raise ValueError(
                f"psi has shape {psi.shape}, expected ({self.basis.n_modes},)"
            )
        object.__setattr__(self, "psi", psi)
        psi.setflags(write=False)

    @property
    def amplitudes(self) -> np.ndarray:
        """H-orthonormal coordinates a_k (complex)."""
        return self.basis.amp_scale * self.psi

    @classmethod
    def from_amplitudes(cls, basis: BasisSet, a: np.ndarray) -> "SpectralField":
        return cls(basis, np.asarray(a, dtype=np.complex128) / basis.amp_scale)

    @classmethod
    def zero(cls, basis: BasisSet) -> "SpectralField":
        return cls(basis, np.zeros(basis.n_modes, dtype=np.complex128))

    def norm_H(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def norm_V(self) -> float:
        a = self.amplitudes
        return float(np.sqrt(np.sum(self.basis.eigenvalues * np.abs(a) ** 2)))

    def inner_H(self, other: "SpectralField") -> float:
        _check_same_basis(self.basis, other.basis)
        return inner_H_amp(self.amplitudes, other.amplitudes)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_basis(self.basis, other.basis)
        return SpectralField(self.basis, self.psi + other.psi)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_basis(self.basis, other.basis)
        return SpectralField(self.basis, self.psi - other.psi)

    def __mul__(self, c) -> "SpectralField":
        return SpectralField(self.basis, self.psi * c)

    __rmul__ = __mul__


def _even_ceil(x: float) -> int:
    m = math.ceil(x)
    return m if m % 2 == 0 else m + 1


def _check_same_basis(b1: BasisSet, b2: BasisSet) -> None:
    if b1 != b2:
        raise ValueError("fields live on different bases")


def build_basis(N: int, dealias_factor: float = 1.5) -> BasisSet:
    """Enumerate representative modes with 0 < |k| <= N.

    Modes are sorted by (|k|^2, k1, k2) so eigenvalues come out nondecreasing
    and the ordering is reproducible.
    """
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"max wavenumber must be a positive integer, got {N!r}")
    if dealias_factor < 1.5:
        raise ValueError(f"dealias_factor must be >= 3/2, got {dealias_factor}")
    modes = [
        (k1, k2)
        for k1 in range(-N, N + 1)
        for k2 in range(-N, N + 1)
        if (k1, k2) != (0, 0)
        and k1 * k1 + k2 * k2 <= N * N
        and _representative(k1, k2)
    ]
    modes.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    karr = np.array(modes, dtype=np.int64)
    lam = (karr[:, 0] ** 2 + karr[:, 1] ** 2).astype(np.float64)
    grid = _even_ceil(dealias_factor * (2 * N + 1))
    return BasisSet(
        max_wavenumber=int(N),
        dealias_factor=float(dealias_factor),
        modes=karr,
        eigenvalues=lam,
        grid_size=grid,
    )


@lru_cache(maxsize=64)
def _scatter_cache(N: int, dealias_factor: float, m: int):
    basis = build_basis(N, dealias_factor)
    k = basis.modes
    pos = (k[:, 0] % m) * m + (k[:, 1] % m)
    neg = ((-k[:, 0]) % m) * m + ((-k[:, 1]) % m)
    return pos, neg


def _scatter_indices(basis: BasisSet, m: int):
    if m < 2 * basis.max_wavenumber + 1:
        raise ValueError(f"grid {m} cannot resolve modes up to N={basis.max_wavenumber}")
    return _scatter_cache(basis.max_wavenumber, basis.dealias_factor, m)


# ---------------------------------------------------------------------------
# batched low-level transforms (psi arrays of shape (..., n_modes))
# ---------------------------------------------------------------------------

def velocity_coefficients(basis: BasisSet, psi: np.ndarray) -> np.ndarray:
    """u_k = i*(k2, -k1)*psi_k, shape (..., n_modes, 2)."""
    k = basis.modes
    u = np.empty(psi.shape + (2,), dtype=np.complex128)
    u[..., 0] = 1j * k[:, 1] * psi
    u[..., 1] = -1j * k[:, 0] * psi
    return u


def psi_from_velocity_coefficients(basis: BasisSet, vel: np.ndarray) -> np.ndarray:
    """Stream-function coefficients of the divergence-free part of vel.

    Extracting the component along (k2, -k1) is exactly the Helmholtz-Hodge
    projection, so this implements P_H and the change to psi in one step.
    """
    k = basis.modes
    return -1j * (k[:, 1] * vel[..., 0] - k[:, 0] * vel[..., 1]) / basis.eigenvalues


def _spectrum_to_grid(basis: BasisSet, coeff: np.ndarray, m: int) -> np.ndarray:
    """Real grid values of sum_k c_k e^{ikx} (+ conjugates), shape (..., m, m)."""
    pos, neg = basis.scatter_indices(m)
    flat = np.zeros(coeff.shape[:-1] + (m * m,), dtype=np.complex128)
    flat[..., pos] = coeff
    flat[..., neg] += np.conj(coeff)
    grid = flat.reshape(coeff.shape[:-1] + (m, m))
    return np.fft.ifft2(grid).real * (m * m)

def _grid_to_spectrum(basis: BasisSet, values: np.ndarray) -> np.ndarray:
    """Representative-mode coefficients of real grid data, shape (..., n_modes)."""
    m = values.shape[-1]
    pos, _ = basis.scatter_indices(m)
    hat = np.fft.fft2(values) / (m * m)
    return hat.reshape(values.shape[:-2] + (m * m,))[..., pos]


def velocity_grid(basis: BasisSet, psi: np.ndarray, m: int | None = None) -> np.ndarray:
    """Physical velocity samples, shape (..., 2, m, m)."""
    m = basis.grid_size if m is None else m
    u = velocity_coefficients(basis, psi)
    out = np.empty(psi.shape[:-1] + (2, m, m), dtype=np.float64)
    out[..., 0, :, :] = _spectrum_to_grid(basis, u[..., 0], m)
    out[..., 1, :, :] = _spectrum_to_grid(basis, u[..., 1], m)
    return out


def velocity_from_grid(basis: BasisSet, grid: np.ndarray) -> np.ndarray:
    """Leray-projected psi coefficients of velocity samples (..., 2, m, m)."""
    vel = np.stack(
        [
            _grid_to_spectrum(basis, grid[..., 0, :, :]),
            _grid_to_spectrum(basis, grid[..., 1, :, :]),
        ],
        axis=-1,
    )
    return psi_from_velocity_coefficients(basis, vel)


def gradient_grid(basis: BasisSet, psi: np.ndarray, m: int | None = None) -> np.ndarray:
    """Velocity gradient samples d_i u_j, shape (..., 2, 2, m, m)."""
    m = basis.grid_size if m is None else m
    u = velocity_coefficients(basis, psi)
    k = basis.modes
    out = np.empty(psi.shape[:-1] + (2, 2, m, m), dtype=np.float64)
    for i in range(2):  # derivative direction
        for j in range(2):  # velocity component
            out[..., i, j, :, :] = _spectrum_to_grid(
                basis, 1j * k[:, i] * u[..., j], m
            )
    return out


def norm_H_amp(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=-1))


def norm_V_amp(basis: BasisSet, a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(basis.eigenvalues * np.abs(a) ** 2, axis=-1))


def inner_H_amp(a: np.ndarray, b: np.ndarray) -> float | np.ndarray:
    out = np.sum(a.real * b.real + a.imag * b.imag, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def quadrature_weight(m: int) -> float:
    """Cell area of the uniform m*m grid on [0, 2pi)^2 (trapezoid = rectangle here)."""
    return (2.0 * math.pi / m) ** 2


def lebesgue_norm(basis: BasisSet, psi: np.ndarray, p: float, m: int | None = None) -> np.ndarray:
    """(integral |u|^p dx)^(1/p) by grid quadrature, |u| the Euclidean magnitude."""
    m = basis.grid_size if m is None else m
    u = velocity_grid(basis, psi, m)
    mag2 = u[..., 0, :, :] ** 2 + u[..., 1, :, :] ** 2
    integral = np.sum(mag2 ** (p / 2.0), axis=(-2, -1)) * quadrature_weight(m)
    return integral ** (1.0 / p)


# ---------------------------------------------------------------------------
# public field-level operations
# ---------------------------------------------------------------------------

def leray_project(basis: BasisSet, raw: np.ndarray) -> SpectralField:
    """Project per-mode velocity coefficients (n_modes, 2) onto divergence-free fields."""
    raw = np.asarray(raw, dtype=np.complex128)
    if raw.shape != (basis.n_modes, 2):
        raise ValueError(f"raw has shape {raw.shape}, expected ({basis.n_modes}, 2)")
    return SpectralField(basis, psi_from_velocity_coefficients(basis, raw))


def apply_A(u: SpectralField) -> SpectralField:
    """Stokes operator: multiply each mode by its eigenvalue."""
    return SpectralField(u.basis, u.basis.eigenvalues * u.psi)


def norms(u: SpectralField, r: float = 1.0) -> tuple[float, float, float]:
    """(H-norm, V-norm, L^{r+1}-norm); the first two from Parseval, the last by quadrature."""
    if r < 1.0:
        raise ValueError(f"absorption exponent r must be >= 1, got {r}")
    lr = float(lebesgue_norm(u.basis, u.psi, r + 1.0))
    return u.norm_H(), u.norm_V(), lr


def transform_roundtrip(u: SpectralField, m: int | None = None) -> SpectralField:
    """Spectral -> physical grid -> spectral; the identity up to rounding."""
    grid = velocity_grid(u.basis, u.psi, m)
    return SpectralField(u.basis, velocity_from_grid(u.basis, grid))


def random_field(
    basis: BasisSet,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    decay: float = 2.0,
) -> SpectralField:
    """Random smooth field with |a_k| ~ amplitude * lambda_k^(-decay/2)."""
    n = basis.n_modes
    a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    a *= amplitude * basis.eigenvalues ** (-decay / 2.0) / math.sqrt(2.0)
    return SpectralField.from_amplitudes(basis, a)
