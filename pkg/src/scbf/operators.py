"""Convective and damping operators plus executable monotonicity certificates.

The convective term B(u, v) = P_H((u . grad) v) is evaluated pseudo-spectrally
on a zero-padded grid; with the default 3/2 padding the retained modes of a
quadratic product are alias-free.  The damping term C(u) = P_H(|u|^{r-1} u)
uses a padded grid of factor max(3/2, (r+1)/2), which removes aliasing exactly
for odd integer r and controls it otherwise.

The check_* routines certify inequalities of the underlying continuum
operators on concrete fields.  They evaluate the nonlinear images pointwise on
the physical grid *before* any truncation, because the inequalities are
statements about the untruncated operators; truncating first would perturb
them by the aliasing error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedRegimeError
from .spectral import (
    BasisSet,
    SpectralField,
    gradient_grid,
    lebesgue_norm,
    quadrature_weight,
    velocity_from_grid,
    velocity_grid,
)

__all__ = [
    "OperatorParams",
    "bilinear_B",
    "trilinear_b",
    "nonlinear_C",
    "monotonicity_shift",
    "check_C_strong_monotone",
    "check_C_splitting",
    "check_G_local_monotone",
    "check_B_duality_bound",
]


@dataclass(frozen=True)
class OperatorParams:
    """Constants of the dissipative operator mu*A + B + beta*C."""

    mu: float
    beta: float
    r: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.mu}")
        if self.beta < 0:
            raise ValueError(f"damping coefficient must be >= 0, got {self.beta}")
        if self.r < 1:
            raise ValueError(f"absorption exponent must be >= 1, got {self.r}")


def damping_pad_factor(r: float) -> float:
    return max(1.5, (r + 1.0) / 2.0)


def _check_same_basis(*fields: SpectralField) -> BasisSet:
    basis = fields[0].basis
    for f in fields[1:]:
        if f.basis != basis:
            raise ValueError("operands live on different bases")
    return basis


# ---------------------------------------------------------------------------
# batched kernels on psi arrays (shape (..., n_modes)); used by the integrator
# ---------------------------------------------------------------------------

def convection_psi(basis: BasisSet, psi: np.ndarray, psi_v: np.ndarray | None = None) -> np.ndarray:
    """psi coefficients of B(u, v) = P_H((u . grad) v); v defaults to u.

    For N = 1 the result is identically zero: products of |k| <= 1 modes have
    no Fourier support with 0 < |k| <= 1.
    """
    if basis.max_wavenumber == 1 and psi_v is None:
        return np.zeros_like(psi)
    m = basis.grid_for(1.5)
    u = velocity_grid(basis, psi, m)
    gv = gradient_grid(basis, psi if psi_v is None else psi_v, m)
    adv = np.empty_like(u)
    adv[..., 0, :, :] = u[..., 0, :, :] * gv[..., 0, 0, :, :] + u[..., 1, :, :] * gv[..., 1, 0, :, :]
    adv[..., 1, :, :] = u[..., 0, :, :] * gv[..., 0, 1, :, :] + u[..., 1, :, :] * gv[..., 1, 1, :, :]
    return velocity_from_grid(basis, adv)


def damping_grid(basis: BasisSet, psi: np.ndarray, r: float, m: int) -> np.ndarray:
    """Pointwise |u|^{r-1} u samples on an m*m grid (no projection, no truncation)."""
    u = velocity_grid(basis, psi, m)
    mag2 = u[..., 0, :, :] ** 2 + u[..., 1, :, :] ** 2
    w = mag2 ** ((r - 1.0) / 2.0) if r != 1.0 else np.ones_like(mag2)
    out = np.empty_like(u)
    out[..., 0, :, :] = w * u[..., 0, :, :]
    out[..., 1, :, :] = w * u[..., 1, :, :]
    return out


def damping_psi(basis: BasisSet, psi: np.ndarray, r: float) -> np.ndarray:
    """psi coefficients of C(u) = P_H(|u|^{r-1} u)."""
    if r == 1.0:
        return np.array(psi, copy=True)
    m = basis.grid_for(damping_pad_factor(r))
    return velocity_from_grid(basis, damping_grid(basis, psi, r, m))


def _grid_inner(a: np.ndarray, b: np.ndarray, m: int) -> float:
    """Quadrature of the pointwise dot product of two (2, m, m) sample arrays."""
    return float(np.sum(a * b) * quadrature_weight(m))


# ---------------------------------------------------------------------------
# field-level operators
# ---------------------------------------------------------------------------

def bilinear_B(u: SpectralField, v: SpectralField | None = None) -> SpectralField:
    """B(u, v) = P_H((u . grad) v), truncated to the basis."""
    if v is None:
        basis = u.basis
        return SpectralField(basis, convection_psi(basis, u.psi))
    basis = _check_same_basis(u, v)
    return SpectralField(basis, convection_psi(basis, u.psi, v.psi))


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = integral (u . grad v) . w dx by grid quadrature.

    The padded grid of factor 2 integrates the triple product of band-limited
    fields exactly, so antisymmetry holds to rounding.
    """
    basis = _check_same_basis(u, v, w)
    m = basis.grid_for(2.0)
    ug = velocity_grid(basis, u.psi, m)
    gv = gradient_grid(basis, v.psi, m)
    wg = velocity_grid(basis, w.psi, m)
    adv0 = ug[0] * gv[0, 0] + ug[1] * gv[1, 0]
    adv1 = ug[0] * gv[0, 1] + ug[1] * gv[1, 1]
    return float(np.sum(adv0 * wg[0] + adv1 * wg[1]) * quadrature_weight(m))


def nonlinear_C(u: SpectralField, r: float) -> SpectralField:
    """C(u) = P_H(|u|^{r-1} u), truncated to the basis."""
    if r < 1:
        raise ValueError(f"absorption exponent must be >= 1, got {r}")
    return SpectralField(u.basis, damping_psi(u.basis, u.psi, r))


def monotonicity_shift(params: OperatorParams) -> float:
    """The shift eta making mu*A + B + beta*C + eta*I monotone.

    Closed form for r > 3; zero in the critical case r = 3 when 2*beta*mu >= 1.
    """
    r, mu, beta = params.r, params.mu, params.beta
    if r > 3:
        return (r - 3.0) / (2.0 * mu * (r - 1.0)) * (
            2.0 / (beta * mu * (r - 1.0))
        ) ** (2.0 / (r - 3.0))
    if r == 3:
        if 2.0 * beta * mu < 1.0:
            raise UnsupportedRegimeError(
                f"global monotonicity at r=3 needs 2*beta*mu >= 1, got {2 * beta * mu:.6g}"
            )
        return 0.0
    raise UnsupportedRegimeError(
        f"monotonicity shift is only defined for r >= 3, got r={r}"
    )


# ---------------------------------------------------------------------------
# inequality certificates
# ---------------------------------------------------------------------------

def check_C_strong_monotone(
    u: SpectralField, v: SpectralField, r: float, slack: float = 1e-9
) -> tuple[float, float, bool]:
    """<C(u)-C(v), u-v> >= 2^{1-r} ||u-v||_{L^{r+1}}^{r+1}.

    Both sides are computed on the same padded grid from untruncated pointwise
    images; the inequality then holds term by term in the quadrature sum.
    """
    basis = _check_same_basis(u, v)
    m = basis.grid_for(damping_pad_factor(r))
    cu = damping_grid(basis, u.psi, r, m)
    cv = damping_grid(basis, v.psi, r, m)
    du = velocity_grid(basis, (u - v).psi, m)
    lhs = _grid_inner(cu - cv, du, m)
    rhs = 2.0 ** (1.0 - r) * float(lebesgue_norm(basis, (u - v).psi, r + 1.0, m)) ** (r + 1.0)
    scale = 1.0 + abs(lhs) + abs(rhs)
    return lhs, rhs, lhs >= rhs - slack * scale


def check_C_splitting(
    u: SpectralField, v: SpectralField, r: float, slack: float = 1e-9
) -> tuple[float, float, bool]:
    """<C(u)-C(v), u-v> >= 1/2 |||u|^{(r-1)/2}(u-v)||^2 + 1/2 |||v|^{(r-1)/2}(u-v)||^2."""
    basis = _check_same_basis(u, v)
    m = basis.grid_for(damping_pad_factor(r))
    cu = damping_grid(basis, u.psi, r, m)
    cv = damping_grid(basis, v.psi, r, m)
    ug = velocity_grid(basis, u.psi, m)
    vg = velocity_grid(basis, v.psi, m)
    du = ug - vg
    lhs = _grid_inner(cu - cv, du, m)
    du2 = du[..., 0, :, :] ** 2 + du[..., 1, :, :] ** 2
    wu = (ug[..., 0, :, :] ** 2 + ug[..., 1, :, :] ** 2) ** ((r - 1.0) / 2.0)
    wv = (vg[..., 0, :, :] ** 2 + vg[..., 1, :, :] ** 2) ** ((r - 1.0) / 2.0)
    rhs = 0.5 * float(np.sum((wu + wv) * du2)) * quadrature_weight(m)
    scale = 1.0 + abs(lhs) + abs(rhs)
    return lhs, rhs, lhs >= rhs - slack * scale


def check_G_local_monotone(
    u: SpectralField,
    v: SpectralField,
    params: OperatorParams,
    slack: float = 1e-9,
) -> tuple[float, float, bool]:
    """<G(u)-G(v), u-v> + eta ||u-v||_H^2 >= 0 for G = mu*A + B + beta*C.

    Valid for r > 3 with the closed-form eta, and for r = 3 with
    2*beta*mu >= 1 (eta = 0).  Other regimes raise UnsupportedRegimeError.
    """
    eta = monotonicity_shift(params)
    basis = _check_same_basis(u, v)
    m = basis.grid_for(max(2.0, damping_pad_factor(params.r)))
    du_field = u - v
    du = velocity_grid(basis, du_field.psi, m)

    viscous = params.mu * du_field.norm_V() ** 2

    def advection(psi):
        ug = velocity_grid(basis, psi, m)
        gu = gradient_grid(basis, psi, m)
        out = np.empty_like(ug)
        out[0] = ug[0] * gu[0, 0] + ug[1] * gu[1, 0]
        out[1] = ug[0] * gu[0, 1] + ug[1] * gu[1, 1]
        return out

    convective = _grid_inner(advection(u.psi) - advection(v.psi), du, m)
    cu = damping_grid(basis, u.psi, params.r, m)
    cv = damping_grid(basis, v.psi, params.r, m)
    damping = params.beta * _grid_inner(cu - cv, du, m)

    value = viscous + convective + damping + eta * du_field.norm_H() ** 2
    scale = 1.0 + viscous + abs(convective) + abs(damping)
    return value, eta, value >= -slack * scale


def check_B_duality_bound(
    u: SpectralField, w: SpectralField, r: float, slack: float = 1e-8
) -> tuple[float, float, bool]:
    """|<B(u), w>| <= ||u||_{L^{r+1}} ||u||_{L^{2(r+1)/(r-1)}} ||w||_V for r >= 3."""
    if r < 3:
        raise UnsupportedRegimeError(f"duality bound is stated for r >= 3, got r={r}")
    basis = _check_same_basis(u, w)
    lhs = abs(trilinear_b(u, w, u))  # <B(u,u), w> = -b(u, w, u)
    nu1 = float(lebesgue_norm(basis, u.psi, r + 1.0, basis.grid_for(2.0)))
    nu2 = float(lebesgue_norm(basis, u.psi, 2.0 * (r + 1.0) / (r - 1.0), basis.grid_for(2.0)))
    rhs = nu1 * nu2 * w.norm_V()
    scale = 1.0 + lhs + rhs
    return lhs, rhs, lhs <= rhs + slack * scale
