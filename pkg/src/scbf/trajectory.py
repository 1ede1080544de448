"""Recorded paths, controls, and their file formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .spectral import BasisSet, SpectralField, build_basis

__all__ = ["Trajectory", "Control", "save_snapshot", "load_snapshot"]

_FLOAT_FMT = "%.17g"
SNAPSHOT_MAGIC = b"SCBF"
SNAPSHOT_VERSION = 1


@dataclass
class Trajectory:
    """Time grid plus snapshots and recorded norms of a single path.

    norms_slow / norms_fast rows are (H, V, L^{r+1}) per recorded time.  When
    a stopping radius was active and got hit, stopped_at is the hitting time
    and no snapshot after it is recorded.
    """

    times: np.ndarray
    slow: list[SpectralField] | None = None
    fast: list[SpectralField] | None = None
    norms_slow: np.ndarray | None = None
    norms_fast: np.ndarray | None = None
    stopped_at: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        self.times = t
        for name in ("slow", "fast"):
            snaps = getattr(self, name)
            if snaps is not None and len(snaps) != t.size:
                raise ValueError(f"{name} snapshots do not match the time grid")

    @property
    def basis(self) -> BasisSet:
        snaps = self.slow if self.slow is not None else self.fast
        return snaps[0].basis

    def final_slow(self) -> SpectralField:
        return self.slow[-1]

    def final_fast(self) -> SpectralField:
        return self.fast[-1]

    def to_csv(self, path) -> None:
        """Columns: time, norm_H_slow, norm_V_slow, norm_Lr1_slow, norm_H_fast."""
        ns = self.norms_slow
        nf = self.norms_fast
        with open(path, "w", newline="\n") as fh:
            fh.write("time,norm_H_slow,norm_V_slow,norm_Lr1_slow,norm_H_fast\n")
            for i, t in enumerate(self.times):
                row = [t]
                row += list(ns[i]) if ns is not None else [0.0, 0.0, 0.0]
                row.append(nf[i][0] if nf is not None else 0.0)
                fh.write(",".join(_FLOAT_FMT % v for v in row) + "\n")


def save_snapshot(field_: SpectralField, path) -> None:
    """Binary field snapshot: magic 'SCBF', u32 version, u32 N, u32 n_modes,
    then (re, im) float64 pairs per mode, all little-endian."""
    basis = field_.basis
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, basis.max_wavenumber, basis.n_modes))
        pairs = np.empty((basis.n_modes, 2), dtype="<f8")
        pairs[:, 0] = field_.psi.real
        pairs[:, 1] = field_.psi.imag
        fh.write(pairs.tobytes())


def load_snapshot(path, basis: BasisSet | None = None) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"not a field snapshot (magic {magic!r})")
        version, n, n_modes = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        if basis is None:
            basis = build_basis(n)
        if basis.max_wavenumber != n or basis.n_modes != n_modes:
            raise ValueError("snapshot does not match the supplied basis")
        pairs = np.frombuffer(fh.read(16 * n_modes), dtype="<f8").reshape(n_modes, 2)
        return SpectralField(basis, pairs[:, 0] + 1j * pairs[:, 1])


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control h in L^2(0,T;H).

    values[i] holds the H-orthonormal mode coefficients on knot interval i of
    equal length T/n_knots.  Membership in the energy ball of radius M is an
    invariant: construction fails if the energy exceeds the budget (beyond
    rounding slack).
    """

    horizon: float
    values: np.ndarray  # (n_knots, n_modes) complex128
    budget: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValueError("control values must have shape (n_knots, n_modes)")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)
        if self.horizon <= 0:
            raise ValueError("control horizon must be positive")
        if self.budget < 0:
            raise ValueError("control budget must be >= 0")
        energy = self.energy()
        slack = 1e-9 * (1.0 + self.budget)
        if energy > self.budget + slack:
            raise ValueError(
                f"control energy {energy:.12g} exceeds budget {self.budget:.12g}"
            )

    @property
    def n_knots(self) -> int:
        return self.values.shape[0]

    @property
    def knot_length(self) -> float:
        return self.horizon / self.n_knots

    def energy(self) -> float:
        """integral of ||h_t||_H^2 over [0, T]."""
        return float(np.sum(np.abs(self.values) ** 2) * self.knot_length)

    def value_at(self, t: float) -> np.ndarray:
        i = min(int(t / self.knot_length), self.n_knots - 1)
        return self.values[i]

    def knot_index(self, t: float) -> int:
        return min(int(t / self.knot_length), self.n_knots - 1)

    @classmethod
    def zero(cls, horizon: float, n_knots: int, n_modes: int, budget: float = 0.0) -> "Control":
        return cls(horizon, np.zeros((n_knots, n_modes), dtype=np.complex128), budget)
