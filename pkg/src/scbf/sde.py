"""Time integration of the coupled slow-fast system and its relatives.

Scheme: exponential Euler-Maruyama.  The linear part mu*A + alpha is
propagated exactly per mode; convection, damping, and the couplings are
explicit; the Gaussian increment enters with the exact variance of the
stochastic convolution against the linear semigroup (which reduces to the
plain sqrt(dt) Euler weight as the step shrinks, and makes the per-mode
transition of every purely linear configuration exact).  Diffusion
coefficients are evaluated at the left endpoint of each step.

The fast equation is advanced with n_sub = ceil(dt / (c_sub * delta))
substeps per slow step, holding the slow state frozen across them.  The
slow and fast equations consume disjoint noise lanes derived from one seed,
mirroring a single driving Wiener process split across components; the
frozen equation consumes a third, independent lane.

All states are advanced in batch over paths: arrays of shape
(n_paths, n_modes) in H-orthonormal coordinates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericalBlowupError
from .model import ModelParams
from .noise import LANE_FAST, LANE_FROZEN, LANE_SLOW, complex_normals
from .operators import convection_psi, damping_psi
from .spectral import BasisSet, SpectralField, lebesgue_norm, norm_H_amp, norm_V_amp
from .trajectory import Control, Trajectory

__all__ = [
    "SchemeConfig",
    "step_slow_fast",
    "simulate_slow_fast",
    "simulate_controlled",
    "simulate_frozen",
    "simulate_auxiliary",
    "run_batch",
    "run_frozen_batch",
    "FrozenStats",
]


@dataclass(frozen=True)
class SchemeConfig:
    """Integrator knobs shared by all simulation entry points."""

    dt: float = 1e-3
    c_sub: float = 0.1
    record_every: int = 1
    radius: float | None = None
    energy_audit: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0 < self.c_sub <= 10):
            raise ValueError("c_sub must lie in (0, 10]")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


def default_dt(basis: BasisSet) -> float:
    """min(1e-3, 0.1/lambda_N): resolves the stiffest retained mode comfortably."""
    return min(1e-3, 0.1 / float(basis.eigenvalues[-1]))


# ---------------------------------------------------------------------------
# per-mode step coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Coeffs:
    """Exponential-integrator factors for one equation and one step size."""

    decay: np.ndarray      # e^{-gamma h}
    drift: np.ndarray      # (1 - e^{-gamma h}) / gamma
    noise: np.ndarray      # sqrt((1 - e^{-2 gamma h}) / (2 gamma)), per unit diffusion


def _make_coeffs(gamma: np.ndarray, h: float) -> _Coeffs:
    z = gamma * h
    decay = np.exp(-z)
    drift = -np.expm1(-z) / gamma
    noise = np.sqrt(-np.expm1(-2.0 * z) / (2.0 * gamma))
    return _Coeffs(decay, drift, noise)


class _Stepper:
    """Precomputed constants of one (params, basis, scheme) combination."""

    def __init__(self, params: ModelParams, basis: BasisSet, scheme: SchemeConfig):
        self.params = params
        self.basis = basis
        self.scheme = scheme
        self.gamma = params.mu * basis.eigenvalues + params.alpha
        self.slow = _make_coeffs(self.gamma, scheme.dt)
        self.n_sub = max(1, math.ceil(scheme.dt / (scheme.c_sub * params.delta)))
        self.dt_sub = scheme.dt / self.n_sub
        self.fast = _make_coeffs(self.gamma, self.dt_sub / params.delta)
        self.q1 = params.noise.q1(basis)
        self.q2 = params.noise.q2(basis)
        self.sqrt_eps = math.sqrt(params.eps)
        self.ctrl_fast_scale = math.sqrt(params.delta / params.eps)

    # -- nonlinear pieces (amplitude coordinates) ---------------------------

    def _to_psi(self, a: np.ndarray) -> np.ndarray:
        return a / self.basis.amp_scale

    def _from_psi(self, psi: np.ndarray) -> np.ndarray:
        return psi * self.basis.amp_scale

    def slow_drift(self, ax: np.ndarray, ay: np.ndarray | None, h_row: np.ndarray | None,
                   m1: np.ndarray) -> np.ndarray:
        p = self.params
        psi = self._to_psi(ax)
        out = -self._from_psi(convection_psi(self.basis, psi))
        if p.beta != 0.0:
            out -= p.beta * self._from_psi(damping_psi(self.basis, psi, p.r))
        if ay is not None:
            out += p.coupling.F(ax, ay)
        if h_row is not None:
            out += m1[:, None] * (self.q1 * h_row)
        return out

    def fast_drift(self, ax_left: np.ndarray, ay: np.ndarray, h_row: np.ndarray | None,
                   m2: np.ndarray) -> np.ndarray:
        p = self.params
        out = p.coupling.G(ax_left, ay)
        if p.beta != 0.0:
            out -= p.beta * self._from_psi(damping_psi(self.basis, self._to_psi(ay), p.r))
        if h_row is not None:
            out += self.ctrl_fast_scale * m2[:, None] * (self.q2 * h_row)
        return out

    # -- one slow step -------------------------------------------------------

    def advance_slow(self, ax, ay, h_row, m1, xi, noise_scale=1.0):
        drift = self.slow_drift(ax, ay, h_row, m1)
        new = self.slow.decay * ax + self.slow.drift * drift
        if xi is not None and noise_scale != 0.0:
            amp = noise_scale * self.sqrt_eps * m1[:, None] * self.q1 * self.slow.noise
            new += amp * xi
        return new

    def advance_fast(self, ax_left, ay, h_row, m2, xi):
        drift = self.fast_drift(ax_left, ay, h_row, m2)
        new = self.fast.decay * ay + self.fast.drift * drift
        if xi is not None:
            new += m2[:, None] * self.q2 * self.fast.noise * xi
        return new


# ---------------------------------------------------------------------------
# batched driver
# ---------------------------------------------------------------------------

@dataclass
class ChunkState:
    """Final state of one chunk of paths after run_batch."""

    ax: np.ndarray
    ay: np.ndarray | None
    aux: np.ndarray | None
    alive: np.ndarray           # paths that neither blew up nor were stopped
    blown: np.ndarray           # paths excluded due to non-finite values
    stopped_at: np.ndarray      # hitting times of the radius, NaN if never hit


def _control_rows(control: Control | None, n_steps: int, dt: float) -> np.ndarray | None:
    if control is None:
        return None
    idx = np.minimum(
        ((np.arange(n_steps) + 0.5) * dt / control.knot_length).astype(int),
        control.n_knots - 1,
    )
    return control.values[idx]


def _run_chunk(
    params: ModelParams,
    basis: BasisSet,
    scheme: SchemeConfig,
    n_steps: int,
    ax0: np.ndarray,
    ay0: np.ndarray | None,
    *,
    control: Control | None = None,
    path0: int = 0,
    noise_on: bool = True,
    slow_noise_scale: float = 1.0,
    aux_delta: float | None = None,
    on_blowup: str = "raise",
    hook=None,
) -> ChunkState:
    st = _Stepper(params, basis, scheme)
    m = basis.n_modes
    B = ax0.shape[0]
    seed = params.noise.seed
    dt = scheme.dt

    ax = np.array(ax0, dtype=np.complex128)
    ay = np.array(ay0, dtype=np.complex128) if ay0 is not None else None
    aux = None
    ax_block = None
    m2_block = None
    if aux_delta is not None:
        if ay is None:
            raise ValueError("auxiliary process requires a fast state")
        aux = ay.copy()
        block_steps = max(1, round(aux_delta / dt))
    h_rows = _control_rows(control, n_steps, dt)

    alive = np.ones(B, dtype=bool)
    blown = np.zeros(B, dtype=bool)
    stopped_at = np.full(B, np.nan)

    if hook is not None:
        hook(0, 0.0, ax, ay, aux, alive)

    for n in range(n_steps):
        t = n * dt
        norm_x = norm_H_amp(ax)
        m1 = np.asarray(params.coupling.sigma1_mult(norm_x), dtype=float)
        m2 = np.asarray(params.coupling.sigma2_mult(norm_x), dtype=float)
        h_row = h_rows[n] if h_rows is not None else None

        if aux is not None and n % block_steps == 0:
            ax_block = ax.copy()
            m2_block = np.asarray(params.coupling.sigma2_mult(norm_H_amp(ax_block)), dtype=float)

        xi = complex_normals(seed, LANE_SLOW, n, m, path0, B) if noise_on else None
        ax_new = st.advance_slow(ax, ay, h_row, m1, xi, slow_noise_scale)

        if ay is not None:
            ax_left = ax
            for sub in range(st.n_sub):
                xif = (
                    complex_normals(seed, LANE_FAST, n * st.n_sub + sub, m, path0, B)
                    if noise_on
                    else None
                )
                ay = np.where(alive[:, None], st.advance_fast(ax_left, ay, h_row, m2, xif), ay)
                if aux is not None:
                    aux = np.where(
                        alive[:, None],
                        st.advance_fast(ax_block, aux, None, m2_block, xif),
                        aux,
                    )

        ax = np.where(alive[:, None], ax_new, ax)

        bad = alive & ~(
            np.isfinite(ax).all(axis=1)
            & (np.isfinite(ay).all(axis=1) if ay is not None else True)
        )
        if bad.any():
            if on_blowup == "raise":
                raise NumericalBlowupError("non-finite coefficient", step=n + 1, time=t + dt)
            blown |= bad
            alive &= ~bad
            ax[bad] = 0.0
            if ay is not None:
                ay[bad] = 0.0
            if aux is not None:
                aux[bad] = 0.0

        if scheme.radius is not None:
            hit = alive & (norm_H_amp(ax) > scheme.radius)
            if hit.any():
                stopped_at[hit] = t + dt
                alive &= ~hit

        if hook is not None:
            hook(n + 1, t + dt, ax, ay, aux, alive)

    return ChunkState(ax=ax, ay=ay, aux=aux, alive=alive, blown=blown, stopped_at=stopped_at)


def run_batch(
    params: ModelParams,
    basis: BasisSet,
    scheme: SchemeConfig,
    n_steps: int,
    x0_amp: np.ndarray,
    y0_amp: np.ndarray | None,
    n_paths: int,
    hook_factory=None,
    *,
    control: Control | None = None,
    aux_delta: float | None = None,
    slow_noise_scale: float = 1.0,
    chunk_size: int = 4096,
    threads: int = 1,
):
    """Advance n_paths independent paths in fixed chunks.

    hook_factory(path0, n) builds a per-chunk observer; the list of observer
    results (chunk order) and the list of ChunkStates are returned.  Chunk
    boundaries depend only on chunk_size, so results are bitwise independent
    of the thread count.
    """
    ranges = [(p, min(p + chunk_size, n_paths)) for p in range(0, n_paths, chunk_size)]

    def work(rg):
        p0, p1 = rg
        hook = hook_factory(p0, p1 - p0) if hook_factory is not None else None
        state = _run_chunk(
            params, basis, scheme, n_steps,
            np.broadcast_to(x0_amp, (p1 - p0, basis.n_modes)),
            np.broadcast_to(y0_amp, (p1 - p0, basis.n_modes)) if y0_amp is not None else None,
            control=control,
            path0=p0,
            aux_delta=aux_delta,
            slow_noise_scale=slow_noise_scale,
            on_blowup="mask",
            hook=hook,
        )
        return hook, state

    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, ranges))
    else:
        out = [work(rg) for rg in ranges]
    hooks = [h for h, _ in out]
    states = [s for _, s in out]
    return hooks, states


# ---------------------------------------------------------------------------
# frozen equation (natural clock, independent lane)
# ---------------------------------------------------------------------------

class FrozenStats:
    """Streaming moments of F(x, Y_t) and coordinate second moments of Y."""

    def __init__(self, params, basis, ax_frozen, burn_steps: int, stride: int):
        self.params = params
        self.ax = ax_frozen
        self.burn = burn_steps
        self.stride = stride
        self.f_samples: list[np.ndarray] = []
        self.y_samples: list[np.ndarray] = []

    def __call__(self, n, t, ay, alive):
        if n >= self.burn and (n - self.burn) % self.stride == 0:
            axb = np.broadcast_to(self.ax, ay.shape)
            self.f_samples.append(np.array(self.params.coupling.F(axb, ay)))
            self.y_samples.append(ay.copy())


def _run_frozen_chunk(
    params: ModelParams,
    basis: BasisSet,
    ax_frozen: np.ndarray,
    ay0: np.ndarray,
    n_steps: int,
    dt: float,
    *,
    time_scale: float = 1.0,
    lane: int = LANE_FROZEN,
    path0: int = 0,
    noise_on: bool = True,
    hook=None,
    on_blowup: str = "raise",
) -> np.ndarray:
    """Fast dynamics with x held fixed; time_scale < 1 reproduces the 1/delta clock."""
    gamma = params.mu * basis.eigenvalues + params.alpha
    co = _make_coeffs(gamma, dt / time_scale)
    q2 = params.noise.q2(basis)
    m = basis.n_modes
    seed = params.noise.seed
    B = ay0.shape[0]
    ax = np.broadcast_to(ax_frozen, (B, m))
    m2 = np.asarray(params.coupling.sigma2_mult(norm_H_amp(ax)), dtype=float)
    beta, r = params.beta, params.r
    scale = basis.amp_scale

    ay = np.array(ay0, dtype=np.complex128)
    alive = np.ones(B, dtype=bool)
    if hook is not None:
        hook(0, 0.0, ay, alive)
    for n in range(n_steps):
        drift = params.coupling.G(ax, ay)
        if beta != 0.0:
            drift -= beta * scale * damping_psi(basis, ay / scale, r)
        new = co.decay * ay + co.drift * drift
        if noise_on:
            xi = complex_normals(seed, lane, n, m, path0, B)
            new += m2[:, None] * q2 * co.noise * xi
        ay = np.where(alive[:, None], new, ay)
        bad = alive & ~np.isfinite(ay).all(axis=1)
        if bad.any():
            if on_blowup == "raise":
                raise NumericalBlowupError("non-finite coefficient", step=n + 1, time=(n + 1) * dt)
            alive &= ~bad
            ay[bad] = 0.0
        if hook is not None:
            hook(n + 1, (n + 1) * dt, ay, alive)
    return ay


def run_frozen_batch(
    params: ModelParams,
    basis: BasisSet,
    ax_frozen: np.ndarray,
    y0_amp: np.ndarray,
    n_steps: int,
    dt: float,
    n_paths: int,
    hook_factory=None,
    *,
    chunk_size: int = 4096,
    threads: int = 1,
    noise_on: bool = True,
):
    ranges = [(p, min(p + chunk_size, n_paths)) for p in range(0, n_paths, chunk_size)]

    def work(rg):
        p0, p1 = rg
        hook = hook_factory(p0, p1 - p0) if hook_factory is not None else None
        final = _run_frozen_chunk(
            params, basis, ax_frozen,
            np.broadcast_to(y0_amp, (p1 - p0, basis.n_modes)),
            n_steps, dt,
            path0=p0, noise_on=noise_on, hook=hook, on_blowup="mask",
        )
        return hook, final

    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, ranges))
    else:
        out = [work(rg) for rg in ranges]
    return [h for h, _ in out], [s for _, s in out]


# ---------------------------------------------------------------------------
# single-path entry points
# ---------------------------------------------------------------------------

class _Recorder:
    """Collects snapshots, norms, and (optionally) the energy audit of path 0."""

    def __init__(self, params, basis, scheme, n_steps, with_fast, with_aux=False):
        self.params = params
        self.basis = basis
        self.scheme = scheme
        self.n_steps = n_steps
        self.with_fast = with_fast
        self.with_aux = with_aux
        self.times: list[float] = []
        self.slow: list[SpectralField] = []
        self.fast: list[SpectralField] = []
        self.auxf: list[SpectralField] = []
        self.norms_slow: list[tuple] = []
        self.norms_fast: list[tuple] = []
        self.audit: dict[str, list] = (
            {"H2": [], "V2": [], "Lr1": [], "FX": []} if scheme.energy_audit else None
        )
        self.stopped = False

    def _norm_row(self, a) -> tuple:
        psi = a / self.basis.amp_scale
        lr = float(lebesgue_norm(self.basis, psi, self.params.r + 1.0))
        return (float(norm_H_amp(a)), float(norm_V_amp(self.basis, a)), lr)

    def __call__(self, n, t, ax, ay, aux, alive):
        if self.stopped:
            return
        if self.audit is not None:
            a = ax[0]
            self.audit["H2"].append(float(np.sum(np.abs(a) ** 2)))
            self.audit["V2"].append(float(np.sum(self.basis.eigenvalues * np.abs(a) ** 2)))
            lr = float(lebesgue_norm(self.basis, a / self.basis.amp_scale, self.params.r + 1.0))
            self.audit["Lr1"].append(lr ** (self.params.r + 1.0))
            if ay is not None:
                f = self.params.coupling.F(ax, ay)[0]
                self.audit["FX"].append(float(np.sum(f.real * a.real + f.imag * a.imag)))
            else:
                self.audit["FX"].append(0.0)
        if n % self.scheme.record_every == 0 or n == self.n_steps or not alive[0]:
            self.times.append(t)
            self.slow.append(SpectralField.from_amplitudes(self.basis, ax[0].copy()))
            self.norms_slow.append(self._norm_row(ax[0]))
            if self.with_fast and ay is not None:
                self.fast.append(SpectralField.from_amplitudes(self.basis, ay[0].copy()))
                self.norms_fast.append(self._norm_row(ay[0]))
            if self.with_aux and aux is not None:
                self.auxf.append(SpectralField.from_amplitudes(self.basis, aux[0].copy()))
        if not alive[0]:
            self.stopped = True

    def trajectory(self, stopped_at: float | None) -> Trajectory:
        diag = {}
        if self.audit is not None:
            diag["energy_audit"] = {k: np.array(v) for k, v in self.audit.items()}
        if self.with_aux:
            diag["auxiliary"] = self.auxf
        return Trajectory(
            times=np.array(self.times),
            slow=self.slow,
            fast=self.fast if self.with_fast else None,
            norms_slow=np.array(self.norms_slow),
            norms_fast=np.array(self.norms_fast) if self.with_fast else None,
            stopped_at=stopped_at,
            diagnostics=diag,
        )


def _n_steps(T: float, dt: float) -> int:
    n = max(1, round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon T={T} is not an integer number of steps of dt={dt}")
    return n


def _amp0(basis: BasisSet, x: SpectralField | None) -> np.ndarray | None:
    if x is None:
        return None
    if x.basis != basis:
        raise ValueError("initial condition lives on a different basis")
    return x.amplitudes[None, :]


def simulate_slow_fast(
    params: ModelParams,
    basis: BasisSet,
    x0: SpectralField,
    y0: SpectralField | None,
    scheme: SchemeConfig | None = None,
    *,
    path_index: int = 0,
    noise_on: bool = True,
) -> Trajectory:
    """One path of the coupled system on [0, T].

    y0 = None drops the fast equation, which is exact when the slow coupling
    gain is zero (the slow equation then decouples); the slow noise lane is
    unchanged, so the slow path is identical either way.
    """
    scheme = scheme or SchemeConfig(dt=default_dt(basis))
    if y0 is None and params.coupling.c_F != 0.0:
        raise ValueError("fast state can only be dropped when the slow coupling gain c_F is 0")
    n_steps = _n_steps(params.T, scheme.dt)
    rec = _Recorder(params, basis, scheme, n_steps, with_fast=y0 is not None)
    state = _run_chunk(
        params, basis, scheme, n_steps,
        _amp0(basis, x0), _amp0(basis, y0),
        path0=path_index, noise_on=noise_on, hook=rec,
    )
    stopped = None if math.isnan(state.stopped_at[0]) else float(state.stopped_at[0])
    return rec.trajectory(stopped)


def simulate_controlled(
    params: ModelParams,
    basis: BasisSet,
    x0: SpectralField,
    y0: SpectralField | None,
    control: Control | None,
    scheme: SchemeConfig | None = None,
    *,
    path_index: int = 0,
    slow_noise_scale: float = 1.0,
    aux_delta: float | None = None,
) -> Trajectory:
    """One path of the controlled system; control = None reduces to simulate_slow_fast.

    slow_noise_scale = 0 silences the slow noise only (skeleton-limit
    diagnostic).  aux_delta additionally advances the block-frozen auxiliary
    fast process on the same fast noise; its snapshots land in
    diagnostics["auxiliary"].
    """
    scheme = scheme or SchemeConfig(dt=default_dt(basis))
    if y0 is None and params.coupling.c_F != 0.0:
        raise ValueError("fast state can only be dropped when the slow coupling gain c_F is 0")
    n_steps = _n_steps(params.T, scheme.dt)
    rec = _Recorder(
        params, basis, scheme, n_steps,
        with_fast=y0 is not None, with_aux=aux_delta is not None,
    )
    state = _run_chunk(
        params, basis, scheme, n_steps,
        _amp0(basis, x0), _amp0(basis, y0),
        control=control, path0=path_index,
        slow_noise_scale=slow_noise_scale, aux_delta=aux_delta, hook=rec,
    )
    stopped = None if math.isnan(state.stopped_at[0]) else float(state.stopped_at[0])
    return rec.trajectory(stopped)


def simulate_frozen(
    params: ModelParams,
    basis: BasisSet,
    x_frozen: SpectralField,
    y0: SpectralField,
    T: float,
    dt: float,
    *,
    path_index: int = 0,
    record_every: int = 1,
    time_scale: float = 1.0,
    lane: int = LANE_FROZEN,
    noise_on: bool = True,
) -> Trajectory:
    """Fast dynamics with the slow state held at x_frozen, on its natural clock.

    The driving noise comes from a lane disjoint from the slow-fast run, so
    the frozen equation is independent of the coupled system.  time_scale and
    lane exist for equivalence tests against the accelerated clock.
    """
    n_steps = _n_steps(T, dt)
    times, snaps, rows = [], [], []
    lam = basis.eigenvalues

    def hook(n, t, ay, alive):
        if n % record_every == 0 or n == n_steps:
            times.append(t)
            a = ay[0].copy()
            snaps.append(SpectralField.from_amplitudes(basis, a))
            lr = float(lebesgue_norm(basis, a / basis.amp_scale, params.r + 1.0))
            rows.append((float(norm_H_amp(a)), float(np.sqrt(np.sum(lam * np.abs(a) ** 2))), lr))

    _run_frozen_chunk(
        params, basis, _amp0(basis, x_frozen)[0], _amp0(basis, y0),
        n_steps, dt, time_scale=time_scale, lane=lane,
        path0=path_index, noise_on=noise_on, hook=hook,
    )
    return Trajectory(
        times=np.array(times), slow=None, fast=snaps,
        norms_slow=None, norms_fast=np.array(rows),
    )


def simulate_auxiliary(
    params: ModelParams,
    basis: BasisSet,
    x_traj: Trajectory,
    y0: SpectralField,
    Delta: float,
    scheme: SchemeConfig | None = None,
    *,
    path_index: int = 0,
) -> Trajectory:
    """Fast process driven by the recorded slow path frozen on blocks of length Delta.

    Consumes the same fast-lane increments as the paired coupled run (same
    seed, path index, dt, and c_sub), which is what the block-freezing error
    comparisons require.
    """
    if Delta <= 0:
        raise ValueError("Delta must be positive")
    scheme = scheme or SchemeConfig(dt=default_dt(basis))
    if x_traj.slow is None:
        raise ValueError("x_traj must carry slow snapshots")
    T = float(x_traj.times[-1])
    n_steps = _n_steps(T, scheme.dt)
    st = _Stepper(params, basis, scheme)
    m = basis.n_modes
    seed = params.noise.seed
    block_steps = max(1, round(min(Delta, T) / scheme.dt))

    # slow snapshots must cover every block boundary
    snap_at = {round(t / scheme.dt): i for i, t in enumerate(x_traj.times)}
    ay = _amp0(basis, y0)
    times, snaps = [0.0], [y0]
    ax_block = None
    m2 = None
    for n in range(n_steps):
        if n % block_steps == 0:
            if n not in snap_at:
                raise ValueError(
                    f"slow trajectory has no snapshot at block boundary t={n * scheme.dt:.6g}"
                )
            ax_block = x_traj.slow[snap_at[n]].amplitudes[None, :]
            m2 = np.asarray(params.coupling.sigma2_mult(norm_H_amp(ax_block)), dtype=float)
        for sub in range(st.n_sub):
            xif = complex_normals(seed, LANE_FAST, n * st.n_sub + sub, m, path_index, 1)
            ay = st.advance_fast(ax_block, ay, None, m2, xif)
        if not np.isfinite(ay).all():
            raise NumericalBlowupError("non-finite coefficient", step=n + 1, time=(n + 1) * scheme.dt)
        if (n + 1) % scheme.record_every == 0 or n + 1 == n_steps:
            times.append((n + 1) * scheme.dt)
            snaps.append(SpectralField.from_amplitudes(basis, ay[0].copy()))

    lam = basis.eigenvalues
    rows = []
    for f in snaps:
        a = f.amplitudes
        lr = float(lebesgue_norm(basis, f.psi, params.r + 1.0))
        rows.append((float(norm_H_amp(a)), float(np.sqrt(np.sum(lam * np.abs(a) ** 2))), lr))
    return Trajectory(
        times=np.array(times), slow=None, fast=snaps,
        norms_slow=None, norms_fast=np.array(rows),
    )


def step_slow_fast(
    params: ModelParams,
    basis: BasisSet,
    x: SpectralField,
    y: SpectralField | None,
    dt: float,
    noise_slow: np.ndarray | None = None,
    noise_fast: np.ndarray | None = None,
    *,
    c_sub: float = 0.1,
    control_value: np.ndarray | None = None,
) -> tuple[SpectralField, SpectralField | None]:
    """A single integrator step with caller-supplied standard-normal increments.

    noise_slow: complex (n_modes,) unit increments for the slow equation;
    noise_fast: complex (n_sub, n_modes) for the fast substeps.  None means a
    noise-free step.  The simulate_* drivers feed the lane streams into
    exactly this update.
    """
    scheme = SchemeConfig(dt=dt, c_sub=c_sub)
    st = _Stepper(params, basis, scheme)
    ax = x.amplitudes[None, :]
    ay = y.amplitudes[None, :] if y is not None else None
    norm_x = norm_H_amp(ax)
    m1 = np.asarray(params.coupling.sigma1_mult(norm_x), dtype=float)
    m2 = np.asarray(params.coupling.sigma2_mult(norm_x), dtype=float)
    h_row = None if control_value is None else np.asarray(control_value)

    xi = None if noise_slow is None else np.asarray(noise_slow)[None, :]
    ax_new = st.advance_slow(ax, ay, h_row, m1, xi)
    if ay is not None:
        for sub in range(st.n_sub):
            xif = None if noise_fast is None else np.asarray(noise_fast)[sub][None, :]
            ay = st.advance_fast(ax, ay, h_row, m2, xif)
    if not np.isfinite(ax_new).all() or (ay is not None and not np.isfinite(ay).all()):
        raise NumericalBlowupError("non-finite coefficient", step=1, time=dt)
    x_out = SpectralField.from_amplitudes(basis, ax_new[0])
    y_out = SpectralField.from_amplitudes(basis, ay[0]) if ay is not None else None
    return x_out, y_out
