"""State-evolution fields and integrators.

The conditioned state follows an Ito equation with a Hamiltonian drift, one
Lindblad drift and one diffusion field per measurement channel:

    d rho = F0(rho) dt + sum_k Fk(rho) dt + sum_k sqrt(eta_k) Gk(rho) dW_k .

This module holds the readable reference implementations of those fields, the
post-step projection that repairs floating-point drift off the state space,
a single-step reference integrator, and the deterministic steered flow whose
trajectories sweep out everything the noise can reach.  Long runs go through
the compiled kernels in :mod:`ghzstab._kernels`; the reference path here is
the oracle those kernels are tested against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .control import FeedbackLaw, evaluate
from .model import SystemModel
from .qmat import as_complex_matrix, hermitize
from .tolerances import DEFAULT_TOLS, Tolerances


class IntegrationAbort(RuntimeError):
    """A trajectory left the state space by more than the abort tolerance."""

    def __init__(self, message: str, trajectory: int | None = None, step: int | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


def hamiltonian_drift(
    rho: np.ndarray, u, h0: np.ndarray, controls=()
) -> np.ndarray:
    """-i [H0 + sum_j u_j H_j, rho]; traceless and Hermitian."""
    h = as_complex_matrix(h0).copy()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size != len(controls):
        raise ValueError(f"{u.size} control values for {len(controls)} control Hamiltonians")
    for uj, hj in zip(u, controls):
        h += uj * hj
    return -1j * (h @ rho - rho @ h)


def measurement_drift(rho: np.ndarray, op: np.ndarray) -> np.ndarray:
    """Lindblad drift L rho L - (L^2 rho + rho L^2)/2 for a Hermitian L."""
    t1 = op @ rho
    t3 = op @ t1
    return t1 @ op - 0.5 * (t3 + t3.conj().T)


def measurement_diffusion(rho: np.ndarray, op: np.ndarray) -> np.ndarray:
    """Innovation field L rho + rho L - 2 Tr(L rho) rho."""
    t1 = op @ rho
    return t1 + t1.conj().T - 2.0 * np.trace(t1).real * rho


def deterministic_drift(rho: np.ndarray, op: np.ndarray, eta: float) -> np.ndarray:
    """Drift of the steered deterministic flow for one channel.

    Equals the Lindblad drift minus (eta/2) times the derivative of the
    diffusion field along itself (the Ito-to-Stratonovich correction).
    """
    t1 = op @ rho
    t3 = op @ t1
    tr1 = np.trace(t1).real
    tr2 = np.trace(t3).real
    g = t1 + t1.conj().T - 2.0 * tr1 * rho
    return (
        (1.0 - eta) * (t1 @ op)
        - 0.5 * (1.0 + eta) * (t3 + t3.conj().T)
        + 2.0 * eta * tr2 * rho
        + 2.0 * eta * tr1 * g
    )


@dataclass(frozen=True)
class ProjectionInfo:
    """Diagnostics of one projection back onto the state space."""

    clip_magnitude: float   # size of the most negative eigenvalue removed
    trace_error: float      # |Tr - 1| before renormalization
    eigenvalues: np.ndarray # spectrum before clipping, ascending
    rank: int               # eigenvalues above the rank threshold, after clipping


def project_density(
    matrix: np.ndarray, tols: Tolerances = DEFAULT_TOLS
) -> tuple[np.ndarray, ProjectionInfo]:
    """Hermitize, clip negative eigenvalues to zero, renormalize the trace."""
    m = hermitize(as_complex_matrix(matrix))
    w, u = np.linalg.eigh(m)
    clip = max(0.0, -float(w[0]))
    if w[0] < -tols.clip_abort:
        raise IntegrationAbort(
            f"state eigenvalue {w[0]:.3e} below -{tols.clip_abort}; step size too large"
        )
    trace_error = abs(float(w.sum()) - 1.0)
    wc = np.clip(w, 0.0, None)
    total = float(wc.sum())
    if total <= 0.0:
        raise IntegrationAbort("state collapsed to zero trace during projection")
    rho = (u * wc) @ u.conj().T / total
    rho = hermitize(rho)
    rank = int(np.count_nonzero(w > tols.rank_eigenvalue))
    return rho, ProjectionInfo(clip, trace_error, w, rank)


def validate_density(
    matrix: np.ndarray, tols: Tolerances = DEFAULT_TOLS, name: str = "state"
) -> np.ndarray:
    """Return a valid density matrix, repairing small defects.

    Defects beyond ``tols.state_repair`` abort; smaller ones are projected
    with a warning.
    """
    m = as_complex_matrix(matrix)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    herm = float(np.max(np.abs(m - m.conj().T)))
    trace = abs(np.trace(m).real - 1.0) + abs(np.trace(m).imag)
    w = np.linalg.eigvalsh(hermitize(m))
    neg = max(0.0, -float(w[0]))
    defect = max(herm, trace, neg)
    if defect > tols.state_repair:
        raise ValueError(
            f"{name} violates density-matrix invariants by {defect:.3e} "
            f"(limit {tols.state_repair:.1e})"
        )
    if herm > tols.hermitian or trace > tols.trace or neg > tols.psd:
        warnings.warn(
            f"{name} repaired: defect {defect:.3e} within the repair limit",
            stacklevel=2,
        )
    rho, _ = project_density(m, tols)
    return rho


@dataclass(frozen=True)
class DensityMatrix:
    """Validated state with the diagnostics of its last projection."""

    matrix: np.ndarray = field(repr=False)
    clip_magnitude: float = 0.0
    rank: int = 0

    @classmethod
    def from_matrix(cls, matrix, tols: Tolerances = DEFAULT_TOLS) -> "DensityMatrix":
        rho = validate_density(matrix, tols)
        _, info = project_density(rho, tols)
        return cls(matrix=rho, clip_magnitude=info.clip_magnitude, rank=info.rank)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class IntegratorConfig:
    """Euler-Maruyama step controls."""

    dt: float = 1e-3
    stride: int = 1                      # samples are recorded every ``stride`` steps
    tols: Tolerances = DEFAULT_TOLS
    backend: str = "auto"                # auto | numba | numpy

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


def em_step(
    rho: np.ndarray,
    model: SystemModel,
    law: FeedbackLaw,
    dt: float,
    dw: np.ndarray,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[np.ndarray, ProjectionInfo]:
    """One Euler-Maruyama step of the conditioned state (reference path).

    ``dw`` holds one Gaussian increment of variance ``dt`` per channel; the
    feedback is evaluated at the pre-step state.  The result is projected
    back onto the state space.
    """
    dw = np.asarray(dw, dtype=float)
    if dw.shape != (len(model.channels),):
        raise ValueError(f"expected {len(model.channels)} noise increments, got {dw.shape}")
    u = evaluate(law, rho, model)
    incr = rho + dt * hamiltonian_drift(rho, u, model.h0, model.controls)
    for chan, dwk in zip(model.channels, dw):
        op = chan.scaled
        incr = incr + dt * measurement_drift(rho, op)
        incr = incr + np.sqrt(chan.efficiency) * dwk * measurement_diffusion(rho, op)
    return project_density(incr, tols)


def deterministic_step(
    rho: np.ndarray,
    model: SystemModel,
    law: FeedbackLaw,
    v: np.ndarray,
    dt: float,
    tols: Tolerances = DEFAULT_TOLS,
) -> np.ndarray:
    """One Euler step of the steered deterministic flow.

    ``v`` replaces the noise with one locally bounded steering input per
    channel; the same projection as the stochastic step repairs round-off.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (len(model.channels),):
        raise ValueError(f"expected {len(model.channels)} steering inputs, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("steering inputs must be finite")
    u = evaluate(law, rho, model)
    incr = rho + dt * hamiltonian_drift(rho, u, model.h0, model.controls)
    for chan, vk in zip(model.channels, v):
        op = chan.scaled
        incr = incr + dt * deterministic_drift(rho, op, chan.efficiency)
        incr = incr + dt * np.sqrt(chan.efficiency) * vk * measurement_diffusion(rho, op)
    out, _ = project_density(incr, tols)
    return out


def steer_toward_target(
    rho0: np.ndarray,
    model: SystemModel,
    target: tuple[int, int],
    gain: float,
    dt: float = 1e-5,
    max_steps: int = 200_000,
    stop_fidelity: float = 0.95,
    record_every: int = 100,
    law: FeedbackLaw | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[np.ndarray, np.ndarray]:
    """Drive the deterministic flow toward a target plane.

    Each channel is steered with ``v_i = gain * P_i(rho) / Tr(rho P_target)``
    where ``P_i`` is the channel's mean residual relative to its target
    eigenvalue.  Returns sampled ``(times, fidelities)``.
    """
    from .analysis import fidelity_to, x_mean

    basis = model.basis()
    k, sign = target
    law = FeedbackLaw.zero() if law is None else law
    tables_l = [np.diag(c.operator).real[k - 1] for c in model.z_channels]
    rho = validate_density(rho0, tols)
    times = [0.0]
    fids = [fidelity_to(rho, basis, k, sign)]
    last_step = 0
    for step in range(1, max_steps + 1):
        f = fidelity_to(rho, basis, k, sign)
        if f >= stop_fidelity:
            break
        v = np.zeros(len(model.channels))
        for i, chan in enumerate(model.z_channels):
            mean = float(np.sum(np.diag(chan.operator).real * np.diag(rho).real))
            v[i] = gain * (tables_l[i] - mean) / max(f, 1e-6)
        if model.x_channel is not None:
            v[-1] = gain * (sign * 1.0 - x_mean(rho)) / max(f, 1e-6)
        rho = deterministic_step(rho, model, law, v, dt, tols)
        last_step = step
        if step % record_every == 0:
            times.append(step * dt)
            fids.append(fidelity_to(rho, basis, k, sign))
    if last_step % record_every:
        times.append(last_step * dt)
        fids.append(fidelity_to(rho, basis, k, sign))
    return np.asarray(times), np.asarray(fids)


@dataclass
class TrajectoryResult:
    """Snapshots and diagnostics of one simulated trajectory."""

    times: np.ndarray
    states: np.ndarray          # (n_samples, dim, dim), present when requested
    pair_weights: np.ndarray    # (n_samples, dim/2) plane populations
    purity: np.ndarray
    rank: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    x_mean: np.ndarray
    max_population: np.ndarray  # largest entangled-state overlap per sample
    fidelity: np.ndarray        # overlap with the target plane (NaN without target)
    final_populations: np.ndarray
    clip_max: float
    min_eigenvalue: float
    rank_decreases: int
    first_rank_decrease_step: int
    min_pair_weight: float
    min_x_variance: float
    max_trace_error: float


def simulate_trajectory(
    rho0: np.ndarray,
    model: SystemModel,
    law: FeedbackLaw,
    cfg: IntegratorConfig,
    horizon: float,
    seed: int,
    store_states: bool = True,
) -> TrajectoryResult:
    """Integrate one seeded trajectory and sample it every ``cfg.stride`` steps.

    Deterministic given ``(seed, cfg)``: the Wiener increments come from a
    dedicated stream derived from the seed, independent of the backend's
    threading.
    """
    rho0 = validate_density(rho0, cfg.tols)
    n_steps = int(round(horizon / cfg.dt))
    if n_steps % cfg.stride:
        raise ValueError(f"step count {n_steps} is not a multiple of stride {cfg.stride}")
    dw = _kernels.wiener_increments(seed, 0, n_steps, len(model.channels), cfg.dt)
    out = _kernels.run_ensemble(
        np.asarray([rho0]),
        dw[None, :, :],
        model,
        law,
        cfg.dt,
        cfg.stride,
        backend=cfg.backend,
        tols=cfg.tols,
        store_states=store_states,
    )
    return _trajectory_from_ensemble(out, model, 0, n_steps, cfg)


def _trajectory_from_ensemble(out, model: SystemModel, idx: int, n_steps: int, cfg) -> TrajectoryResult:
    k = _kernels
    series = out.series[idx]
    diag = out.diagnostics[idx]
    if diag[k.DIAG_ABORT] != 0.0:
        raise IntegrationAbort(
            f"trajectory aborted at step {int(diag[k.DIAG_ABORT_STEP])}: eigenvalue "
            f"{diag[k.DIAG_MIN_EIG]:.3e} below the abort tolerance",
            trajectory=idx,
            step=int(diag[k.DIAG_ABORT_STEP]),
        )
    n_samples = series.shape[0]
    times = np.arange(n_samples) * cfg.stride * cfg.dt
    half = model.dim // 2
    return TrajectoryResult(
        times=times,
        states=out.states[idx] if out.states is not None else np.empty((0,)),
        pair_weights=series[:, k.COL_LAMBDA0 : k.COL_LAMBDA0 + half],
        purity=series[:, k.COL_PURITY],
        rank=series[:, k.COL_RANK],
        u1=series[:, k.COL_U1],
        u2=series[:, k.COL_U2],
        x_mean=series[:, k.COL_XMEAN],
        max_population=series[:, k.COL_MAXPOP],
        fidelity=series[:, k.COL_FID],
        final_populations=out.final_populations[idx],
        clip_max=float(diag[k.DIAG_CLIP]),
        min_eigenvalue=float(diag[k.DIAG_MIN_EIG]),
        rank_decreases=int(diag[k.DIAG_RANK_VIOL]),
        first_rank_decrease_step=int(diag[k.DIAG_RANK_FIRST]),
        min_pair_weight=float(diag[k.DIAG_MIN_LAMBDA]),
        min_x_variance=float(diag[k.DIAG_MIN_VX]),
        max_trace_error=float(diag[k.DIAG_TRACE_ERR]),
    )
