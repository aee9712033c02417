"""Trajectory-integration kernels.

Two implementations of the same Euler-Maruyama loop live here:

* a numba ``@njit`` kernel (manual loops, LAPACK eigendecomposition per step)
  used for ensembles, parallelized over trajectories with ``prange``;
* a pure-numpy fallback with identical semantics, used when numba is absent
  or when the environment variable ``GHZSTAB_BACKEND=numpy`` requests it.

The two paths are independent codings of the same math and are tested against
each other; bit-for-bit identity across backends is not promised (different
matmul orderings), but runs are deterministic within a backend.

Per recorded sample the kernels store purity, numerical rank, the controller
output, the all-x mean, the largest entangled-state overlap, the target
overlap, and every plane population.  Per trajectory they track the running
projection diagnostics needed by the invariant checks (clip size, most
negative eigenvalue, rank decreases, population/variance floors, trace error).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

_ENV_VAR = "GHZSTAB_BACKEND"

try:
    if os.environ.get(_ENV_VAR, "").strip().lower() == "numpy":
        raise ImportError("numba disabled via " + _ENV_VAR)
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


def resolve_backend(choice: str = "auto") -> str:
    """Pick the integration backend: explicit choice > env flag > availability."""
    choice = (choice or "auto").strip().lower()
    if choice == "auto":
        env = os.environ.get(_ENV_VAR, "").strip().lower()
        choice = env if env in ("numba", "numpy") else "auto"
    if choice == "auto":
        choice = "numba" if HAVE_NUMBA else "numpy"
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    if choice not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {choice!r}")
    return choice


# series columns
COL_PURITY = 0
COL_RANK = 1
COL_U1 = 2
COL_U2 = 3
COL_XMEAN = 4
COL_MAXPOP = 5
COL_FID = 6
COL_LAMBDA0 = 7

# per-trajectory diagnostics
DIAG_CLIP = 0
DIAG_MIN_EIG = 1
DIAG_RANK_VIOL = 2
DIAG_RANK_FIRST = 3
DIAG_MIN_LAMBDA = 4
DIAG_MIN_VX = 5
DIAG_TRACE_ERR = 6
DIAG_ABORT = 7
DIAG_ABORT_STEP = 8
N_DIAG = 9

# feedback-law codes and parameter slots
LAW_ZERO = 0
LAW_FIDELITY = 1
LAW_MIXED = 2
LAW_TWOHAM = 3
P_ALPHA = 0
P_BETA = 1
P_GAMMA = 2
P_DELTA = 3
P_EPS1 = 4
P_EPS2 = 5
P_SIGN = 6
P_LTARGET = 7
N_PARAMS = 8


@njit(cache=True)
def _signed_pow(base, p):
    if p == math.floor(p):
        return base ** int(p)
    if base == 0.0:
        return 0.0
    if base > 0.0:
        return base**p
    return -((-base) ** p)


@njit(cache=True)
def _smoothstep(x, lo, hi):
    if x < lo:
        return 0.0
    if x > hi:
        return 1.0
    return 0.5 * math.sin(math.pi * (2.0 * x - lo - hi) / (2.0 * (hi - lo))) + 0.5


@njit(cache=True)
def _feedback(rho, law_code, params, tgt_a, tgt_b, lz_diag, hvecs):
    """Controller output (u1, u2) for the supported law families."""
    n = rho.shape[0]
    u1 = 0.0
    u2 = 0.0
    if law_code == LAW_ZERO or tgt_a < 0:
        return u1, u2
    sgn = params[P_SIGN]
    fid = 0.5 * (rho[tgt_a, tgt_a].real + rho[tgt_b, tgt_b].real) + sgn * rho[tgt_a, tgt_b].real
    if law_code == LAW_FIDELITY:
        u1 = params[P_ALPHA] * _signed_pow(1.0 - fid, params[P_BETA])
    elif law_code == LAW_MIXED:
        lzm = 0.0
        xm = 0.0
        for i in range(n):
            lzm += lz_diag[i] * rho[i, i].real
            xm += rho[i, n - 1 - i].real
        u1 = params[P_ALPHA] * _signed_pow(params[P_LTARGET] - lzm, params[P_BETA])
        u1 += params[P_GAMMA] * _signed_pow(sgn - xm, params[P_DELTA])
    elif law_code == LAW_TWOHAM:
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        f = min(max(fid, 0.0), 1.0)
        for j in range(hvecs.shape[0]):
            acc = 0.0 + 0.0j
            for i in range(n):
                w_i = (rho[i, tgt_a] + sgn * rho[i, tgt_b]) * inv_sqrt2
                acc += np.conj(hvecs[j, i]) * w_i
            theta = -2.0 * acc.imag  # Tr(i [H_j, rho] P_target)
            if j == 0:
                u1 = params[P_GAMMA] - theta
            else:
                u2 = _smoothstep(f, params[P_EPS1], params[P_EPS2]) * (params[P_GAMMA] - theta)
    return u1, u2


@njit(cache=True)
def _record(row, rho, u1, u2, rank, tgt_a, tgt_b, sgn):
    n = rho.shape[0]
    half = n // 2
    purity = 0.0
    for i in range(n):
        for j in range(n):
            purity += rho[i, j].real ** 2 + rho[i, j].imag ** 2
    xm = 0.0
    for i in range(n):
        xm += rho[i, n - 1 - i].real
    maxpop = 0.0
    for k in range(half):
        a = k
        b = n - 1 - k
        diag = 0.5 * (rho[a, a].real + rho[b, b].real)
        coh = rho[a, b].real
        if diag + coh > maxpop:
            maxpop = diag + coh
        if diag - coh > maxpop:
            maxpop = diag - coh
        row[COL_LAMBDA0 + k] = 2.0 * diag
    row[COL_PURITY] = purity
    row[COL_RANK] = float(rank)
    row[COL_U1] = u1
    row[COL_U2] = u2
    row[COL_XMEAN] = xm
    row[COL_MAXPOP] = maxpop
    if tgt_a >= 0:
        row[COL_FID] = (
            0.5 * (rho[tgt_a, tgt_a].real + rho[tgt_b, tgt_b].real)
            + sgn * rho[tgt_a, tgt_b].real
        )
    else:
        row[COL_FID] = np.nan


@njit(cache=True)
def _sim_one(
    rho0,
    dw,
    h0,
    hams,
    ls,
    sqrt_eta,
    law_code,
    params,
    tgt_a,
    tgt_b,
    lz_diag,
    hvecs,
    dt,
    stride,
    clip_abort,
    rank_tol,
    series,
    pops,
    diag,
    states,
    store_states,
):
    n = rho0.shape[0]
    half = n // 2
    m = ls.shape[0]
    n_ctrl = hams.shape[0]
    n_steps = dw.shape[0]
    sgn = params[P_SIGN]

    rho = rho0.copy()
    w0 = np.linalg.eigvalsh(rho)
    prev_rank = 0
    for i in range(n):
        if w0[i] > rank_tol:
            prev_rank += 1

    clip_max = 0.0
    min_eig = w0[0]
    viol = 0
    first_viol = -1.0
    min_lam = 1.0e300
    min_vx = 1.0e300
    max_terr = 0.0
    aborted = 0.0
    abort_step = -1.0

    u1, u2 = _feedback(rho, law_code, params, tgt_a, tgt_b, lz_diag, hvecs)
    _record(series[0], rho, u1, u2, prev_rank, tgt_a, tgt_b, sgn)
    if store_states:
        states[0, :, :] = rho
    for k in range(half):
        lamk = rho[k, k].real + rho[n - 1 - k, n - 1 - k].real
        if lamk < min_lam:
            min_lam = lamk
    xm0 = 0.0
    for i in range(n):
        xm0 += rho[i, n - 1 - i].real
    if 1.0 - xm0 * xm0 < min_vx:
        min_vx = 1.0 - xm0 * xm0

    row = 1
    for step in range(n_steps):
        u1, u2 = _feedback(rho, law_code, params, tgt_a, tgt_b, lz_diag, hvecs)

        if n_ctrl == 0 or (u1 == 0.0 and u2 == 0.0):
            t0 = h0 @ rho
        else:
            heff = h0.copy()
            if u1 != 0.0:
                heff += u1 * hams[0]
            if n_ctrl > 1 and u2 != 0.0:
                heff += u2 * hams[1]
            t0 = heff @ rho
        acc = rho + (-1j * dt) * (t0 - np.ascontiguousarray(t0.conj().T))
        for c in range(m):
            lc = ls[c]
            t1 = lc @ rho
            t1d = np.ascontiguousarray(t1.conj().T)
            t3 = lc @ t1
            acc += dt * (t1 @ lc - 0.5 * (t3 + np.ascontiguousarray(t3.conj().T)))
            trc = 0.0
            for i in range(n):
                trc += t1[i, i].real
            acc += (sqrt_eta[c] * dw[step, c]) * (t1 + t1d - (2.0 * trc) * rho)
        acc = 0.5 * (acc + np.ascontiguousarray(acc.conj().T))

        w, uvec = np.linalg.eigh(acc)
        if w[0] < min_eig:
            min_eig = w[0]
        if w[0] < -clip_abort:
            aborted = 1.0
            abort_step = float(step + 1)
            break
        if -w[0] > clip_max:
            clip_max = -w[0]
        tsum = 0.0
        for i in range(n):
            tsum += w[i]
        if abs(tsum - 1.0) > max_terr:
            max_terr = abs(tsum - 1.0)
        wc = np.maximum(w, 0.0)
        tot = wc.sum()
        rank = 0
        for i in range(n):
            if w[i] > rank_tol:
                rank += 1
        if rank < prev_rank:
            viol += 1
            if first_viol < 0.0:
                first_viol = float(step + 1)
        prev_rank = rank
        rho = ((uvec * wc) @ np.ascontiguousarray(uvec.conj().T)) / tot
        rho = 0.5 * (rho + np.ascontiguousarray(rho.conj().T))

        for k in range(half):
            lamk = rho[k, k].real + rho[n - 1 - k, n - 1 - k].real
            if lamk < min_lam:
                min_lam = lamk
        xm = 0.0
        for i in range(n):
            xm += rho[i, n - 1 - i].real
        vx = 1.0 - xm * xm
        if vx < min_vx:
            min_vx = vx

        if (step + 1) % stride == 0:
            su1, su2 = _feedback(rho, law_code, params, tgt_a, tgt_b, lz_diag, hvecs)
            _record(series[row], rho, su1, su2, rank, tgt_a, tgt_b, sgn)
            if store_states:
                states[row, :, :] = rho
            row += 1

    for k in range(half):
        a = k
        b = n - 1 - k
        d = 0.5 * (rho[a, a].real + rho[b, b].real)
        coh = rho[a, b].real
        pops[k] = d + coh
        pops[half + k] = d - coh

    diag[DIAG_CLIP] = clip_max
    diag[DIAG_MIN_EIG] = min_eig
    diag[DIAG_RANK_VIOL] = float(viol)
    diag[DIAG_RANK_FIRST] = first_viol
    diag[DIAG_MIN_LAMBDA] = min_lam
    diag[DIAG_MIN_VX] = min_vx
    diag[DIAG_TRACE_ERR] = max_terr
    diag[DIAG_ABORT] = aborted
    diag[DIAG_ABORT_STEP] = abort_step


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _sim_chunk(
        rho0s,
        dws,
        h0,
        hams,
        ls,
        sqrt_eta,
        law_code,
        params,
        tgt_a,
        tgt_b,
        lz_diag,
        hvecs,
        dt,
        stride,
        clip_abort,
        rank_tol,
        series,
        pops,
        diag,
        states,
        store_states,
    ):
        for t in prange(rho0s.shape[0]):
            _sim_one(
                rho0s[t],
                dws[t],
                h0,
                hams,
                ls,
                sqrt_eta,
                law_code,
                params,
                tgt_a,
                tgt_b,
                lz_diag,
                hvecs,
                dt,
                stride,
                clip_abort,
                rank_tol,
                series[t],
                pops[t],
                diag[t],
                states[t],
                store_states,
            )


def _sim_one_numpy(
    rho0,
    dw,
    h0,
    hams,
    ls,
    sqrt_eta,
    law_code,
    params,
    tgt_a,
    tgt_b,
    lz_diag,
    hvecs,
    dt,
    stride,
    clip_abort,
    rank_tol,
    series,
    pops,
    diag,
    states,
    store_states,
):
    """Vectorized-numpy rendition of ``_sim_one``; independent of numba."""
    n = rho0.shape[0]
    half = n // 2
    n_ctrl = hams.shape[0]
    n_steps = dw.shape[0]
    sgn = params[P_SIGN]
    anti = np.arange(n)[::-1]

    def feedback(rho):
        if law_code == LAW_ZERO or tgt_a < 0:
            return 0.0, 0.0
        fid = (
            0.5 * (rho[tgt_a, tgt_a].real + rho[tgt_b, tgt_b].real)
            + sgn * rho[tgt_a, tgt_b].real
        )
        if law_code == LAW_FIDELITY:
            return params[P_ALPHA] * _np_signed_pow(1.0 - fid, params[P_BETA]), 0.0
        if law_code == LAW_MIXED:
            lzm = float(np.sum(lz_diag * np.diag(rho).real))
            xm = float(np.sum(rho[np.arange(n), anti].real))
            u = params[P_ALPHA] * _np_signed_pow(params[P_LTARGET] - lzm, params[P_BETA])
            u += params[P_GAMMA] * _np_signed_pow(sgn - xm, params[P_DELTA])
            return u, 0.0
        # two-component law
        f = min(max(fid, 0.0), 1.0)
        w = (rho[:, tgt_a] + sgn * rho[:, tgt_b]) / np.sqrt(2.0)
        thetas = [-2.0 * np.imag(np.vdot(hvecs[j], w)) for j in range(hvecs.shape[0])]
        u1 = params[P_GAMMA] - thetas[0]
        u2 = _np_smoothstep(f, params[P_EPS1], params[P_EPS2]) * (params[P_GAMMA] - thetas[1])
        return u1, u2

    def record(row, rho, u1, u2, rank):
        d = np.diag(rho).real
        row[COL_PURITY] = float(np.sum(np.abs(rho) ** 2))
        row[COL_RANK] = float(rank)
        row[COL_U1] = u1
        row[COL_U2] = u2
        row[COL_XMEAN] = float(np.sum(rho[np.arange(n), anti].real))
        lam = d[:half] + d[half:][::-1]
        coh = rho[np.arange(half), anti[:half]].real
        pops_all = np.concatenate([0.5 * lam + coh, 0.5 * lam - coh])
        row[COL_MAXPOP] = float(np.max(pops_all))
        if tgt_a >= 0:
            row[COL_FID] = (
                0.5 * (rho[tgt_a, tgt_a].real + rho[tgt_b, tgt_b].real)
                + sgn * rho[tgt_a, tgt_b].real
            )
        else:
            row[COL_FID] = np.nan
        row[COL_LAMBDA0 : COL_LAMBDA0 + half] = lam

    rho = rho0.copy()
    w0 = np.linalg.eigvalsh(rho)
    prev_rank = int(np.count_nonzero(w0 > rank_tol))
    clip_max, min_eig, max_terr = 0.0, float(w0[0]), 0.0
    viol, first_viol = 0, -1.0
    aborted, abort_step = 0.0, -1.0

    def lam_min(rho):
        d = np.diag(rho).real
        return float(np.min(d[:half] + d[half:][::-1]))

    def vx_of(rho):
        xm = float(np.sum(rho[np.arange(n), anti].real))
        return 1.0 - xm * xm

    min_lam = lam_min(rho)
    min_vx = vx_of(rho)

    u1, u2 = feedback(rho)
    record(series[0], rho, u1, u2, prev_rank)
    if store_states:
        states[0] = rho

    row = 1
    for step in range(n_steps):
        u1, u2 = feedback(rho)
        heff = h0
        if n_ctrl and (u1 != 0.0 or u2 != 0.0):
            heff = h0 + u1 * hams[0]
            if n_ctrl > 1 and u2 != 0.0:
                heff = heff + u2 * hams[1]
        t0 = heff @ rho
        acc = rho + (-1j * dt) * (t0 - t0.conj().T)
        for c in range(ls.shape[0]):
            lc = ls[c]
            t1 = lc @ rho
            t3 = lc @ t1
            acc = acc + dt * (t1 @ lc - 0.5 * (t3 + t3.conj().T))
            trc = np.trace(t1).real
            acc = acc + (sqrt_eta[c] * dw[step, c]) * (t1 + t1.conj().T - 2.0 * trc * rho)
        acc = 0.5 * (acc + acc.conj().T)
        w, uvec = np.linalg.eigh(acc)
        min_eig = min(min_eig, float(w[0]))
        if w[0] < -clip_abort:
            aborted, abort_step = 1.0, float(step + 1)
            break
        clip_max = max(clip_max, max(0.0, -float(w[0])))
        max_terr = max(max_terr, abs(float(w.sum()) - 1.0))
        wc = np.maximum(w, 0.0)
        rank = int(np.count_nonzero(w > rank_tol))
        if rank < prev_rank:
            viol += 1
            if first_viol < 0:
                first_viol = float(step + 1)
        prev_rank = rank
        rho = (uvec * wc) @ uvec.conj().T / float(wc.sum())
        rho = 0.5 * (rho + rho.conj().T)
        min_lam = min(min_lam, lam_min(rho))
        min_vx = min(min_vx, vx_of(rho))
        if (step + 1) % stride == 0:
            su1, su2 = feedback(rho)
            record(series[row], rho, su1, su2, rank)
            if store_states:
                states[row] = rho
            row += 1

    d = np.diag(rho).real
    lam = d[:half] + d[half:][::-1]
    coh = rho[np.arange(half), anti[:half]].real
    pops[:half] = 0.5 * lam + coh
    pops[half:] = 0.5 * lam - coh
    diag[:] = (
        clip_max,
        min_eig,
        float(viol),
        first_viol,
        min_lam,
        min_vx,
        max_terr,
        aborted,
        abort_step,
    )


def _np_signed_pow(base: float, p: float) -> float:
    if float(p).is_integer():
        return float(base) ** int(p)
    return math.copysign(abs(base) ** p, base) if base != 0.0 else 0.0


def _np_smoothstep(x: float, lo: float, hi: float) -> float:
    if x < lo:
        return 0.0
    if x > hi:
        return 1.0
    return 0.5 * math.sin(math.pi * (2.0 * x - lo - hi) / (2.0 * (hi - lo))) + 0.5


def wiener_increments(
    master_seed: int, trajectory: int, n_steps: int, n_channels: int, dt: float
) -> np.ndarray:
    """Gaussian increments of variance dt from a per-trajectory substream.

    The stream for trajectory ``i`` is derived from ``(master_seed, i)`` and
    does not depend on worker scheduling or on how many trajectories run.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(trajectory,))
    rng = np.random.default_rng(ss)
    return rng.standard_normal((n_steps, n_channels)) * math.sqrt(dt)


@dataclass
class EnsembleRaw:
    """Raw kernel output for a batch of trajectories."""

    series: np.ndarray             # (T, n_samples, 7 + dim/2)
    final_populations: np.ndarray  # (T, dim)
    diagnostics: np.ndarray        # (T, N_DIAG)
    states: np.ndarray | None     # (T, n_samples, dim, dim) when requested


def _law_arrays(model, law, record_target=None):
    from .control import FeedbackLaw  # local import to avoid a cycle

    assert isinstance(law, FeedbackLaw)
    code = {"zero": LAW_ZERO, "fidelity_power": LAW_FIDELITY, "mixed_power": LAW_MIXED,
            "two_hamiltonian": LAW_TWOHAM}[law.variant]
    params = np.zeros(N_PARAMS)
    params[P_ALPHA] = law.alpha
    params[P_BETA] = law.beta
    params[P_GAMMA] = law.gamma
    params[P_DELTA] = law.delta
    params[P_EPS1] = law.eps1
    params[P_EPS2] = law.eps2
    dim = model.dim
    lz_diag = np.diag(model.lz_total).real.copy()
    n_ctrl = len(model.controls)
    hvecs = np.zeros((n_ctrl, dim), dtype=np.complex128)
    # the recorded fidelity column may track a target even for the zero law
    target = law.target if law.target is not None else record_target
    if target is not None:
        k, sign = target
        params[P_SIGN] = float(sign)
        params[P_LTARGET] = lz_diag[k - 1]
        tgt_a, tgt_b = k - 1, dim - k
        v = model.basis().vector(k, sign)
        for j, h in enumerate(model.controls):
            hvecs[j] = h @ v
    else:
        tgt_a = tgt_b = -1
    return code, params, tgt_a, tgt_b, lz_diag, hvecs


def run_ensemble(
    rho0s: np.ndarray,
    dws: np.ndarray,
    model,
    law,
    dt: float,
    stride: int,
    backend: str = "auto",
    tols=None,
    store_states: bool = False,
    record_target=None,
) -> EnsembleRaw:
    """Integrate a batch of trajectories with pre-drawn Wiener increments.

    ``rho0s`` has shape (T, dim, dim) and ``dws`` (T, n_steps, n_channels);
    ``n_steps`` must be a multiple of ``stride``.
    """
    from .tolerances import DEFAULT_TOLS

    tols = DEFAULT_TOLS if tols is None else tols
    backend = resolve_backend(backend)
    rho0s = np.ascontiguousarray(rho0s, dtype=np.complex128)
    dws = np.ascontiguousarray(dws, dtype=np.float64)
    n_traj, n_steps, n_chan = dws.shape
    if rho0s.shape[0] != n_traj:
        raise ValueError("rho0s and dws disagree on the trajectory count")
    if n_chan != len(model.channels):
        raise ValueError("noise channels do not match the model")
    if n_steps % stride:
        raise ValueError(f"step count {n_steps} is not a multiple of stride {stride}")
    dim = model.dim
    n_samples = n_steps // stride + 1
    n_cols = COL_LAMBDA0 + dim // 2

    h0 = np.ascontiguousarray(model.h0)
    hams = (
        np.ascontiguousarray(np.stack(model.controls))
        if model.controls
        else np.zeros((0, dim, dim), dtype=np.complex128)
    )
    ls = np.ascontiguousarray(np.stack([c.scaled for c in model.channels]))
    sqrt_eta = np.array([math.sqrt(c.efficiency) for c in model.channels])
    code, params, tgt_a, tgt_b, lz_diag, hvecs = _law_arrays(model, law, record_target)

    series = np.zeros((n_traj, n_samples, n_cols))
    pops = np.zeros((n_traj, dim))
    diag = np.zeros((n_traj, N_DIAG))
    states = np.zeros(
        (n_traj, n_samples if store_states else 0, dim, dim), dtype=np.complex128
    )

    args = (
        h0, hams, ls, sqrt_eta, code, params, tgt_a, tgt_b, lz_diag, hvecs,
        float(dt), int(stride), tols.clip_abort, tols.rank_eigenvalue,
    )
    if backend == "numba":
        _sim_chunk(rho0s, dws, *args, series, pops, diag, states, store_states)
    else:
        for t in range(n_traj):
            _sim_one_numpy(
                rho0s[t], dws[t], *args, series[t], pops[t], diag[t], states[t], store_states
            )
    return EnsembleRaw(
        series=series,
        final_populations=pops,
        diagnostics=diag,
        states=states if store_states else None,
    )
