"""Ensemble orchestration, CSV emission, and run summaries.

Trajectories are integrated in chunks sized to bound the memory of the
pre-drawn Wiener increments; each trajectory's noise stream is derived from
``(master seed, trajectory index)``, so results do not depend on the chunking
or on how many threads the backend uses.  Ensemble means reduce the
trajectory axis in index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .analysis import (
    RateBounds,
    default_fit_window,
    estimate_exponent,
    rate_bounds,
)
from .config import ScenarioConfig
from .control import FeedbackLaw
from .dynamics import IntegrationAbort, validate_density
from .model import SystemModel
from .tolerances import DEFAULT_TOLS, Tolerances

# bound on the buffered Wiener increments per chunk (~50 MB)
_CHUNK_BYTES = 5e7


@dataclass
class EnsembleResult:
    """Per-trajectory time series plus ensemble aggregates for one scenario run."""

    times: np.ndarray                 # (S,)
    v: np.ndarray                     # (T, S) the run's Lyapunov function
    bures: np.ndarray                 # (T, S) distance to target (or to the entangled set)
    fidelity: np.ndarray              # (T, S) overlap with the target plane (NaN without target)
    u1: np.ndarray                    # (T, S)
    u2: np.ndarray | None             # (T, S) for two-component laws
    ref: np.ndarray                   # (S,) reference curve V(rho0) * exp(exponent * t)
    pair_weights: np.ndarray          # (T, S, dim/2)
    x_means: np.ndarray               # (T, S)
    purity: np.ndarray                # (T, S)
    rank: np.ndarray                  # (T, S)
    final_populations: np.ndarray     # (T, dim)
    diagnostics: np.ndarray           # (T, _kernels.N_DIAG)
    bound_exponent: float | None
    fitted_exponent: float | None
    fit_window: tuple[float, float]
    class_counts: dict = field(default_factory=dict)
    unresolved: int = 0
    rates: RateBounds | None = None
    backend: str = "auto"

    @property
    def mean_v(self) -> np.ndarray:
        return self.v.mean(axis=0)

    @property
    def mean_bures(self) -> np.ndarray:
        return self.bures.mean(axis=0)

    @property
    def mean_fidelity(self) -> np.ndarray:
        return self.fidelity.mean(axis=0)


def _pair_sum(lams: np.ndarray) -> np.ndarray:
    """Sum over unordered plane pairs of sqrt(Lambda_i Lambda_j)."""
    half = lams.shape[-1]
    lams = np.clip(lams, 0.0, None)
    out = np.zeros(lams.shape[:-1])
    for i in range(half):
        for j in range(i + 1, half):
            out += np.sqrt(lams[..., i] * lams[..., j])
    return out


def _reduction_v(lams: np.ndarray, x_means: np.ndarray) -> np.ndarray:
    return _pair_sum(lams) + np.sqrt(np.clip(1.0 - x_means**2, 0.0, None))


def _mixed_v(lams: np.ndarray, x_means: np.ndarray, k: int, sign: int) -> np.ndarray:
    lams = np.clip(lams, 0.0, None)
    keep = [j for j in range(lams.shape[-1]) if j != k - 1]
    return np.sqrt(lams[..., keep]).sum(axis=-1) + np.sqrt(
        np.clip(1.0 - sign * x_means, 0.0, None)
    )


def _law_series(law: FeedbackLaw, lams, x_means, fid):
    """The Lyapunov series matching the feedback family."""
    if law.variant == "zero":
        return _reduction_v(lams, x_means)
    if law.variant == "fidelity_power":
        return np.sqrt(np.clip(1.0 - fid, 0.0, None))
    if law.variant == "mixed_power":
        k, sign = law.target
        return _mixed_v(lams, x_means, k, sign)
    return 1.0 - fid  # two_hamiltonian


def _bound_exponent(law: FeedbackLaw, rates: RateBounds | None) -> float | None:
    """Decay exponent guaranteed for the run's Lyapunov function, if any."""
    if rates is None:
        return None
    if law.variant == "zero":
        return rates.exponent_reduction
    if law.variant == "fidelity_power":
        if rates.rate_plus is not None:
            return rates.exponent_plus
        if rates.rate_minus is not None:
            return rates.exponent_minus
        return None
    if law.variant == "mixed_power":
        return rates.exponent_reduction
    return None  # two_hamiltonian: asymptotic only, no proven rate


def run_ensemble_chunked(
    rho0: np.ndarray,
    model: SystemModel,
    law: FeedbackLaw,
    dt: float,
    n_steps: int,
    stride: int,
    n_traj: int,
    master_seed: int,
    backend: str = "auto",
    tols: Tolerances = DEFAULT_TOLS,
    record_target=None,
) -> _kernels.EnsembleRaw:
    """Integrate ``n_traj`` seeded trajectories from a common initial state."""
    n_chan = len(model.channels)
    chunk = max(1, min(n_traj, int(_CHUNK_BYTES / (n_steps * n_chan * 8 + 1))))
    n_samples = n_steps // stride + 1
    dim = model.dim
    series = np.zeros((n_traj, n_samples, _kernels.COL_LAMBDA0 + dim // 2))
    pops = np.zeros((n_traj, dim))
    diag = np.zeros((n_traj, _kernels.N_DIAG))
    start = 0
    while start < n_traj:
        stop = min(start + chunk, n_traj)
        dws = np.stack(
            [
                _kernels.wiener_increments(master_seed, t, n_steps, n_chan, dt)
                for t in range(start, stop)
            ]
        )
        rho0s = np.broadcast_to(rho0, (stop - start, dim, dim)).copy()
        raw = _kernels.run_ensemble(
            rho0s, dws, model, law, dt, stride, backend=backend, tols=tols,
            record_target=record_target,
        )
        series[start:stop] = raw.series
        pops[start:stop] = raw.final_populations
        diag[start:stop] = raw.diagnostics
        start = stop
    return _kernels.EnsembleRaw(series=series, final_populations=pops, diagnostics=diag, states=None)


def run_scenario(
    cfg: ScenarioConfig,
    law: FeedbackLaw | None = None,
    backend: str = "auto",
    tols: Tolerances = DEFAULT_TOLS,
    classify_threshold: float = 0.99,
) -> EnsembleResult:
    """Integrate the configured ensemble and aggregate it.

    ``law`` overrides the configured feedback (the ``reduce`` command passes
    the zero law).  Raises :class:`IntegrationAbort` when any trajectory
    leaves the state space beyond the abort tolerance.
    """
    model = cfg.build_model()
    law = cfg.feedback if law is None else law
    law.require_compatible(model)
    rho0 = validate_density(cfg.build_rho0(model), tols)
    n_steps = int(round(cfg.horizon / cfg.dt))
    backend = _kernels.resolve_backend(backend)

    raw = run_ensemble_chunked(
        rho0, model, law, cfg.dt, n_steps, cfg.stride, cfg.trajectories,
        cfg.seed, backend=backend, tols=tols, record_target=cfg.target,
    )
    aborted = np.nonzero(raw.diagnostics[:, _kernels.DIAG_ABORT] > 0)[0]
    if aborted.size:
        t_idx = int(aborted[0])
        step = int(raw.diagnostics[t_idx, _kernels.DIAG_ABORT_STEP])
        raise IntegrationAbort(
            f"trajectory {t_idx} aborted at step {step} (t = {step * cfg.dt:.4f}): "
            "state eigenvalue fell below the abort tolerance; reduce dt",
            trajectory=t_idx,
            step=step,
        )

    k = _kernels
    half = model.dim // 2
    times = np.arange(n_steps // cfg.stride + 1) * cfg.stride * cfg.dt
    lams = raw.series[:, :, k.COL_LAMBDA0 : k.COL_LAMBDA0 + half]
    x_means = raw.series[:, :, k.COL_XMEAN]
    fid = raw.series[:, :, k.COL_FID]
    max_pop = raw.series[:, :, k.COL_MAXPOP]

    v = _law_series(law, lams, x_means, fid)
    target = law.target if law.variant != "zero" else cfg.target
    if law.variant != "zero" and law.target is not None:
        bures = np.sqrt(np.clip(2.0 - 2.0 * np.sqrt(np.clip(fid, 0.0, 1.0)), 0.0, None))
    else:
        bures = np.sqrt(np.clip(2.0 - 2.0 * np.sqrt(np.clip(max_pop, 0.0, 1.0)), 0.0, None))

    rates = None
    try:
        rates = rate_bounds(model, target)
    except ValueError:
        pass
    bound = _bound_exponent(law, rates)
    ref = np.full(times.shape, np.nan)
    if bound is not None:
        ref = float(v[:, 0].mean()) * np.exp(bound * times)

    window = default_fit_window(cfg.horizon)
    fitted = None
    series_for_fit = v.mean(axis=0) if law.variant == "zero" else bures.mean(axis=0)
    try:
        fitted = estimate_exponent(times, series_for_fit, window).slope
    except ValueError:
        pass

    basis = model.basis()
    class_counts: dict[tuple[int, int], int] = {lbl: 0 for lbl in basis.labels()}
    unresolved = 0
    for pops_row in raw.final_populations:
        best = int(np.argmax(pops_row))
        if pops_row[best] >= classify_threshold:
            kk = best % half + 1
            sign = 1 if best < half else -1
            class_counts[(kk, sign)] += 1
        else:
            unresolved += 1

    u2 = raw.series[:, :, k.COL_U2] if law.n_controls > 1 else None
    return EnsembleResult(
        times=times,
        v=v,
        bures=bures,
        fidelity=fid,
        u1=raw.series[:, :, k.COL_U1],
        u2=u2,
        ref=ref,
        pair_weights=lams,
        x_means=x_means,
        purity=raw.series[:, :, k.COL_PURITY],
        rank=raw.series[:, :, k.COL_RANK],
        final_populations=raw.final_populations,
        diagnostics=raw.diagnostics,
        bound_exponent=bound,
        fitted_exponent=fitted,
        fit_window=window,
        class_counts=class_counts,
        unresolved=unresolved,
        rates=rates,
        backend=backend,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def emit_csv(result: EnsembleResult, path) -> None:
    """Write the ensemble to CSV.

    Header ``t,traj,V,bures,fidelity,u1[,u2],ref``; one row per (sample time,
    trajectory) followed by per-time aggregate rows with ``traj=mean``.
    Values use decimal notation with 12 significant digits.
    """
    with_u2 = result.u2 is not None
    cols = ["t", "traj", "V", "bures", "fidelity", "u1"] + (["u2"] if with_u2 else []) + ["ref"]
    n_traj, n_samples = result.v.shape
    lines = [",".join(cols)]
    for s in range(n_samples):
        t_txt = _fmt(result.times[s])
        ref_txt = _fmt(result.ref[s])
        for tr in range(n_traj):
            row = [
                t_txt,
                str(tr),
                _fmt(result.v[tr, s]),
                _fmt(result.bures[tr, s]),
                _fmt(result.fidelity[tr, s]),
                _fmt(result.u1[tr, s]),
            ]
            if with_u2:
                row.append(_fmt(result.u2[tr, s]))
            row.append(ref_txt)
            lines.append(",".join(row))
    mean_u2 = result.u2.mean(axis=0) if with_u2 else None
    for s in range(n_samples):
        row = [
            _fmt(result.times[s]),
            "mean",
            _fmt(result.mean_v[s]),
            _fmt(result.mean_bures[s]),
            _fmt(result.mean_fidelity[s]),
            _fmt(result.u1.mean(axis=0)[s]),
        ]
        if with_u2:
            row.append(_fmt(mean_u2[s]))
        row.append(_fmt(result.ref[s]))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_csv(path) -> dict[str, np.ndarray]:
    """Read back a CSV written by :func:`emit_csv` (mean rows excluded)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data: dict[str, list] = {name: [] for name in header}
        means: dict[str, list] = {name: [] for name in header}
        for line in fh:
            parts = line.strip().split(",")
            bucket = means if parts[1] == "mean" else data
            for name, tok in zip(header, parts):
                bucket[name].append(tok if name == "traj" else float(tok))
    out = {name: np.asarray(vals) for name, vals in data.items()}
    out["mean_rows"] = {name: np.asarray(vals) for name, vals in means.items()}
    return out


def summarize(result: EnsembleResult, cfg: ScenarioConfig, law: FeedbackLaw) -> str:
    """Human-readable run summary with both exponents and class counts."""
    lines = [
        f"trajectories      : {result.v.shape[0]} (backend {result.backend})",
        f"horizon / dt      : {cfg.horizon} / {cfg.dt}  (stride {cfg.stride})",
        f"feedback          : {law.variant}"
        + (f", target plane {law.target}" if law.target else ""),
        f"bound exponent    : "
        + (f"{result.bound_exponent:+.6f}" if result.bound_exponent is not None else "none proven"),
        f"fitted exponent   : "
        + (
            f"{result.fitted_exponent:+.6f}  on window {result.fit_window}"
            if result.fitted_exponent is not None
            else "not fitted"
        ),
        f"final mean V      : {result.mean_v[-1]:.6e}",
        "final mean fidelity: "
        + (
            f"{np.mean(result.fidelity[:, -1]):.6f}"
            if not np.all(np.isnan(result.fidelity[:, -1]))
            else "n/a (no target)"
        ),
        f"max projection clip: {result.diagnostics[:, _kernels.DIAG_CLIP].max():.3e}",
    ]
    counts = ", ".join(
        f"({k},{'+' if s > 0 else '-'})={n}" for (k, s), n in sorted(result.class_counts.items())
    )
    lines.append(f"converged classes : {counts}; unresolved={result.unresolved}")
    return "\n".join(lines)


def one_step_generator_estimates(
    rho: np.ndarray,
    model: SystemModel,
    series_fns,
    n_samples: int = 100_000,
    dt: float = 1e-4,
    seed: int = 7,
    backend: str = "auto",
) -> list[tuple[float, float]]:
    """Monte-Carlo estimates of the expected drifts of reduction functionals.

    Runs ``n_samples`` independent single Euler-Maruyama steps without
    control; each ``series_fn(pair_weights, x_mean)`` evaluates a functional
    from the plane populations and the all-x mean of the stepped state.  All
    functionals share the same step ensemble.  Returns one ``(mean, standard
    error)`` of the per-step increment divided by ``dt`` per functional.
    """
    from .analysis import pair_populations, x_mean

    law = FeedbackLaw.zero()
    rho = validate_density(rho)
    n_chan = len(model.channels)
    half = model.dim // 2
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    f0s = [fn(pair_populations(rho), x_mean(rho)) for fn in series_fns]
    increments = np.empty((len(series_fns), n_samples))
    chunk = 20_000
    start = 0
    while start < n_samples:
        stop = min(start + chunk, n_samples)
        dws = rng.standard_normal((stop - start, 1, n_chan)) * math.sqrt(dt)
        rho0s = np.broadcast_to(rho, (stop - start, model.dim, model.dim)).copy()
        raw = _kernels.run_ensemble(rho0s, dws, model, law, dt, 1, backend=backend)
        lams = raw.series[:, 1, _kernels.COL_LAMBDA0 : _kernels.COL_LAMBDA0 + half]
        xms = raw.series[:, 1, _kernels.COL_XMEAN]
        for j, (fn, f0) in enumerate(zip(series_fns, f0s)):
            for i in range(stop - start):
                increments[j, start + i] = (fn(lams[i], xms[i]) - f0) / dt
        start = stop
    return [
        (float(row.mean()), float(row.std(ddof=1) / math.sqrt(n_samples)))
        for row in increments
    ]


def one_step_generator_estimate(
    rho: np.ndarray,
    model: SystemModel,
    series_fn,
    n_samples: int = 100_000,
    dt: float = 1e-4,
    seed: int = 7,
    backend: str = "auto",
) -> tuple[float, float]:
    """Single-functional convenience wrapper of the batched estimator."""
    return one_step_generator_estimates(
        rho, model, [series_fn], n_samples=n_samples, dt=dt, seed=seed, backend=backend
    )[0]
