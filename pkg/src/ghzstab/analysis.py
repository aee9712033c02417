"""Scalar functionals of the state and rate analysis.

Plane populations, measurement variances, Bures distances, the three Lyapunov
functions used to certify convergence, closed-form expected drifts of the
reduction functionals, rate-bound constants, empirical exponent fitting, and
limit-state classification.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import GhzBasis, SystemModel, spectral_data, z_channel_tables
from .qmat import as_complex_matrix, trace_product
from .tolerances import DEFAULT_TOLS


def pair_population(rho: np.ndarray, k: int) -> float:
    """Population of entangled plane ``k``: the two mirrored diagonal entries."""
    dim = rho.shape[0]
    if not 1 <= k <= dim // 2:
        raise ValueError(f"plane index {k} out of range [1, {dim // 2}]")
    return float(rho[k - 1, k - 1].real + rho[dim - k, dim - k].real)


def pair_populations(rho: np.ndarray) -> np.ndarray:
    """All plane populations; sums to Tr(rho)."""
    d = np.diag(rho).real
    half = d.size // 2
    return d[:half] + d[half:][::-1]


def x_mean(rho: np.ndarray) -> float:
    """Expectation of the all-qubit sigma_x observable (antidiagonal trace)."""
    dim = rho.shape[0]
    return float(sum(rho[i, dim - 1 - i] for i in range(dim)).real)


def x_variance(rho: np.ndarray) -> float:
    """1 - <X>^2 for the unit-spectrum all-x observable; in [0, 1]."""
    m = x_mean(rho)
    return float(1.0 - m * m)


def operator_variance(rho: np.ndarray, op: np.ndarray) -> float:
    """Tr(L^2 rho) - Tr(L rho)^2; zero exactly on eigenspace-supported states."""
    op = as_complex_matrix(op)
    second = trace_product(op @ op, rho).real
    first = trace_product(op, rho).real
    return float(second - first * first)


def fidelity_to(rho: np.ndarray, basis: GhzBasis, k: int, sign: int) -> float:
    """Overlap Tr(rho P) with the (k, sign) entangled projector."""
    a, b = basis.pair_positions(k)
    return float(0.5 * (rho[a, a].real + rho[b, b].real) + sign * rho[a, b].real)


def ghz_populations(rho: np.ndarray, basis: GhzBasis) -> np.ndarray:
    """Overlaps with every entangled projector, ordered like the basis columns."""
    half = basis.dim // 2
    out = np.empty(basis.dim)
    for k in range(1, half + 1):
        a, b = basis.pair_positions(k)
        diag = 0.5 * (rho[a, a].real + rho[b, b].real)
        coh = rho[a, b].real
        out[k - 1] = diag + coh
        out[half + k - 1] = diag - coh
    return out


def _is_pure_projector(sigma: np.ndarray, tol: float) -> bool:
    return (
        abs(np.trace(sigma).real - 1.0) <= 1e-9
        and float(np.max(np.abs(sigma @ sigma - sigma))) <= tol
    )


def bures_distance(rho: np.ndarray, sigma: np.ndarray, tol: float = 1e-8) -> float:
    """Bures distance to a pure state: sqrt(2 - 2 sqrt(Tr(rho sigma)))."""
    sigma = as_complex_matrix(sigma)
    if not _is_pure_projector(sigma, tol):
        raise ValueError("bures_distance requires a pure (rank-1 projector) second argument")
    overlap = max(trace_product(rho, sigma).real, 0.0)
    return math.sqrt(max(2.0 - 2.0 * math.sqrt(overlap), 0.0))


def bures_to_set(rho: np.ndarray, states) -> float:
    """Minimum Bures distance to a finite family of pure states."""
    states = list(states)
    if not states:
        raise ValueError("bures_to_set needs at least one state")
    return min(bures_distance(rho, s) for s in states)


def bures_from_fidelity(f: float) -> float:
    """Distance corresponding to overlap ``f`` with a pure state."""
    return math.sqrt(max(2.0 - 2.0 * math.sqrt(min(max(f, 0.0), 1.0)), 0.0))


class LyapunovKind(enum.Enum):
    REDUCTION = "reduction"
    FIDELITY = "fidelity"
    MIXED = "mixed"


def reduction_lyapunov(rho: np.ndarray) -> float:
    """Sum over unordered plane pairs of sqrt(Lambda_i Lambda_j) plus sqrt of
    the x-variance; zero exactly on the entangled states.

    The pair sum counts each unordered pair once, which rescales the ordered
    convention by a constant and leaves every decay exponent unchanged.
    """
    lam = np.clip(pair_populations(rho), 0.0, None)
    half = lam.size
    total = 0.0
    for i in range(half):
        for j in range(i + 1, half):
            total += math.sqrt(lam[i] * lam[j])
    return total + math.sqrt(max(x_variance(rho), 0.0))


def fidelity_lyapunov(rho: np.ndarray, basis: GhzBasis, k: int, sign: int) -> float:
    """sqrt(1 - overlap with the target); vanishes only at the target."""
    f = fidelity_to(rho, basis, k, sign)
    return math.sqrt(max(1.0 - f, 0.0))


def mixed_lyapunov(rho: np.ndarray, basis: GhzBasis, k: int, sign: int) -> float:
    """Sum of sqrt(Lambda_j) over non-target planes plus sqrt(1 - sign <X>)."""
    lam = np.clip(pair_populations(rho), 0.0, None)
    total = sum(math.sqrt(lam[j]) for j in range(lam.size) if j != k - 1)
    return total + math.sqrt(max(1.0 - sign * x_mean(rho), 0.0))


def lyapunov(
    kind: LyapunovKind,
    rho: np.ndarray,
    basis: GhzBasis | None = None,
    target: tuple[int, int] | None = None,
) -> float:
    if kind is LyapunovKind.REDUCTION:
        return reduction_lyapunov(rho)
    if basis is None or target is None:
        raise ValueError(f"{kind.value} Lyapunov function needs a basis and a target")
    k, sign = target
    if kind is LyapunovKind.FIDELITY:
        return fidelity_lyapunov(rho, basis, k, sign)
    return mixed_lyapunov(rho, basis, k, sign)


def pair_generator(rho: np.ndarray, i: int, j: int, model: SystemModel) -> float:
    """Expected instantaneous drift of sqrt(Lambda_i Lambda_j) without control.

    Closed form from the Ito rule applied to the plane populations: the
    z-channels contribute -(eta M / 2)(l_i - l_j)^2 and the x-channel
    contributes -(eta M / 2)(w_i - w_j)^2, where ``w_k`` is the relative real
    coherence 2 Re(rho_{k, mirror}) / Lambda_k.  Returns 0 on the invariant
    set where either population vanishes.
    """
    if i == j:
        raise ValueError("pair_generator needs two distinct planes")
    dim = model.dim
    li = pair_population(rho, i)
    lj = pair_population(rho, j)
    if li <= 0.0 or lj <= 0.0:
        return 0.0
    root = math.sqrt(li * lj)
    tables = z_channel_tables(model)
    total = 0.0
    for c_idx, chan in enumerate(model.z_channels):
        diff = tables[c_idx, i - 1] - tables[c_idx, j - 1]
        total += chan.rate * diff * diff / 2.0
    xc = model.x_channel
    if xc is not None:
        wi = 2.0 * rho[i - 1, dim - i].real / li
        wj = 2.0 * rho[j - 1, dim - j].real / lj
        total += xc.rate * (wi - wj) ** 2 / 2.0
    return -root * total


def x_variance_generator(rho: np.ndarray, model: SystemModel) -> float:
    """Expected instantaneous drift of sqrt(x-variance) without control.

    Equals -2 (eta M)_x sqrt(Vx) - 2 sum_z eta_z Delta_z^2 / Vx^{3/2} with
    ``Delta_z = Tr(L_z L_x rho) - Tr(L_z rho) Tr(L_x rho)`` over the scaled
    z operators.  Defined as 0 on the invariant set Vx = 0.
    """
    xc = model.x_channel
    if xc is None:
        raise ValueError("x_variance_generator needs an x-type channel")
    vx = x_variance(rho)
    if vx <= DEFAULT_TOLS.log_floor:
        return 0.0
    xm = x_mean(rho)
    lx = xc.operator
    total = 2.0 * xc.rate * math.sqrt(vx)
    for chan in model.z_channels:
        ls = chan.scaled
        delta = trace_product(ls @ lx, rho).real - trace_product(ls, rho).real * xm
        total += 2.0 * chan.efficiency * delta * delta / vx**1.5
    return -total


@dataclass(frozen=True)
class RateBounds:
    """Guaranteed decay-rate constants for a model and target plane."""

    reduction_rate: float | None        # min(gamma_z * gap^2 / (2 m_z), 2 (eta M)_x)
    reduction_rate_z: float             # gamma_z * gap^2 / (2 m_z) alone
    c_plus: float | None
    c_minus: float | None
    rate_plus: float | None             # gamma_all * min(c_plus, 1)^2, when c_plus > 0
    rate_minus: float | None            # gamma_all * max(c_minus, -1)^2, when c_minus < 0
    gamma_z: float
    gamma_all: float
    min_gap: float

    @property
    def exponent_reduction(self) -> float | None:
        return None if self.reduction_rate is None else -self.reduction_rate

    @property
    def exponent_plus(self) -> float | None:
        return None if self.rate_plus is None else -2.0 * self.rate_plus

    @property
    def exponent_minus(self) -> float | None:
        return None if self.rate_minus is None else -2.0 * self.rate_minus


def rate_bounds(model: SystemModel, target: tuple[int, int] | None = None) -> RateBounds:
    """Closed-form rate constants; requires pairwise-distinct plane eigenvalues."""
    spec = spectral_data(model, target)
    if spec.min_gap is None:
        raise ValueError(f"duplicate plane eigenvalues {spec.duplicates}; rates undefined")
    m_z = len(model.z_channels)
    rate_z = spec.gamma_z * spec.min_gap**2 / (2.0 * m_z)
    xc = model.x_channel
    reduction = min(rate_z, 2.0 * xc.rate) if xc is not None else None
    rate_plus = rate_minus = None
    if spec.c_plus is not None and spec.c_plus > 0:
        rate_plus = spec.gamma_all * min(spec.c_plus, 1.0) ** 2
    if spec.c_minus is not None and spec.c_minus < 0:
        rate_minus = spec.gamma_all * max(spec.c_minus, -1.0) ** 2
    return RateBounds(
        reduction_rate=reduction,
        reduction_rate_z=rate_z,
        c_plus=spec.c_plus,
        c_minus=spec.c_minus,
        rate_plus=rate_plus,
        rate_minus=rate_minus,
        gamma_z=spec.gamma_z,
        gamma_all=spec.gamma_all,
        min_gap=spec.min_gap,
    )


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of log(value) against time."""

    slope: float
    intercept: float
    n_points: int
    clamped: bool  # true when non-positive values were floored before the fit


def estimate_exponent(
    times: np.ndarray,
    values: np.ndarray,
    window: tuple[float, float] | None = None,
    floor: float = DEFAULT_TOLS.log_floor,
) -> ExponentFit:
    """Fit the decay exponent of a positive series on a time window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ValueError("times and values must have the same shape")
    if window is not None:
        lo, hi = window
        mask = (times >= lo) & (times <= hi)
        times, values = times[mask], values[mask]
    if times.size < 10:
        raise ValueError(f"exponent fit needs at least 10 points, got {times.size}")
    clamped = bool(np.any(values < floor))
    logs = np.log(np.clip(values, floor, None))
    slope, intercept = np.polyfit(times, logs, 1)
    return ExponentFit(float(slope), float(intercept), int(times.size), clamped)


def default_fit_window(horizon: float) -> tuple[float, float]:
    """Last two thirds of the horizon, skipping the transient."""
    return (horizon / 3.0, horizon)


def classify_limit(
    rho: np.ndarray,
    basis: GhzBasis,
    threshold: float = 0.99,
) -> tuple[int, int] | None:
    """The unique entangled state with overlap >= threshold, else ``None``."""
    if not 0.5 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0.5, 1), got {threshold}")
    pops = ghz_populations(rho, basis)
    best = int(np.argmax(pops))
    if pops[best] < threshold:
        return None
    half = basis.dim // 2
    k = best % half + 1
    sign = 1 if best < half else -1
    return (k, sign)


def noise_coefficients(
    value_fn,
    rho: np.ndarray,
    model: SystemModel,
    step: float = 1e-6,
    floor: float = 1e-6,
) -> np.ndarray:
    """Per-channel sensitivity of log V along the diffusion directions.

    ``g_i = sqrt(eta_i) * (V(rho + h G_i) - V(rho - h G_i)) / (2 h V(rho))``
    by central differences; ``value_fn`` maps a state to V(rho) > 0.  Values
    below ``floor`` count as being on the zero set (square-root functions
    only reach ~1e-8 there in floating point) and raise.
    """
    from .dynamics import measurement_diffusion

    v0 = value_fn(rho)
    if v0 <= floor:
        raise ValueError("noise coefficients are undefined where the function vanishes")
    out = np.empty(len(model.channels))
    for idx, chan in enumerate(model.channels):
        g = measurement_diffusion(rho, chan.scaled)
        plus = value_fn(rho + step * g)
        minus = value_fn(rho - step * g)
        out[idx] = math.sqrt(chan.efficiency) * (plus - minus) / (2.0 * step * v0)
    return out


def reduction_sandwich_constants(dim: int) -> tuple[float, float]:
    """Lower/upper constants tying the reduction function to the Bures distance."""
    return 1.0 / 8.0, dim * (dim / 2.0 - 1.0) + 4.0


def fidelity_sandwich_constants() -> tuple[float, float]:
    """Exact bounds: sqrt(1-F) lies between (sqrt2/2) d_B and d_B."""
    return math.sqrt(2.0) / 2.0, 1.0


def mixed_sandwich_constants(dim: int) -> tuple[float, float]:
    """Bounds for the mixed function.

    Upper constant from sum sqrt(Lambda_j) <= sqrt(dim/2 - 1) sqrt(1 - F) and
    1 - sign <X> <= 2 (1 - F), both against d_B^2 / 2 <= 1 - F <= d_B^2.
    """
    return math.sqrt(2.0) / 2.0, math.sqrt(dim / 2.0 - 1.0) + math.sqrt(2.0)

