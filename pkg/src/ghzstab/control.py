"""Feedback laws driving the state toward a chosen entangled target.

Four controller families are provided:

* ``zero`` — no drive (measurement-only runs);
* ``fidelity_power`` — ``alpha * (1 - F)^beta`` with the target overlap F;
* ``mixed_power`` — power laws in the z-sum and x residual means;
* ``two_hamiltonian`` — two components for z-only measurement setups, the
  second gated by a smoothstep of the target overlap.

Laws are pure functions of the state; ``evaluate`` returns one value per
control Hamiltonian of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import fidelity_to, x_mean
from .model import SystemModel
from .qmat import as_complex_matrix, trace_product
from .tolerances import DEFAULT_TOLS, Tolerances

VARIANTS = ("zero", "fidelity_power", "mixed_power", "two_hamiltonian")


def signed_power(base: float, exponent: float) -> float:
    """x^p for integer p, sign(x)|x|^p otherwise (keeps odd-power continuity)."""
    if float(exponent).is_integer():
        return float(base) ** int(exponent)
    return math.copysign(abs(base) ** exponent, base) if base != 0 else 0.0


def smoothstep(x: float, lo: float, hi: float) -> float:
    """C^1 ramp: 0 below ``lo``, half-sine blend on [lo, hi), 1 above ``hi``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"smoothstep argument must lie in [0, 1], got {x}")
    if not 0.0 < lo < hi < 1.0:
        raise ValueError(f"smoothstep thresholds need 0 < lo < hi < 1, got {lo}, {hi}")
    if x < lo:
        return 0.0
    if x > hi:
        return 1.0
    return 0.5 * math.sin(math.pi * (2.0 * x - lo - hi) / (2.0 * (hi - lo))) + 0.5


@dataclass(frozen=True)
class FeedbackLaw:
    """Controller family plus its parameters and target plane."""

    variant: str
    target: tuple[int, int] | None = None
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0
    eps1: float = 0.1
    eps2: float = 0.6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown feedback variant {self.variant!r}")
        if self.variant != "zero" and self.target is None:
            raise ValueError(f"{self.variant} law requires a target")
        if self.variant == "fidelity_power":
            if not (self.alpha > 0 and self.beta > 1):
                raise ValueError("fidelity_power needs alpha > 0 and beta > 1")
        elif self.variant == "mixed_power":
            if not (self.alpha > 0 and self.beta > 1 and self.gamma > 0 and self.delta > 1):
                raise ValueError("mixed_power needs alpha, gamma > 0 and beta, delta > 1")
        elif self.variant == "two_hamiltonian":
            if not 0.0 < self.eps1 < self.eps2 < 1.0:
                raise ValueError("two_hamiltonian needs 0 < eps1 < eps2 < 1")

    @classmethod
    def zero(cls) -> "FeedbackLaw":
        return cls(variant="zero")

    @classmethod
    def fidelity_power(cls, alpha: float, beta: float, target: tuple[int, int]) -> "FeedbackLaw":
        return cls(variant="fidelity_power", target=target, alpha=alpha, beta=beta)

    @classmethod
    def mixed_power(
        cls, alpha: float, beta: float, gamma: float, delta: float, target: tuple[int, int]
    ) -> "FeedbackLaw":
        return cls(
            variant="mixed_power", target=target, alpha=alpha, beta=beta, gamma=gamma, delta=delta
        )

    @classmethod
    def two_hamiltonian(
        cls,
        gamma: float,
        target: tuple[int, int],
        eps1: float = 0.1,
        eps2: float = 0.6,
    ) -> "FeedbackLaw":
        return cls(variant="two_hamiltonian", target=target, gamma=gamma, eps1=eps1, eps2=eps2)

    @property
    def n_controls(self) -> int:
        return {"zero": 0, "fidelity_power": 1, "mixed_power": 1, "two_hamiltonian": 2}[
            self.variant
        ]

    def require_compatible(self, model: SystemModel) -> None:
        if self.variant != "zero" and len(model.controls) < self.n_controls:
            raise ValueError(
                f"{self.variant} law needs {self.n_controls} control Hamiltonian(s), "
                f"model has {len(model.controls)}"
            )
        if self.target is not None and not 1 <= self.target[0] <= model.dim // 2:
            raise ValueError(f"target plane {self.target[0]} out of range")


def control_overlap(rho: np.ndarray, hamiltonian: np.ndarray, target_proj: np.ndarray, u: float) -> float:
    """u * Tr(i [H, rho] P_target); the drive's first-order effect on fidelity."""
    h = as_complex_matrix(hamiltonian)
    comm = h @ rho - rho @ h
    val = 1j * trace_product(comm, target_proj)
    if abs(val.imag) > 1e-10:
        raise ValueError(f"control overlap has spurious imaginary part {val.imag:.3e}")
    return float(u * val.real)


def _target_commutator_trace(rho: np.ndarray, h: np.ndarray, target_vec: np.ndarray) -> float:
    """Tr(i [H, rho] P_target) through the rank-1 structure of the projector."""
    w = rho @ target_vec
    hv = h @ target_vec
    return float(-2.0 * np.imag(np.vdot(hv, w)))


def evaluate(law: FeedbackLaw, rho: np.ndarray, model: SystemModel) -> np.ndarray:
    """Controller output, one real value per control Hamiltonian of the model."""
    law.require_compatible(model)
    n_ctrl = len(model.controls)
    u = np.zeros(n_ctrl)
    if law.variant == "zero" or n_ctrl == 0:
        return u
    basis = model.basis()
    k, sign = law.target
    if law.variant == "fidelity_power":
        f = fidelity_to(rho, basis, k, sign)
        u[0] = law.alpha * signed_power(1.0 - f, law.beta)
    elif law.variant == "mixed_power":
        lz_mean = trace_product(model.lz_total, rho).real
        l_target = spectral_l_value(model, k)
        res_z = l_target - lz_mean
        res_x = sign * 1.0 - x_mean(rho)
        u[0] = law.alpha * signed_power(res_z, law.beta) + law.gamma * signed_power(
            res_x, law.delta
        )
    else:  # two_hamiltonian
        v = basis.vector(k, sign)
        f = min(max(fidelity_to(rho, basis, k, sign), 0.0), 1.0)
        u[0] = law.gamma - _target_commutator_trace(rho, model.controls[0], v)
        u[1] = smoothstep(f, law.eps1, law.eps2) * (
            law.gamma - _target_commutator_trace(rho, model.controls[1], v)
        )
    return u


def spectral_l_value(model: SystemModel, k: int) -> float:
    """Eigenvalue of the summed unscaled z observable on plane ``k``."""
    d = np.diag(model.lz_total).real
    return float(d[k - 1])


def feedback_drift(law: FeedbackLaw, model: SystemModel, rho: np.ndarray) -> np.ndarray:
    """Controlled part of the drift, -i sum_j u_j [H_j, rho]."""
    u = evaluate(law, rho, model)
    out = np.zeros_like(rho)
    for uj, h in zip(u, model.controls):
        if uj != 0.0:
            out = out - 1j * uj * (h @ rho - rho @ h)
    return out


@dataclass(frozen=True)
class A2Report:
    """Controller non-degeneracy at the entangled equilibria."""

    ok: bool
    u_at_target: float
    worst_value: float                    # min over non-target states of |u|*||[H1, rho]||
    worst_state: tuple[int, int] | None
    failures: tuple[tuple[int, int], ...]


def check_A2(law: FeedbackLaw, model: SystemModel, tols: Tolerances = DEFAULT_TOLS) -> A2Report:
    """Check a single-control law vanishes at the target but nowhere else on
    the entangled set, in the sense that |u(rho)| * ||[H1, rho]|| stays above
    the nonzero-commutator tolerance for every non-target entangled state.
    """
    if law.variant == "two_hamiltonian":
        raise ValueError("check_A2 applies to single-control laws; see check_condition_A")
    law.require_compatible(model)
    basis = model.basis()
    if law.variant == "zero" or not model.controls:
        failures = tuple(
            lbl for lbl in basis.labels() if law.target is None or lbl != tuple(law.target)
        )
        return A2Report(False, 0.0, 0.0, failures[0] if failures else None, failures)
    k0, s0 = law.target
    u_target = float(np.max(np.abs(evaluate(law, basis.projector(k0, s0), model))))
    h1 = model.controls[0]
    worst = np.inf
    worst_state = None
    failures = []
    for k, s in basis.labels():
        if (k, s) == (k0, s0):
            continue
        proj = basis.projector(k, s)
        u = evaluate(law, proj, model)
        comm = h1 @ proj - proj @ h1
        value = float(np.max(np.abs(u))) * float(np.max(np.abs(comm)))
        if value < worst:
            worst, worst_state = value, (k, s)
        if value <= tols.nonzero_commutator:
            failures.append((k, s))
    ok = u_target <= tols.nonzero_commutator and not failures
    return A2Report(ok, u_target, float(worst), worst_state, tuple(failures))


def check_condition_A(
    law: FeedbackLaw, model: SystemModel, tols: Tolerances = DEFAULT_TOLS
) -> A2Report:
    """Two-component analogue for z-only setups.

    On every non-target entangled state the first component must act
    (|u1| * ||[H1, rho]|| above tolerance) while the gated second component
    stays off.  At the target the combined drift must vanish even though the
    components themselves need not.
    """
    if law.variant != "two_hamiltonian":
        raise ValueError("check_condition_A applies to the two_hamiltonian law")
    law.require_compatible(model)
    basis = model.basis()
    k0, s0 = law.target
    drift_norm = float(np.max(np.abs(feedback_drift(law, model, basis.projector(k0, s0)))))
    h1 = model.controls[0]
    worst = np.inf
    worst_state = None
    failures = []
    for k, s in basis.labels():
        if (k, s) == (k0, s0):
            continue
        proj = basis.projector(k, s)
        u = evaluate(law, proj, model)
        comm = h1 @ proj - proj @ h1
        value = abs(u[0]) * float(np.max(np.abs(comm)))
        gated_off = abs(u[1]) <= tols.nonzero_commutator
        if value < worst:
            worst, worst_state = value, (k, s)
        if value <= tols.nonzero_commutator or not gated_off:
            failures.append((k, s))
    ok = drift_norm <= tols.nonzero_commutator and not failures
    return A2Report(ok, drift_norm, float(worst), worst_state, tuple(failures))
