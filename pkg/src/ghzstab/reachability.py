"""Controllability checks for the stabilization targets.

Builds the iterated-action column matrices whose rank certifies that the
control Hamiltonian, composed with the measurement operators, sweeps the
whole space from an entangled seed vector; checks the strict-inequality
condition on the mean-matching set by sampling; and bundles the verdicts the
``check-assumptions`` command reports.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .control import FeedbackLaw, check_A2, check_condition_A, evaluate
from .model import SystemModel, z_channel_tables
from .qmat import trace_product
from .tolerances import DEFAULT_TOLS, Tolerances


@dataclass(frozen=True)
class RankMatrix:
    """Columns [xi, H1 xi, Lz1 H1 xi, ..., H1^l xi, ..., (Lx H1^l xi)]."""

    matrix: np.ndarray = field(repr=False)
    depth: int
    flavor: str  # "full" (with x columns) or "z_only"

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]


def build_rank_matrix(
    model: SystemModel, xi: np.ndarray, depth: int, flavor: str = "full"
) -> RankMatrix:
    """Stack the iterated actions of the first control Hamiltonian.

    For each power ``H1^j xi`` (j = 1..depth) the unscaled measurement
    operators are applied once, in channel order; ``flavor="full"`` appends
    the all-x operator column, ``"z_only"`` omits it.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if flavor not in ("full", "z_only"):
        raise ValueError(f"flavor must be 'full' or 'z_only', got {flavor!r}")
    if not model.controls:
        raise ValueError("model has no control Hamiltonian")
    xc = model.x_channel
    if flavor == "full" and xc is None:
        raise ValueError("full flavor needs an x-type channel")
    xi = np.asarray(xi, dtype=np.complex128).reshape(-1)
    if xi.shape[0] != model.dim:
        raise ValueError(f"seed vector length {xi.shape[0]} does not match dim {model.dim}")
    h1 = model.controls[0]
    cols = [xi]
    power = xi
    for _ in range(depth):
        power = h1 @ power
        cols.append(power)
        for chan in model.z_channels:
            cols.append(chan.operator @ power)
        if flavor == "full":
            cols.append(xc.operator @ power)
    return RankMatrix(matrix=np.column_stack(cols), depth=depth, flavor=flavor)


def numeric_rank(matrix: np.ndarray | RankMatrix, tol: float | None = None) -> int:
    """Singular values above ``tol`` times the largest one."""
    m = matrix.matrix if isinstance(matrix, RankMatrix) else np.asarray(matrix)
    tol = DEFAULT_TOLS.rank_singular if tol is None else tol
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def rank_saturation_depth(
    model: SystemModel,
    xi: np.ndarray,
    flavor: str,
    required: int,
    max_depth: int | None = None,
) -> int | None:
    """Smallest depth whose column rank reaches ``required``, or ``None``.

    The search is capped at twice the dimension: once the column space stops
    growing, deeper powers stay inside it.
    """
    cap = 2 * model.dim if max_depth is None else max_depth
    for depth in range(cap + 1):
        if numeric_rank(build_rank_matrix(model, xi, depth, flavor)) >= required:
            return depth
    return None


def _mean_matching_vertices(model: SystemModel, target: tuple[int, int]) -> np.ndarray:
    """Vertices of the polytope of frame-diagonal states matching the target means.

    Unknowns are the populations of the entangled states; constraints fix the
    mean of every z channel to its target eigenvalue, the all-x mean to the
    target sign, and the total to one.  Vertices are enumerated by activating
    every complement of a potential support set (the dimension is tiny).
    """
    k0, sign0 = target
    dim = model.dim
    half = dim // 2
    tables = z_channel_tables(model)
    m_z = tables.shape[0]
    n_vars = dim  # populations ordered (k,+) then (k,-)
    n_cons = m_z + 1 + (1 if model.x_channel is not None else 0)
    a = np.zeros((n_cons, n_vars))
    b = np.zeros(n_cons)
    for i in range(m_z):
        a[i, :half] = tables[i]
        a[i, half:] = tables[i]
        b[i] = tables[i, k0 - 1]
    a[m_z, :] = 1.0
    b[m_z] = 1.0
    if model.x_channel is not None:
        a[m_z + 1, :half] = 1.0
        a[m_z + 1, half:] = -1.0
        b[m_z + 1] = float(sign0)
    vertices = []
    for support in itertools.combinations(range(n_vars), n_cons):
        sub = a[:, support]
        try:
            sol = np.linalg.solve(sub, b)
        except np.linalg.LinAlgError:
            continue
        if np.all(sol >= -1e-12):
            p = np.zeros(n_vars)
            p[list(support)] = np.clip(sol, 0.0, None)
            if not any(np.allclose(p, q, atol=1e-10) for q in vertices):
                vertices.append(p)
    return np.array(vertices) if vertices else np.zeros((0, n_vars))


def _state_from_populations(model: SystemModel, p: np.ndarray) -> np.ndarray:
    basis = model.basis()
    rho = np.zeros((model.dim, model.dim), dtype=np.complex128)
    for idx, (k, s) in enumerate(basis.labels()):
        if p[idx] > 0.0:
            rho += p[idx] * basis.projector(k, s)
    return rho


@dataclass(frozen=True)
class StrictGainReport:
    """Sampled check of the inequality 2 F sum(eta V) > u * overlap term."""

    vacuous: bool                 # the matching set holds only the target
    n_samples: int
    min_margin: float | None      # min over samples of LHS - RHS
    ok: bool


def check_strict_gain(
    model: SystemModel,
    target: tuple[int, int],
    law: FeedbackLaw,
    n_samples: int = 10_000,
    exclusion_radius: float = 0.05,
    seed: int = 1,
) -> StrictGainReport:
    """Sample the mean-matching set and verify the strict gain inequality.

    States are drawn as convex mixtures of the polytope vertices of
    frame-diagonal states whose channel means equal the target's.  States
    within ``exclusion_radius`` (Bures) of the target are skipped.  When the
    polytope degenerates to the target alone the condition holds vacuously.
    """
    from .analysis import bures_distance, operator_variance

    vertices = _mean_matching_vertices(model, target)
    basis = model.basis()
    k0, s0 = target
    target_proj = basis.projector(k0, s0)
    target_point = np.zeros(model.dim)
    target_point[basis.flat_index(k0, s0)] = 1.0
    others = [v for v in vertices if not np.allclose(v, target_point, atol=1e-9)]
    if not others:
        return StrictGainReport(vacuous=True, n_samples=0, min_margin=None, ok=True)
    rng = np.random.default_rng(seed)
    h1 = model.controls[0] if model.controls else None
    min_margin = np.inf
    used = 0
    for _ in range(n_samples):
        weights = rng.dirichlet(np.ones(len(vertices)))
        p = weights @ vertices
        rho = _state_from_populations(model, p)
        if bures_distance(rho, target_proj) < exclusion_radius:
            continue
        f = float(trace_product(rho, target_proj).real)
        lhs = 2.0 * f * sum(
            c.efficiency * operator_variance(rho, c.scaled) for c in model.z_channels
        )
        rhs = 0.0
        if h1 is not None:
            u = evaluate(law, rho, model)
            comm = h1 @ rho - rho @ h1
            rhs = float(u[0] * (1j * trace_product(comm, target_proj)).real)
        min_margin = min(min_margin, lhs - rhs)
        used += 1
    return StrictGainReport(
        vacuous=False,
        n_samples=used,
        min_margin=float(min_margin) if used else None,
        ok=used > 0 and min_margin > 0.0,
    )


@dataclass(frozen=True)
class ConditionReport:
    """Verdicts for the stabilizability conditions of a model/target/law."""

    a2_ok: bool
    a2_detail: str
    rank_required: int
    rank_depth: int | None       # smallest depth reaching the required rank
    rank_ok: bool
    strict_gain: StrictGainReport | None   # None for z-only models
    flavor: str

    @property
    def all_ok(self) -> bool:
        gain_ok = self.strict_gain is None or self.strict_gain.ok
        return self.a2_ok and self.rank_ok and gain_ok


def check_conditions(
    model: SystemModel,
    target: tuple[int, int],
    law: FeedbackLaw,
    tols: Tolerances = DEFAULT_TOLS,
    n_samples: int = 10_000,
    seed: int = 1,
) -> ConditionReport:
    """Run the non-degeneracy, rank, and strict-gain checks for a target.

    With an x channel the rank requirement is dim-1 on the full column
    matrix and the strict-gain inequality is sampled on the mean-matching
    set.  Without one the requirement is full rank on the z-only matrix and
    the gain check does not apply: the mean-matching set is the whole target
    plane, whose interior escape is left to trajectory diagnostics (no
    verdict is made).
    """
    basis = model.basis()
    k0, s0 = target
    xi = basis.vector(k0, s0)
    if model.x_channel is not None:
        flavor, required = "full", model.dim - 1
    else:
        flavor, required = "z_only", model.dim
    if law.variant == "two_hamiltonian":
        a2 = check_condition_A(law, model, tols)
        a2_detail = (
            f"combined drive at target {a2.u_at_target:.2e}; "
            f"worst non-target activity {a2.worst_value:.2e}"
        )
    else:
        a2 = check_A2(law, model, tols)
        a2_detail = (
            f"|u| at target {a2.u_at_target:.2e}; worst non-target activity {a2.worst_value:.2e}"
        )
    depth = rank_saturation_depth(model, xi, flavor, required)
    gain = None
    if model.x_channel is not None:
        gain = check_strict_gain(model, target, law, n_samples=n_samples, seed=seed)
    return ConditionReport(
        a2_ok=a2.ok,
        a2_detail=a2_detail,
        rank_required=required,
        rank_depth=depth,
        rank_ok=depth is not None,
        strict_gain=gain,
        flavor=flavor,
    )
