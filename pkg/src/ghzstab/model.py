"""Multi-qubit system construction.

Builds the entangled (GHZ) basis of an ``n``-qubit register, the parity-type
measurement operators that share it as an eigenbasis, the full system model
(free Hamiltonian, measurement channels, control Hamiltonians), and the
spectral constants that govern convergence rates.

Indexing convention: entangled states are addressed by pairs ``(k, sign)``
with ``k in 1..2**(n-1)`` and ``sign in {+1, -1}``, never by flat index.  The
basis matrix stores the ``+`` family first, then the ``-`` family, each in
increasing ``k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .qmat import as_complex_matrix, hermiticity_defect, kron, require_hermitian
from .tolerances import DEFAULT_TOLS, Tolerances

IDENTITY_2 = np.eye(2, dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)

PAULI_BY_NAME = {"1": IDENTITY_2, "x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


def _check_qubits(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"qubit count must be an integer >= 2, got {n!r}")
    return int(n)


def _check_sign(sign: int) -> int:
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign!r}")
    return int(sign)


def ghz_vector(n: int, k: int, sign: int) -> np.ndarray:
    """Entangled basis vector ``(|0 b2..bn> + sign |1 ~b2..~bn>)/sqrt(2)``.

    ``b2..bn`` are the binary digits of ``k - 1`` (most significant first),
    so the two computational components sit at positions ``k`` and
    ``2**n + 1 - k`` (1-based).
    """
    n = _check_qubits(n)
    dim = 2**n
    if not 1 <= k <= dim // 2:
        raise ValueError(f"index k must lie in [1, {dim // 2}], got {k}")
    sign = _check_sign(sign)
    v = np.zeros(dim, dtype=np.complex128)
    v[k - 1] = 1.0 / np.sqrt(2.0)
    v[dim - k] = sign / np.sqrt(2.0)
    return v


@dataclass(frozen=True)
class GhzBasis:
    """Orthonormal entangled basis with (k, sign) bookkeeping."""

    n: int
    matrix: np.ndarray = field(repr=False)  # columns: (1..dim/2, +) then (1..dim/2, -)

    @property
    def dim(self) -> int:
        return 2**self.n

    def flat_index(self, k: int, sign: int) -> int:
        half = self.dim // 2
        if not 1 <= k <= half:
            raise ValueError(f"index k must lie in [1, {half}], got {k}")
        return (k - 1) if _check_sign(sign) == 1 else half + (k - 1)

    def vector(self, k: int, sign: int) -> np.ndarray:
        return self.matrix[:, self.flat_index(k, sign)].copy()

    def projector(self, k: int, sign: int) -> np.ndarray:
        v = self.matrix[:, self.flat_index(k, sign)]
        return np.outer(v, v.conj())

    def labels(self) -> list[tuple[int, int]]:
        half = self.dim // 2
        return [(k, s) for s in (1, -1) for k in range(1, half + 1)]

    def pair_positions(self, k: int) -> tuple[int, int]:
        """0-based computational positions (k, mirror of k) spanning plane ``k``."""
        if not 1 <= k <= self.dim // 2:
            raise ValueError(f"index k must lie in [1, {self.dim // 2}], got {k}")
        return k - 1, self.dim - k


def ghz_basis(n: int) -> GhzBasis:
    n = _check_qubits(n)
    half = 2 ** (n - 1)
    cols = [ghz_vector(n, k, +1) for k in range(1, half + 1)]
    cols += [ghz_vector(n, k, -1) for k in range(1, half + 1)]
    return GhzBasis(n=n, matrix=np.column_stack(cols))


def _kron_chain(factors) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for f in factors:
        out = kron(out, f)
    return out


def build_z_operator(n: int, pattern, coeff: float = 1.0) -> np.ndarray:
    """Kronecker product of sigma_z / identity factors, scaled by ``coeff``.

    ``pattern`` is a sequence of tokens ``"z"`` or ``"1"`` of length ``n``.
    The sigma_z count must be even (so every entangled state is an
    eigenvector) and nonzero (a pure identity carries no information; see
    :func:`identity_operator` for the span-completeness constructor).
    """
    n = _check_qubits(n)
    tokens = [str(t).strip().lower() for t in pattern]
    if len(tokens) != n:
        raise ValueError(f"pattern length {len(tokens)} does not match qubit count {n}")
    bad = [t for t in tokens if t not in ("z", "1")]
    if bad:
        raise ValueError(f"z-operator pattern may only contain 'z' and '1', got {bad}")
    z_count = tokens.count("z")
    if z_count == 0:
        raise ValueError("pattern contains no sigma_z factor; use identity_operator instead")
    if z_count % 2:
        raise ValueError(f"sigma_z count must be even, got {z_count}")
    return coeff * _kron_chain(PAULI_BY_NAME[t] for t in tokens)


def identity_operator(n: int) -> np.ndarray:
    """The all-identity pattern; valid for span tests, not as a measurement."""
    return np.eye(2 ** _check_qubits(n), dtype=np.complex128)


def even_z_patterns(n: int):
    """All z/identity patterns with an even, positive sigma_z count."""
    n = _check_qubits(n)
    for combo in itertools.product("z1", repeat=n):
        count = combo.count("z")
        if count and count % 2 == 0:
            yield combo


def build_x_operator(n: int) -> np.ndarray:
    """sigma_x on every qubit (antidiagonal ones)."""
    return _kron_chain(SIGMA_X for _ in range(_check_qubits(n)))


def _mirror_defect(diag: np.ndarray) -> float:
    return float(np.max(np.abs(diag - diag[::-1])))


@dataclass(frozen=True)
class MeasurementChannel:
    """One continuous measurement channel.

    ``operator`` is the unscaled observable; the operator entering the
    dynamics is ``sqrt(strength) * operator``.
    """

    operator: np.ndarray = field(repr=False)
    strength: float
    efficiency: float
    kind: str  # "z" or "x"

    def __post_init__(self):
        op = require_hermitian(self.operator, name="measurement operator")
        object.__setattr__(self, "operator", op)
        if self.kind not in ("z", "x"):
            raise ValueError(f"channel kind must be 'z' or 'x', got {self.kind!r}")
        if not self.strength > 0:
            raise ValueError(f"measurement strength must be positive, got {self.strength}")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if self.kind == "z":
            off = float(np.max(np.abs(op - np.diag(np.diag(op)))))
            if off > DEFAULT_TOLS.hermitian:
                raise ValueError("z-type operator must be diagonal in the computational basis")
            mirror = _mirror_defect(np.diag(op).real)
            if mirror > DEFAULT_TOLS.hermitian:
                raise ValueError(
                    f"z-type diagonal must be mirror-symmetric, defect {mirror:.3e}"
                )

    @property
    def scaled(self) -> np.ndarray:
        return np.sqrt(self.strength) * self.operator

    @property
    def rate(self) -> float:
        """efficiency * strength, the information gain rate of the channel."""
        return self.efficiency * self.strength


@dataclass(frozen=True)
class SystemModel:
    """Qubit count, free Hamiltonian, measurement channels, control Hamiltonians."""

    n: int
    h0: np.ndarray = field(repr=False)
    channels: tuple[MeasurementChannel, ...]
    controls: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        n = _check_qubits(self.n)
        dim = 2**n
        h0 = require_hermitian(self.h0, name="free Hamiltonian")
        if h0.shape != (dim, dim):
            raise ValueError(f"free Hamiltonian shape {h0.shape} does not match dim {dim}")
        object.__setattr__(self, "h0", h0)
        channels = tuple(self.channels)
        if not channels:
            raise ValueError("at least one measurement channel is required")
        x_count = sum(1 for c in channels if c.kind == "x")
        if x_count > 1:
            raise ValueError("at most one x-type channel is supported")
        z_count = len(channels) - x_count
        if z_count == 0:
            raise ValueError("at least one z-type channel is required")
        for c in channels:
            if c.operator.shape != (dim, dim):
                raise ValueError("channel operator size does not match qubit count")
        # keep z channels first, x channel (if any) last: rate formulas index them that way
        ordered = tuple(c for c in channels if c.kind == "z") + tuple(
            c for c in channels if c.kind == "x"
        )
        object.__setattr__(self, "channels", ordered)
        controls = tuple(
            require_hermitian(h, name=f"control Hamiltonian {j + 1}")
            for j, h in enumerate(self.controls)
        )
        for h in controls:
            if h.shape != (dim, dim):
                raise ValueError("control Hamiltonian size does not match qubit count")
        object.__setattr__(self, "controls", controls)

    @property
    def dim(self) -> int:
        return 2**self.n

    @property
    def z_channels(self) -> tuple[MeasurementChannel, ...]:
        return tuple(c for c in self.channels if c.kind == "z")

    @property
    def x_channel(self) -> MeasurementChannel | None:
        for c in self.channels:
            if c.kind == "x":
                return c
        return None

    @property
    def lz_total(self) -> np.ndarray:
        """Sum of the unscaled z-type operators."""
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for c in self.z_channels:
            out = out + c.operator
        return out

    def basis(self) -> GhzBasis:
        return ghz_basis(self.n)


def z_channel_tables(model: SystemModel) -> np.ndarray:
    """Per-channel eigenvalues on each entangled plane.

    Row ``i`` holds the unscaled eigenvalue of z-channel ``i`` on plane ``k``
    for ``k = 1..dim/2`` (both signs share it).
    """
    half = model.dim // 2
    zs = model.z_channels
    table = np.empty((len(zs), half))
    for i, c in enumerate(zs):
        d = np.diag(c.operator).real
        table[i] = d[:half]
    return table


@dataclass(frozen=True)
class SpectralData:
    """Plane eigenvalues of the summed z-observable and derived rate constants."""

    l_values: np.ndarray          # dim/2 eigenvalues of the unscaled z sum
    channel_tables: np.ndarray    # (m_z, dim/2) unscaled per-channel eigenvalues
    min_gap: float | None         # smallest |l_i - l_j|, None when duplicates exist
    duplicates: tuple[tuple[int, int], ...]
    gamma_z: float                # min over z channels of efficiency*strength
    gamma_all: float              # min over all channels
    target: tuple[int, int] | None = None
    c_plus: float | None = None
    c_minus: float | None = None


def spectral_data(model: SystemModel, target: tuple[int, int] | None = None) -> SpectralData:
    """Spectral constants of the model, optionally specialized to a target plane.

    ``c_plus = (l_k - max_{j != k} l_j)/sqrt(m_z) - 1`` and
    ``c_minus = (l_k - min_{j != k} l_j)/sqrt(m_z) + 1`` for target plane ``k``.
    """
    half = model.dim // 2
    tables = z_channel_tables(model)
    l_values = tables.sum(axis=0)
    dup = tuple(
        (i + 1, j + 1)
        for i in range(half)
        for j in range(i + 1, half)
        if abs(l_values[i] - l_values[j]) <= DEFAULT_TOLS.duplicate_eigenvalue
    )
    if dup:
        min_gap = None
    else:
        gaps = [
            abs(l_values[i] - l_values[j]) for i in range(half) for j in range(i + 1, half)
        ]
        min_gap = float(min(gaps))
    gamma_z = min(c.rate for c in model.z_channels)
    gamma_all = min(c.rate for c in model.channels)
    c_plus = c_minus = None
    if target is not None:
        k, sign = target
        _check_sign(sign)
        if not 1 <= k <= half:
            raise ValueError(f"target plane {k} out of range [1, {half}]")
        m_z = len(model.z_channels)
        others = np.delete(l_values, k - 1)
        c_plus = float((l_values[k - 1] - others.max()) / np.sqrt(m_z) - 1.0)
        c_minus = float((l_values[k - 1] - others.min()) / np.sqrt(m_z) + 1.0)
    return SpectralData(
        l_values=l_values,
        channel_tables=tables,
        min_gap=min_gap,
        duplicates=dup,
        gamma_z=gamma_z,
        gamma_all=gamma_all,
        target=target,
        c_plus=c_plus,
        c_minus=c_minus,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Numerical verdicts for the structural model assumptions."""

    frame_diagonal_ok: bool               # free Hamiltonian + channels diagonal in the entangled frame
    frame_max_offdiag: float
    frame_worst_operator: str
    gaps_ok: bool                         # plane eigenvalues pairwise distinct
    duplicate_pairs: tuple[tuple[int, int], ...]

    @property
    def all_ok(self) -> bool:
        return self.frame_diagonal_ok and self.gaps_ok


def check_assumptions(model: SystemModel, tols: Tolerances = DEFAULT_TOLS) -> AssumptionReport:
    """Check frame diagonality of H0 and all channels, and eigenvalue gaps."""
    basis = model.basis()
    u = basis.matrix
    worst = 0.0
    worst_name = ""
    named = [("H0", model.h0)]
    named += [(f"channel {i + 1} ({c.kind})", c.scaled) for i, c in enumerate(model.channels)]
    for name, op in named:
        framed = u.conj().T @ as_complex_matrix(op) @ u
        off = float(np.max(np.abs(framed - np.diag(np.diag(framed)))))
        if off > worst:
            worst, worst_name = off, name
    spec = spectral_data(model)
    return AssumptionReport(
        frame_diagonal_ok=worst <= tols.frame_offdiag,
        frame_max_offdiag=worst,
        frame_worst_operator=worst_name,
        gaps_ok=not spec.duplicates,
        duplicate_pairs=spec.duplicates,
    )


def hermiticity_report(op: np.ndarray) -> float:
    """Convenience wrapper used by config validation."""
    return hermiticity_defect(as_complex_matrix(op))
