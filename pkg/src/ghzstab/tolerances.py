"""Numerical tolerances shared across the package.

Every tolerance lives here so that a run uses one consistent set; modules
take a ``Tolerances`` argument defaulting to :data:`DEFAULT_TOLS`.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12          # max-norm deviation from A == A^dagger
    frame_offdiag: float = 1e-10      # off-diagonal leakage in the entangled frame
    trace: float = 1e-10              # |Tr(rho) - 1|
    psd: float = 1e-10                # eigenvalues may undershoot zero by this much
    eig_reconstruction: float = 1e-10
    rank_eigenvalue: float = 1e-8     # eigenvalues above this count toward numerical rank
    rank_singular: float = 1e-10      # relative singular-value cutoff for column ranks
    clip_abort: float = 1e-2          # pre-projection eigenvalue below -clip_abort aborts
    clip_warn: float = 1e-6           # projection repairs beyond this are flagged
    state_repair: float = 1e-6        # initial-state defects beyond this are rejected
    duplicate_eigenvalue: float = 1e-12
    log_floor: float = 1e-12          # positive floor applied before log-linear fits
    nonzero_commutator: float = 1e-8  # |u|*||[H,rho]|| above this counts as nonzero


DEFAULT_TOLS = Tolerances()
