"""Dense real linear-algebra primitives shared by the rest of the package.

Thin, validated wrappers around LAPACK-backed numpy/scipy routines. Everything
here is deterministic (no randomized sketching anywhere) so that model fits are
bit-reproducible, and every routine documents the tolerance its callers may
rely on. All tolerances are fixed constants, not configuration.
"""

import numpy as np
import scipy.linalg as sla

__all__ = [
    "full_svd",
    "svd_slice",
    "truncated_svd",
    "pinv",
    "lstsq",
    "expm",
    "solve_sylvester",
    "eig",
    "spd_project",
]

# Singular values below PINV_RTOL * sigma_max are treated as zero.
PINV_RTOL = 1e-12

# Spectra closer than this are refused by solve_sylvester.
RESONANCE_TOL = 1e-9


def _as_finite_array(A, name):
    A = np.asarray(A, dtype=float)
    if A.size and not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def full_svd(A):
    """Compact full SVD of A as the raw triple (U, s, Vt).

    The single LAPACK SVD call site in the package. Sweeps over several
    truncation ranks call this once and slice, which is bit-identical to
    truncating each rank separately because `truncated_svd` slices the same
    factorization.
    """
    A = _as_finite_array(A, "A")
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    return sla.svd(A, full_matrices=False, check_finite=False)


def svd_slice(full, r):
    """Leading rank-r triplets (U_r, s_r, V_r) of a `full_svd` result."""
    U, s, Vt = full
    r = int(r)
    if not 1 <= r <= s.size:
        raise ValueError(f"r must be in [1, {s.size}], got {r}")
    return U[:, :r], s[:r], Vt[:r].T


def truncated_svd(A, r):
    """Rank-r truncated SVD of A.

    Returns (U_r, s_r, V_r) with U_r (m x r) and V_r (n x r) having
    orthonormal columns and s_r the r leading singular values in
    nonincreasing order, so A is approximated by U_r @ diag(s_r) @ V_r.T.
    Trailing zeros in s_r are allowed (rank deficiency below r is not an
    error). Computed from the full LAPACK SVD, then sliced, which keeps the
    result independent of r for the shared leading triplets.
    """
    A = _as_finite_array(A, "A")
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    r = int(r)
    if not 1 <= r <= min(A.shape):
        raise ValueError(f"r must be in [1, {min(A.shape)}], got {r}")
    return svd_slice(full_svd(A), r)


def pinv(A):
    """Moore-Penrose pseudo-inverse with cutoff 1e-12 * sigma_max."""
    A = _as_finite_array(A, "A")
    return np.linalg.pinv(A, rcond=PINV_RTOL)


def lstsq(A, B, rtol=PINV_RTOL):
    """Minimum-Frobenius-norm minimizer X of ||A X - B||_F.

    Singular values of A below rtol * sigma_max are treated as zero. The
    default matches `pinv`; regression callers with nearly dependent rows
    (phase-shifted sinusoid channels) rely on this cutoff to keep solutions
    in the excited subspace instead of amplifying roundoff-scale directions.
    """
    A = _as_finite_array(A, "A")
    B = _as_finite_array(B, "B")
    if A.shape[0] != B.shape[0]:
        raise ValueError("A and B must have the same number of rows")
    X, _, _, _ = sla.lstsq(A, B, cond=rtol, lapack_driver="gelsd", check_finite=False)
    return X


def expm(A):
    """Matrix exponential (scaling-and-squaring with Pade order 13)."""
    A = _as_finite_array(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    return sla.expm(A)


def solve_sylvester(F, A, Q):
    """Solve F T - T A = Q for T (Bartels-Stewart via Schur forms).

    The spectra of F and A must be disjoint; eigenvalue pairs closer than
    1e-9 raise "resonant placement". Residual is checked by the caller's
    tests, not recomputed here.
    """
    F = _as_finite_array(F, "F")
    A = _as_finite_array(A, "A")
    Q = _as_finite_array(Q, "Q")
    lam_f = np.linalg.eigvals(F)
    lam_a = np.linalg.eigvals(A)
    gap = np.abs(lam_f[:, None] - lam_a[None, :]).min()
    if gap < RESONANCE_TOL:
        raise ValueError(f"resonant placement: spectra overlap within {gap:.3e}")
    # scipy solves F T + T B = Q, so flip the sign of the right operand.
    return sla.solve_sylvester(F, -A, Q)


def eig(A):
    """Full eigenvalue set of a square matrix (complex, unordered)."""
    A = _as_finite_array(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    return np.linalg.eigvals(A)


def spd_project(A, eps):
    """Nearest-in-spirit SPD projection: symmetrize, clip eigenvalues at eps.

    Returns the exactly symmetric matrix Q max(lam, eps) Q^T built from the
    eigendecomposition of (A + A^T) / 2. Idempotent to roundoff, and a fixed
    point on matrices that are already symmetric with eigenvalues >= eps.
    """
    A = _as_finite_array(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not eps > 0:
        raise ValueError("eps must be positive")
    S = 0.5 * (A + A.T)
    lam, Q = np.linalg.eigh(S)
    if lam.min() >= eps:
        return S
    lam = np.maximum(lam, eps)
    P = (Q * lam) @ Q.T
    return 0.5 * (P + P.T)
