"""Non-intrusive reduced-order model fitting.

Three fitters share a common discrete-time model container:

* `lopinf_fit` infers a second-order reduced model with symmetric positive
  definite damping and stiffness operators from projected snapshots and
  finite-difference derivative estimates, then `lopinf_to_discrete` converts
  it to first-order form and discretizes under a zero-order hold.
* `dmdc_fit` regresses a one-step linear map with control from shifted
  snapshot pairs via two truncated SVDs.
* `era_okid_fit` estimates Markov parameters from a single trial's
  input-output record through a block Toeplitz least squares problem, then
  realizes a state-space model from the associated Hankel matrices.

All fitters are deterministic given their inputs. Models serialize to a
directory holding a JSON header plus one f64le payload per operator.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import storage
from .linalg import expm, full_svd, lstsq, pinv, spd_project, svd_slice, truncated_svd

EPS_SPD = 1e-8

# Rank-collapse guard for the snapshot basis.
RANK_COLLAPSE = 1e-14


@dataclass
class DiscreteRom:
    """Discrete-time linear model x_{k+1} = A x_k + B u_k, y_k = C x_k + D u_k.

    `basis` holds the full-to-reduced projection basis (n x r) when one
    exists; realizations identified purely from input-output data carry none.
    `D` is zero except for realization-based models.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Ts: float
    method: str
    basis: np.ndarray = None

    def __post_init__(self):
        r = self.A.shape[0]
        if self.A.shape != (r, r):
            raise ValueError("A must be square")
        if self.B.shape[0] != r or self.C.shape[1] != r:
            raise ValueError("B/C dimensions inconsistent with A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("D dimensions inconsistent with B/C")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")

    @property
    def r_eff(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


@dataclass
class LagrangianRom:
    """Second-order reduced model xdd + Dhat xd + Khat x = Bhat u, y = Chat x."""

    Dhat: np.ndarray
    Khat: np.ndarray
    Bhat: np.ndarray
    Chat: np.ndarray
    basis: np.ndarray

    @property
    def r(self):
        return self.Dhat.shape[0]


# Eighth-order central stencils on offsets -4..4.
FD1_COEFFS = np.array(
    [1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280]
)
FD2_COEFFS = np.array(
    [-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560]
)
_FD_HALF = 4


def fd_derivatives(Xhat, dt, segments=None):
    """Eighth-order central first and second time derivatives.

    Stencils are applied independently within each trial segment; the 4
    boundary columns at each segment end have no centered stencil and are
    dropped. Returns (Xdot, Xddot, kept) where `kept` lists the surviving
    absolute column indices, to be used to subset the regression data.

    Parameters
    ----------
    Xhat : (r, K) array
        Reduced trajectory columns, uniformly spaced in time.
    dt : float
        Sample spacing in seconds.
    segments : list of int, optional
        Per-trial column counts; one segment covering everything by default.
    """
    Xhat = np.asarray(Xhat, dtype=float)
    K = Xhat.shape[1]
    if segments is None:
        segments = [K]
    if sum(segments) != K:
        raise ValueError("segments do not cover the columns")
    dots, ddots, kept = [], [], []
    start = 0
    for length in segments:
        if length < 2 * _FD_HALF + 1:
            raise ValueError(
                f"segment of {length} columns is too short for the stencil"
            )
        seg = Xhat[:, start : start + length]
        core = length - 2 * _FD_HALF
        d1 = np.zeros((Xhat.shape[0], core))
        d2 = np.zeros((Xhat.shape[0], core))
        for j, off in enumerate(range(-_FD_HALF, _FD_HALF + 1)):
            window = seg[:, _FD_HALF + off : _FD_HALF + off + core]
            d1 += FD1_COEFFS[j] * window
            d2 += FD2_COEFFS[j] * window
        dots.append(d1 / dt)
        ddots.append(d2 / (dt * dt))
        kept.extend(range(start + _FD_HALF, start + length - _FD_HALF))
        start += length
    return np.concatenate(dots, axis=1), np.concatenate(ddots, axis=1), np.array(kept)


def lopinf_fit(data, r):
    """Infer a Lagrangian reduced model from centered snapshot data.

    The reduced basis comes from the truncated SVD of the state snapshots;
    states are projected, differentiated per trial segment, and the joint
    least squares problem

        min || Xddot + Dhat Xdot + Khat Xhat - Bhat U ||_F

    is solved unconstrained. Dhat and Khat are then projected to the
    symmetric positive definite cone (eigenvalue clip at 1e-8) and Bhat is
    refit alone with them held fixed, which keeps the input operator
    consistent with the constrained dissipative pair. The output operator
    solves min || Y - Chat Xhat ||_F over all columns.
    """
    U_r, svals, _ = truncated_svd(data.X, int(r))
    return _lopinf_reduced(data, U_r, svals)


def _lopinf_reduced(data, U_r, svals):
    r = U_r.shape[1]
    if svals[-1] / svals[0] < RANK_COLLAPSE:
        raise ValueError(f"state snapshots collapse below rank {r}")
    Xhat = U_r.T @ data.X
    Xdot, Xddot, kept = fd_derivatives(Xhat, data.dt, data.segments)
    Xk = Xhat[:, kept]
    Uk = data.U[:, kept]
    # Stack [Dhat Khat Bhat] against [Xdot; Xhat; -U] = -Xddot.
    G = np.vstack([Xdot, Xk, -Uk])
    O = lstsq(G.T, -Xddot.T).T
    Dhat = spd_project(O[:, :r], EPS_SPD)
    Khat = spd_project(O[:, r : 2 * r], EPS_SPD)
    resid = Xddot + Dhat @ Xdot + Khat @ Xk
    Bhat = lstsq(Uk.T, resid.T).T
    Chat = lstsq(Xhat.T, data.Y.T).T
    return LagrangianRom(Dhat=Dhat, Khat=Khat, Bhat=Bhat, Chat=Chat, basis=U_r)


def lopinf_to_discrete(lrom, Ts):
    """First-order augmentation plus zero-order-hold discretization.

    The augmented state stacks reduced position over reduced velocity:

        A_c = [[0, I], [-Khat, -Dhat]],  B_c = [[0], [Bhat]],
        C_aug = [Chat, 0]

    then A = expm(A_c Ts) and B = A_c^{-1} (A - I) B_c. A_c is invertible
    because Khat is SPD.
    """
    r = lrom.r
    Z = np.zeros((r, r))
    I = np.eye(r)
    A_c = np.block([[Z, I], [-lrom.Khat, -lrom.Dhat]])
    B_c = np.vstack([np.zeros_like(lrom.Bhat), lrom.Bhat])
    C_aug = np.hstack([lrom.Chat, np.zeros_like(lrom.Chat)])
    A = expm(A_c * Ts)
    B = np.linalg.solve(A_c, (A - np.eye(2 * r)) @ B_c)
    D = np.zeros((C_aug.shape[0], B.shape[1]))
    return DiscreteRom(A=A, B=B, C=C_aug, D=D, Ts=Ts, method="LOpInf", basis=lrom.basis)


def lopinf_sweep(data, r_values):
    """Discrete models for several basis sizes, sharing one snapshot SVD.

    Bit-identical to fitting each size separately; the factorization is the
    expensive step and its leading triplets do not depend on the cut.
    Returns (models, failures): sizes whose fit raises are recorded under
    their error message instead of aborting the remaining sizes.
    """
    full = full_svd(data.X)
    out, failures = {}, {}
    for r in r_values:
        r = int(r)
        try:
            U_r, svals, _ = svd_slice(full, r)
            lrom = _lopinf_reduced(data, U_r, svals)
            out[r] = lopinf_to_discrete(lrom, data.dt)
        except ValueError as exc:
            failures[r] = str(exc)
    return out, failures


def _shifted_pairs(data):
    """Per-segment (X dropped-last, X dropped-first, aligned U, aligned Y)."""
    Xm, Xp, Um, Ym = [], [], [], []
    for sl in data.segment_slices():
        Xm.append(data.X[:, sl][:, :-1])
        Xp.append(data.X[:, sl][:, 1:])
        Um.append(data.U[:, sl][:, :-1])
        Ym.append(data.Y[:, sl][:, :-1])
    cat = lambda parts: np.concatenate(parts, axis=1)
    return cat(Xm), cat(Xp), cat(Um), cat(Ym)


def dmdc_fit(data, r, q=None):
    """Dynamic mode decomposition with control.

    Stacks states over inputs, takes a rank-q truncated SVD of the stack and
    a rank-r truncated SVD of the shifted states, and reads off the reduced
    one-step operators. The output operator is fit by least squares against
    the projected unshifted states. q defaults to r + m, giving the stack
    room for the input content on top of the state content.

    Degenerates to plain DMD when the data has no input rows.
    """
    r = int(r)
    Xm, Xp, Um, Ym = _shifted_pairs(data)
    q = int(q) if q is not None else r + data.m
    Omega = np.vstack([Xm, Um]) if data.m else Xm
    return _dmdc_core(
        data, r, q, Xm, Xp, Ym, full_svd(Omega), full_svd(Xp)
    )


def _dmdc_core(data, r, q, Xm, Xp, Ym, omega_full, xp_full):
    n = Xm.shape[0]
    W, svals, V = svd_slice(omega_full, q)
    # Zero singular values are judged at the numerical-rank threshold
    # (max dimension * eps * sigma_1, the matrix_rank convention); a strict
    # equality test never fires in floating point, and slicing past the
    # threshold divides by pure roundoff.
    rows = omega_full[0].shape[0]
    cols = omega_full[2].shape[1]
    floor = max(rows, cols) * np.finfo(float).eps * omega_full[1][0]
    if svals[-1] <= floor:
        raise ValueError("input-state data rank deficient")
    Uhat, _, _ = svd_slice(xp_full, r)
    core = Xp @ (V / svals)
    W1 = W[:n]
    W2 = W[n:]
    A = Uhat.T @ core @ W1.T @ Uhat
    B = Uhat.T @ core @ W2.T
    C = lstsq((Uhat.T @ Xm).T, Ym.T).T
    D = np.zeros((C.shape[0], B.shape[1]))
    return DiscreteRom(A=A, B=B, C=C, D=D, Ts=data.dt, method="DMDc", basis=Uhat)


def dmdc_sweep(data, r_values, q=None):
    """DMDc models for several ranks, sharing the two data factorizations.

    Returns (models, failures); ranks whose stacked data falls below the
    numerical-rank floor at the requested q are recorded, not fatal.
    """
    Xm, Xp, Um, Ym = _shifted_pairs(data)
    Omega = np.vstack([Xm, Um]) if data.m else Xm
    omega_full = full_svd(Omega)
    xp_full = full_svd(Xp)
    out, failures = {}, {}
    for r in r_values:
        r = int(r)
        q_r = int(q) if q is not None else r + data.m
        try:
            out[r] = _dmdc_core(data, r, q_r, Xm, Xp, Ym, omega_full, xp_full)
        except ValueError as exc:
            failures[r] = str(exc)
    return out, failures


def okid_markov(U, Y):
    """Markov-parameter blocks [M_0, M_1, ...] from one input-output record.

    Solves Y = M Utoep for the block row M, where Utoep stacks shifted
    copies of the input so that column k reads [u_k; u_{k-1}; ...; u_0; 0...].
    Under zero initial state this recovers [D, CB, CAB, ...]. Returns the
    (p, m, K) array of blocks.
    """
    m, K = U.shape
    p = Y.shape[0]
    Utoep = np.zeros((m * K, K))
    for i in range(K):
        Utoep[i * m : (i + 1) * m, i:] = U[:, : K - i]
    M = Y @ pinv(Utoep)
    return M.reshape(p, K, m)


def era_okid_fit(data, r):
    """Eigensystem realization from estimated Markov parameters.

    Only single-trial data is accepted; the Toeplitz least squares step
    assumes one contiguous record started at rest. With T_H = floor(K/2) - 1,
    two block Hankel matrices are assembled from blocks 1.. and 2.. of the
    Markov sequence; the rank-r SVD of the first yields the balanced-like
    realization

        A = S^{-1/2} U^T H' V S^{-1/2},  B = (S^{1/2} V^T)[:, :m],
        C = (U S^{1/2})[:p, :],          D = M_0.
    """
    models, failures = era_sweep(data, [int(r)])
    if failures:
        raise ValueError(failures[int(r)])
    return models[int(r)]


def era_sweep(data, r_values):
    """Realizations for several orders from one Markov/Hankel pipeline.

    The Hankel matrices scale with K^2 and dominate both time and memory, so
    they are assembled once; only the leading factors up to max(r_values)
    are retained between the two assemblies. Results are bit-identical to
    per-order fits. Returns (models, failures): a record too short or
    multi-trial is fatal, while per-order budget or rank problems are
    recorded and the remaining orders still fit.
    """
    r_values = [int(r) for r in r_values]
    if len(data.segments) != 1:
        raise ValueError("realization fitting requires a single trial")
    K = data.K
    if K < 6:
        raise ValueError("record too short for Hankel assembly")
    T_H = K // 2 - 1
    m, p = data.m, data.p
    failures = {
        r: f"r = {r} exceeds the Hankel rank budget"
        for r in r_values
        if r > min(p * T_H, m * T_H)
    }
    fit_values = [r for r in r_values if r not in failures]
    if not fit_values:
        return {}, failures
    r_max = max(fit_values)
    blocks = okid_markov(data.U, data.Y)  # (p, K, m)

    def hankel_from(first_block):
        H = np.empty((p * T_H, m * T_H))
        for i in range(T_H):
            lo = first_block + i
            H[i * p : (i + 1) * p, :] = blocks[:, lo : lo + T_H, :].reshape(
                p, m * T_H
            )
        return H

    H = hankel_from(1)
    U_all, s_all, Vt_all = full_svd(H)
    # Same numerical-rank floor as the DMDc guard; on this data the OKID
    # Hankel spectrum decays smoothly, so the guard marks genuine collapse
    # only (an exactly low-rank record, or orders past the data content).
    floor = max(p * T_H, m * T_H) * np.finfo(float).eps * s_all[0]
    del H
    U_lead = U_all[:, :r_max].copy()
    Vt_lead = Vt_all[:r_max].copy()
    del U_all, Vt_all
    Hp = hankel_from(2)
    out = {}
    for r in fit_values:
        svals = s_all[:r]
        if svals[-1] <= floor:
            failures[r] = f"Hankel rank below r = {r}"
            continue
        Ur = U_lead[:, :r]
        Vr = Vt_lead[:r].T
        sq = np.sqrt(svals)
        A = (Ur.T @ Hp @ Vr) / sq[:, None] / sq[None, :]
        B = (sq[:, None] * Vr.T)[:, :m]
        C = (Ur * sq[None, :])[:p, :]
        D = blocks[:, 0, :].copy()
        out[r] = DiscreteRom(A=A, B=B, C=C, D=D, Ts=data.dt, method="ERA", basis=None)
    return out, failures


def markov_parameters(rom, count):
    """Impulse-response blocks [D, CB, CAB, ...] of a discrete model."""
    out = [rom.D]
    Ak_B = rom.B
    for _ in range(count - 1):
        out.append(rom.C @ Ak_B)
        Ak_B = rom.A @ Ak_B
    return out


def save_model(rom, dirpath):
    """Persist a model as dirpath/rom.json plus f64le operator payloads."""
    os.makedirs(dirpath, exist_ok=True)
    header = {
        "method": rom.method,
        "r_eff": rom.r_eff,
        "m": rom.m,
        "p": rom.p,
        "Ts": rom.Ts,
        "matrices": {},
    }
    for name in ("A", "B", "C", "D"):
        header["matrices"][name] = storage.save_matrix(
            os.path.join(dirpath, f"{name}.f64"), getattr(rom, name)
        )
    if rom.basis is not None:
        header["matrices"]["basis"] = storage.save_matrix(
            os.path.join(dirpath, "basis.f64"), rom.basis
        )
    storage.write_json(os.path.join(dirpath, "rom.json"), header)


def load_model(dirpath):
    header = storage.read_json(os.path.join(dirpath, "rom.json"))
    mats = {
        name: storage.load_matrix(
            os.path.join(dirpath, f"{name}.f64"), desc
        )
        for name, desc in header["matrices"].items()
    }
    return DiscreteRom(
        A=mats["A"],
        B=mats["B"],
        C=mats["C"],
        D=mats["D"],
        Ts=float(header["Ts"]),
        method=header["method"],
        basis=mats.get("basis"),
    )
