"""Dense primal-dual interior-point solver for small complex SDPs.

Problems have the form::

    maximize    sum_b Re Tr(C_b X_b) + const
    subject to  sum_b Re Tr(A_jb X_b)  (<= or ==)  b_j,   j = 1..m
                X_b >= 0 (Hermitian PSD)

Blocks of size 1 are nonnegative scalars.  Complex Hermitian blocks are
embedded in real symmetric matrices of twice the size,
``[[Re X, -Im X], [Im X, Re X]]``, so the cone code is purely real.

The method is infeasible-start Mehrotra predictor-corrector with
Nesterov-Todd scaling.  Constraint matrices are kept as eigen-factors
``V diag(d) V^T`` so the Schur complement costs ``O(r^2)`` per block with
``r`` the total factor rank; rank-one data (the common case in beamforming
problems) stays cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "LowRank",
    "Constraint",
    "SdpProblem",
    "SdpSolution",
    "solve_sdp",
    "psd_residual",
    "dump_sdpa",
    "herm",
]


def herm(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.conj().swapaxes(-1, -2))


def psd_residual(X) -> float:
    """``max(0, -lambda_min(X))`` for a Hermitian matrix (or scalar)."""
    X = np.atleast_2d(np.asarray(X))
    return float(max(0.0, -np.linalg.eigvalsh(herm(X))[0]))


class LowRank:
    """Hermitian matrix ``U diag(d) U^H`` stored by its factors."""

    def __init__(self, U, d=None):
        U = np.asarray(U)
        if U.ndim == 1:
            U = U[:, None]
        self.U = U.astype(complex)
        self.d = np.ones(U.shape[1]) if d is None else np.asarray(d, dtype=float).reshape(-1)
        if self.d.size != self.U.shape[1]:
            raise ValueError("LowRank: d must have one weight per column of U")

    @property
    def shape(self):
        return (self.U.shape[0], self.U.shape[0])

    def dense(self) -> np.ndarray:
        return (self.U * self.d) @ self.U.conj().T

    def inner(self, X: np.ndarray) -> float:
        """``Re Tr(A X)`` without forming A."""
        return float(np.real(np.einsum("ir,ij,jr->r", self.U.conj(), X, self.U) @ self.d))


Coeff = Union[np.ndarray, LowRank, float]


@dataclass
class Constraint:
    coeffs: dict[int, Coeff]
    bound: float
    sense: str = "<="

    def value(self, X: list) -> float:
        total = 0.0
        for blk, A in self.coeffs.items():
            total += _inner(A, X[blk])
        return total


def _inner(A: Coeff, X) -> float:
    if isinstance(A, LowRank):
        return A.inner(np.atleast_2d(X))
    A = np.asarray(A)
    if A.ndim == 0:
        return float(np.real(A * np.asarray(X).reshape(())))
    return float(np.real(np.sum(A.T * np.atleast_2d(X))))


@dataclass
class SdpProblem:
    blocks: list[int]
    objective: list
    constraints: list[Constraint]
    constant: float = 0.0

    def __post_init__(self):
        if len(self.objective) != len(self.blocks):
            raise ValueError("one objective matrix per block required")
        for b, C in enumerate(self.objective):
            if C is not None:
                _check_herm(C, self.blocks[b], f"objective block {b}")
        for j, con in enumerate(self.constraints):
            if con.sense not in ("<=", "=="):
                raise ValueError(f"constraint {j}: sense must be '<=' or '=='")
            for b, A in con.coeffs.items():
                _check_herm(A, self.blocks[b], f"constraint {j} block {b}")

    def objective_value(self, X: list) -> float:
        total = self.constant
        for C, Xb in zip(self.objective, X):
            if C is not None:
                total += _inner(C, Xb)
        return total

    def max_violation(self, X: list) -> float:
        """Largest relative constraint violation at ``X``."""
        worst = 0.0
        for con in self.constraints:
            v = con.value(X) - con.bound
            if con.sense == "==":
                v = abs(v)
            worst = max(worst, v / (1.0 + abs(con.bound)))
        return worst


def _check_herm(A, n, what):
    if isinstance(A, LowRank):
        if A.shape[0] != n:
            raise ValueError(f"{what}: dimension mismatch")
        return
    A = np.asarray(A)
    if n == 1 and A.size == 1:
        if abs(np.imag(A).sum()) > 1e-10:
            raise ValueError(f"{what}: scalar coefficient must be real")
        return
    if A.shape != (n, n):
        raise ValueError(f"{what}: expected shape {(n, n)}, got {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.conj().T).max() > 1e-10 * scale:
        raise ValueError(f"{what}: matrix is not Hermitian")


@dataclass
class SdpSolution:
    X: list
    objective_value: float
    status: str
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_bound: float = np.inf          # dual objective: an upper bound when dual feasible


# --------------------------------------------------------------------------
# compilation to real standard form:  min <c, x>  s.t.  A x = b,  x in K
# --------------------------------------------------------------------------

def _lift_dense(A: np.ndarray) -> np.ndarray:
    """Real embedding of a Hermitian matrix (without the 1/2 trace factor)."""
    Re, Im = A.real, A.imag
    return np.block([[Re, -Im], [Im, Re]])


def _lift_factors(U: np.ndarray):
    """Columns whose outer products sum to the embedding of ``U U^H``."""
    Re, Im = U.real, U.imag
    return np.hstack([np.vstack([Re, Im]), np.vstack([-Im, Re])])


def _factor(A: Coeff, n: int):
    if isinstance(A, LowRank):
        return A.U, A.d
    A = herm(np.asarray(A, dtype=complex))
    w, V = np.linalg.eigh(A)
    keep = np.abs(w) > 1e-14 * max(1.0, np.abs(w).max())
    return V[:, keep], w[keep]


class _Block:
    """One lifted PSD block with all constraint factors stacked."""

    def __init__(self, n: int, C, factors, m: int):
        self.n = n
        self.nn = 2 * n
        self.C = np.zeros((self.nn, self.nn)) if C is None else 0.5 * _lift_dense(herm(C))
        cols, weights, owners = [], [], []
        for j, (U, d) in factors:
            L = _lift_factors(U)
            cols.append(L)
            weights.append(0.5 * np.concatenate([d, d]))
            owners.append(np.full(L.shape[1], j))
        if cols:
            self.V = np.hstack(cols)
            self.d = np.concatenate(weights)
            own = np.concatenate(owners)
        else:
            self.V = np.zeros((self.nn, 0))
            self.d = np.zeros(0)
            own = np.zeros(0, dtype=int)
        r = self.V.shape[1]
        self.E = sp.csr_matrix((self.d, (np.arange(r), own)), shape=(r, m))
        self.ET = self.E.T.tocsr()

    def A(self, X):
        # <A_j, X> for all j
        if self.V.shape[1] == 0:
            return 0.0
        q = np.einsum("ir,ir->r", self.V, X @ self.V)
        return self.ET @ q

    def AT(self, y):
        if self.V.shape[1] == 0:
            return np.zeros((self.nn, self.nn))
        w = self.E @ y
        return (self.V * w) @ self.V.T

    def schur(self, W):
        if self.V.shape[1] == 0:
            return 0.0
        P = self.V.T @ W @ self.V
        tmp = self.ET @ (P * P)
        return (self.ET @ tmp.T).T


def _compile(p: SdpProblem, scale_rows: bool = True):
    m = len(p.constraints)
    psd = [b for b, n in enumerate(p.blocks) if n > 1]
    scal = [b for b, n in enumerate(p.blocks) if n == 1]
    ineq = [j for j, c in enumerate(p.constraints) if c.sense == "<="]
    n_l = len(scal) + len(ineq)

    bvec = np.array([c.bound for c in p.constraints], dtype=float)
    rowscale = np.ones(m)
    if scale_rows:
        for j, con in enumerate(p.constraints):
            nrm = 0.0
            for A in con.coeffs.values():
                dense = A.dense() if isinstance(A, LowRank) else np.asarray(A)
                nrm = max(nrm, float(np.linalg.norm(dense)))
            # Bounds count too: a tiny-coefficient row with bound 1 must not
            # be blown up to a huge right-hand side.
            nrm = max(nrm, abs(float(con.bound)))
            rowscale[j] = 1.0 / nrm if nrm > 0 else 1.0

    factors = {b: [] for b in psd}
    Al = np.zeros((m, n_l))
    cl = np.zeros(n_l)
    for i, b in enumerate(scal):
        C = p.objective[b]
        cl[i] = -float(np.real(np.asarray(C).reshape(()))) if C is not None else 0.0
    for j, con in enumerate(p.constraints):
        for blk, A in con.coeffs.items():
            if p.blocks[blk] == 1:
                val = A.dense()[0, 0].real if isinstance(A, LowRank) else float(np.real(np.asarray(A).reshape(())))
                Al[j, scal.index(blk)] += val * rowscale[j]
            else:
                U, d = _factor(A, p.blocks[blk])
                if U.shape[1]:
                    factors[blk].append((j, (U, d * rowscale[j])))
    for i, j in enumerate(ineq):
        Al[j, len(scal) + i] = 1.0

    blocks = []
    for b in psd:
        C = p.objective[b]
        if C is not None:
            C = -(C.dense() if isinstance(C, LowRank) else np.asarray(C, dtype=complex))
        blocks.append(_Block(p.blocks[b], C, factors[b], m))
    return blocks, psd, scal, Al, cl, bvec * rowscale, rowscale


def _structured(X):
    # Nearest symmetric matrix of the form [[A, -B], [B, A]]; PSD is preserved.
    n = X.shape[0] // 2
    X = 0.5 * (X + X.T)
    A = 0.5 * (X[:n, :n] + X[n:, n:])
    B = 0.5 * (X[n:, :n] - X[:n, n:])
    return np.block([[A, -B], [B, A]])


def _psd_root(X):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(X)
        floor = 1e-300 + np.finfo(float).eps * max(w[-1], 0.0) * 1e-6
        return V * np.sqrt(np.clip(w, floor, None))


def _nt_scaling(X, Z):
    L1 = _psd_root(X)
    L2 = _psd_root(Z)
    U, s, Vt = np.linalg.svd(L2.T @ L1)
    isq = 1.0 / np.sqrt(s)
    R = (L1 @ Vt.T) * isq
    Rinv = (U.T @ L2.T) * isq[:, None]
    return R, Rinv, s


def _max_step(lam, D):
    """Largest alpha with diag(lam) + alpha D >= 0 (lam > 0)."""
    isq = 1.0 / np.sqrt(lam)
    S = D * np.outer(isq, isq)
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))[0]
    return np.inf if ev >= 0 else -1.0 / ev


def solve_sdp(p: SdpProblem, tol: float = 1e-9, max_iters: int = 100,
              verbose: bool = False) -> SdpSolution:
    """Solve ``p`` to relative duality gap and residuals below ``tol``.

    Status is ``"optimal"``, ``"max_iter"``, ``"infeasible"`` (primal
    infeasibility certificate found) or ``"unbounded"`` (dual certificate).
    """
    blocks, psd, scal, Al, cl, b, rowscale = _compile(p)
    m = len(b)
    n_l = Al.shape[1]
    nu = sum(blk.nn for blk in blocks) + n_l

    cnorm = max(1.0, max([np.linalg.norm(blk.C) for blk in blocks] + [np.linalg.norm(cl)]))
    for blk in blocks:
        blk.C = blk.C / cnorm
    cl = cl / cnorm
    cnorm_s = 1.0 + np.sqrt(sum(np.sum(blk.C ** 2) for blk in blocks) + cl @ cl)

    xi = max(10.0, np.sqrt(nu), np.max(np.abs(b), initial=0.0) * 10.0)
    eta = max(10.0, np.sqrt(nu))
    Xs = [xi * np.eye(blk.nn) for blk in blocks]
    Zs = [eta * np.eye(blk.nn) for blk in blocks]
    xl = np.full(n_l, xi)
    zl = np.full(n_l, eta)
    y = np.zeros(m)

    def Aop(Xs_, xl_):
        out = Al @ xl_ if n_l else np.zeros(m)
        for blk, X in zip(blocks, Xs_):
            out = out + blk.A(X)
        return out

    status = "max_iter"
    it = 0
    gap_rel = pinf = dinf = np.inf
    best = (np.inf, 0, None, None, None, None)
    for it in range(1, max_iters + 1):
        rp = b - Aop(Xs, xl)
        Rd = [blk.C - blk.AT(y) - Z for blk, Z in zip(blocks, Zs)]
        rdl = cl - Al.T @ y - zl if n_l else np.zeros(0)
        pobj = sum(np.sum(blk.C * X) for blk, X in zip(blocks, Xs)) + cl @ xl
        dobj = b @ y
        mu = (sum(np.sum(X * Z) for X, Z in zip(Xs, Zs)) + xl @ zl) / nu
        # Per-row relative residual, matching SdpProblem.max_violation.
        pinf = float(np.max(np.abs(rp) / (1.0 + np.abs(b)), initial=0.0))
        dinf = np.sqrt(sum(np.sum(R * R) for R in Rd) + rdl @ rdl) / cnorm_s
        # Relative gap in the caller's units, not the cost-normalized ones.
        gap_rel = cnorm * abs(pobj - dobj) / (1.0 + cnorm * (abs(pobj) + abs(dobj)))
        if verbose:
            print(f"{it:3d} pobj={pobj:+.8e} dobj={dobj:+.8e} gap={gap_rel:.1e} "
                  f"pinf={pinf:.1e} dinf={dinf:.1e} mu={mu:.1e}")
        merit = max(gap_rel, pinf, dinf)
        if merit < best[0]:
            best = (merit, it, [X.copy() for X in Xs], xl.copy(), y.copy(),
                    (gap_rel, pinf, dinf, dobj))
        if merit <= tol:
            status = "optimal"
            break
        # Degenerate problems can lose primal accuracy once mu is tiny; stop
        # when the best merit has not improved for a while.
        if it - best[1] >= 8 and mu < 1e-12 * (1.0 + abs(pobj)):
            break
        # infeasibility certificates
        if dobj > 0:
            cert = np.sqrt(sum(np.sum((blk.AT(y) + Z) ** 2) for blk, Z in zip(blocks, Zs))
                           + np.sum((Al.T @ y + zl) ** 2)) / dobj
            if cert < 1e-8 and dobj > 1e8:
                status = "infeasible"
                break
        if pobj < 0:
            cert = np.linalg.norm(Aop(Xs, xl)) / -pobj if m else 0.0
            if cert < 1e-8 and -pobj > 1e8:
                status = "unbounded"
                break

        try:
            scal_ = [_nt_scaling(X, Z) for X, Z in zip(Xs, Zs)]
        except np.linalg.LinAlgError:
            break
        Ws = [R @ R.T for R, _, _ in scal_]
        wl = xl / zl

        Msch = (Al * wl) @ Al.T if n_l else np.zeros((m, m))
        for blk, W in zip(blocks, Ws):
            Msch = Msch + blk.schur(W)
        Msch = 0.5 * (Msch + Msch.T)
        try:
            fac = sla.cho_factor(Msch + 1e-14 * np.trace(Msch) / max(m, 1) * np.eye(m))
            base_solve = lambda r: sla.cho_solve(fac, r)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            lu = sla.lu_factor(Msch + 1e-12 * np.eye(m))
            base_solve = lambda r: sla.lu_solve(lu, r)

        def msolve(r, M=Msch, solve=base_solve):
            # Two rounds of iterative refinement: near-parallel rows make M
            # ill-conditioned close to the optimum.
            x = solve(r)
            for _ in range(2):
                x = x + solve(r - M @ x)
            return x

        WRdW = [W @ R @ W for W, R in zip(Ws, Rd)]

        def direction(Rcs, rcl):
            rhs = rp - Aop(Rcs, rcl) + Aop(WRdW, wl * rdl)
            dy = msolve(rhs)
            dZ = [R - blk.AT(dy) for R, blk in zip(Rd, blocks)]
            dX = [Rc - W @ dz @ W for Rc, W, dz in zip(Rcs, Ws, dZ)]
            dzl = rdl - Al.T @ dy if n_l else np.zeros(0)
            dxl = rcl - wl * dzl
            return dX, dy, dZ, dxl, dzl

        def steps(dX, dZ, dxl, dzl):
            ap = ad = np.inf
            for (R, Rinv, lam), dx, dz in zip(scal_, dX, dZ):
                ap = min(ap, _max_step(lam, Rinv @ dx @ Rinv.T))
                ad = min(ad, _max_step(lam, R.T @ dz @ R))
            neg = dxl < 0
            if np.any(neg):
                ap = min(ap, np.min(-xl[neg] / dxl[neg]))
            neg = dzl < 0
            if np.any(neg):
                ad = min(ad, np.min(-zl[neg] / dzl[neg]))
            return ap, ad

        # predictor
        dX, dy, dZ, dxl, dzl = direction([-X for X in Xs], -xl)
        ap, ad = steps(dX, dZ, dxl, dzl)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (sum(np.sum((X + ap * dx) * (Z + ad * dz)) for X, Z, dx, dz in zip(Xs, Zs, dX, dZ))
                  + (xl + ap * dxl) @ (zl + ad * dzl)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # corrector
        Rcs = []
        for (R, Rinv, lam), dx, dz in zip(scal_, dX, dZ):
            dxt = Rinv @ dx @ Rinv.T
            dzt = R.T @ dz @ R
            rhs = sigma * mu * np.eye(lam.size) - np.diag(lam * lam) - 0.5 * (dxt @ dzt + dzt @ dxt)
            D = 2.0 * rhs / (lam[:, None] + lam[None, :])
            Rcs.append(R @ D @ R.T)
        rcl = (sigma * mu - xl * zl - dxl * dzl) / zl
        dX, dy, dZ, dxl, dzl = direction(Rcs, rcl)
        ap, ad = steps(dX, dZ, dxl, dzl)
        gamma = 0.98 if it < 5 else 0.995
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)

        Xs = [X + ap * dx for X, dx in zip(Xs, dX)]
        Xs = [_structured(X) for X in Xs]
        xl = xl + ap * dxl
        y = y + ad * dy
        Zs = [Z + ad * dz for Z, dz in zip(Zs, dZ)]
        Zs = [_structured(Z) for Z in Zs]
        zl = zl + ad * dzl

    if best[2] is not None:
        _, _, Xs, xl, y, (gap_rel, pinf, dinf, dobj) = best
    # recover complex blocks
    Xout: list = [None] * len(p.blocks)
    for bi, blk, X in zip(psd, blocks, Xs):
        n = blk.n
        Xc = 0.5 * (X[:n, :n] + X[n:, n:]) + 0.5j * (X[n:, :n] - X[:n, n:])
        Xout[bi] = herm(Xc)
    for i, bi in enumerate(scal):
        Xout[bi] = float(xl[i])
    obj = p.objective_value(Xout)
    return SdpSolution(X=Xout, objective_value=obj, status=status, duality_gap=float(gap_rel),
                       primal_residual=float(pinf), dual_residual=float(dinf), iterations=it,
                       multipliers=-y * rowscale * cnorm,
                       dual_bound=float(p.constant - dobj * cnorm))


def dump_sdpa(p: SdpProblem, path: str | Path) -> None:
    """Write the real-embedded problem in SDPA sparse format (``.dat-s``).

    SDPA convention is ``maximize b^T y`` over the dual; we emit the primal
    in the form ``min c^T x`` expected by most readers, with inequality
    slacks as an explicit diagonal block.
    """
    blocks, psd, scal, Al, cl, b, rowscale = _compile(p, scale_rows=False)
    m = len(b)
    lines = [f"* wbcog SDP export: {m} constraints", str(m)]
    nblk = len(blocks) + (1 if Al.shape[1] else 0)
    lines.append(str(nblk))
    dims = [str(blk.nn) for blk in blocks] + ([str(-Al.shape[1])] if Al.shape[1] else [])
    lines.append(" ".join(dims))
    lines.append(" ".join(repr(float(v)) for v in b))

    def emit(mat_idx, blk_idx, M):
        n = M.shape[0]
        for i in range(n):
            for j in range(i, n):
                if M[i, j] != 0.0:
                    lines.append(f"{mat_idx} {blk_idx} {i + 1} {j + 1} {float(M[i, j])!r}")

    for bi, blk in enumerate(blocks, start=1):
        emit(0, bi, blk.C)
    if Al.shape[1]:
        for i, v in enumerate(cl):
            if v:
                lines.append(f"0 {nblk} {i + 1} {i + 1} {float(v)!r}")
    for j in range(m):
        for bi, blk in enumerate(blocks, start=1):
            mask = np.asarray(blk.E[:, j].todense()).ravel()
            sel = mask != 0
            if np.any(sel):
                A = (blk.V[:, sel] * mask[sel]) @ blk.V[:, sel].T
                emit(j + 1, bi, A)
        for i in range(Al.shape[1]):
            if Al[j, i]:
                lines.append(f"{j + 1} {nblk} {i + 1} {i + 1} {float(Al[j, i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")
