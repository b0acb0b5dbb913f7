"""Joint transmit design on the sensing sub-carriers.

Alternating optimization: with the transmit covariances fixed, each target
gets the MMSE combiner in closed form; with the combiners fixed, the
interference logs of the rate expressions are linearized at the current
point (SCA) and the resulting concave program over the lifted covariances
``W_k`` (primary) and ``S`` (secondary) is solved.  The remaining concave
``log(affine)`` terms are handled with tangent cuts on hypograph variables,
so every subproblem handed to :mod:`wbcog.sdp` is a plain linear SDP.  After
the loop, rank-one beamformers are extracted by principal eigenvector or
Gaussian randomization.

Inside the SDP the problem is normalized: noise power is 1 and the
covariances are divided by their power budgets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .sdp import Constraint, LowRank, SdpProblem, solve_sdp

__all__ = [
    "SubcarrierProblem",
    "subcarrier_problem",
    "JointSolution",
    "Linearization",
    "Q3",
    "sensing_covariance",
    "mmse_combiner",
    "sensing_sinr",
    "comm_sinr_sensing",
    "objective_value",
    "sca_coefficients",
    "build_q3",
    "solve_q3",
    "rank1_extract",
    "ao_solve",
    "write_ao_trace_csv",
    "JointBeamformer",
    "AoError",
    "Rank1Error",
]


class AoError(RuntimeError):
    """An SDP failure inside the alternating loop."""


class Rank1Error(RuntimeError):
    """Gaussian randomization found no feasible candidate."""

    def __init__(self, msg, best=None, violation=None):
        super().__init__(msg)
        self.best = best
        self.violation = violation


@dataclass(frozen=True)
class SubcarrierProblem:
    """Everything the joint design needs for one sensing sub-carrier.

    ``h`` and ``g`` hold only the users served on this sub-carrier.  When
    ``design_primary`` is false the primary covariance is frozen at
    ``R_fixed`` and no ``W`` blocks are optimized.
    """

    h: np.ndarray               # (K_l, M)
    g: np.ndarray               # (K_l, N)
    F: np.ndarray               # (M, N)
    a: np.ndarray               # (T, N)
    b: np.ndarray               # (T, N)
    G: np.ndarray               # (N, N)
    beta: np.ndarray            # (T,)
    sigma2: float
    beta_SI: float
    p_max: float
    p_max_prime: float
    delta_max: float = math.inf
    weight: float = 1.0         # tau_s / tau
    design_primary: bool = True
    R_fixed: np.ndarray | None = None
    comm_terms: bool = True

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.F.shape[0]

    @property
    def N(self) -> int:
        return self.F.shape[1]

    @property
    def T(self) -> int:
        return self.a.shape[0]

    @property
    def has_W(self) -> bool:
        return self.design_primary and self.K > 0 and self.p_max > 0


def subcarrier_problem(ch, users, l: int, sc, **overrides) -> SubcarrierProblem:
    """Slice a :class:`~wbcog.channels.ChannelSet` for sub-carrier ``l``."""
    users = np.asarray(users, dtype=int)
    kw = dict(h=ch.h[l, users], g=ch.g[l, users], F=ch.F[l], a=ch.a[l], b=ch.b[l],
              G=ch.G_SI[l], beta=np.asarray(ch.beta), sigma2=float(ch.sigma2),
              beta_SI=sc.beta_SI, p_max=sc.p_max, p_max_prime=sc.p_max_prime,
              delta_max=sc.delta_max, weight=sc.tau_s / sc.tau)
    kw.update(overrides)
    return SubcarrierProblem(**kw)


# --------------------------------------------------------------------------
# rate expressions (covariance form)
# --------------------------------------------------------------------------

def _quad(v, X) -> float:
    return float(np.real(np.vdot(v, X @ v)))


def _R_x(P: SubcarrierProblem, W) -> np.ndarray:
    if P.has_W:
        return sum(W) if len(W) else np.zeros((P.M, P.M), complex)
    if P.R_fixed is not None:
        return np.asarray(P.R_fixed)
    return np.zeros((P.M, P.M), complex)


def sensing_covariance(P: SubcarrierProblem, S, R_x, t: int) -> np.ndarray:
    """Interference-plus-noise covariance seen by the combiner of target ``t``."""
    N = P.N
    Q = P.sigma2 * np.eye(N, dtype=complex)
    for j in range(P.T):
        if j != t:
            w = abs(P.beta[j]) ** 2 * _quad(P.a[j], S)
            Q += w * np.outer(P.b[j], P.b[j].conj())
    Q += P.F.conj().T @ R_x @ P.F
    Q += P.beta_SI * (P.G.conj().T @ S @ P.G)
    return 0.5 * (Q + Q.conj().T)


def mmse_combiner(P: SubcarrierProblem, S, R_x, t: int) -> np.ndarray:
    """Unit-norm ``Q^{-1} b_t / ||Q^{-1} b_t||``."""
    Q = sensing_covariance(P, S, R_x, t)
    x = np.linalg.solve(Q, P.b[t])
    nrm = np.linalg.norm(x)
    if not np.isfinite(nrm) or nrm == 0:
        raise np.linalg.LinAlgError(f"degenerate combiner for target {t}")
    return x / nrm


def sensing_sinr(P: SubcarrierProblem, u, S, R_x, t: int) -> float:
    num = abs(P.beta[t]) ** 2 * _quad(P.a[t], S) * abs(np.vdot(u, P.b[t])) ** 2
    den = float(np.real(np.vdot(u, sensing_covariance(P, S, R_x, t) @ u)))
    return num / den


def comm_sinr_sensing(P: SubcarrierProblem, W, S, k: int) -> float:
    """SINR of user ``k`` during the sensing phase, including ``g^H S g``."""
    sig = _quad(P.h[k], W[k])
    intf = sum(_quad(P.h[k], W[i]) for i in range(len(W)) if i != k)
    return sig / (intf + _quad(P.g[k], S) + P.sigma2)


# --------------------------------------------------------------------------
# quadratic-form bookkeeping: the objective only sees v^H X v for a fixed
# set of probe vectors per block, which makes batch evaluation cheap.
# --------------------------------------------------------------------------

def _probes(P: SubcarrierProblem, U):
    FU = np.array([P.F @ u for u in U]).reshape(P.T, P.M)
    GU = np.array([P.G @ u for u in U]).reshape(P.T, P.N)
    ub = np.abs(np.conj(np.asarray(U).reshape(P.T, P.N)) @ P.b.T) ** 2   # ub[t, j] = |u_t^H b_j|^2
    return FU, GU, ub


def _forms(P, W, S, U):
    FU, GU, _ = _probes(P, U)
    q = lambda V, X: np.real(np.einsum("ri,ij,rj->r", V.conj(), X, V))
    out = {
        "gS": q(P.g, S) if P.K else np.zeros(0),
        "aS": q(P.a, S),
        "siS": q(GU, S),
    }
    if P.K and len(W):
        out["hW"] = np.stack([q(P.h, Wi) for Wi in W], axis=1)     # (K, K_i)
    else:
        out["hW"] = np.zeros((P.K, P.K))
    R = _R_x(P, W)
    out["fR"] = q(FU, R)
    return out


def _rates_from_forms(P, forms, U):
    """Per-user and per-target log2(1 + SINR); trailing axes broadcast."""
    _, _, ub = _probes(P, U)
    s2 = P.sigma2
    hW = forms["hW"]
    if P.K and P.comm_terms and P.has_W:
        sig = np.stack([hW[k, k] for k in range(P.K)])
        tot = hW.sum(axis=1)
        gam = sig / (tot - sig + forms["gS"] + s2)
        comm = np.log2(1.0 + gam)
    else:
        comm = np.zeros((0,) + np.shape(forms["aS"])[1:])
    b2 = np.abs(P.beta) ** 2
    aS = forms["aS"]
    sens = []
    for t in range(P.T):
        num = b2[t] * ub[t, t] * aS[t]
        tot = np.tensordot(b2 * ub[t], aS, axes=(0, 0))
        den = tot - num + forms["fR"][t] + P.beta_SI * forms["siS"][t] + s2
        sens.append(np.log2(1.0 + num / den))
    return comm, np.array(sens)


def objective_value(P: SubcarrierProblem, W, S, U) -> float:
    """``weight * (sum_k log2(1+gamma'_k) + sum_t log2(1+Upsilon_t))``."""
    comm, sens = _rates_from_forms(P, _forms(P, W, S, U), U)
    return float(P.weight * (comm.sum() + sens.sum()))


# --------------------------------------------------------------------------
# SCA linearization and the cut-based Q3 solve
# --------------------------------------------------------------------------

@dataclass
class _Affine:
    """``const + sum_b Re Tr(A_b X_b)`` on normalized variables."""

    terms: dict = field(default_factory=dict)      # block -> list of (vectors (r, n), weights (r,))
    const: float = 1.0

    def add(self, blk, vecs, wts):
        vecs = np.atleast_2d(vecs)
        wts = np.atleast_1d(np.asarray(wts, dtype=float))
        keep = wts != 0
        if np.any(keep):
            self.terms.setdefault(blk, []).append((vecs[keep], wts[keep]))

    def coeff(self, blk, scale=1.0):
        parts = self.terms.get(blk)
        if not parts:
            return None
        V = np.vstack([p[0] for p in parts])
        d = np.concatenate([p[1] for p in parts]) * scale
        return LowRank(V.T, d)

    def value(self, X) -> float:
        total = self.const
        for blk, parts in self.terms.items():
            for V, d in parts:
                total += float(np.real(np.einsum("ri,ij,rj->r", V.conj(), X[blk], V)) @ d)
        return total


@dataclass
class Linearization:
    """Expansion-point data of the SCA step.

    ``D[k]`` and ``B[t]`` are the interference-plus-noise powers (mW) of
    user ``k`` and target ``t`` at the expansion point.  ``f_weights[t, j]``
    is ``|b_j^H u_t|^2`` (the scalar part of ``a_j b_j^H u_t``), ``g_I[t] =
    F u_t`` and ``g_SI[t] = G u_t``.
    """

    D: np.ndarray
    B: np.ndarray
    U: np.ndarray
    f_weights: np.ndarray
    g_I: np.ndarray
    g_SI: np.ndarray
    num_comm: list
    den_comm: list
    num_sens: list
    den_sens: list
    constant: float                      # value of the surrogate's constant part (nats)


def _block_layout(P):
    nW = P.K if P.has_W else 0
    return nW, nW            # W blocks 0..nW-1, S block index nW


def _normalized_terms(P: SubcarrierProblem, U):
    """Affine numerator/denominator functions in normalized variables."""
    nW, iS = _block_layout(P)
    s2 = P.sigma2
    cW = P.p_max / s2
    cS = P.p_max_prime / s2
    FU, GU, ub = _probes(P, U)
    R_const = 0.0
    num_c, den_c = [], []
    if P.comm_terms and nW:
        for k in range(P.K):
            num, den = _Affine(), _Affine()
            for i in range(nW):
                num.add(i, P.h[k], cW)
                if i != k:
                    den.add(i, P.h[k], cW)
            num.add(iS, P.g[k], cS)
            den.add(iS, P.g[k], cS)
            num_c.append(num)
            den_c.append(den)
    b2 = np.abs(P.beta) ** 2
    num_s, den_s = [], []
    for t in range(P.T):
        num, den = _Affine(), _Affine()
        if not P.has_W:
            R_const = _quad(FU[t], _R_x(P, [])) / s2
            num.const += R_const
            den.const += R_const
        w = b2 * ub[t] * cS
        num.add(iS, P.a, w)
        den.add(iS, np.delete(P.a, t, axis=0), np.delete(w, t))
        for blk_aff in (num, den):
            blk_aff.add(iS, GU[t], P.beta_SI * cS)
            for i in range(nW):
                blk_aff.add(i, FU[t], cW)
        num_s.append(num)
        den_s.append(den)
    return num_c, den_c, num_s, den_s, FU, GU, ub


def _normalize(P, W, S):
    nW, iS = _block_layout(P)
    X = [np.asarray(W[i]) / P.p_max for i in range(nW)]
    X.append(np.asarray(S) / P.p_max_prime)
    return X


def _denormalize(P, X):
    nW, iS = _block_layout(P)
    W = [X[i] * P.p_max for i in range(nW)]
    return W, X[iS] * P.p_max_prime


def sca_coefficients(P: SubcarrierProblem, W, S, U) -> Linearization:
    """Linearize the interference logs at ``(W, S)`` for combiners ``U``."""
    U = np.asarray(U).reshape(P.T, P.N)
    num_c, den_c, num_s, den_s, FU, GU, ub = _normalized_terms(P, U)
    X = _normalize(P, W, S)
    Dn = np.array([d.value(X) for d in den_c])
    Bn = np.array([d.value(X) for d in den_s])
    # Constant part of  -ln(den_p) - (den - den_p)/den_p  with den's own constant.
    const = float(sum(-np.log(dp) + 1.0 - d.const / dp
                      for d, dp in zip(den_c + den_s, np.concatenate([Dn, Bn]))))
    return Linearization(D=Dn * P.sigma2, B=Bn * P.sigma2, U=U, f_weights=ub, g_I=FU, g_SI=GU,
                         num_comm=num_c, den_comm=den_c, num_sens=num_s, den_sens=den_s,
                         constant=const)


@dataclass
class Q3:
    """A cut model of the SCA subproblem, ready for :func:`solve_sdp`.

    Constraint order: interference limits (one per user), primary power
    (when ``W`` blocks exist), secondary power, then the tangent cuts.
    """

    problem: SdpProblem
    n_interference: int
    n_power: int
    n_cuts: int
    log_terms: list
    n_blocks: int


def _linear_objective(P, lin: Linearization):
    nW, iS = _block_layout(P)
    C = [None] * (nW + 1)
    dens = lin.den_comm + lin.den_sens
    dps = np.concatenate([lin.D, lin.B]) / P.sigma2
    for d, dp in zip(dens, dps):
        for blk in d.terms:
            A = d.coeff(blk, -1.0 / dp).dense()
            C[blk] = A if C[blk] is None else C[blk] + A
    return C


def build_q3(P: SubcarrierProblem, lin: Linearization, cuts=None) -> Q3:
    """Assemble the SDP.  ``cuts[i]`` lists the tangent points (normalized
    argument values) for log term ``i`` (users first, then targets)."""
    nW, iS = _block_layout(P)
    logs = lin.num_comm + lin.num_sens
    n_log = len(logs)
    blocks = [P.M] * nW + [P.N] + [1] * n_log
    C = _linear_objective(P, lin)
    C = [np.zeros((n, n)) if c is None else c for c, n in zip(C, blocks)] + [np.ones((1, 1))] * n_log
    cons = []
    n_int = 0
    if math.isfinite(P.delta_max):
        for k in range(P.K):
            A = LowRank(P.g[k], [P.p_max_prime / P.delta_max])
            cons.append(Constraint({iS: A}, 1.0))
            n_int += 1
    n_pow = 0
    if nW:
        cons.append(Constraint({i: np.eye(P.M) for i in range(nW)}, 1.0))
        n_pow += 1
    cons.append(Constraint({iS: np.eye(P.N)}, 1.0))
    n_pow += 1
    n_cut = 0
    for i, term in enumerate(logs):
        for c in (cuts[i] if cuts is not None else ()):
            coeffs = {blk: term.coeff(blk, -1.0 / c) for blk in term.terms}
            coeffs[nW + 1 + i] = np.ones((1, 1))
            cons.append(Constraint(coeffs, math.log(c) - 1.0 + term.const / c))
            n_cut += 1
    prob = SdpProblem(blocks=blocks, objective=C, constraints=cons, constant=lin.constant)
    return Q3(problem=prob, n_interference=n_int, n_power=n_pow, n_cuts=n_cut,
              log_terms=logs, n_blocks=nW + 1)


def _surrogate(P, lin, X) -> float:
    """Exact (uncut) SCA surrogate in nats at normalized ``X``."""
    logs = lin.num_comm + lin.num_sens
    dens = lin.den_comm + lin.den_sens
    dps = np.concatenate([lin.D, lin.B]) / P.sigma2
    val = sum(math.log(t.value(X)) for t in logs)
    val += sum(-math.log(dp) - (d.value(X) - dp) / dp for d, dp in zip(dens, dps))
    return float(val)


def _clean(P, X):
    """Clip tiny negative eigenvalues and scale onto the feasible set."""
    nW, iS = _block_layout(P)
    out = []
    for Xb in X:
        Xb = 0.5 * (Xb + Xb.conj().T)
        w, V = np.linalg.eigh(Xb)
        out.append((V * np.clip(w, 0.0, None)) @ V.conj().T)
    if nW:
        tr = sum(np.real(np.trace(out[i])) for i in range(nW))
        if tr > 1.0:
            for i in range(nW):
                out[i] = out[i] / tr
    s = np.real(np.trace(out[iS]))
    if math.isfinite(P.delta_max) and P.K:
        s = max(s, max(_quad(g, out[iS]) * P.p_max_prime / P.delta_max for g in P.g))
    if s > 1.0:
        out[iS] = out[iS] / s
    return out


_CUT_GRID = np.exp(np.arange(-1.5, 1.5 + 1e-9, 0.125))


def solve_q3(P: SubcarrierProblem, lin: Linearization, X0, tol: float = 1e-4,
             max_rounds: int = 60, sdp_tol: float = 1e-8, warm_cuts=None):
    """Maximize the SCA surrogate by tangent-cut refinement.

    ``X0`` (normalized, feasible) is the expansion point; the returned point
    never has a lower surrogate value than ``X0``.  Every tangent of ``ln``
    is a valid upper bound, so ``warm_cuts`` (tangent points per log term,
    e.g. from the previous outer iteration) may be reused.  Returns
    ``(X, surrogate_value, info)``; ``info["cuts"]`` holds the final
    tangent points.
    """
    logs = lin.num_comm + lin.num_sens
    v0 = [t.value(X0) for t in logs]
    cuts = [list(v * _CUT_GRID) for v in v0]
    if warm_cuts is not None and len(warm_cuts) == len(logs):
        for i, extra in enumerate(warm_cuts):
            for c in extra:
                if all(abs(math.log(c / d)) > 1e-3 for d in cuts[i]):
                    cuts[i].append(c)
    best_X, best = X0, _surrogate(P, lin, X0)
    info = {"rounds": 0, "gap": math.inf, "sdp_iterations": 0, "max_violation": 0.0}
    for r in range(1, max_rounds + 1):
        q3 = build_q3(P, lin, cuts)
        sol = solve_sdp(q3.problem, tol=sdp_tol)
        info["rounds"] = r
        info["sdp_iterations"] += sol.iterations
        if sol.status not in ("optimal", "max_iter"):
            raise AoError(f"Q3 solve failed with status {sol.status!r} (round {r})")
        info["max_violation"] = max(info["max_violation"], q3.problem.max_violation(sol.X))
        X = _clean(P, [sol.X[b] for b in range(q3.n_blocks)])
        val = _surrogate(P, lin, X)
        if val > best:
            best_X, best = X, val
        ub = max(sol.dual_bound, sol.objective_value)
        info["gap"] = ub - best
        if ub - best <= tol * max(1.0, abs(best)):
            break
        y = [float(np.real(np.asarray(sol.X[q3.n_blocks + i])).reshape(-1)[0]) for i in range(len(logs))]
        added = False
        for i, t in enumerate(logs):
            v = t.value(X)
            if v > 0 and y[i] - math.log(v) > 0.1 * tol:
                cuts[i].append(v)
                added = True
        if not added:
            break
    info["cuts"] = cuts
    return best_X, best, info


# --------------------------------------------------------------------------
# rank-one extraction
# --------------------------------------------------------------------------

def rank1_extract(X, checker=None, objective=None, D: int = 1000, rng=None,
                  ratio_tol: float = 1e-6, chunk: int = 10_000):
    """Rank-one vector from a PSD matrix.

    Returns ``sqrt(lam_1) q_1`` when ``lam_2 / lam_1 <= ratio_tol``.
    Otherwise draws ``D`` candidates ``U diag(lam)^{1/2} e`` with standard
    complex Gaussian ``e``, rescales each to ``||r||^2 = Tr(X)``, keeps those
    for which ``checker`` (a function of an ``(n, d)`` batch returning a
    boolean mask) holds and returns the one maximizing ``objective``
    (batch to values).  Without ``objective`` the first feasible draw wins.
    """
    X = 0.5 * (np.asarray(X) + np.asarray(X).conj().T)
    n = X.shape[0]
    lam, Q = np.linalg.eigh(X)
    lam = np.clip(lam[::-1], 0.0, None)
    Q = Q[:, ::-1]
    if lam[0] <= 0:
        return np.zeros(n, complex)
    if n == 1 or lam[1] / lam[0] <= ratio_tol:
        return np.sqrt(lam[0]) * Q[:, 0]
    rng = np.random.default_rng() if rng is None else rng
    root = Q * np.sqrt(lam)
    trace = lam.sum()
    best, best_val = None, -math.inf
    worst_R = None
    done = 0
    while done < D:
        m = min(chunk, D - done)
        E = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / math.sqrt(2.0)
        R = root @ E
        R *= np.sqrt(trace) / np.linalg.norm(R, axis=0)
        ok = np.ones(m, bool) if checker is None else np.asarray(checker(R), bool)
        if np.any(ok):
            if objective is None:
                return R[:, np.flatnonzero(ok)[0]]
            vals = np.where(ok, objective(R), -np.inf)
            j = int(np.argmax(vals))
            if vals[j] > best_val:
                best, best_val = R[:, j].copy(), vals[j]
        elif worst_R is None:
            worst_R = R[:, 0].copy()
        done += m
    if best is None:
        raise Rank1Error(f"no feasible candidate among {D} draws", best=worst_R)
    return best


# --------------------------------------------------------------------------
# alternating optimization
# --------------------------------------------------------------------------

@dataclass
class JointSolution:
    W: list
    S: np.ndarray
    w: np.ndarray                       # (M, K_l)
    s: np.ndarray                       # (N,)
    U: np.ndarray                       # (T, N) combiners for the rank-one design
    U_sdr: np.ndarray                   # combiners of the last AO iterate
    trace: list = field(default_factory=list)   # (iteration, F, Upsilon_t..., gamma'_k...)
    objective_sdr: float = 0.0
    objective: float = 0.0
    iterations: int = 0
    converged: bool = False
    q3_info: list = field(default_factory=list)


def _initial_point(P: SubcarrierProblem):
    W = [P.p_max / (P.K * P.M) * np.eye(P.M, dtype=complex) for _ in range(P.K)] if P.has_W else []
    rho = P.p_max_prime / P.N
    if math.isfinite(P.delta_max) and P.K:
        rho = min(rho, P.delta_max / max(np.linalg.norm(g) ** 2 for g in P.g))
    return W, rho * np.eye(P.N, dtype=complex)


def _combiners(P, W, S):
    R = _R_x(P, W)
    return np.array([mmse_combiner(P, S, R, t) for t in range(P.T)]).reshape(P.T, P.N)


def _trace_row(P, it, W, S, U):
    comm, sens = _rates_from_forms(P, _forms(P, W, S, U), U)
    F = float(P.weight * (comm.sum() + sens.sum()))
    ups = (2.0 ** sens - 1.0).tolist()
    gam = (2.0 ** comm - 1.0).tolist()
    return F, (it, F, *ups, *gam)


def _batch_rates(P, forms, U):
    comm, sens = _rates_from_forms(P, forms, U)
    return P.weight * (comm.sum(axis=0) + sens.sum(axis=0))


def ao_solve(P: SubcarrierProblem, epsilon: float = 1e-3, max_iters: int = 20,
             D: int = 1000, rng=None, sdp_tol: float = 1e-8) -> JointSolution:
    """Alternate combiners and SCA steps until the relative gain is below ``epsilon``."""
    rng = np.random.default_rng(0) if rng is None else rng
    W, S = _initial_point(P)
    U = _combiners(P, W, S)
    F, row = _trace_row(P, 0, W, S, U)
    trace = [row]
    infos = []
    cuts = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        lin = sca_coefficients(P, W, S, U)
        try:
            X, _, info = solve_q3(P, lin, _normalize(P, W, S), sdp_tol=sdp_tol, warm_cuts=cuts)
        except AoError as exc:
            raise AoError(f"AO iteration {it}: {exc}") from exc
        cuts = [c[len(_CUT_GRID):] for c in info.pop("cuts")]
        infos.append(info)
        W, S = _denormalize(P, X)
        U = _combiners(P, W, S)
        F_new, row = _trace_row(P, it, W, S, U)
        trace.append(row)
        if F_new <= 0 or (F_new - F) / F_new < epsilon:
            F = F_new
            converged = True
            break
        F = F_new

    w, s = _extract(P, W, S, U, D, rng)
    Wr = [np.outer(w[:, k], w[:, k].conj()) for k in range(w.shape[1])]
    Sr = np.outer(s, s.conj())
    U_final = _combiners(P, Wr, Sr)
    return JointSolution(W=W, S=S, w=w, s=s, U=U_final, U_sdr=U, trace=trace, objective_sdr=F,
                         objective=objective_value(P, Wr, Sr, U_final), iterations=it,
                         converged=converged, q3_info=infos)


def _extract(P, W, S, U, D, rng):
    forms = _forms(P, W, S, U)
    FU, GU, _ = _probes(P, U)

    def s_check(R):
        if not (math.isfinite(P.delta_max) and P.K):
            return np.ones(R.shape[1], bool)
        leak = np.abs(P.g.conj() @ R) ** 2
        return np.all(leak <= P.delta_max * (1.0 + 1e-9), axis=0)

    def s_obj(R):
        f = dict(forms)
        f["gS"] = np.abs(P.g.conj() @ R) ** 2 if P.K else np.zeros((0, R.shape[1]))
        f["aS"] = np.abs(P.a.conj() @ R) ** 2
        f["siS"] = np.abs(GU.conj() @ R) ** 2
        f["hW"] = forms["hW"][..., None]
        f["fR"] = forms["fR"][:, None]
        return _batch_rates(P, f, U)

    s = rank1_extract(S, s_check, s_obj, D, rng)
    trS = float(np.real(np.trace(S)))
    if np.linalg.norm(s) > 0:
        s = s * math.sqrt(trS) / np.linalg.norm(s)
    if math.isfinite(P.delta_max) and P.K:
        leak = float(np.max(np.abs(P.g.conj() @ s) ** 2))
        if leak > P.delta_max:
            s = s * math.sqrt(P.delta_max / leak)

    Sr = np.outer(s, s.conj())
    w = np.zeros((P.M, P.K), complex)
    if P.has_W:
        Wcur = list(W)
        for k in range(P.K):
            base = _forms(P, Wcur, Sr, U)

            def w_obj(R, k=k, base=base):
                f = {key: np.asarray(v)[..., None] for key, v in base.items()}
                hk = np.abs(P.h.conj() @ R) ** 2                    # (K, d)
                hW = np.repeat(f["hW"], R.shape[1], axis=-1)
                hW[:, k, :] = hk
                f["hW"] = hW
                fk = np.abs(FU.conj() @ R) ** 2
                f["fR"] = f["fR"] - _quad_rows(FU, Wcur[k])[:, None] + fk
                return _batch_rates(P, f, U)

            wk = rank1_extract(Wcur[k], None, w_obj, D, rng)
            tr = float(np.real(np.trace(Wcur[k])))
            if np.linalg.norm(wk) > 0:
                wk = wk * math.sqrt(tr) / np.linalg.norm(wk)
            w[:, k] = wk
            Wcur[k] = np.outer(wk, wk.conj())
    return w, s


def _quad_rows(V, X):
    return np.real(np.einsum("ri,ij,rj->r", V.conj(), X, V))


def write_ao_trace_csv(trace, path: str | Path, T: int, K: int) -> None:
    """Columns: iteration, F, upsilon_0..T-1, gamma_0..K-1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "F"] + [f"upsilon_{t}" for t in range(T)]
                   + [f"gamma_{k}" for k in range(K)])
        for row in trace:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


class JointBeamformer(BaseEstimator):
    """Estimator wrapper around :func:`ao_solve`.

    ``fit`` takes a :class:`SubcarrierProblem`; the fitted attributes are
    ``w_`` (primary precoders), ``s_`` (sensing waveform), ``u_``
    (combiners, one row per target) and ``trace_``.
    """

    def __init__(self, epsilon=1e-3, max_iters=20, D=1000, random_state=0, sdp_tol=1e-8):
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.D = D
        self.random_state = random_state
        self.sdp_tol = sdp_tol

    def fit(self, problem: SubcarrierProblem, y=None):
        if not isinstance(problem, SubcarrierProblem):
            raise TypeError("fit expects a SubcarrierProblem")
        rng = np.random.default_rng(self.random_state)
        sol = ao_solve(problem, self.epsilon, self.max_iters, self.D, rng, self.sdp_tol)
        self.solution_ = sol
        self.w_, self.s_, self.u_ = sol.w, sol.s, sol.U
        self.trace_ = sol.trace
        self.n_iter_ = sol.iterations
        return self

    def score(self, problem: SubcarrierProblem, y=None) -> float:
        """Sensing-phase objective of the rank-one design on ``problem``."""
        check_is_fitted(self)
        Wr = [np.outer(c, c.conj()) for c in self.w_.T]
        return objective_value(problem, Wr, np.outer(self.s_, self.s_.conj()), self.u_)
