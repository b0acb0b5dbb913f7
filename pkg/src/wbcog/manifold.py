"""Communication-only precoding by fractional programming on the complex sphere.

For one sub-carrier the sum-rate problem is rewritten with auxiliary
weights ``mu`` (one per user).  With ``mu`` fixed, the remaining problem is
a sum of ratios over the lifted variable ``V`` of shape ``(M+1, K)``, where
the last row is a slack that soaks up unused power and ``Tr(V V^H) = 1``.
The lifted channels ``hhat_k = sqrt(p_max) [h_k; 0]`` carry the power
budget.  The inner problem is solved by Riemannian conjugate gradient
(Hestenes-Stiefel with Armijo backtracking), the outer loop refreshes
``mu`` in closed form.

Channels are passed as a ``(K, M+1)`` array whose row ``k`` is ``hhat_k``
(not conjugated); ``hhat_k^H V E_i`` is ``(Hhat.conj() @ V)[k, i]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_channel_matrix, check_positive

__all__ = [
    "lift_channels",
    "comm_sinr_lifted",
    "lifted_sinrs",
    "fp_update_mu",
    "fp_objective",
    "ratio_objective",
    "euclidean_gradient",
    "project_tangent",
    "retract",
    "initial_point",
    "RcgResult",
    "rcg_solve",
    "recover_precoders",
    "write_trace_csv",
    "ManifoldBeamformer",
]


class NumericError(RuntimeError):
    """Non-finite objective or a degenerate retraction."""


def lift_channels(h, p_max: float) -> np.ndarray:
    """``sqrt(p_max) [h_k; 0]`` stacked as rows, shape ``(K, M+1)``."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    return np.sqrt(p_max) * np.hstack([h, np.zeros((h.shape[0], 1), complex)])


def _coupling(V, H_hat):
    return H_hat.conj() @ V         # C[k, i] = hhat_k^H V e_i


def lifted_sinrs(V, H_hat, sigma2: float) -> np.ndarray:
    P = np.abs(_coupling(V, H_hat)) ** 2
    sig = np.diag(P).copy()
    np.fill_diagonal(P, 0.0)
    return sig / (P.sum(axis=1) + sigma2)


def comm_sinr_lifted(V, H_hat, k: int, sigma2: float) -> float:
    """SINR of user ``k`` for lifted point ``V``."""
    return float(lifted_sinrs(V, H_hat, sigma2)[k])


def fp_update_mu(V, H_hat, sigma2: float) -> np.ndarray:
    """Closed-form optimal auxiliary weights: ``mu_k`` equals the current SINR."""
    return lifted_sinrs(V, H_hat, sigma2)


def ratio_objective(V, mu_hat, H_hat, sigma2: float) -> float:
    """``f(V) = -sum_k mu_hat_k |hhat_k^H V e_k|^2 / (sum_i |hhat_k^H V e_i|^2 + sigma2)``."""
    P = np.abs(_coupling(V, H_hat)) ** 2
    return float(-np.sum(mu_hat * np.diag(P) / (P.sum(axis=1) + sigma2)))


def _excess(V, mu_hat, H_hat, sigma2: float) -> float:
    # ratio_objective + sum(mu_hat), evaluated without the large constant so
    # that line-search comparisons keep their relative precision.
    P = np.abs(_coupling(V, H_hat)) ** 2
    sig = np.diag(P).copy()
    np.fill_diagonal(P, 0.0)
    rest = P.sum(axis=1) + sigma2
    return float(np.sum(mu_hat * rest / (rest + sig)))


def fp_objective(V, mu, H_hat, sigma2: float, scale: float = 1.0) -> float:
    """FP surrogate ``scale * sum_k [ln(1+mu_k) - mu_k + (1+mu_k) g_k/(1+g_k)] / ln 2``.

    With ``mu`` set to the SINRs this equals ``scale * sum_k log2(1 + SINR_k)``.
    """
    mu = np.asarray(mu, dtype=float)
    val = np.sum(np.log1p(mu) - mu) - ratio_objective(V, 1.0 + mu, H_hat, sigma2)
    return float(scale * val / np.log(2.0))


def euclidean_gradient(V, mu_hat, H_hat, sigma2: float) -> np.ndarray:
    """Gradient of :func:`ratio_objective`, as ``df/dRe V + j df/dIm V``."""
    C = _coupling(V, H_hat)
    P = np.abs(C) ** 2
    sig = np.diag(P).copy()
    np.fill_diagonal(P, 0.0)
    rest = P.sum(axis=1) + sigma2
    den = rest + sig
    diag = np.diag(C)
    # Row k of Q collects the coefficients multiplying hhat_k.  The diagonal
    # c/den - |c|^2 c/den^2 is written as c*rest/den^2 to avoid cancellation.
    Q = -(sig / den ** 2)[:, None] * C
    Q[np.diag_indices_from(Q)] = diag * rest / den ** 2
    Q *= np.asarray(mu_hat, dtype=float)[:, None]
    return -2.0 * H_hat.T @ Q


def _inner(X, Y) -> float:
    return float(np.real(np.vdot(X, Y)))


def project_tangent(X, G) -> np.ndarray:
    """Remove the radial part: ``G - Re<X, G> X``."""
    return G - _inner(X, G) * X


def retract(X, step: float, direction, kind: str = "sphere") -> np.ndarray:
    """Move along ``direction`` and map back onto ``Tr(X X^H) = 1``.

    ``kind="elementwise"`` normalizes each entry to equal modulus instead;
    the result still has unit Frobenius norm.
    """
    Y = X + step * direction
    if kind == "elementwise":
        mag = np.abs(Y)
        if np.any(mag == 0):
            raise NumericError("elementwise retraction hit a zero entry")
        return Y / mag / np.sqrt(Y.size)
    nrm = np.linalg.norm(Y)
    if not np.isfinite(nrm) or nrm == 0:
        raise NumericError("retraction produced a zero or non-finite point")
    return Y / nrm


def initial_point(H_hat, slack: float = 1e-3) -> np.ndarray:
    """Matched-filter columns with a small slack row, normalized to the sphere."""
    K, M1 = H_hat.shape
    V = np.zeros((M1, K), complex)
    for k in range(K):
        nrm = np.linalg.norm(H_hat[k])
        V[:, k] = H_hat[k] / nrm if nrm > 0 else np.eye(M1)[0]
    V[-1, :] = slack
    return V / np.linalg.norm(V)


@dataclass
class RcgResult:
    V: np.ndarray
    mu: np.ndarray
    trace: list = field(default_factory=list)   # (outer, inner, objective, grad_norm)
    n_inner: int = 0
    n_outer: int = 0
    converged: bool = False

    @property
    def objective(self) -> np.ndarray:
        return np.array([row[2] for row in self.trace])

    @property
    def grad_norm(self) -> np.ndarray:
        return np.array([row[3] for row in self.trace])


class _LineProblem:
    """``phi(t) = f(R(V + t D))`` and its derivative for a fixed direction."""

    def __init__(self, V, D, mu_hat, H_hat, sigma2, kind):
        self.V, self.D, self.kind = V, D, kind
        self.args = (mu_hat, H_hat, sigma2)

    def point(self, t):
        return retract(self.V, t, self.D, self.kind)

    def value(self, X):
        return _excess(X, *self.args)

    def rgrad(self, X):
        return project_tangent(X, euclidean_gradient(X, *self.args))

    def slope(self, t, X, G):
        # d/dt of the sphere retraction is P_X(D) / ||V + t D||.
        return _inner(G, self.D) / np.linalg.norm(self.V + t * self.D)


def _refine(lp: _LineProblem, slope, t, X, ft, G, rounds, sigma=0.1):
    # Secant steps on the directional derivative toward |phi'(t)| <= sigma |phi'(0)|.
    # CG relies on near-exact line minimization; a trial is kept only if it lowers f.
    for _ in range(rounds):
        dt = lp.slope(t, X, G)
        if abs(dt) <= sigma * abs(slope) or dt == slope:
            break
        tn = t * slope / (slope - dt)
        if not np.isfinite(tn) or tn <= 0:
            break
        Xn = lp.point(tn)
        fn = lp.value(Xn)
        if not fn < ft:
            break
        t, X, ft, G = tn, Xn, fn, lp.rgrad(Xn)
    return t, X, ft, G


def _line_search(lp: _LineProblem, f0, slope, step0, c=1e-4, shrink=0.5,
                 max_backtracks=50, refine=2):
    """Return ``(t, X, f(X), grad(X))`` or ``None`` when no step is found.

    The first trial minimizes the parabola through ``f0``, ``slope`` and
    ``phi(step0)``; then plain Armijo backtracking.  Once the predicted
    decrease drops into rounding noise of ``f``, acceptance switches to
    approximate Wolfe conditions on the directional derivative, which stay
    informative where value differences do not.  An accepted Armijo step
    gets up to ``refine`` secant refinements toward strong Wolfe.
    """
    noise = 4.0 * np.finfo(float).eps * max(1.0, abs(f0))
    X1 = lp.point(step0)
    f1 = lp.value(X1)
    if not np.isfinite(f1):
        raise NumericError(f"non-finite objective along search direction: V={lp.V!r}")
    curv = f1 - f0 - slope * step0
    trials = []
    if curv > 0:
        trials.append(-slope * step0 ** 2 / (2.0 * curv))
    step = min(trials[0], step0) if trials else step0
    for _ in range(max_backtracks + 1):
        trials.append(step)
        step *= shrink
    for t in trials:
        X = lp.point(t)
        ft = lp.value(X)
        if ft <= f0 + c * t * slope and ft - f0 < -noise:
            return _refine(lp, slope, t, X, ft, lp.rgrad(X), refine)
        if -c * t * slope < 1e3 * noise:
            break

    # Derivative-based acceptance (Hager-Zhang approximate Wolfe), secant steps.
    t = trials[0] if trials else step0
    for _ in range(max_backtracks):
        X = lp.point(t)
        ft = lp.value(X)
        G = lp.rgrad(X)
        dt = lp.slope(t, X, G)
        if ft <= f0 + noise and 0.9 * slope <= dt <= -0.8 * slope:
            return t, X, ft, G
        if dt >= slope or dt > 0:
            # Minimizer of the model with derivatives slope at 0 and dt at t.
            t = t * slope / (slope - dt) if dt != slope else t * shrink
        else:
            t *= 2.0
    return None


def rcg_solve(H_hat, sigma2: float, delta_1: float = 1e-6, delta_2: float = 1e-6,
              max_inner: int = 500, max_outer: int = 100, V0=None,
              retraction: str = "sphere") -> RcgResult:
    """Run the FP outer loop around Riemannian CG.

    The recorded objective is the negated FP surrogate (nats, unscaled),
    ``-sum_k [ln(1+mu_k) - mu_k] + f(V)``, which never increases: the CG
    steps are descent steps on ``f`` and each ``mu`` refresh is the exact
    maximizer of the surrogate.  ``max_inner`` caps the CG iterations per
    outer round.
    """
    H_hat = check_channel_matrix(H_hat, "H_hat")
    sigma2 = check_positive(sigma2, "sigma2")
    V = initial_point(H_hat) if V0 is None else np.array(V0, dtype=complex)
    if abs(np.linalg.norm(V) - 1.0) > 1e-9:
        raise ValueError("V0 must lie on the unit sphere")

    mu = fp_update_mu(V, H_hat, sigma2)
    res = RcgResult(V=V, mu=mu)
    surrogate = np.sum(np.log1p(mu) - mu)
    prev_rate = np.log1p(mu).sum()
    total_inner = 0
    for outer in range(1, max_outer + 1):
        mu_hat = 1.0 + mu
        offset = surrogate + mu_hat.sum()
        f = _excess(V, mu_hat, H_hat, sigma2)
        grad = project_tangent(V, euclidean_gradient(V, mu_hat, H_hat, sigma2))
        gnorm = np.linalg.norm(grad)
        res.trace.append((outer, 0, f - offset, gnorm))
        D = -grad
        step = 1.0
        for inner in range(1, max_inner + 1):
            if gnorm <= delta_1:
                break
            lp = _LineProblem(V, D, mu_hat, H_hat, sigma2, retraction)
            found = _line_search(lp, f, _inner(grad, D), min(1.0, 2.0 * step))
            if found is None:
                if np.allclose(D, -grad):
                    break       # stalled at floating-point resolution
                D, step = -grad, 1.0
                continue
            step, Vn, fn, gn = found
            Dt = project_tangent(Vn, D)
            y = gn - project_tangent(Vn, grad)
            denom = _inner(Dt, y)
            beta = max(_inner(gn, y) / denom, 0.0) if denom != 0 else 0.0
            D = -gn + beta * Dt
            if _inner(gn, D) >= 0:
                D = -gn
            V, f, grad, gnorm = Vn, fn, gn, np.linalg.norm(gn)
            total_inner += 1
            res.trace.append((outer, inner, f - offset, gnorm))
        mu = fp_update_mu(V, H_hat, sigma2)
        surrogate = np.sum(np.log1p(mu) - mu)
        rate = np.log1p(mu).sum()
        res.n_outer = outer
        if abs(rate - prev_rate) < delta_2:
            res.converged = True
            break
        prev_rate = rate
    final_f = ratio_objective(V, 1.0 + mu, H_hat, sigma2) - surrogate
    final_g = np.linalg.norm(project_tangent(V, euclidean_gradient(V, 1.0 + mu, H_hat, sigma2)))
    res.trace.append((res.n_outer + 1, 0, final_f, final_g))
    res.V, res.mu, res.n_inner = V, mu, total_inner
    return res


def recover_precoders(V, p_max: float, assigned=None) -> np.ndarray:
    """``w_k = sqrt(p_max) V[:M, k]``; columns of unassigned users are zero."""
    W = np.sqrt(p_max) * np.asarray(V)[:-1, :]
    if assigned is not None:
        W = W * np.asarray(assigned, dtype=float)[None, :]
    return W


def write_trace_csv(trace, path: str | Path) -> None:
    """Write ``iteration, outer, inner, objective, grad_norm`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "outer", "inner", "objective", "grad_norm"])
        for i, (outer, inner, obj, gn) in enumerate(trace):
            w.writerow([i, outer, inner, repr(float(obj)), repr(float(gn))])


class ManifoldBeamformer(BaseEstimator):
    """Sum-rate precoder for a single sub-carrier.

    Parameters
    ----------
    p_max : float
        Transmit power budget (mW).
    sigma2 : float
        Receiver noise power (mW).
    delta_1, delta_2 : float
        Inner gradient-norm and outer objective tolerances.
    max_inner, max_outer : int
        Iteration caps.
    retraction : {"sphere", "elementwise"}

    Attributes
    ----------
    coef_ : ndarray of shape (M, K)
        Precoders, one column per user.
    mu_ : ndarray of shape (K,)
    trace_ : list of tuples
    n_iter_ : int
    """

    def __init__(self, p_max=1000.0, sigma2=1e-9, delta_1=1e-6, delta_2=1e-6,
                 max_inner=500, max_outer=100, retraction="sphere"):
        self.p_max = p_max
        self.sigma2 = sigma2
        self.delta_1 = delta_1
        self.delta_2 = delta_2
        self.max_inner = max_inner
        self.max_outer = max_outer
        self.retraction = retraction

    def fit(self, H, y=None):
        """``H`` has shape ``(K, M)``; row ``k`` is the channel of user ``k``."""
        H = check_channel_matrix(H)
        p_max = check_positive(self.p_max, "p_max")
        res = rcg_solve(lift_channels(H, p_max), self.sigma2, self.delta_1, self.delta_2,
                        self.max_inner, self.max_outer, retraction=self.retraction)
        self.V_ = res.V
        self.coef_ = recover_precoders(res.V, p_max)
        self.mu_ = res.mu
        self.trace_ = res.trace
        self.n_iter_ = res.n_inner
        self.converged_ = res.converged
        return self

    def sinr(self, H) -> np.ndarray:
        check_is_fitted(self)
        H = check_channel_matrix(H)
        P = np.abs(H.conj() @ self.coef_) ** 2
        sig = np.diag(P)
        return sig / (P.sum(axis=1) - sig + self.sigma2)

    def score(self, H, y=None) -> float:
        """Sum rate in bit/s/Hz (no pilot overhead)."""
        return float(np.sum(np.log2(1.0 + self.sinr(H))))
