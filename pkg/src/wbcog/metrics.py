"""Rates, beampatterns and angle-estimation error.

All rates are in bits/s/Hz and already carry their frame-fraction weights
(``tau_d/tau``, ``tau_s/tau`` or ``(tau - tau_c)/tau``).  Transmit
quantities are rank-one vectors: ``w_det[l]`` and ``w_sens[l]`` are
``(M, K)`` matrices whose columns are per-user precoders (zero for users the
sub-carrier does not serve) and ``s[l]`` is the length-``N`` sensing
waveform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import ChannelSet, steering_vector
from .config import Scenario

__all__ = [
    "TrialMetrics",
    "comm_sinr",
    "comm_rate",
    "sensing_sinr",
    "sens_rate",
    "angle_grid",
    "beampatterns",
    "find_peaks",
    "angle_mse",
    "write_beampattern_csv",
]

PLOT_STEP_DEG = 0.5
MSE_STEP_DEG = 0.05


@dataclass
class TrialMetrics:
    comm_sum_rate: float
    sens_sum_rate: float
    per_user_rates: np.ndarray          # (K,) summed over sub-carriers
    per_target_rates: np.ndarray        # (T,) summed over sensing sub-carriers
    psi_s: tuple = ()
    beampatterns: dict | None = None    # {"theta_deg", "p1", "p2", "p3"}
    angle_mse: dict | None = None       # {"transmit", "receive", "combined", "misses"}
    traces: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "comm_sum_rate": self.comm_sum_rate,
            "sens_sum_rate": self.sens_sum_rate,
            "per_user_rates": np.asarray(self.per_user_rates).tolist(),
            "per_target_rates": np.asarray(self.per_target_rates).tolist(),
            "psi_s": list(self.psi_s),
        }
        if self.angle_mse is not None:
            out["angle_mse"] = self.angle_mse
        return out


# --------------------------------------------------------------------------
# communication
# --------------------------------------------------------------------------

def comm_sinr(h, W, k: int, sigma2: float, alpha=None, g=None, s=None) -> float:
    """SINR of user ``k`` on one sub-carrier.

    ``h`` is ``(K, M)``, ``W`` is ``(M, K)``.  Passing ``g`` (``(K, N)``)
    and ``s`` adds the sensing interference ``|g_k^H s|^2``.
    """
    alpha = np.ones(h.shape[0]) if alpha is None else np.asarray(alpha, dtype=float)
    gains = np.abs(h[k].conj() @ W) ** 2 * alpha ** 2
    den = gains.sum() - gains[k] + sigma2
    if g is not None and s is not None:
        den += abs(np.vdot(g[k], s)) ** 2
    return float(gains[k] / den)


def comm_rate(ch: ChannelSet, alpha, w_det, l: int, k: int, sc: Scenario,
              psi_s=(), w_sens=None, s=None) -> float:
    """Rate of user ``k`` on sub-carrier ``l`` over the whole frame.

    Off the sensing set the detection precoders serve the entire data
    period.  On a sensing sub-carrier the detection phase uses ``w_det``
    and the sensing phase uses ``w_sens`` under interference from ``s``.
    """
    if not alpha[l, k]:
        return 0.0
    if l not in psi_s:
        gam = comm_sinr(ch.h[l], w_det[l], k, ch.sigma2, alpha[l])
        return (sc.tau - sc.tau_c) / sc.tau * math.log2(1.0 + gam)
    if w_sens is None or s is None:
        raise ValueError("sensing sub-carrier needs w_sens and s")
    gam = comm_sinr(ch.h[l], w_det[l], k, ch.sigma2, alpha[l])
    gam_s = comm_sinr(ch.h[l], w_sens[l], k, ch.sigma2, alpha[l], ch.g[l], s[l])
    return (sc.tau_d * math.log2(1.0 + gam) + sc.tau_s * math.log2(1.0 + gam_s)) / sc.tau


# --------------------------------------------------------------------------
# sensing
# --------------------------------------------------------------------------

def sensing_sinr(ch: ChannelSet, l: int, t: int, s, u, W=None, beta_SI: float = 0.0) -> float:
    """Post-combining SINR of target ``t``.

    ``W`` holds the primary precoders active during sensing (``None`` means
    the primary is silent).
    """
    a, b, beta = ch.a[l], ch.b[l], ch.beta
    refl = np.abs(beta) ** 2 * np.abs(a.conj() @ s) ** 2 * np.abs(b.conj() @ u) ** 2   # (T,)
    den = refl.sum() - refl[t] + ch.sigma2 * float(np.vdot(u, u).real)
    if W is not None:
        den += float(np.sum(np.abs(W.T @ (ch.F[l] @ u).conj()) ** 2))
    den += beta_SI * abs(np.vdot(ch.G_SI[l] @ u, s)) ** 2
    return float(refl[t] / den)


def sens_rate(ch: ChannelSet, l: int, t: int, sc: Scenario, psi_s, s, u, W=None) -> float:
    """``(tau_s/tau) log2(1 + Upsilon)`` on sensing sub-carriers, else 0."""
    if l not in psi_s:
        return 0.0
    ups = sensing_sinr(ch, l, t, s, u, W, sc.beta_SI)
    return sc.tau_s / sc.tau * math.log2(1.0 + ups)


# --------------------------------------------------------------------------
# beampatterns and angle estimates
# --------------------------------------------------------------------------

def angle_grid(step_deg: float = PLOT_STEP_DEG) -> np.ndarray:
    """Uniform grid over ``[-90, 90]`` degrees, endpoints included."""
    n = int(round(180.0 / step_deg))
    return np.linspace(-90.0, 90.0, n + 1)


def beampatterns(s, U, grid_deg) -> dict:
    """Transmit, receive and combined patterns on ``grid_deg``.

    ``p1`` has shape ``(G,)``; ``p2`` and ``p3`` have one row per combiner
    in ``U`` (shape ``(T, N)``).
    """
    s = np.asarray(s)
    U = np.atleast_2d(U)
    A = steering_vector(s.size, np.deg2rad(grid_deg))          # (G, N)
    B = steering_vector(U.shape[1], np.deg2rad(grid_deg))
    tx = A.conj() @ s                                          # a(theta)^H s
    rx = U.conj() @ B.T                                        # u_t^H b(theta), (T, G)
    p1 = np.abs(tx) ** 2
    p2 = np.abs(rx) ** 2
    p3 = np.abs(rx * tx[None, :]) ** 2
    return {"theta_deg": np.asarray(grid_deg, dtype=float), "p1": p1, "p2": p2, "p3": p3}


def find_peaks(pattern) -> np.ndarray:
    """Indices of local maxima (plateaus count once, at their centre; a flat pattern has none)."""
    p = np.asarray(pattern, dtype=float)
    n = p.size
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and p[j + 1] == p[i]:
            j += 1
        left = p[i - 1] if i > 0 else -np.inf
        right = p[j + 1] if j + 1 < n else -np.inf
        if p[i] > left and p[i] > right and not (i == 0 and j == n - 1):
            peaks.append((i + j) // 2)
        i = j + 1
    return np.asarray(peaks, dtype=int)


def _estimate(grid_deg, patterns, true_deg):
    """Greedy nearest assignment of targets to distinct local maxima."""
    angles = sorted({float(grid_deg[i]) for row in np.atleast_2d(patterns) if row.max() > 0
                     for i in find_peaks(row)})
    pairs = sorted((abs(ang - th), ti, pi) for ti, th in enumerate(true_deg)
                   for pi, ang in enumerate(angles))
    est = {}
    used = set()
    for _, ti, pi in pairs:
        if ti in est or pi in used:
            continue
        est[ti] = angles[pi]
        used.add(pi)
    return est


def angle_mse(grid_deg, pats: dict, true_deg) -> dict:
    """Squared angle error in rad^2 per pattern family.

    ``pats`` is the output of :func:`beampatterns`.  The local maxima of
    every row of a family are pooled and matched greedily, nearest first,
    to the true angles (one peak per target).  The MSE averages over
    matched targets; unmatched ones are counted in ``misses``.
    """
    true_deg = np.atleast_1d(np.asarray(true_deg, dtype=float))
    out, misses = {}, {}
    for name, key in (("transmit", "p1"), ("receive", "p2"), ("combined", "p3")):
        est = _estimate(np.asarray(grid_deg, dtype=float), pats[key], true_deg)
        err = [(np.deg2rad(true_deg[t] - est[t])) ** 2 for t in est]
        out[name] = float(np.mean(err)) if err else math.nan
        misses[name] = int(true_deg.size - len(est))
    out["misses"] = misses
    return out


def write_beampattern_csv(pats: dict, path: str | Path, target: int = 0) -> None:
    """Columns ``theta_deg, p1, p2, p3`` using combiner ``target`` for p2/p3."""
    p2 = np.atleast_2d(pats["p2"])[target]
    p3 = np.atleast_2d(pats["p3"])[target]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_deg", "p1", "p2", "p3"])
        for row in zip(pats["theta_deg"], pats["p1"], p2, p3):
            w.writerow([repr(float(x)) for x in row])
