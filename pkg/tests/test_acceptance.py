"""Acceptance criteria, each at its stated tolerance and trial count.

Every test records one PASS/FAIL line (printed in the terminal summary)
and then asserts it.  ``WBCOG_ACCEPTANCE_TRIALS`` scales the Monte-Carlo
criteria down for quick local runs; the printed line always shows the
trial count actually used.
"""

import functools
import math
import os
import time

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import linprog

from wbcog.cli import _with_fig6_geometry, main
from wbcog.config import Scenario, ci_profile
from wbcog.harness import design_trial, score_design, trial_seeds
from wbcog.joint import (
    ao_solve,
    mmse_combiner,
    sensing_covariance,
    sensing_sinr,
    subcarrier_problem,
)
from wbcog.allocation import allocate_comm
from wbcog.manifold import (
    euclidean_gradient,
    lift_channels,
    ratio_objective,
    rcg_solve,
    recover_precoders,
)
from wbcog.metrics import angle_grid, beampatterns, find_peaks
from wbcog.sdp import Constraint, SdpProblem, herm, solve_sdp

from conftest import ACCEPTANCE, crandn, table1_channels

pytestmark = pytest.mark.acceptance

_SCALE = os.environ.get("WBCOG_ACCEPTANCE_TRIALS")


def _n(stated: int) -> int:
    return min(stated, int(_SCALE)) if _SCALE else stated


def _record(num: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {num:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


BASE = ci_profile(Scenario())


@functools.lru_cache(maxsize=None)
def _trial(sc: Scenario, scheme: str, seed: int):
    d = design_trial(sc, scheme, seed)
    m = score_design(d, sc)
    ao = [(sol.iterations, sol.converged, [row[1] for row in sol.trace],
           max([i["max_violation"] for i in sol.q3_info], default=0.0))
          for sol in d.solutions.values()]
    return m.comm_sum_rate, m.sens_sum_rate, ao


def _rates(sc, scheme, n):
    vals = np.array([_trial(sc, scheme, s)[:2] for s in trial_seeds(sc.seed, n)])
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, se


def _fmt(xs):
    return "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"


# ---------------------------------------------------------------------------


def test_01_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-6
    for i in range(100):
        M, K = (2, 4, 8)[i % 3], (1, 2, 3)[(i // 3) % 3]
        H = lift_channels(crandn(rng, K, M), 1.0)
        V = crandn(rng, M + 1, K)
        V /= np.linalg.norm(V)
        mu = 1.0 + rng.uniform(0, 3, K)
        G = euclidean_gradient(V, mu, H, 0.5)
        fd = np.zeros_like(G)
        for idx in np.ndindex(V.shape):
            for unit in (1.0, 1j):
                E = np.zeros_like(V)
                E[idx] = unit * h
                d = (ratio_objective(V + E, mu, H, 0.5) - ratio_objective(V - E, mu, H, 0.5)) / (2 * h)
                fd[idx] += d * unit
        worst = max(worst, np.max(np.abs(fd - G)) / np.max(np.abs(G)))
    dt = time.perf_counter() - t0
    _record(1, worst < 1e-5 and dt < 10, f"max rel FD error {worst:.2e} (< 1e-5), {dt:.2f} s (< 10 s)")


def test_02_manifold_convergence():
    sc = Scenario()
    worst_step, max_inner, runs = -math.inf, 0, 0
    for seed in range(100):
        ch = table1_channels(sc, seed)
        alpha = allocate_comm(ch, sc.L_c)
        l = seed % sc.L
        users = np.flatnonzero(alpha[l])
        if users.size == 0:
            l = int(np.flatnonzero(alpha.any(axis=1))[0])
            users = np.flatnonzero(alpha[l])
        res = rcg_solve(lift_channels(ch.h[l, users], sc.p_max), ch.sigma2, sc.delta_1, sc.delta_2)
        runs += 1
        worst_step = max(worst_step, float(np.max(np.diff(res.objective), initial=-math.inf)))
        rounds = {}
        # the last row is the summary after the final mu refresh, not a CG round
        for outer, inner, _, g in res.trace[:-1]:
            rounds.setdefault(outer, []).append((inner, g))
        for rows in rounds.values():
            inner_at = [i for i, g in rows if g < sc.delta_1]
            max_inner = max(max_inner, inner_at[0] if inner_at else 10**9)
    ok = worst_step <= 1e-9 and max_inner <= 500
    _record(2, ok, f"{runs} runs, largest objective step {worst_step:.2e} (<= 1e-9), "
                   f"grad norm < 1e-6 by inner iteration {max_inner} (<= 500)")


def test_03_single_user_mrt():
    sc = Scenario()
    cos_min, gap_max = 1.0, 0.0
    for seed in range(50):
        ch = table1_channels(sc, seed)
        h = ch.h[0, seed % sc.K][None, :]
        res = rcg_solve(lift_channels(h, sc.p_max), ch.sigma2)
        w = recover_precoders(res.V, sc.p_max)[:, 0]
        cos = abs(np.vdot(h[0], w)) / (np.linalg.norm(h) * np.linalg.norm(w))
        rate = math.log2(1 + abs(np.vdot(h[0], w)) ** 2 / ch.sigma2)
        mrt = math.log2(1 + sc.p_max * np.linalg.norm(h) ** 2 / ch.sigma2)
        cos_min, gap_max = min(cos_min, cos), max(gap_max, (mrt - rate) / mrt)
    _record(3, cos_min > 0.999 and gap_max < 1e-3,
            f"50 seeds, min cosine {cos_min:.6f} (> 0.999), max rate gap {gap_max:.2e} (< 1e-3)")


def test_04_combiner_optimality():
    rng = np.random.default_rng(4)
    worst_gap, improved = 0.0, 0
    for _ in range(100):
        sc = Scenario(M=4, N=4, K=2, T=2)
        P = _random_subcarrier(rng, sc)
        S = crandn(rng, 4, 4)
        S = S @ S.conj().T
        R = crandn(rng, 4, 4)
        R = R @ R.conj().T
        u = mmse_combiner(P, S, R, 0)
        best = sensing_sinr(P, u, S, R, 0)
        num = abs(P.beta[0]) ** 2 * np.real(P.a[0].conj() @ S @ P.a[0]) * np.outer(P.b[0], P.b[0].conj())
        top = sla.eigh(num, sensing_covariance(P, S, R, 0), eigvals_only=True)[-1]
        worst_gap = max(worst_gap, abs(best - top) / top)
        V = u[:, None] + 0.1 * crandn(rng, 4, 1000)
        V /= np.linalg.norm(V, axis=0)
        vals = [sensing_sinr(P, V[:, j], S, R, 0) for j in range(1000)]
        improved += int(max(vals) > best * (1 + 1e-12))
    _record(4, worst_gap < 1e-8 and improved == 0,
            f"100 instances, max rel gap to top generalized eigenvalue {worst_gap:.2e} (< 1e-8), "
            f"{improved} instances improved by 1e3 perturbations (0)")


def _random_subcarrier(rng, sc):
    ch = table1_channels(sc, int(rng.integers(2**31)))
    alpha = allocate_comm(ch, sc.L_c)
    l = int(np.flatnonzero(alpha.any(axis=1))[0])
    return subcarrier_problem(ch, np.flatnonzero(alpha[l]), l, sc)


def test_05_sdp_core():
    rng = np.random.default_rng(5)
    worst_obj, worst_gap = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 7))
        Q, _ = np.linalg.qr(crandn(rng, n, n))
        c = rng.normal(size=n)
        a = rng.uniform(0.1, 2.0, n)
        budget, cap = rng.uniform(1, 3), rng.uniform(0.5, 2)
        aligned = lambda d: herm(Q @ np.diag(d) @ Q.conj().T)
        p = SdpProblem(blocks=[n], objective=[aligned(c)],
                       constraints=[Constraint({0: np.eye(n)}, budget),
                                    Constraint({0: aligned(a)}, cap)])
        sol = solve_sdp(p)
        lp = linprog(-c, A_ub=np.vstack([np.ones(n), a]), b_ub=[budget, cap],
                     bounds=[(0, None)] * n, method="highs")
        opt = -lp.fun
        worst_obj = max(worst_obj, abs(sol.objective_value - opt) / max(1.0, abs(opt)))
        worst_gap = max(worst_gap, sol.duality_gap)
    q3 = max(v for seed in trial_seeds(BASE.seed, _n(100))
             for *_, v in _trial(BASE, "wb_cognitive", seed)[2])
    ok = worst_obj < 1e-6 and worst_gap < 1e-7 and q3 < 1e-7
    _record(5, ok, f"50 aligned instances, max rel objective error {worst_obj:.2e} (< 1e-6), "
                   f"max duality gap {worst_gap:.2e} (< 1e-7); max Q3 residual {q3:.2e} (< 1e-7) "
                   f"over {_n(100)} trials")


def test_06_ao_convergence():
    n = _n(100)
    runs = ok_runs = 0
    worst_drop = 0.0
    for seed in trial_seeds(BASE.seed, n):
        for iters, conv, F, _ in _trial(BASE, "wb_cognitive", seed)[2]:
            runs += 1
            drop = -min(np.diff(F), default=0.0)
            worst_drop = max(worst_drop, drop)
            ok_runs += int(conv and iters <= 10 and drop <= 1e-6)
    frac = ok_runs / runs
    _record(6, frac >= 0.95, f"{ok_runs}/{runs} AO runs monotone (1e-6) and converged within 10 "
                             f"iterations ({frac:.1%} >= 95%); largest decrease {worst_drop:.2e}")


def test_07_beampatterns_and_angle_mse():
    sc = _with_fig6_geometry(BASE)
    n = _n(200)
    grid = angle_grid(0.05)
    seeds = trial_seeds(sc.seed, n)
    mse = {s: [] for s in ("sens_only", "wb_cognitive", "non_cooperative")}
    peaks_ok = {"sens_only": 0, "wb_cognitive": 0}
    for seed in seeds:
        for scheme in mse:
            d = design_trial(sc, scheme, seed)
            m = score_design(d, sc, patterns=True)
            if not math.isnan(m.angle_mse["combined"]):
                mse[scheme].append(m.angle_mse["combined"])
            if scheme in peaks_ok:
                l = d.psi_s[0]
                p3 = beampatterns(d.s[l], d.U[l], grid)["p3"]
                true = np.rad2deg(d.channels.theta)
                peaks_ok[scheme] += all(np.min(np.abs(grid[find_peaks(p3[t])] - true[t]), initial=np.inf) <= 1.0
                                        for t in range(sc.T))
    means = {s: float(np.mean(v)) for s, v in mse.items()}
    order = means["sens_only"] <= means["wb_cognitive"] <= means["non_cooperative"]
    ok = order and all(v == n for v in peaks_ok.values())
    _record(7, ok, f"{n} trials, p3 peaks within 1 deg of every target: sens_only {peaks_ok['sens_only']}/{n}, "
                   f"wb_cognitive {peaks_ok['wb_cognitive']}/{n}; combined MSE sens_only "
                   f"{means['sens_only']:.3e} <= wb {means['wb_cognitive']:.3e} <= non_coop "
                   f"{means['non_cooperative']:.3e}: {order}")


def test_08_scheme_orderings_in_antennas():
    n = _n(300)
    Ms = (4, 8, 12, 16)
    wb = [_rates(BASE.replace(M=M, N=M), "wb_cognitive", n)[0] for M in Ms]
    nc = [_rates(BASE.replace(M=M, N=M), "non_cooperative", n)[0] for M in Ms]
    i12 = Ms.index(12)
    g_comm = wb[i12][0] / nc[i12][0] - 1
    g_sens = wb[i12][1] / nc[i12][1] - 1
    wb_comm = [r[0] for r in wb]
    nc_sens = [r[1] for r in nc]
    mono_wb = all(np.diff(wb_comm) > 0)
    mono_nc = all(np.diff(nc_sens) < 0)
    ok = 0.03 <= g_comm <= 0.25 and 0.10 <= g_sens <= 0.60 and mono_wb and mono_nc
    _record(8, ok, f"{n} trials, M=12 gains comm {g_comm:+.1%} (3%..25%), sens {g_sens:+.1%} (10%..60%); "
                   f"wb comm {_fmt(wb_comm)} increasing {mono_wb}; non-coop sens {_fmt(nc_sens)} "
                   f"decreasing {mono_nc}")


def test_09_sensing_subcarrier_tradeoff():
    n = _n(300)
    r = [_rates(BASE.replace(L_s=Ls), "wb_cognitive", n)[0] for Ls in (1, 2, 3, 4)]
    comm, sens = [x[0] for x in r], [x[1] for x in r]
    d_sens = sens[-1] / sens[0] - 1
    d_comm = comm[-1] / comm[0] - 1
    mono = all(np.diff(sens) > 0) and all(np.diff(comm) < 0)
    ok = mono and abs(d_sens - 0.3288) <= 0.15 and abs(d_comm + 0.1286) <= 0.15
    _record(9, ok, f"{n} trials, sens {_fmt(sens)} comm {_fmt(comm)} monotone {mono}; "
                   f"L_s 1->4 sens {d_sens:+.2%} (32.88% +/- 15pp), comm {d_comm:+.2%} (-12.86% +/- 15pp)")


def test_10_impairments():
    n = _n(300)
    eta = [_rates(BASE.replace(eta=e), "wb_cognitive", n)[0][0] for e in (0.25, 0.5, 0.75, 1.0)]
    bsi = [_rates(BASE.replace(beta_SI=10 ** (b / 10)), "wb_cognitive", n) for b in (-60.0, -70.0, -80.0)]
    comm = [(m[0], s[0]) for m, s in bsi]
    sens = [m[1] for m, _ in bsi]
    eta_up = all(np.diff(eta) > 0)
    invariant = all(abs(a[0] - b[0]) <= 2 * math.hypot(a[1], b[1])
                    for i, a in enumerate(comm) for b in comm[i + 1:])
    sens_up = all(np.diff(sens) > 0)
    _record(10, eta_up and invariant and sens_up,
            f"{n} trials, comm vs eta {_fmt(eta)} increasing {eta_up}; comm vs beta_SI -60/-70/-80 dB "
            f"{_fmt([c[0] for c in comm])} within 2 SE {invariant}; sens {_fmt(sens)} increasing {sens_up}")


def test_11_cli_determinism(tmp_path, capsys):
    small = ["--set", "M=4", "--set", "N=4", "--trials", "3"]
    outs = []
    for i, threads in enumerate(("1", "1", "2")):
        path = tmp_path / f"sweep{i}.csv"
        assert main(["sweep", "--axis", "ls", "--values", "1", "2", *small,
                     "--threads", threads, "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    mse = []
    for i, threads in enumerate(("1", "2")):
        path = tmp_path / f"mse{i}.csv"
        assert main(["mse-table", *small, "--threads", threads, "--out", str(path)]) == 0
        mse.append(path.read_bytes())
    trial = []
    for _ in range(2):
        main(["trial", "--seed", "9", *small])
        trial.append(capsys.readouterr().out)
    ok = outs[0] == outs[1] == outs[2] and mse[0] == mse[1] and trial[0] == trial[1]
    _record(11, ok, f"sweep serial/serial/parallel identical {outs[0] == outs[1] == outs[2]}, "
                    f"mse-table serial/parallel identical {mse[0] == mse[1]}, trial repeat identical "
                    f"{trial[0] == trial[1]}")


def test_12_runtime():
    sc = Scenario()
    t0 = time.perf_counter()
    for scheme in ("wb_cognitive", "non_cooperative", "comm_only", "sens_only"):
        score_design(design_trial(sc, scheme, 0), sc)
    full = time.perf_counter() - t0
    times = []
    Ms = (4, 8, 16)
    for M in Ms:
        scm = Scenario(M=M, N=M, D=1000)
        ts = []
        for seed in range(8):
            ch = table1_channels(scm, seed)
            alpha = allocate_comm(ch, scm.L_c)
            P = subcarrier_problem(ch, np.flatnonzero(alpha[0]), 0, scm)
            t = time.perf_counter()
            ao_solve(P, D=scm.D, rng=np.random.default_rng(seed))
            ts.append(time.perf_counter() - t)
        times.append(float(np.median(ts)))
    slope = float(np.polyfit(np.log(Ms), np.log(times), 1)[0])
    _record(12, full < 30 and slope <= 4,
            f"reference-scale trial, all four schemes, D=1e5: {full:.1f} s (< 30 s); ao_solve median "
            f"{_fmt(times)} s at M=4/8/16, log-log slope {slope:.2f} (<= 4)")
