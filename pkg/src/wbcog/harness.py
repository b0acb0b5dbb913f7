"""Monte-Carlo trials, parameter sweeps and result files.

A trial is identified by an integer seed.  Every random quantity in a
trial (drops, channels, CSI error, energy-detection snapshots, random
sensing choice, Gaussian randomization) comes from its own child of
``SeedSequence(seed)``, so all schemes of one trial see the same channels
and results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .allocation import allocate_comm, interference_energy, random_sensing, select_sensing
from .channels import ChannelSet, estimated_channels, generate_channel_set, sample_positions
from .config import Scenario, db_to_lin
from .joint import ao_solve, subcarrier_problem
from .manifold import lift_channels, rcg_solve, recover_precoders
from .metrics import (
    MSE_STEP_DEG,
    PLOT_STEP_DEG,
    TrialMetrics,
    angle_grid,
    angle_mse,
    beampatterns,
    comm_rate,
    sens_rate,
)

__all__ = [
    "SchemeId",
    "TrialDesign",
    "design_trial",
    "run_trial",
    "trial_seeds",
    "SweepRow",
    "SweepResult",
    "SweepError",
    "run_sweep",
    "emit_results",
    "read_results",
    "AXES",
]

log = logging.getLogger(__name__)


class SchemeId(str, Enum):
    WB_COGNITIVE = "wb_cognitive"
    NON_COOPERATIVE = "non_cooperative"
    COMM_ONLY = "comm_only"
    SENS_ONLY = "sens_only"


class SweepError(RuntimeError):
    pass


# axis name -> (scenario changes for one value)
AXES = {
    "antennas": lambda v: {"M": int(v), "N": int(v)},
    "ls": lambda v: {"L_s": int(v)},
    "eta": lambda v: {"eta": float(v)},
    "beta-si": lambda v: {"beta_SI": db_to_lin(float(v))},
}
_AXIS_ALIASES = {"L_s": "ls", "beta_SI": "beta-si", "beta_si": "beta-si", "M": "antennas"}


def _axis(name: str) -> str:
    name = _AXIS_ALIASES.get(name, name)
    if name not in AXES:
        raise ValueError(f"unknown sweep axis {name!r}; expected one of {sorted(AXES)}")
    return name


# --------------------------------------------------------------------------
# one trial
# --------------------------------------------------------------------------

@dataclass
class TrialDesign:
    """Channels and transmit design of one trial, before scoring."""

    scheme: SchemeId
    channels: ChannelSet            # true channels
    estimates: ChannelSet           # what the transmitters designed with
    alpha: np.ndarray
    psi_s: tuple
    w_det: np.ndarray               # (L, M, K)
    w_sens: np.ndarray              # (L, M, K); equals w_det off the sensing set
    s: np.ndarray                   # (L, N)
    U: np.ndarray                   # (L, T, N)
    primary_active: bool
    energies: np.ndarray | None = None
    solutions: dict = field(default_factory=dict)   # l -> JointSolution
    rcg_traces: dict = field(default_factory=dict)  # l -> RcgResult.trace


def _detection_precoders(est: ChannelSet, alpha, sc: Scenario):
    L, K, M = est.h.shape
    W = np.zeros((L, M, K), complex)
    traces = {}
    for l in range(L):
        users = np.flatnonzero(alpha[l])
        if users.size == 0:
            continue
        res = rcg_solve(lift_channels(est.h[l, users], sc.p_max), est.sigma2,
                        sc.delta_1, sc.delta_2, sc.max_inner, sc.max_outer,
                        retraction=sc.retraction)
        W[l][:, users] = recover_precoders(res.V, sc.p_max)
        traces[l] = res.trace
    return W, traces


def design_trial(sc: Scenario, scheme: SchemeId | str, trial_seed: int) -> TrialDesign:
    """Run the pipeline for one trial up to (not including) scoring."""
    scheme = SchemeId(scheme)
    ss = np.random.SeedSequence(int(trial_seed))
    r_pos, r_ch, r_csi, r_energy, r_select, r_gr = ss.spawn(6)

    users_xy, targets_xy = sample_positions(sc, np.random.default_rng(r_pos))
    ch = generate_channel_set(sc, users_xy, targets_xy, r_ch)
    est = estimated_channels(ch, sc.eta, np.random.default_rng(r_csi), sc.csi_error_convention)
    L, K, M = ch.h.shape
    N, T = ch.N, ch.T

    if scheme is SchemeId.SENS_ONLY:
        alpha = np.zeros((L, K), dtype=int)
        w_det = np.zeros((L, M, K), complex)
        traces = {}
    else:
        alpha = allocate_comm(est, sc.L_c)
        w_det, traces = _detection_precoders(est, alpha, sc)

    w_sens = w_det.copy()
    s = np.zeros((L, N), complex)
    U = np.zeros((L, T, N), complex)
    energies = None
    if scheme is SchemeId.COMM_ONLY:
        psi = ()
    elif scheme is SchemeId.SENS_ONLY:
        psi = tuple(range(L))
    elif scheme is SchemeId.NON_COOPERATIVE:
        psi = random_sensing(L, sc.L_s, np.random.default_rng(r_select))
    else:
        rng = np.random.default_rng(r_energy)
        energies = np.array([interference_energy(ch, w_det, alpha, l, sc.snapshots, rng)
                             for l in range(L)])
        psi = select_sensing(energies, sc.L_s)

    rng_gr = np.random.default_rng(r_gr)
    solutions = {}
    for l in psi:
        if scheme is SchemeId.WB_COGNITIVE:
            users = np.flatnonzero(alpha[l])
            P = subcarrier_problem(est, users, l, sc)
        else:
            # No primary users in the design: the secondary either has the
            # band to itself or ignores the primary system.
            P = subcarrier_problem(est, np.zeros(0, int), l, sc, delta_max=math.inf)
        sol = ao_solve(P, sc.epsilon, sc.ao_max_iters, sc.D, rng_gr, sc.sdp_tol)
        if scheme is SchemeId.WB_COGNITIVE and users.size:
            w_sens[l] = 0.0
            w_sens[l][:, users] = sol.w
        s[l] = sol.s
        U[l] = sol.U
        solutions[l] = sol

    return TrialDesign(scheme=scheme, channels=ch, estimates=est, alpha=alpha, psi_s=tuple(psi),
                       w_det=w_det, w_sens=w_sens, s=s, U=U,
                       primary_active=scheme is not SchemeId.SENS_ONLY, energies=energies,
                       solutions=solutions, rcg_traces=traces)


def score_design(d: TrialDesign, sc: Scenario, patterns: bool = False) -> TrialMetrics:
    """Rates on the true channels; optional beampatterns on the first sensing sub-carrier."""
    ch = d.channels
    L, K = d.alpha.shape
    per_user = np.zeros(K)
    if d.scheme is not SchemeId.SENS_ONLY:
        for l in range(L):
            for k in range(K):
                per_user[k] += comm_rate(ch, d.alpha, d.w_det, l, k, sc, d.psi_s, d.w_sens, d.s)
    per_target = np.zeros(ch.T)
    for l in d.psi_s:
        W = d.w_sens[l] if d.primary_active else None
        for t in range(ch.T):
            per_target[t] += sens_rate(ch, l, t, sc, d.psi_s, d.s[l], d.U[l, t], W)

    pats = mse = None
    if patterns and d.psi_s:
        l = d.psi_s[0]
        pats = beampatterns(d.s[l], d.U[l], angle_grid(PLOT_STEP_DEG))
        fine = angle_grid(MSE_STEP_DEG)
        mse = angle_mse(fine, beampatterns(d.s[l], d.U[l], fine), np.rad2deg(ch.theta))
    return TrialMetrics(comm_sum_rate=float(per_user.sum()), sens_sum_rate=float(per_target.sum()),
                        per_user_rates=per_user, per_target_rates=per_target, psi_s=d.psi_s,
                        beampatterns=pats, angle_mse=mse)


def run_trial(sc: Scenario, scheme: SchemeId | str, trial_seed: int,
              patterns: bool = False) -> TrialMetrics:
    """Design and score one trial."""
    d = design_trial(sc, scheme, trial_seed)
    m = score_design(d, sc, patterns)
    m.traces = {"rcg": d.rcg_traces, "ao": {l: sol.trace for l, sol in d.solutions.items()}}
    return m


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def trial_seeds(master_seed: int, n_trials: int) -> list[int]:
    """Per-trial seeds derived from the master seed (shared by all sweep points)."""
    words = np.random.SeedSequence(int(master_seed)).generate_state(2 * n_trials, dtype=np.uint32)
    return [int(words[2 * i]) << 32 | int(words[2 * i + 1]) for i in range(n_trials)]


@dataclass(frozen=True)
class SweepRow:
    axis: float
    scheme: str
    comm_mean: float
    comm_se: float | None
    sens_mean: float
    sens_se: float | None
    n: int


@dataclass
class SweepResult:
    axis_name: str
    rows: list
    failures: dict = field(default_factory=dict)     # (axis, scheme) -> [seeds]
    wall_clock: float = 0.0

    def row(self, value, scheme) -> SweepRow:
        scheme = SchemeId(scheme).value
        for r in self.rows:
            if r.scheme == scheme and r.axis == float(value):
                return r
        raise KeyError((value, scheme))


class _Welford:
    __slots__ = ("n", "mean", "m2")

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, x: float):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def se(self):
        if self.n < 2:
            return None
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


def _task(args):
    sc, scheme, seed = args
    try:
        m = run_trial(sc, scheme, seed)
        return seed, (m.comm_sum_rate, m.sens_sum_rate), None
    except Exception as exc:  # noqa: BLE001  - any module error aborts only this trial
        return seed, None, f"{type(exc).__name__}: {exc}"


def run_sweep(sc: Scenario, axis: str, values, schemes, n_trials: int | None = None,
              threads: int = 1, max_fail_rate: float = 0.01) -> SweepResult:
    """Mean and standard error of both sum rates per (value, scheme).

    All points reuse the same trial seeds.  Per-cell results are reduced in
    seed order, so serial and parallel runs agree bit for bit.
    """
    name = _axis(axis)
    n_trials = sc.n_trials if n_trials is None else int(n_trials)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    schemes = [SchemeId(s) for s in schemes]
    seeds = trial_seeds(sc.seed, n_trials)
    cells = []
    tasks = []
    for v in values:
        sc_v = sc.replace(**AXES[name](v))
        for scheme in schemes:
            cells.append((float(v), scheme))
            tasks.extend((sc_v, scheme, seed) for seed in seeds)

    t0 = time.perf_counter()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    else:
        results = [_task(t) for t in tasks]

    rows, failures = [], {}
    for c, (v, scheme) in enumerate(cells):
        chunk = results[c * n_trials:(c + 1) * n_trials]
        comm, sens = _Welford(), _Welford()
        bad = []
        for seed, val, err in sorted(chunk, key=lambda r: r[0]):
            if val is None:
                log.warning("trial failed (axis=%s value=%g scheme=%s seed=%d): %s",
                            name, v, scheme.value, seed, err)
                bad.append(seed)
                continue
            comm.add(val[0])
            sens.add(val[1])
        if bad:
            failures[(v, scheme.value)] = bad
            if len(bad) > max_fail_rate * n_trials:
                raise SweepError(f"{len(bad)}/{n_trials} trials failed at {name}={v:g}, "
                                 f"scheme={scheme.value}; first seed {bad[0]}")
        rows.append(SweepRow(v, scheme.value, comm.mean, comm.se(), sens.mean, sens.se(), comm.n))
    return SweepResult(name, rows, failures, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# result files
# --------------------------------------------------------------------------

COLUMNS = ("axis", "scheme", "comm_mean", "comm_se", "sens_mean", "sens_se", "n")
NA = "NA"


def _fmt(x):
    if x is None:
        return NA
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def emit_results(res: SweepResult, path: str | Path | None, fmt: str = "csv") -> str:
    """Write ``res`` to ``path`` (``None`` only returns the text)."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in res.rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        data = {"axis_name": res.axis_name,
                "rows": [{c: getattr(r, c) for c in COLUMNS} for r in res.rows]}
        text = json.dumps(data, indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'json'")
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write results to {path}: {exc}") from exc
    return text


def _num(text):
    return None if text == NA else float(text)


def read_results(path: str | Path, fmt: str | None = None, axis_name: str = "") -> SweepResult:
    """Parse a file written by :func:`emit_results`."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    text = path.read_text()
    rows = []
    if fmt == "json":
        data = json.loads(text)
        axis_name = data.get("axis_name", axis_name)
        for d in data["rows"]:
            rows.append(SweepRow(float(d["axis"]), d["scheme"], float(d["comm_mean"]),
                                 d["comm_se"], float(d["sens_mean"]), d["sens_se"], int(d["n"])))
    else:
        reader = csv.DictReader(io.StringIO(text))
        for d in reader:
            rows.append(SweepRow(float(d["axis"]), d["scheme"], float(d["comm_mean"]),
                                 _num(d["comm_se"]), float(d["sens_mean"]), _num(d["sens_se"]),
                                 int(d["n"])))
    return SweepResult(axis_name, rows)
