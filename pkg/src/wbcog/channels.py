"""Channel generation for one coherence block.

Communication links (primary BS -> users ``h``, secondary TX -> users ``g``,
primary BS -> secondary RX ``F``) are Rician with UMi path loss.  Target
links are pure LoS steering vectors, the self-interference channel is
Rician with unit large-scale gain.

Array shapes used throughout the package::

    h     (L, K, M)      g     (L, K, N)      F    (L, M, N)
    a, b  (L, T, N)      G_SI  (L, N, N)      beta (T,)   theta (T,)
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Scenario

__all__ = [
    "ChannelSet",
    "path_loss_umi",
    "steering_vector",
    "sample_rician",
    "sample_positions",
    "generate_channel_set",
    "inject_csi_error",
    "channel_streams",
    "estimated_channels",
]


def path_loss_umi(distance_m, fc_Hz: float):
    """Linear large-scale gain of the UMi street-canyon LoS model.

    ``PL[dB] = 32.4 + 21 log10(d) + 20 log10(fc / 1 GHz)``; returns
    ``10 ** (-PL / 10)``.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be strictly positive")
    pl_db = 32.4 + 21.0 * np.log10(d) + 20.0 * np.log10(fc_Hz / 1e9)
    gain = 10.0 ** (-pl_db / 10.0)
    return float(gain) if gain.ndim == 0 else gain


def steering_vector(N: int, theta) -> np.ndarray:
    """Unit-norm half-wavelength ULA response ``exp(j pi n sin(theta)) / sqrt(N)``.

    ``theta`` may be an array; the antenna index is the last axis.
    """
    theta = np.asarray(theta, dtype=float)
    n = np.arange(N)
    return np.exp(1j * np.pi * np.multiply.outer(np.sin(theta), n)) / np.sqrt(N)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_rician(rows: int, cols: int, kappa: float, zeta: float,
                  los: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``sqrt(kappa zeta/(kappa+1)) los + sqrt(zeta/(kappa+1)) W``, W ~ CN(0, 1) i.i.d."""
    los = np.asarray(los)
    if los.shape != (rows, cols):
        raise ValueError(f"los must have shape {(rows, cols)}, got {los.shape}")
    if kappa < 0 or zeta < 0:
        raise ValueError("kappa and zeta must be nonnegative")
    nlos = _cn(rng, (rows, cols))
    return (np.sqrt(kappa * zeta / (kappa + 1.0)) * los
            + np.sqrt(zeta / (kappa + 1.0)) * nlos)


@dataclass(frozen=True)
class ChannelSet:
    h: np.ndarray
    g: np.ndarray
    F: np.ndarray
    a: np.ndarray
    b: np.ndarray
    G_SI: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    sigma2: float

    @property
    def L(self) -> int:
        return self.h.shape[0]

    @property
    def K(self) -> int:
        return self.h.shape[1]

    @property
    def M(self) -> int:
        return self.h.shape[2]

    @property
    def N(self) -> int:
        return self.a.shape[2]

    @property
    def T(self) -> int:
        return self.a.shape[1]

    def replace(self, **changes) -> "ChannelSet":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        def enc(x):
            x = np.asarray(x)
            if np.iscomplexobj(x):
                return {"re": x.real.tolist(), "im": x.imag.tolist()}
            return x.tolist()
        return {f.name: enc(getattr(self, f.name)) if f.name != "sigma2" else self.sigma2
                for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, data: dict) -> "ChannelSet":
        def dec(x):
            if isinstance(x, dict):
                return np.asarray(x["re"]) + 1j * np.asarray(x["im"])
            return np.asarray(x, dtype=float)
        kw = {k: dec(v) for k, v in data.items() if k != "sigma2"}
        return cls(sigma2=float(data["sigma2"]), **kw)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _angle(src, dst) -> np.ndarray:
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return np.arctan2(d[..., 1], d[..., 0])


def _distance(src, dst) -> np.ndarray:
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return np.hypot(d[..., 0], d[..., 1])


def _disc(rng: np.random.Generator, n: int, center, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.asarray(center, dtype=float) + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def sample_positions(sc: Scenario, rng: np.random.Generator):
    """Uniform user and target drops in their circular regions.

    When ``sc.target_angles_deg`` is set, targets are placed at those
    bearings (seen from the secondary BS) at the region-center range.
    """
    users = _disc(rng, sc.K, sc.user_center, sc.user_radius)
    if sc.target_angles_deg:
        rng_m = _distance(sc.secondary_bs, sc.target_center)
        th = np.deg2rad(np.asarray(sc.target_angles_deg))
        targets = np.asarray(sc.secondary_bs) + rng_m * np.stack([np.cos(th), np.sin(th)], axis=-1)
    else:
        targets = _disc(rng, sc.T, sc.target_center, sc.target_radius)
    return users, targets


def channel_streams(seed, count: int) -> list[np.random.Generator]:
    """Independent generators derived deterministically from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,)))
            for i in range(count)]


def generate_channel_set(sc: Scenario, user_pos, target_pos, seed) -> ChannelSet:
    """Draw every channel of one block; a pure function of its arguments.

    Sub-carrier ``l`` uses its own stream (index ``l`` of
    :func:`channel_streams`); stream ``L`` draws the target phases.
    """
    M, N, K, T, L = sc.M, sc.N, sc.K, sc.T, sc.L
    user_pos = np.asarray(user_pos, dtype=float).reshape(K, 2)
    target_pos = np.asarray(target_pos, dtype=float).reshape(T, 2)
    streams = channel_streams(seed, L + 1)

    phi_h = _angle(sc.primary_bs, user_pos)
    phi_g = _angle(sc.secondary_bs, user_pos)
    zeta_h = path_loss_umi(_distance(sc.primary_bs, user_pos), sc.fc)
    zeta_g = path_loss_umi(_distance(sc.secondary_bs, user_pos), sc.fc)
    zeta_F = path_loss_umi(_distance(sc.primary_bs, sc.secondary_bs), sc.fc)
    # ULA bearings only enter through sin(theta); fold into [-pi/2, pi/2].
    theta = np.arcsin(np.sin(_angle(sc.secondary_bs, target_pos)))

    # LoS parts are unit-modulus per entry, i.e. sqrt(dim) * unit-norm steering.
    h_los = np.sqrt(M) * steering_vector(M, phi_h)                       # (K, M)
    g_los = np.sqrt(N) * steering_vector(N, phi_g)                       # (K, N)
    dep = _angle(sc.primary_bs, sc.secondary_bs)
    arr = _angle(sc.secondary_bs, sc.primary_bs)
    F_los = np.sqrt(M * N) * np.outer(steering_vector(M, dep), steering_vector(N, arr).conj())
    # Collocated TX/RX arrays see each other end-fire.
    G_los = N * np.outer(steering_vector(N, np.pi / 2), steering_vector(N, -np.pi / 2).conj())

    h = np.empty((L, K, M), complex)
    g = np.empty((L, K, N), complex)
    F = np.empty((L, M, N), complex)
    G = np.empty((L, N, N), complex)
    for l in range(L):
        rng = streams[l]
        for k in range(K):
            h[l, k] = sample_rician(1, M, sc.kappa, zeta_h[k], h_los[k][None], rng)[0]
            g[l, k] = sample_rician(1, N, sc.kappa, zeta_g[k], g_los[k][None], rng)[0]
        F[l] = sample_rician(M, N, sc.kappa, zeta_F, F_los, rng)
        G[l] = sample_rician(N, N, sc.kappa_SI, 1.0, G_los, rng)

    a = np.broadcast_to(steering_vector(N, theta), (L, T, N)).copy()
    b = a.copy()
    phases = streams[L].uniform(0.0, 2.0 * np.pi, size=T)
    beta = sc.beta_t_mag * np.exp(1j * phases)
    return ChannelSet(h=h, g=g, F=F, a=a, b=b, G_SI=G, beta=beta, theta=theta,
                      sigma2=sc.sigma2)


def inject_csi_error(x, eta: float, rng: np.random.Generator,
                     convention: str = "complement"):
    """Return ``x + e`` with ``e ~ CN(0, var)`` drawn entrywise.

    ``var = (1 - eta) |x|^2`` for the default convention (``eta = 1`` is
    perfect CSI); ``convention="literal"`` uses ``var = eta |x|^2``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    x = np.asarray(x)
    scale = (1.0 - eta) if convention == "complement" else eta
    var = scale * np.abs(x) ** 2
    e = np.sqrt(var) * _cn(rng, x.shape)
    return x + e


def estimated_channels(ch: ChannelSet, eta: float, rng: np.random.Generator,
                       convention: str = "complement") -> ChannelSet:
    """Apply :func:`inject_csi_error` to ``h``, ``g`` and ``F``."""
    return ch.replace(h=inject_csi_error(ch.h, eta, rng, convention),
                      g=inject_csi_error(ch.g, eta, rng, convention),
                      F=inject_csi_error(ch.F, eta, rng, convention))
