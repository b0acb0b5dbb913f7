"""Communication sub-carrier assignment and sensing sub-carrier selection.

Sub-carrier indices are 0-based everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ChannelSet, _cn

__all__ = [
    "Allocation",
    "allocate_comm",
    "interference_energy",
    "select_sensing",
    "random_sensing",
]


@dataclass(frozen=True)
class Allocation:
    alpha: np.ndarray          # (L, K) binary
    psi_s: tuple[int, ...]     # sensing sub-carriers, ascending by energy

    def __post_init__(self):
        if len(set(self.psi_s)) != len(self.psi_s):
            raise ValueError("psi_s contains duplicates")
        L = self.alpha.shape[0]
        if any(not 0 <= l < L for l in self.psi_s):
            raise ValueError("psi_s index out of range")

    def users_on(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.alpha[l])

    def to_json(self) -> dict:
        return {"alpha": self.alpha.astype(int).tolist(), "psi_s": list(self.psi_s)}


def allocate_comm(ch: ChannelSet, L_c: int) -> np.ndarray:
    """Give each user its ``L_c`` strongest sub-carriers by ``||h[l, k]||^2``.

    Users are handled independently, so a sub-carrier may serve several
    users.  Ties go to the lower sub-carrier index.
    """
    L = ch.L
    if not 1 <= L_c <= L:
        raise ValueError(f"L_c must lie in [1, L={L}], got {L_c}")
    gains = np.sum(np.abs(ch.h) ** 2, axis=2)   # (L, K)
    alpha = np.zeros(gains.shape, dtype=int)
    for k in range(gains.shape[1]):
        top = np.argsort(-gains[:, k], kind="stable")[:L_c]
        alpha[top, k] = 1
    return alpha


def interference_energy(ch: ChannelSet, precoders, alpha: np.ndarray, l: int,
                        n_snapshots: int, rng: np.random.Generator) -> float:
    """Average received primary energy ``||F_l^H x_l + z||^2`` at the secondary RX.

    ``precoders[l]`` is an ``(M, K)`` matrix whose columns are the
    detection-phase beamformers.  Each snapshot draws fresh unit-power
    symbols and fresh noise.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    W = np.asarray(precoders[l]) * alpha[l][None, :]       # (M, K)
    K = W.shape[1]
    q = _cn(rng, (K, n_snapshots))
    z = np.sqrt(ch.sigma2) * _cn(rng, (ch.N, n_snapshots))
    y = ch.F[l].conj().T @ (W @ q) + z
    return float(np.mean(np.sum(np.abs(y) ** 2, axis=0)))


def select_sensing(energies, L_s: int) -> tuple[int, ...]:
    """Indices of the ``L_s`` smallest energies, ascending; ties by index."""
    energies = np.asarray(energies, dtype=float)
    if not 0 <= L_s <= energies.size:
        raise ValueError(f"L_s must lie in [0, L={energies.size}], got {L_s}")
    order = np.argsort(energies, kind="stable")
    return tuple(int(i) for i in order[:L_s])


def random_sensing(L: int, L_s: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform draw of ``L_s`` distinct sub-carriers (non-cooperative secondary)."""
    if not 0 <= L_s <= L:
        raise ValueError(f"L_s must lie in [0, L={L}], got {L_s}")
    return tuple(int(i) for i in rng.choice(L, size=L_s, replace=False))
