"""Wideband cognitive-radio ISAC beamforming: RCG precoding, AO/SDR joint design, Monte Carlo."""

from .config import Scenario, ci_profile, load_scenario, parse_scenario
from .channels import ChannelSet, generate_channel_set
from .harness import SchemeId, run_sweep, run_trial
from .joint import JointBeamformer, ao_solve
from .manifold import ManifoldBeamformer, rcg_solve
from .sdp import solve_sdp

__all__ = [
    "Scenario",
    "ci_profile",
    "load_scenario",
    "parse_scenario",
    "ChannelSet",
    "generate_channel_set",
    "SchemeId",
    "run_trial",
    "run_sweep",
    "JointBeamformer",
    "ao_solve",
    "ManifoldBeamformer",
    "rcg_solve",
    "solve_sdp",
]

__version__ = "0.1.0"
