"""Observer-based event-triggered backstepping control of a reaction-diffusion PDE."""

from .analysis import CertificateSet, TriggerParams, certify, dwell_time, open_loop_mu
from .harness import SimConfig, run_simulation, run_sweep
from .kernels import PAPER_PARAMS, SystemParams, design

__all__ = [
    "CertificateSet",
    "PAPER_PARAMS",
    "SimConfig",
    "SystemParams",
    "TriggerParams",
    "certify",
    "design",
    "dwell_time",
    "open_loop_mu",
    "run_simulation",
    "run_sweep",
]
