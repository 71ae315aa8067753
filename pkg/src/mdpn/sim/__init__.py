from mdpn.sim.controllers import Controller, Epoch, FixedAgnostic, MaxWeight, Warp, default_epoch_length
from mdpn.sim.diagnostics import (
    EpochIncomplete,
    Stability,
    lyapunov_drift,
    mean_ci,
    per_class_stability,
    replications,
    stability_diagnostic,
    timescale_diagnostic,
)
from mdpn.sim.engine import SlotRecord, SystemState, Trace, run, step
from mdpn.sim.rng import SlotStreams

__all__ = [
    "Controller",
    "Epoch",
    "EpochIncomplete",
    "FixedAgnostic",
    "MaxWeight",
    "SlotRecord",
    "SlotStreams",
    "Stability",
    "SystemState",
    "Trace",
    "Warp",
    "default_epoch_length",
    "lyapunov_drift",
    "mean_ci",
    "per_class_stability",
    "replications",
    "run",
    "stability_diagnostic",
    "step",
    "timescale_diagnostic",
]
