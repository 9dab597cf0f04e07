"""UAV-swarm ISAC placement via consensus ADMM.

A swarm of single-antenna UAVs acts as a virtual antenna array for one
multi-antenna ground user. UAV positions are chosen to trade the uplink rate
against the Cramér-Rao bound on the user's position, by a consensus ADMM that
runs locally on each UAV except for one proxy-assisted gradient step.
"""

__version__ = "0.1.0"

from .admm import AdmmConfig, IterationRecord, SwarmState, project_ball, run
from .exceptions import (DegenerateGeometry, GenerationFailure, NumericalFailure,
                         ProtocolError, SingularFim, StepFailure, SwarmIsacError)
from .gradients import (check_gradients, fd_gradient, grad_consensus_objective, grad_crb,
                        grad_rate)
from .metrics import MetricReport, achievable_rate, crb, fim, objective
from .model import D_MIN, ChannelParams, Scenario, build_channel, channel_coeff
from .swarm import Simulation, simulate

__all__ = [
    "AdmmConfig", "ChannelParams", "D_MIN", "DegenerateGeometry", "GenerationFailure",
    "IterationRecord", "MetricReport", "NumericalFailure", "ProtocolError", "Scenario",
    "Simulation", "SingularFim", "StepFailure", "SwarmIsacError", "SwarmState",
    "achievable_rate", "build_channel", "channel_coeff", "check_gradients", "crb",
    "fd_gradient", "fim", "grad_consensus_objective", "grad_crb", "grad_rate", "objective",
    "project_ball", "run", "simulate",
]
