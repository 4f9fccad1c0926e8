"""Simulation and numerical checks for metastatic branching particle systems."""
from ._jit import USING_NUMBA
from .engine import (
    Event,
    EventLog,
    check_accounting,
    metric_simplified,
    population_bound_C,
    simplify,
    simulate,
    simulate_batch,
    step,
)
from .labels import ROOT, Label
from .model import FullConfiguration, Params, ParticleRecord, Phase, SimplifiedState
from .movement import CEMETERY, MovementSpec, Profile
from .rngstats import StreamKey

__version__ = "0.1.0"
