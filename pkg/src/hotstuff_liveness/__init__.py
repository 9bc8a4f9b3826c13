"""Liveness testing for HotStuff-family consensus under Twins-style faults.

Modules, bottom up:

chain      blocks, certificates, protocol configuration
protocols  Basic HotStuff, 2-Phase HotStuff and early Sync HotStuff replicas
scenarios  Twins scenarios: generation, validation, canonical text
simnet     deterministic discrete-event execution of one scenario
monitor    hot states, temperature checking, lasso detection, time bounds
campaign   many scenarios, every checker, one report
cli        the ``hotstuff-liveness`` command
"""
from .campaign import CampaignConfig, CampaignReport, calibrate, replay, run_campaign
from .chain import GENESIS, Block, BlockStore, ConfigError, ProcessId, ProtocolConfig, ProtocolKind, conflicts, extends
from .monitor import (
    Method,
    PartialProcessState,
    PartialSystemState,
    StateTransitionGraph,
    TemperatureState,
    Verdict,
    VerdictKind,
    check_safety,
    check_temperature,
    classify_false_positive,
    find_hot_lassos,
    is_hot,
    time_bound_check,
)
from .scenarios import GeneratorConfig, Scenario, fixture_deadlock, generate, validate, with_kind
from .simnet import Execution, Simulation, simulate

__version__ = "0.1.0"
