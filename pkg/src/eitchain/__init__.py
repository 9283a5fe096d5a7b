"""Simulation of slow-light pulses in chains of EIT layers.

Two engines share one medium description: a Maxwell-Bloch split-step solver
for the probe field and atomic coherences, and a reduced polariton-flow
model for intensities. Named presets reproduce the reference experiments.
"""

from .dispersion import EitParams, control_for_velocity, diffusion_coefficient, group_velocity_resonance
from .effective import VelocityField, analytic_defect, evolve_intensity, run_effective
from .mb import Grid, MBSolver, init_state, init_steady_state
from .medium import Layer, MediumProfile, ModulationProtocol, PulseSpec
from .scenarios import Scenario, adiabaticity_report, measure, preset, run_scenario

__all__ = [
    "EitParams",
    "Grid",
    "Layer",
    "MBSolver",
    "MediumProfile",
    "ModulationProtocol",
    "PulseSpec",
    "Scenario",
    "VelocityField",
    "adiabaticity_report",
    "analytic_defect",
    "control_for_velocity",
    "diffusion_coefficient",
    "evolve_intensity",
    "group_velocity_resonance",
    "init_state",
    "init_steady_state",
    "measure",
    "preset",
    "run_effective",
    "run_scenario",
]
