"""
Models module - Pydantic schemas for experiment configuration.

This module defines:
- Fault models: FaultLocation, FaultSpec and their enums
- Run models: TrainConfig, DetectorConfig
- Campaign model: ExperimentSpec with its sweep axes
"""
from src.models.experiment import (
    DetectorConfig,
    ExperimentSpec,
    FaultLocation,
    FaultSpec,
    FlipMode,
    LocationKind,
    Persistence,
    Phase,
    TrainConfig,
    build_model,
)

__all__ = [
    "DetectorConfig",
    "ExperimentSpec",
    "FaultLocation",
    "FaultSpec",
    "FlipMode",
    "LocationKind",
    "Persistence",
    "Phase",
    "TrainConfig",
    "build_model",
]
