from .harness import RunConfig, RunMetrics, RunResult, calibrate, run_epochs
from .presets import PRESETS, preset
from .scenario import DriftModel, RobotSpec, Scenario, StepFault, generate_scenario
from .server import ServerOracle

__all__ = [
    "DriftModel", "PRESETS", "RobotSpec", "RunConfig", "RunMetrics", "RunResult", "Scenario", "ServerOracle",
    "StepFault", "calibrate", "generate_scenario", "preset", "run_epochs",
]
