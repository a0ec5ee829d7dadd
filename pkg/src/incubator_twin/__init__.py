"""Digital twin of a thermal incubator.

The package is organized around a small message bus: a virtual plant
emulates the physical incubator and its low-level driver, a bang-bang
controller regulates it, and the twin services (recorder, calibrator,
Kalman state estimator, what-if optimizer, self-adaptation orchestrator)
observe and steer everything through bus topics. A FastAPI gateway
bridges the bus and the data log to HTTP/WebSocket clients.
"""

from incubator_twin.models import (
    ModelAParams,
    ModelBParams,
    PlantInput,
    ThermalState,
    Trajectory,
    heat_energy,
    integrate,
    model_a_derivative,
    model_b_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "ModelAParams",
    "ModelBParams",
    "PlantInput",
    "ThermalState",
    "Trajectory",
    "heat_energy",
    "integrate",
    "model_a_derivative",
    "model_b_derivative",
    "__version__",
]
