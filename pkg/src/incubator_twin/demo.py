"""One-process wiring of the whole twin against a private broker.

The demo mirrors the deployed topology: every service is a bus client
and could equally run in its own process against a shared broker. The
plant starts last, after every other service has confirmed its
subscriptions, so recordings contain the run from the first sample and
fixed-seed runs reproduce byte-identical driver recordings.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

from incubator_twin.bus import Broker, BusClient
from incubator_twin.calibration import CalibrationService
from incubator_twin.controller import ControllerConfig, ControllerService
from incubator_twin.datalog import DataLog, Recorder
from incubator_twin.estimator import EstimatorService, KalmanConfig
from incubator_twin.models import ModelBParams
from incubator_twin.orchestrator import Orchestrator, OrchestratorConfig
from incubator_twin.plant import PlantConfig, VirtualPlant
from incubator_twin.whatif import WhatIfService

logger = logging.getLogger(__name__)

ALL_SERVICES = ("recorder", "controller", "estimator", "calibration",
                "whatif", "orchestrator")


@dataclass
class TwinOptions:
    data_dir: str | Path = "data"
    duration: float | None = 4000.0       # simulated seconds; None = run on
    time_scale: float = 0.01
    seed: int | None = 1
    noise_sigma: float | None = None      # None: plant default (0.5 K)
    start_ts: float | None = 0.0
    services: tuple[str, ...] = ALL_SERVICES
    plant: PlantConfig | None = None
    controller: ControllerConfig | None = None
    kalman: KalmanConfig | None = None
    orchestrator: OrchestratorConfig | None = None
    perturb_params: float = 0.0           # e.g. 0.2 starts the twin's model
                                          # 20 % off the plant's ground truth
    host: str = "127.0.0.1"
    port: int = 0                         # 0: ephemeral private broker


class Twin:
    """Handle over the running demo composition."""

    def __init__(self, options: TwinOptions | None = None):
        self.options = options or TwinOptions()
        self.broker: Broker | None = None
        self.plant: VirtualPlant | None = None
        self.services: dict[str, object] = {}
        self.run_dir: Path | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.broker.address

    def start(self) -> "Twin":
        opt = self.options
        self.broker = Broker(opt.host, opt.port).serve()
        host, port = self.broker.address

        plant_cfg = opt.plant or PlantConfig(
            time_scale=opt.time_scale, seed=opt.seed, start_ts=opt.start_ts,
            duration=opt.duration,
            noise_sigma=0.5 if opt.noise_sigma is None else opt.noise_sigma)
        self.plant = VirtualPlant(plant_cfg, host, port)

        twin_params = plant_cfg.params
        if opt.perturb_params:
            f = 1.0 + opt.perturb_params
            twin_params = ModelBParams(
                c_air=twin_params.c_air * f, g_box=twin_params.g_box / f,
                c_heater=twin_params.c_heater * f,
                g_heater=twin_params.g_heater / f)

        if "recorder" in opt.services:
            self.services["recorder"] = Recorder(opt.data_dir, host, port)
        if "controller" in opt.services:
            self.services["controller"] = ControllerService(
                opt.controller or ControllerConfig(), host, port)
        if "estimator" in opt.services:
            kalman = opt.kalman or KalmanConfig(
                params=twin_params, dt=plant_cfg.sample_period,
                power_w=plant_cfg.power_w)
            self.services["estimator"] = EstimatorService(kalman, host, port)
        if "calibration" in opt.services:
            self.services["calibration"] = CalibrationService(
                DataLog(opt.data_dir), power_w=plant_cfg.power_w,
                host=host, port=port)
        if "whatif" in opt.services:
            self.services["whatif"] = WhatIfService(host, port)
        if "orchestrator" in opt.services:
            twin_theta = {"c_air": twin_params.c_air, "g_box": twin_params.g_box,
                          "c_heater": twin_params.c_heater,
                          "g_heater": twin_params.g_heater}
            orch_cfg = opt.orchestrator or OrchestratorConfig(
                power_w=plant_cfg.power_w)
            if orch_cfg.initial_params is None:
                orch_cfg.initial_params = twin_theta
            self.services["orchestrator"] = Orchestrator(orch_cfg, host, port)

        for name, svc in self.services.items():
            svc.start()
        for name, svc in self.services.items():
            if not svc.ready.wait(10.0):
                raise RuntimeError(f"{name} did not come up")
        recorder = self.services.get("recorder")
        self.run_dir = recorder.run_dir if recorder else None

        self.plant.start()
        if not self.plant.ready.wait(10.0):
            raise RuntimeError("plant did not come up")
        logger.info("twin up at %s:%d (run dir %s)", host, port, self.run_dir)
        return self

    def client(self) -> BusClient:
        return BusClient(*self.broker.address)

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the plant finishes its configured duration."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self.plant.finished:
            if deadline is not None and time.monotonic() > deadline:
                return False
            time.sleep(0.02)
        return True

    def stop(self) -> None:
        if self.plant is not None:
            self.plant.stop()
        for svc in self.services.values():
            svc.stop()
        # give the recorder a beat to drain in-flight messages
        recorder = self.services.get("recorder")
        if recorder is not None:
            recorder.join(2.0)
        if self.broker is not None:
            self.broker.close()


def run_demo(options: TwinOptions | None = None,
             settle: float = 0.5) -> Path | None:
    """Run a bounded demo to completion; returns the run directory."""
    twin = Twin(options).start()
    try:
        if not twin.wait(timeout=None if twin.options.duration is None
                         else max(60.0, 3 * twin.options.duration
                                  * twin.options.time_scale + 30.0)):
            raise TimeoutError("plant did not finish in time")
        time.sleep(settle)   # let reactive services flush their last outputs
    finally:
        twin.stop()
    return twin.run_dir
