"""Self-adaptation loop: detect, experiment, recalibrate, reconfigure.

A supervisory state machine that talks to everything else only through
bus messages. The cycle:

    Monitoring --(estimator anomaly)--> CoolingDown: controller suspended,
    heater off, wait until the air is within a safe margin of the room -->
    Experimenting: heater full on, then off (a step profile exciting both
    time constants) --> Calibrating: request a fit over the experiment
    window --> Reconfiguring: push the new parameters to the estimator -->
    Optimizing: request a what-if sweep of controller candidates -->
    Applying: push the winning config and resume the controller -->
    Monitoring.

Every transition is published on orchestrator.state. Every state has a
timeout (simulated time for the physical phases, wall time for the
computational ones); a timeout or a failed step resumes the controller
unchanged and returns to Monitoring. Anomaly signals arriving mid-cycle
do not restart the cycle.

In propose mode the Applying step waits for an operator confirmation
message ({"confirm": true} on orchestrator.state) before touching the
controller.
"""

from __future__ import annotations

import logging
import time
import uuid
from dataclasses import dataclass

from incubator_twin import topics
from incubator_twin.controller import ControllerConfig
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

MONITORING = "monitoring"
COOLING_DOWN = "cooling_down"
EXPERIMENTING = "experimenting"
CALIBRATING = "calibrating"
RECONFIGURING = "reconfiguring"
OPTIMIZING = "optimizing"
APPLYING = "applying"

def default_grid(current: ControllerConfig) -> list[dict]:
    """Candidate sweep around the current band: pulse and wait durations."""
    return [{"ll": current.ll, "ul": current.ul, "h": h, "c": c}
            for h in (10.0, 30.0, 60.0)
            for c in (10.0, 20.0, 40.0)]


@dataclass
class OrchestratorConfig:
    model: str = "b"
    experiment_on: float = 300.0      # heater-on phase, simulated s
    experiment_off: float = 300.0     # heater-off phase, simulated s
    cooldown_margin: float = 2.0      # "safe" is t_room + margin, K
    propose: bool = False             # wait for operator confirmation
    power_w: float = 100.0
    horizon: float = 2000.0           # what-if rollout length, s
    grid: list[dict] | None = None    # None: default_grid(current config)
    initial_params: dict | None = None    # the twin's current model, if known
    trust_factor: float | None = 5.0  # recalibrate within current x [1/f, f]
    # timeouts: three times the nominal duration of each phase
    cooldown_timeout: float = 3600.0      # simulated s
    experiment_timeout: float = 1800.0    # simulated s
    calibration_timeout: float = 90.0     # wall s
    optimize_timeout: float = 30.0        # wall s
    apply_timeout: float = 60.0           # wall s (propose-mode wait)


class Orchestrator(Service):
    name = "orchestrator"

    def __init__(self, config: OrchestratorConfig | None = None,
                 host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self.config = config or OrchestratorConfig()
        self.state = MONITORING
        self.since = 0.0
        self.last_result: dict = {}
        self.propose = self.config.propose
        self.cycles_completed = 0
        self._current_params: dict | None = self.config.initial_params
        self._sim_now = 0.0
        self._t_room = 21.0
        self._controller_config = ControllerConfig()
        self._entered_sim = 0.0
        self._entered_wall = 0.0
        self._exp_start_ts = 0.0
        self._exp_heater_off_sent = False
        self._pending_id: str | None = None
        self._new_theta: dict | None = None
        self._proposal: dict | None = None

    # ------------------------------------------------------------------

    def _run(self) -> None:
        sub = self.bus.subscribe(
            topics.DRIVER_STATE, topics.ESTIMATOR_STATE,
            topics.CALIBRATION_RESULT, topics.WHATIF_RESULT,
            topics.CONTROLLER_STATE, topics.ORCHESTRATOR_STATE)
        self.bus.sync()
        self.ready.set()
        self._publish_state()
        while not self.stopped:
            msg = sub.get(timeout=0.2)
            if msg is not None:
                self._dispatch(msg.topic, msg.body)
            self._check_timeout()

    def _dispatch(self, topic: str, body: dict) -> None:
        if topic == topics.DRIVER_STATE:
            self._sim_now = float(body.get("time", self._sim_now))
            self._t_room = float(body.get("t_room", self._t_room))
            self._on_driver(body)
        elif topic == topics.ESTIMATOR_STATE:
            if "anomaly" in body:
                self._on_estimate(body)
        elif topic == topics.CONTROLLER_STATE:
            if "mode" in body and "error" not in body:
                try:
                    self._controller_config = ControllerConfig.from_body(body)
                except (KeyError, TypeError, ValueError):
                    pass
        elif topic == topics.CALIBRATION_RESULT:
            self._on_calibration(body)
        elif topic == topics.WHATIF_RESULT:
            self._on_whatif(body)
        elif topic == topics.ORCHESTRATOR_STATE:
            self._on_request(body)

    # ------------------------------------------------------------------
    # per-state handling
    # ------------------------------------------------------------------

    def _on_estimate(self, body: dict) -> None:
        if self.state == MONITORING and body.get("anomaly"):
            logger.info("anomaly detected at t=%.1f; starting adaptation",
                        self._sim_now)
            self._suspend_controller()
            self._command_heater(False)
            self._transition(COOLING_DOWN)

    def _on_driver(self, body: dict) -> None:
        avg = body.get("average_temperature")
        if avg is None:
            return
        if self.state == COOLING_DOWN:
            if avg <= self._t_room + self.config.cooldown_margin:
                self._exp_start_ts = float(body["time"])
                self._exp_heater_off_sent = False
                self._command_heater(True)
                self._transition(EXPERIMENTING)
        elif self.state == EXPERIMENTING:
            elapsed = self._sim_now - self._entered_sim
            if (elapsed >= self.config.experiment_on
                    and not self._exp_heater_off_sent):
                self._command_heater(False)
                self._exp_heater_off_sent = True
            if elapsed >= self.config.experiment_on + self.config.experiment_off:
                self._pending_id = uuid.uuid4().hex
                request = {
                    "model": self.config.model,
                    "from_ts": self._exp_start_ts,
                    "to_ts": float(body["time"]),
                    "id": self._pending_id,
                }
                if self._current_params is not None:
                    request["theta0"] = self._current_params
                    if self.config.trust_factor is not None:
                        request["trust_factor"] = self.config.trust_factor
                self.bus.publish(topics.CALIBRATION_REQUEST, request,
                                 ts=self._sim_now)
                self._transition(CALIBRATING)

    def _on_calibration(self, body: dict) -> None:
        if self.state != CALIBRATING or body.get("id") != self._pending_id:
            return
        if body.get("status") != "ok" or not body.get("converged"):
            self._abort(f"calibration failed: {body.get('reason', 'not converged')}")
            return
        self._new_theta = body["theta"]
        self.last_result = {"theta": self._new_theta,
                            "cost": body.get("cost")}
        self.bus.publish(topics.ESTIMATOR_STATE,
                         {"set_params": self._new_theta}, ts=self._sim_now)
        self._transition(RECONFIGURING)
        # reconfiguration is fire-and-forget; go optimize immediately
        grid = self.config.grid or default_grid(self._controller_config)
        self._pending_id = uuid.uuid4().hex
        self.bus.publish(topics.WHATIF_REQUEST, {
            "grid": {
                "candidates": grid,
                "params": self._new_theta,
                "t_room": self._t_room,
                "power_w": self.config.power_w,
                "horizon": self.config.horizon,
            },
            "id": self._pending_id,
        }, ts=self._sim_now)
        self._transition(OPTIMIZING)

    def _on_whatif(self, body: dict) -> None:
        if self.state != OPTIMIZING or body.get("id") != self._pending_id:
            return
        if body.get("status") != "ok":
            self._abort(f"what-if failed: {body.get('reason')}")
            return
        self._proposal = body["best"]
        self.last_result = {"theta": self._new_theta, "best": self._proposal}
        self._transition(APPLYING)
        if not self.propose:
            self._apply_proposal()

    def _on_request(self, body: dict) -> None:
        if "set_mode" in body:
            self.propose = body["set_mode"] == "propose"
            logger.info("orchestrator mode: %s",
                        "propose" if self.propose else "auto")
            self._publish_state()
        elif body.get("confirm") and self.state == APPLYING and self.propose:
            self._apply_proposal()

    # ------------------------------------------------------------------
    # actions
    # ------------------------------------------------------------------

    def _apply_proposal(self) -> None:
        if self._proposal is not None:
            self.bus.publish(topics.CONTROLLER_STATE,
                             {"set": self._proposal}, ts=self._sim_now)
        self._resume_controller()
        if self._new_theta is not None:
            self._current_params = self._new_theta
        self.cycles_completed += 1
        logger.info("adaptation cycle complete: %s", self.last_result)
        self._transition(MONITORING)

    def _abort(self, reason: str) -> None:
        logger.warning("adaptation aborted in %s: %s", self.state, reason)
        self.last_result = {"aborted_in": self.state, "reason": reason}
        self._resume_controller()
        self._transition(MONITORING)

    def _suspend_controller(self) -> None:
        self.bus.publish(topics.CONTROLLER_STATE, {"suspend": True},
                         ts=self._sim_now)

    def _resume_controller(self) -> None:
        self.bus.publish(topics.CONTROLLER_STATE, {"resume": True},
                         ts=self._sim_now)

    def _command_heater(self, on: bool) -> None:
        self.bus.publish(topics.DRIVER_COMMAND, {"heater_on": on},
                         ts=self._sim_now)

    def _transition(self, state: str) -> None:
        self.state = state
        self._entered_sim = self._sim_now
        self._entered_wall = time.monotonic()
        self.since = self._sim_now
        self._publish_state()

    def _publish_state(self) -> None:
        body = {"state": self.state, "since": self.since,
                "last_result": self.last_result, "propose": self.propose}
        if self.state == APPLYING and self.propose and self._proposal:
            body["proposal"] = self._proposal
        try:
            self.bus.publish(topics.ORCHESTRATOR_STATE, body, ts=self._sim_now)
        except Exception:
            logger.exception("failed to publish orchestrator state")

    def _check_timeout(self) -> None:
        cfg = self.config
        sim_elapsed = self._sim_now - self._entered_sim
        wall_elapsed = time.monotonic() - self._entered_wall
        if self.state == COOLING_DOWN and sim_elapsed > cfg.cooldown_timeout:
            self._abort("cool-down timeout")
        elif self.state == EXPERIMENTING and sim_elapsed > cfg.experiment_timeout:
            self._abort("experiment timeout")
        elif self.state == CALIBRATING and wall_elapsed > cfg.calibration_timeout:
            self._abort("calibration timeout")
        elif self.state == OPTIMIZING and wall_elapsed > cfg.optimize_timeout:
            self._abort("optimization timeout")
        elif self.state == APPLYING and wall_elapsed > cfg.apply_timeout:
            self._abort("apply/confirmation timeout")
