"""Bang-bang controller with a mandatory post-heating wait.

The statechart has three modes. Cooling waits for the measured average
temperature to drop under the lower limit, then heats. Heating runs for
at most `h` seconds but exits as soon as the temperature reaches the
upper limit (the delayed heatbed would otherwise overshoot). Every
heating pulse is followed by a wait of `c` seconds; at its end the
controller either resumes heating (still under the upper limit) or
starts cooling. The heater is commanded on exactly when the mode is
Heating, with one exception: a non-finite measurement holds the mode
and forces the heater off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from incubator_twin import topics
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

COOLING = "cooling"
HEATING = "heating"
WAITING = "waiting"


@dataclass(frozen=True)
class ControllerConfig:
    ll: float = 35.0   # lower temperature limit, deg C
    ul: float = 40.0   # upper temperature limit, deg C
    h: float = 30.0    # heating pulse duration, s
    c: float = 20.0    # post-heating wait, s

    def __post_init__(self) -> None:
        for name in ("ll", "ul", "h", "c"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.ll < self.ul:
            raise ValueError(f"need ll < ul, got ll={self.ll} ul={self.ul}")
        if self.h <= 0:
            raise ValueError(f"need h > 0, got {self.h}")
        if self.c < 0:
            raise ValueError(f"need c >= 0, got {self.c}")

    def to_body(self) -> dict:
        return {"ll": self.ll, "ul": self.ul, "h": self.h, "c": self.c}

    @classmethod
    def from_body(cls, body: dict) -> "ControllerConfig":
        return cls(ll=float(body["ll"]), ul=float(body["ul"]),
                   h=float(body["h"]), c=float(body["c"]))


@dataclass(frozen=True)
class ControllerMode:
    kind: str                # cooling | heating | waiting
    entered_at: float = 0.0  # when heating/waiting started, s

    def __post_init__(self) -> None:
        if self.kind not in (COOLING, HEATING, WAITING):
            raise ValueError(f"unknown mode {self.kind!r}")


def step(mode: ControllerMode, config: ControllerConfig, temp: float,
         now: float) -> tuple[ControllerMode, bool]:
    """One statechart step; returns the new mode and the heater command."""
    if not math.isfinite(temp):
        return mode, False
    if mode.kind == COOLING:
        if temp < config.ll:
            mode = ControllerMode(HEATING, now)
    elif mode.kind == HEATING:
        if now - mode.entered_at >= config.h or temp >= config.ul:
            mode = ControllerMode(WAITING, now)
    elif mode.kind == WAITING:
        if now - mode.entered_at >= config.c:
            if temp >= config.ul:
                mode = ControllerMode(COOLING)
            else:
                mode = ControllerMode(HEATING, now)
    return mode, mode.kind == HEATING


class ControllerService(Service):
    """Reactive loop: one driver sample in, heater command and mode out.

    Live requests arrive on the controller.state topic: {"set": {...}} for
    reconfiguration, {"suspend": true} / {"resume": true} for the
    orchestrator to take over actuation. While suspended the controller
    publishes no commands.
    """

    name = "controller"

    def __init__(self, config: ControllerConfig | None = None,
                 host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self.config = config or ControllerConfig()
        self.mode = ControllerMode(COOLING)
        self.suspended = False
        self._last_cmd: bool | None = None

    def _run(self) -> None:
        sub = self.bus.subscribe(topics.DRIVER_STATE, topics.CONTROLLER_STATE)
        self.bus.sync()
        self.ready.set()
        while not self.stopped:
            msg = sub.get(timeout=0.2)
            if msg is None:
                continue
            if msg.topic == topics.DRIVER_STATE:
                self._on_sample(msg.body)
            elif topics.is_request(msg.body):
                self._on_request(msg.body, msg.ts)

    def _on_sample(self, body: dict) -> None:
        now = float(body.get("time", 0.0))
        temp = float(body.get("average_temperature", float("nan")))
        if self.suspended:
            self._publish_state(now)
            return
        self.mode, heater_on = step(self.mode, self.config, temp, now)
        self.bus.publish(topics.DRIVER_COMMAND, {"heater_on": heater_on}, ts=now)
        self._last_cmd = heater_on
        self._publish_state(now)

    def _on_request(self, body: dict, ts: float) -> None:
        if "set" in body:
            try:
                self.config = ControllerConfig.from_body(body["set"])
                logger.info("controller reconfigured: %s", self.config)
            except (KeyError, TypeError, ValueError) as exc:
                logger.warning("rejected controller config %r: %s", body["set"], exc)
                self._publish_state(ts, error=f"rejected config: {exc}")
                return
        if body.get("suspend"):
            self.suspended = True
            self.mode = ControllerMode(COOLING)
            self.bus.publish(topics.DRIVER_COMMAND, {"heater_on": False}, ts=ts)
            self._last_cmd = False
        if body.get("resume"):
            self.suspended = False
        self._publish_state(ts)

    def _publish_state(self, ts: float, error: str | None = None) -> None:
        body = {
            "mode": self.mode.kind,
            **self.config.to_body(),
            "heater_on": self.mode.kind == HEATING and not self.suspended,
            "suspended": self.suspended,
            "ts": ts,
        }
        if error:
            body["error"] = error
        self.bus.publish(topics.CONTROLLER_STATE, body, ts=ts)
