"""Virtual incubator: ground-truth physics plus low-level driver emulation.

The ground truth is the four-parameter model (the better of the two at
capturing heatbed inertia), advanced with euler substeps between driver
ticks. Every sample period the plant drains pending heater/fan commands
and disturbance requests, advances the truth, reads three noisy sensors,
applies the safety cutoff, and publishes a driver state message. Commands
received during an interval take effect from the next tick, which is
also when disturbances activate and expire.

Disturbances:

* lid_open    -- multiplies the box-to-room conductance by `magnitude`
                 (>= 1) for `duration` seconds.
* cold_object -- couples an extra thermal mass of `magnitude` J/K at
                 10 deg C to the air through a fixed 1.0 J/(K s)
                 conductance.
* none        -- no dynamic change; trajectories are bit-identical.

Sensors t1..t3 read truth + offset + gaussian noise; offsets triple when
the fan is off (the air stratifies). The published average_temperature is
mean(t1, t3): the hottest and coldest probe positions.

Simulated time runs at `time_scale` wall seconds per simulated second;
all published timestamps are `start_ts` + simulated seconds, so runs with
a fixed seed and fixed start_ts reproduce byte-identical recordings.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass

from incubator_twin import topics
from incubator_twin.bus import BusError
from incubator_twin.models import ModelBParams
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

GROUND_TRUTH = ModelBParams(c_air=486.12, g_box=0.856, c_heater=33.65,
                            g_heater=0.87)
COLD_OBJECT_COUPLING = 1.0   # J/(K s)
COLD_OBJECT_TEMP = 10.0      # deg C at insertion


@dataclass(frozen=True)
class Disturbance:
    kind: str                 # lid_open | cold_object | none
    magnitude: float = 1.0
    duration: float = 60.0

    def __post_init__(self) -> None:
        if self.kind not in ("lid_open", "cold_object", "none"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "lid_open" and self.magnitude < 1.0:
            raise ValueError("lid_open magnitude must be >= 1")
        if self.kind == "cold_object" and self.magnitude <= 0.0:
            raise ValueError("cold_object magnitude (thermal mass) must be > 0")
        if self.duration <= 0 and self.kind != "none":
            raise ValueError("duration must be positive")


@dataclass
class PlantConfig:
    params: ModelBParams = GROUND_TRUTH
    power_w: float = 100.0
    t_room: float = 21.0
    sample_period: float = 3.0
    noise_sigma: float = 0.5
    offsets: tuple[float, float, float] = (0.5, 0.0, -0.5)
    time_scale: float = 1.0          # wall seconds per simulated second
    substep: float = 0.5
    safety_threshold: float = 70.0
    seed: int | None = None
    start_ts: float | None = None    # None: wall clock at startup
    initial_t: float | None = None   # None: t_room
    initial_heater_on: bool = False
    fan_on: bool = True
    duration: float | None = None    # stop after this much simulated time

    def __post_init__(self) -> None:
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")
        if self.substep <= 0:
            raise ValueError("substep must be positive")


def safety_clamp(sensors: tuple[float, ...], command: bool,
                 threshold: float = 70.0) -> bool:
    """Force the heater off when any sensor reads above the threshold
    (strictly); otherwise pass the command through."""
    if any(s > threshold for s in sensors):
        return False
    return command


class VirtualPlant(Service):
    name = "plant"

    def __init__(self, config: PlantConfig | None = None,
                 host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self.config = config or PlantConfig()
        t0 = self.config.initial_t if self.config.initial_t is not None \
            else self.config.t_room
        self.t_bair = float(t0)
        self.t_heater = float(t0)
        self.t_obj: float | None = None
        self.c_obj = 0.0
        self.g_box_multiplier = 1.0
        self.heater_cmd = self.config.initial_heater_on
        self.heater_on = self.config.initial_heater_on
        self.fan_on = self.config.fan_on
        self.sim_time = 0.0
        self.finished = False
        self._active: Disturbance | None = None
        self._expires_at = 0.0
        self._rng = random.Random(self.config.seed)

    # ------------------------------------------------------------------
    # physics
    # ------------------------------------------------------------------

    def _advance(self, span: float) -> None:
        cfg = self.config
        p = cfg.params
        power = cfg.power_w if self.heater_on else 0.0
        g_box = p.g_box * self.g_box_multiplier
        s = 0.0
        while s < span - 1e-12:
            h = min(cfg.substep, span - s)
            flow = p.g_heater * (self.t_heater - self.t_bair)
            load = (COLD_OBJECT_COUPLING * (self.t_bair - self.t_obj)
                    if self.t_obj is not None else 0.0)
            d_air = (flow - g_box * (self.t_bair - cfg.t_room) - load) / p.c_air
            d_heater = (power - flow) / p.c_heater
            if self.t_obj is not None:
                self.t_obj += h * load / self.c_obj
            self.t_bair += h * d_air
            self.t_heater += h * d_heater
            s += h

    # ------------------------------------------------------------------
    # disturbances
    # ------------------------------------------------------------------

    def _apply_disturbance(self, body: dict) -> dict:
        try:
            dist = Disturbance(kind=body.get("kind", ""),
                               magnitude=float(body.get("magnitude", 1.0)),
                               duration=float(body.get("duration", 60.0)))
        except (TypeError, ValueError) as exc:
            return {"status": "rejected", "reason": str(exc)}
        if dist.kind == "none":
            return {"status": "ok", "kind": "none"}
        if self._active is not None:
            return {"status": "rejected", "reason": "busy",
                    "kind": dist.kind}
        self._active = dist
        self._expires_at = self.sim_time + dist.duration
        if dist.kind == "lid_open":
            self.g_box_multiplier = dist.magnitude
        else:
            self.t_obj = COLD_OBJECT_TEMP
            self.c_obj = dist.magnitude
        logger.info("disturbance %s active until t=%.1f", dist.kind,
                    self._expires_at)
        return {"status": "active", "kind": dist.kind,
                "magnitude": dist.magnitude, "until": self._expires_at}

    def _expire_disturbance(self) -> dict | None:
        if self._active is None or self.sim_time < self._expires_at - 1e-9:
            return None
        kind = self._active.kind
        self.g_box_multiplier = 1.0
        self.t_obj = None
        self.c_obj = 0.0
        self._active = None
        logger.info("disturbance %s expired at t=%.1f", kind, self.sim_time)
        return {"status": "expired", "kind": kind}

    # ------------------------------------------------------------------
    # driver loop
    # ------------------------------------------------------------------

    def _run(self) -> None:
        cfg = self.config
        sub = self.bus.subscribe(topics.DRIVER_COMMAND, topics.PLANT_DISTURBANCE)
        self.bus.sync()
        self.ready.set()
        start_ts = cfg.start_ts if cfg.start_ts is not None else time.time()
        next_wall = time.monotonic()
        first = True
        while not self.stopped:
            if not first:
                self._advance(cfg.sample_period)
                self.sim_time += cfg.sample_period
            first = False

            replies = []
            expired = self._expire_disturbance()
            if expired is not None:
                replies.append(expired)
            while True:
                msg = sub.get(timeout=0.0)
                if msg is None:
                    break
                if msg.topic == topics.DRIVER_COMMAND:
                    if "heater_on" in msg.body:
                        self.heater_cmd = bool(msg.body["heater_on"])
                    if "fan_on" in msg.body:
                        self.fan_on = bool(msg.body["fan_on"])
                elif "status" not in msg.body:   # ignore own acknowledgements
                    replies.append(self._apply_disturbance(msg.body))

            spread = 1.0 if self.fan_on else 3.0
            sensors = tuple(
                self.t_bair + offset * spread + self._rng.gauss(0.0, cfg.noise_sigma)
                for offset in cfg.offsets)
            self.heater_on = safety_clamp(sensors, self.heater_cmd,
                                          cfg.safety_threshold)
            ts = start_ts + self.sim_time
            state = {
                "time": ts,
                "t1": sensors[0],
                "t2": sensors[1],
                "t3": sensors[2],
                "average_temperature": (sensors[0] + sensors[2]) / 2.0,
                "t_room": cfg.t_room,
                "heater_on": self.heater_on,
                "fan_on": self.fan_on,
                "execution_interval": cfg.sample_period,
                "elapsed": self.sim_time,
            }
            self._publish(topics.DRIVER_STATE, state, ts)
            for reply in replies:
                self._publish(topics.PLANT_DISTURBANCE, reply, ts)

            if cfg.duration is not None and self.sim_time >= cfg.duration - 1e-9:
                self.finished = True
                return

            next_wall += cfg.sample_period * cfg.time_scale
            lag = next_wall - time.monotonic()
            if lag > 0:
                if self._stop.wait(lag):
                    return
            else:
                next_wall = time.monotonic()   # fell behind; no sleep burst

    def _publish(self, topic: str, body: dict, ts: float) -> None:
        try:
            self.bus.publish(topic, body, ts=ts)
        except BusError:
            # the client reconnects on its own; the simulation never stops
            logger.warning("publish failed on %s; continuing", topic)
