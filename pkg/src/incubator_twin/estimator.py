"""Kalman filter over the four-parameter model, plus anomaly detection.

The model is linear, so a plain Kalman filter is exact for the euler-
discretized system. State x = (t_bair, t_heater) with only the air
temperature measured:

    x+ = A x + B u,   u = (P*heater_on, t_room),   z = H x + v,  H = [1 0]

    A = I + dt * [[-(g_heater+g_box)/c_air,  g_heater/c_air],
                  [ g_heater/c_heater,      -g_heater/c_heater]]
    B = dt * [[0, g_box/c_air], [1/c_heater, 0]]

The measurement update uses the Joseph-form covariance update. Anomaly
detection is a windowed test on the normalized innovation |nu|/sqrt(S):
the flag raises when the threshold is exceeded in at least `min_hits` of
the last `window` measured steps.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from incubator_twin import topics
from incubator_twin.models import ModelBParams
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = ModelBParams(c_air=486.12, g_box=0.856, c_heater=33.65,
                              g_heater=0.87)


def _default_q() -> np.ndarray:
    return np.diag([1e-4, 1e-4])


@dataclass
class KalmanConfig:
    params: ModelBParams = DEFAULT_PARAMS
    dt: float = 3.0                  # plant sample period, s
    q: np.ndarray = field(default_factory=_default_q)   # process noise, K^2
    r: float = 0.25                  # measurement noise variance, K^2
    tau: float = 3.0                 # normalized-innovation threshold
    window: int = 10                 # anomaly window length
    min_hits: int = 5                # exceedances within the window
    power_w: float = 100.0
    p0: float = 25.0                 # initial covariance diagonal, K^2

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (2, 2):
            raise ValueError("q must be 2x2")
        if np.any(np.linalg.eigvalsh((self.q + self.q.T) / 2) < -1e-12):
            raise ValueError("q must be positive semidefinite")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def discretize(params: ModelBParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Euler-discretized (A, B) for state (t_bair, t_heater)."""
    ca, gb, ch, gh = params.c_air, params.g_box, params.c_heater, params.g_heater
    a = np.eye(2) + dt * np.array([[-(gh + gb) / ca, gh / ca],
                                   [gh / ch, -gh / ch]])
    b = dt * np.array([[0.0, gb / ca],
                       [1.0 / ch, 0.0]])
    return a, b


@dataclass
class EstimatorSnapshot:
    t_bair_hat: float
    t_heater_hat: float
    p: np.ndarray
    innovation: float | None
    s: float
    anomaly: bool

    def to_body(self, ts: float) -> dict:
        return {
            "t_bair_hat": self.t_bair_hat,
            "t_heater_hat": self.t_heater_hat,
            "p": [[float(v) for v in row] for row in self.p],
            "innovation": self.innovation,
            "s": self.s,
            "anomaly": self.anomaly,
            "ts": ts,
        }


class KalmanFilter:
    """Filter state plus the sliding anomaly window."""

    H = np.array([[1.0, 0.0]])

    def __init__(self, config: KalmanConfig, z0: float):
        self.config = config
        self.a, self.b = discretize(config.params, config.dt)
        self.x = np.array([z0, z0], dtype=float)
        self.p = np.diag([config.p0, config.p0]).astype(float)
        self.innovation: float | None = None
        self.s = float(self.p[0, 0] + config.r)
        self.anomaly = False
        self._exceedances: deque[bool] = deque(maxlen=config.window)

    def reconfigure(self, params: ModelBParams) -> None:
        """Swap model parameters. A model change invalidates the old
        confidence, so the covariance re-inflates to its initial value and
        the anomaly window restarts clean."""
        self.config.params = params
        self.a, self.b = discretize(params, self.config.dt)
        self.p = np.diag([self.config.p0, self.config.p0]).astype(float)
        self._exceedances.clear()
        self.anomaly = False

    def step(self, heater_on: bool, t_room: float, z: float) -> EstimatorSnapshot:
        """Predict with the input over the elapsed interval, then update
        with the new measurement. A non-finite measurement skips the
        update (predict only)."""
        cfg = self.config
        u = np.array([cfg.power_w if heater_on else 0.0, t_room])
        # predict
        self.x = self.a @ self.x + self.b @ u
        self.p = self.a @ self.p @ self.a.T + cfg.q

        if z is None or not math.isfinite(z):
            self.innovation = None
            self.s = float(self.p[0, 0] + cfg.r)
        else:
            nu = float(z - self.x[0])
            s = float(self.p[0, 0] + cfg.r)
            k = self.p @ self.H.T / s            # 2x1 gain
            self.x = self.x + (k * nu).ravel()
            ikh = np.eye(2) - k @ self.H
            self.p = ikh @ self.p @ ikh.T + (k * cfg.r) @ k.T
            self.p = (self.p + self.p.T) / 2.0
            self.innovation = nu
            self.s = s
            self._exceedances.append(abs(nu) / math.sqrt(s) > cfg.tau)
            self.anomaly = sum(self._exceedances) >= cfg.min_hits

        return self.snapshot()

    def snapshot(self) -> EstimatorSnapshot:
        return EstimatorSnapshot(
            t_bair_hat=float(self.x[0]),
            t_heater_hat=float(self.x[1]),
            p=self.p.copy(),
            innovation=self.innovation,
            s=self.s,
            anomaly=self.anomaly,
        )


class EstimatorService(Service):
    """Runs the filter against the live driver stream.

    The heater input for each predict step is the heater_on of the
    previous driver sample: that is the actuation that was applied over
    the elapsed interval (and it already reflects the safety clamp).
    Reconfiguration requests ({"set_params": {...}}) arrive on the
    estimator.state topic and apply between steps.
    """

    name = "estimator"

    def __init__(self, config: KalmanConfig | None = None,
                 host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self.config = config or KalmanConfig()
        self.filter: KalmanFilter | None = None
        self._prev_heater_on = False

    def _run(self) -> None:
        sub = self.bus.subscribe(topics.DRIVER_STATE, topics.ESTIMATOR_STATE)
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
        ts = float(body.get("time", 0.0))
        z = body.get("average_temperature")
        t_room = float(body.get("t_room", 21.0))
        heater_on = bool(body.get("heater_on", False))
        if self.filter is None:
            if z is None or not math.isfinite(float(z)):
                return
            self.filter = KalmanFilter(self.config, float(z))
            snap = self.filter.snapshot()
        else:
            snap = self.filter.step(self._prev_heater_on, t_room,
                                    float(z) if z is not None else math.nan)
        self._prev_heater_on = heater_on
        self.bus.publish(topics.ESTIMATOR_STATE, snap.to_body(ts), ts=ts)

    def _on_request(self, body: dict, ts: float) -> None:
        raw = body.get("set_params")
        if raw is None:
            return
        try:
            params = ModelBParams(c_air=float(raw["c_air"]),
                                  g_box=float(raw["g_box"]),
                                  c_heater=float(raw["c_heater"]),
                                  g_heater=float(raw["g_heater"]))
        except (KeyError, TypeError, ValueError) as exc:
            logger.warning("rejected estimator params %r: %s", raw, exc)
            self.bus.publish(topics.ESTIMATOR_STATE,
                             {"error": f"rejected params: {exc}", "ts": ts},
                             ts=ts)
            return
        self.config.params = params
        if self.filter is not None:
            self.filter.reconfigure(params)
        logger.info("estimator reconfigured: %s", params)
