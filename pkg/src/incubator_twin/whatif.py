"""What-if simulations: closed-loop rollouts and controller optimization.

A scenario couples the four-parameter plant model (euler, no noise) with
the bang-bang controller at a fixed step, starting from a given state
(typically the estimator's current one). Each rollout reports the energy
spent and how badly the temperature strayed outside the controller band:

    energy_used    = sum P*u*dt                          [J]
    band_violation = sum max(0, ll - T, T - ul)^2 * dt   [K^2 s]
    objective      = alpha*energy_used + beta*band_violation

Controller optimization is an exhaustive sweep over candidate configs,
deterministic and reproducible; ties go to the lower energy, then to the
lexicographically smallest (ll, ul, h, c).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from incubator_twin import topics
from incubator_twin.controller import COOLING, ControllerConfig, ControllerMode, step
from incubator_twin.models import ModelBParams
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = ModelBParams(c_air=486.12, g_box=0.856, c_heater=33.65,
                              g_heater=0.87)
DEFAULT_ALPHA = 0.001   # objective weight per joule
DEFAULT_BETA = 1.0      # objective weight per K^2 s


@dataclass(frozen=True)
class Scenario:
    controller: ControllerConfig
    params: ModelBParams = DEFAULT_PARAMS
    t_bair: float = 21.0
    t_heater: float = 21.0
    t_room: float = 21.0
    power_w: float = 100.0
    horizon: float = 4000.0
    dt: float = 3.0
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class ScenarioResult:
    times: list[float]
    t_bair: list[float]
    t_heater: list[float]
    heater_on: list[bool]
    energy_used: float
    band_violation: float
    objective: float

    def summary(self) -> dict:
        return {"objective": self.objective, "energy_used": self.energy_used,
                "band_violation": self.band_violation}

    def trajectory_body(self, max_points: int = 1000) -> list[dict]:
        stride = max(1, math.ceil(len(self.times) / max_points))
        return [{"t": self.times[i], "t_bair": self.t_bair[i],
                 "t_heater": self.t_heater[i], "heater_on": self.heater_on[i]}
                for i in range(0, len(self.times), stride)]


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Deterministic closed-loop rollout of one controller candidate."""
    cfg = scenario.controller
    p = scenario.params
    tb, th = scenario.t_bair, scenario.t_heater
    mode = ControllerMode(COOLING)
    dt = scenario.dt
    n = int(math.ceil(scenario.horizon / dt))
    times, bairs, heaters, cmds = [0.0], [tb], [th], []
    energy = 0.0
    violation = 0.0
    t = 0.0
    for _ in range(n):
        mode, heater_on = step(mode, cfg, tb, t)
        cmds.append(heater_on)
        # left-endpoint accounting over [t, t+dt)
        if heater_on:
            energy += scenario.power_w * dt
        out_of_band = max(0.0, cfg.ll - tb, tb - cfg.ul)
        violation += out_of_band * out_of_band * dt
        power = scenario.power_w if heater_on else 0.0
        flow = p.g_heater * (th - tb)
        tb += dt * (flow - p.g_box * (tb - scenario.t_room)) / p.c_air
        th += dt * (power - flow) / p.c_heater
        t += dt
        times.append(t)
        bairs.append(tb)
        heaters.append(th)
    cmds.append(cmds[-1] if cmds else False)
    return ScenarioResult(times=times, t_bair=bairs, t_heater=heaters,
                          heater_on=cmds, energy_used=energy,
                          band_violation=violation,
                          objective=scenario.alpha * energy
                          + scenario.beta * violation)


def optimize_controller(base: Scenario, candidates: list[ControllerConfig]
                        ) -> tuple[ControllerConfig, list[tuple[ControllerConfig, ScenarioResult]]]:
    """Exhaustively evaluate every candidate; return the winner and the
    full ranking (objective, then energy, then lexicographic config)."""
    if not candidates:
        raise ValueError("candidate grid is empty")
    evaluated = []
    for cand in candidates:
        scenario = Scenario(controller=cand, params=base.params,
                            t_bair=base.t_bair, t_heater=base.t_heater,
                            t_room=base.t_room, power_w=base.power_w,
                            horizon=base.horizon, dt=base.dt,
                            alpha=base.alpha, beta=base.beta)
        evaluated.append((cand, run_scenario(scenario)))
    ranked = sorted(evaluated, key=lambda cr: (
        cr[1].objective, cr[1].energy_used,
        (cr[0].ll, cr[0].ul, cr[0].h, cr[0].c)))
    return ranked[0][0], ranked


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

def _params_from_body(raw: dict | None) -> ModelBParams:
    if raw is None:
        return DEFAULT_PARAMS
    return ModelBParams(c_air=float(raw["c_air"]), g_box=float(raw["g_box"]),
                        c_heater=float(raw["c_heater"]),
                        g_heater=float(raw["g_heater"]))


class WhatIfService(Service):
    """Serves scenario and grid requests on whatif.request.

    The latest estimator state is the default initial condition; a request
    arriving before any estimate and without an explicit initial state is
    answered with an error.
    """

    name = "whatif"

    def __init__(self, host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self._latest_estimate: dict | None = None

    def _run(self) -> None:
        sub = self.bus.subscribe(topics.WHATIF_REQUEST, topics.ESTIMATOR_STATE)
        self.bus.sync()
        self.ready.set()
        while not self.stopped:
            msg = sub.get(timeout=0.2)
            if msg is None:
                continue
            if msg.topic == topics.ESTIMATOR_STATE:
                if "t_bair_hat" in msg.body:
                    self._latest_estimate = msg.body
                continue
            reply = self._handle(msg.body)
            if "id" in msg.body:
                reply["id"] = msg.body["id"]
            try:
                self.bus.publish(topics.WHATIF_RESULT, reply)
            except Exception:
                logger.exception("failed to publish what-if result")

    def _initial_state(self, body: dict) -> tuple[float, float]:
        initial = body.get("initial")
        if initial is not None:
            return float(initial["t_bair"]), float(initial["t_heater"])
        if self._latest_estimate is None:
            raise ValueError("no estimator state yet and no initial state given")
        return (float(self._latest_estimate["t_bair_hat"]),
                float(self._latest_estimate["t_heater_hat"]))

    def _base_scenario(self, body: dict, controller: ControllerConfig) -> Scenario:
        tb, th = self._initial_state(body)
        return Scenario(
            controller=controller,
            params=_params_from_body(body.get("params")),
            t_bair=tb, t_heater=th,
            t_room=float(body.get("t_room", 21.0)),
            power_w=float(body.get("power_w", 100.0)),
            horizon=float(body.get("horizon", 4000.0)),
            dt=float(body.get("dt", 3.0)),
            alpha=float(body.get("alpha", DEFAULT_ALPHA)),
            beta=float(body.get("beta", DEFAULT_BETA)),
        )

    def _handle(self, body: dict) -> dict:
        try:
            if "scenario" in body:
                spec = body["scenario"]
                controller = ControllerConfig.from_body(spec["controller"])
                scenario = self._base_scenario(spec, controller)
                result = run_scenario(scenario)
                return {"status": "ok", **result.summary(),
                        "controller": controller.to_body(),
                        "trajectory": result.trajectory_body()}
            if "grid" in body:
                spec = body["grid"]
                candidates = []
                for raw in spec.get("candidates", []):
                    try:
                        candidates.append(ControllerConfig.from_body(raw))
                    except (KeyError, TypeError, ValueError) as exc:
                        return {"status": "error",
                                "reason": f"bad candidate {raw!r}: {exc}"}
                if not candidates:
                    return {"status": "error", "reason": "candidate grid is empty"}
                base = self._base_scenario(spec, candidates[0])
                best, ranked = optimize_controller(base, candidates)
                return {
                    "status": "ok",
                    "best": best.to_body(),
                    "results": [{"controller": cand.to_body(), **res.summary()}
                                for cand, res in ranked],
                }
            return {"status": "error",
                    "reason": "request needs a 'scenario' or 'grid' object"}
        except (KeyError, TypeError, ValueError) as exc:
            return {"status": "error", "reason": str(exc)}
