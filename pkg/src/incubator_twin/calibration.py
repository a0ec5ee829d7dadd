"""Nonlinear least-squares calibration of the thermal model parameters.

Fits the two- or four-parameter model to a measured average-temperature
trajectory by minimizing the sum of squared residuals

    J(theta) = sum_i (y_i - T_sim(t_i; theta))^2

with Levenberg-Marquardt: forward-difference Jacobian (1e-6 relative
step), Marquardt diagonal scaling (the parameters span five orders of
magnitude), parameter clipping to bounds, and convergence on a relative
cost decrease below 1e-10, a gradient norm below 1e-8, or 200 iterations.
Accepted steps never increase the cost.

The simulation behind the residuals is fixed-step euler with a 0.5 s
substep, zero-order-hold inputs between trajectory timestamps, and the
initial state anchored at the first measurement (for the four-parameter
model the heatbed also starts at the first measurement: a cold-start
assumption).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from incubator_twin import topics
from incubator_twin.bus import Message
from incubator_twin.datalog import DataLog, read_messages
from incubator_twin.models import ModelBParams, Trajectory
from incubator_twin.service import Service

logger = logging.getLogger(__name__)

PARAM_NAMES = {
    "a": ("c_air", "g_box"),
    "b": ("c_air", "g_box", "c_heater", "g_heater"),
}

# capacities in [1e-3, 1e5] J/K, conductances in [1e-4, 1e3] J/(K s)
DEFAULT_BOUNDS = {
    "a": (np.array([1e-3, 1e-4]), np.array([1e5, 1e3])),
    "b": (np.array([1e-3, 1e-4, 1e-3, 1e-4]), np.array([1e5, 1e3, 1e5, 1e3])),
}

DEFAULT_THETA0 = {
    "a": np.array([616.56, 0.65]),
    "b": np.array([486.12, 0.856, 33.65, 0.87]),
}

SUBSTEP = 0.5
DIVERGENCE_SENTINEL = 1e6
DIVERGENCE_LIMIT = 1e9   # deg C; any |T| beyond this is a blown-up euler run

MAX_ITERATIONS = 200
COST_DECREASE_TOL = 1e-10
GRADIENT_TOL = 1e-8
JACOBIAN_STEP = 1e-6


@dataclass
class CalibrationProblem:
    model: str                  # "a" or "b"
    ts: np.ndarray              # sample timestamps, s, strictly increasing
    y: np.ndarray               # measured average temperature, deg C
    heater_on: np.ndarray       # bool, input over [t_i, t_{i+1})
    t_room: np.ndarray          # room temperature per sample, deg C
    power_w: float = 100.0
    theta0: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.model not in PARAM_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        self.ts = np.asarray(self.ts, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.heater_on = np.asarray(self.heater_on, dtype=bool)
        self.t_room = np.asarray(self.t_room, dtype=float)
        n = len(self.ts)
        if n < 10:
            raise ValueError(f"need at least 10 samples, got {n}")
        if not (len(self.y) == len(self.heater_on) == len(self.t_room) == n):
            raise ValueError("trajectory columns must have equal length")
        if np.any(np.diff(self.ts) <= 0):
            raise ValueError("timestamps must strictly increase")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurements must be finite")
        lo_def, hi_def = DEFAULT_BOUNDS[self.model]
        self.lower = lo_def.copy() if self.lower is None else np.asarray(self.lower, float)
        self.upper = hi_def.copy() if self.upper is None else np.asarray(self.upper, float)
        if np.any(self.lower <= 0):
            raise ValueError("bounds must be positive")
        if self.theta0 is None:
            self.theta0 = DEFAULT_THETA0[self.model].copy()
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if len(self.theta0) != len(PARAM_NAMES[self.model]):
            raise ValueError(f"theta0 needs {len(PARAM_NAMES[self.model])} entries")
        if np.any(self.theta0 < self.lower) or np.any(self.theta0 > self.upper):
            raise ValueError("theta0 must lie within bounds")


@dataclass
class CalibrationResult:
    model: str
    theta: np.ndarray
    cost: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    cost_history: list[float] = field(default_factory=list)

    @property
    def theta_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES[self.model], map(float, self.theta)))

    def to_body(self) -> dict:
        return {
            "status": "ok",
            "model": self.model,
            "theta": self.theta_dict,
            "cost": float(self.cost),
            "iterations": self.iterations,
            "converged": self.converged,
            "n_samples": int(len(self.residuals)),
        }


def _simulate(model: str, theta: np.ndarray, ts: np.ndarray, y0: float,
              heater_on: np.ndarray, t_room: np.ndarray, power_w: float,
              substep: float = SUBSTEP) -> np.ndarray:
    """Shared euler core; returns simulated air temperature at each ts."""
    n = len(ts)
    out = np.empty(n)
    out[0] = y0
    tb = th = float(y0)
    # plain-float locals: the tight euler loop stays off numpy scalars
    if model == "a":
        c_air, g_box = (float(v) for v in theta)
        for i in range(1, n):
            p = power_w if heater_on[i - 1] else 0.0
            tr = float(t_room[i - 1])
            span = float(ts[i] - ts[i - 1])
            s = 0.0
            while s < span - 1e-12:
                h = min(substep, span - s)
                tb += h * (p - g_box * (tb - tr)) / c_air
                s += h
            if not math.isfinite(tb) or abs(tb) > DIVERGENCE_LIMIT:
                out[i:] = math.nan
                return out
            out[i] = tb
    else:
        c_air, g_box, c_heater, g_heater = (float(v) for v in theta)
        for i in range(1, n):
            p = power_w if heater_on[i - 1] else 0.0
            tr = float(t_room[i - 1])
            span = float(ts[i] - ts[i - 1])
            s = 0.0
            while s < span - 1e-12:
                h = min(substep, span - s)
                flow = g_heater * (th - tb)
                tb += h * (flow - g_box * (tb - tr)) / c_air
                th += h * (p - flow) / c_heater
                s += h
            if (not math.isfinite(tb) or not math.isfinite(th)
                    or abs(tb) > DIVERGENCE_LIMIT or abs(th) > DIVERGENCE_LIMIT):
                out[i:] = math.nan
                return out
            out[i] = tb
    return out


def residuals(theta: np.ndarray, problem: CalibrationProblem) -> np.ndarray:
    """y - T_sim at the trajectory timestamps; 1e6 per sample past a
    simulation divergence so the optimizer retreats."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < problem.lower) or np.any(theta > problem.upper):
        raise ValueError("theta out of bounds")
    return _residuals_unchecked(theta, problem)


def _residuals_unchecked(theta: np.ndarray, problem: CalibrationProblem) -> np.ndarray:
    sim = _simulate(problem.model, theta, problem.ts, problem.y[0],
                    problem.heater_on, problem.t_room, problem.power_w)
    r = problem.y - sim
    bad = ~np.isfinite(r)
    if np.any(bad):
        first = int(np.argmax(bad))
        r[first:] = DIVERGENCE_SENTINEL
    return r


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Levenberg-Marquardt fit of the model parameters to the trajectory."""
    lo, hi = problem.lower, problem.upper
    theta = np.clip(problem.theta0.astype(float), lo, hi)
    r = _residuals_unchecked(theta, problem)
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    iterations = 0

    for iterations in range(1, MAX_ITERATIONS + 1):
        jac = _jacobian(theta, r, problem)
        gradient = jac.T @ r
        if np.max(np.abs(gradient)) < GRADIENT_TOL:
            converged = True
            iterations -= 1
            break
        jtj = jac.T @ jac
        scaling = np.diag(np.maximum(np.diag(jtj), 1e-12))
        accepted = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * scaling, -gradient)
            except np.linalg.LinAlgError:
                lam *= 3.0
                continue
            candidate = np.clip(theta + delta, lo, hi)
            r_new = _residuals_unchecked(candidate, problem)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel_decrease = (cost - cost_new) / max(cost, 1e-300)
                theta, r, cost = candidate, r_new, cost_new
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_decrease < COST_DECREASE_TOL:
                    converged = True
                break
            lam *= 3.0
        if not accepted or converged:
            break

    # cost == sum of squared residuals at the returned theta, bit-exact
    return CalibrationResult(model=problem.model, theta=theta, cost=cost,
                             iterations=iterations, converged=converged,
                             residuals=r, cost_history=history)


def _jacobian(theta: np.ndarray, r: np.ndarray,
              problem: CalibrationProblem) -> np.ndarray:
    jac = np.empty((len(r), len(theta)))
    for j in range(len(theta)):
        step = JACOBIAN_STEP * max(abs(theta[j]), 1e-12)
        probe = theta.copy()
        probe[j] += step
        jac[:, j] = (_residuals_unchecked(probe, problem) - r) / step
    return jac


# ---------------------------------------------------------------------------
# Input adapters
# ---------------------------------------------------------------------------

def problem_from_driver_messages(model: str, messages: list[Message],
                                 theta0=None, power_w: float = 100.0,
                                 bounds=None) -> CalibrationProblem:
    """Build a problem from recorded driver.state messages."""
    bodies = [m.body for m in messages if "average_temperature" in m.body]
    bodies.sort(key=lambda b: b["time"])
    lower = upper = None
    if bounds is not None:
        lower, upper = bounds
    return CalibrationProblem(
        model=model,
        ts=[b["time"] for b in bodies],
        y=[b["average_temperature"] for b in bodies],
        heater_on=[bool(b["heater_on"]) for b in bodies],
        t_room=[b["t_room"] for b in bodies],
        power_w=power_w,
        theta0=None if theta0 is None else np.asarray(theta0, float),
        lower=lower, upper=upper,
    )


def load_trajectory_file(path: str | Path, model: str, theta0=None,
                         power_w: float = 100.0) -> CalibrationProblem:
    """Build a problem from a JSONL file.

    Accepts either a recorded driver.state file (message envelopes) or a
    plain trajectory file with {"t", "t_bair", "t_room", "heater_on", ...}
    lines.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = ""
        for line in fh:
            if line.strip():
                first = line
                break
    probe = json.loads(first) if first else {}
    if "topic" in probe and "body" in probe:
        msgs = [m for m in read_messages(path) if "average_temperature" in m.body]
        return problem_from_driver_messages(model, msgs, theta0, power_w)

    traj = Trajectory.from_jsonl(path.read_text(encoding="utf-8"))
    return CalibrationProblem(
        model=model,
        ts=[s.t for s in traj],
        y=[s.state.t_bair for s in traj],
        heater_on=[s.inp.heater_on for s in traj],
        t_room=[s.inp.t_room for s in traj],
        power_w=power_w,
        theta0=None if theta0 is None else np.asarray(theta0, float),
    )


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

class CalibrationService(Service):
    """On-demand calibration over recorded driver data.

    Requests on calibration.request carry a model kind and a timestamp
    window; the service loads the window from the data log, runs the
    fit, and answers on calibration.result. Requests are served one at a
    time in arrival order.
    """

    name = "calibration"

    def __init__(self, datalog: DataLog, power_w: float = 100.0,
                 host: str | None = None, port: int | None = None):
        super().__init__(host, port)
        self.datalog = datalog
        self.power_w = power_w

    def _run(self) -> None:
        sub = self.bus.subscribe(topics.CALIBRATION_REQUEST)
        self.bus.sync()
        self.ready.set()
        while not self.stopped:
            msg = sub.get(timeout=0.2)
            if msg is None:
                continue
            reply = self._handle(msg.body)
            if "id" in msg.body:
                reply["id"] = msg.body["id"]
            try:
                self.bus.publish(topics.CALIBRATION_RESULT, reply)
            except Exception:
                logger.exception("failed to publish calibration result")

    def _handle(self, body: dict) -> dict:
        try:
            model = body.get("model", "b")
            from_ts = float(body["from_ts"])
            to_ts = float(body["to_ts"])
            if to_ts < from_ts:
                return {"status": "error",
                        "reason": f"reversed window: {from_ts} > {to_ts}"}
            messages = self.datalog.query(topics.DRIVER_STATE, from_ts, to_ts,
                                          run=body.get("run"))
            theta0 = body.get("theta0")
            if isinstance(theta0, dict):
                theta0 = [theta0[k] for k in PARAM_NAMES[model]]
            bounds = None
            trust = body.get("trust_factor")
            if trust is not None and theta0 is not None:
                # recalibrate within a trust region of the current model:
                # keeps a weakly identified fit from wandering into
                # dynamically degenerate corners
                t0 = np.asarray(theta0, dtype=float)
                bounds = (t0 / float(trust), t0 * float(trust))
            problem = problem_from_driver_messages(
                model, messages, theta0=theta0, power_w=self.power_w,
                bounds=bounds)
            result = calibrate(problem)
            logger.info("calibration done: %s cost=%.4g converged=%s",
                        result.theta_dict, result.cost, result.converged)
            return result.to_body()
        except (KeyError, TypeError, ValueError) as exc:
            return {"status": "error", "reason": str(exc)}

    @staticmethod
    def params_from_theta(theta: dict) -> ModelBParams:
        return ModelBParams(c_air=theta["c_air"], g_box=theta["g_box"],
                            c_heater=theta["c_heater"], g_heater=theta["g_heater"])
