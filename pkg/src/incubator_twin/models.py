"""Lumped thermal models of the incubator box.

Two linear models describe the temperature of the boxed air:

* two-parameter model -- all heater power goes straight into the air:

      C_air * dT_bair/dt = P*u - G_box*(T_bair - T_room)

* four-parameter model -- the heatbed stores heat and hands it to the air:

      C_heater * dT_heater/dt = P*u - G_heater*(T_heater - T_bair)
      C_air    * dT_bair/dt   = G_heater*(T_heater - T_bair)
                                 - G_box*(T_bair - T_room)

Units: temperatures in deg C (only differences enter the equations, so
Kelvin would behave identically), heat capacities in J/K, thermal
conductances in J/(K*s), power in W. The models are linear and carry no
range clamping. All functions here are pure; values are immutable and
safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ModelAParams:
    """Free parameters of the two-parameter model."""

    c_air: float   # heat capacity of the boxed air, J/K
    g_box: float   # box-to-room conductance, J/(K*s)

    def __post_init__(self) -> None:
        _require_finite(c_air=self.c_air, g_box=self.g_box)
        if self.c_air <= 0 or self.g_box <= 0:
            raise ValueError(f"parameters must be strictly positive, got {self}")


@dataclass(frozen=True)
class ModelBParams:
    """Free parameters of the four-parameter model."""

    c_air: float      # heat capacity of the boxed air, J/K
    g_box: float      # box-to-room conductance, J/(K*s)
    c_heater: float   # heatbed heat capacity, J/K
    g_heater: float   # heatbed-to-air conductance, J/(K*s)

    def __post_init__(self) -> None:
        _require_finite(c_air=self.c_air, g_box=self.g_box,
                        c_heater=self.c_heater, g_heater=self.g_heater)
        if min(self.c_air, self.g_box, self.c_heater, self.g_heater) <= 0:
            raise ValueError(f"parameters must be strictly positive, got {self}")


ModelParams = Union[ModelAParams, ModelBParams]


@dataclass(frozen=True)
class PlantInput:
    """Exogenous inputs: heater electrical power, its switch, room temp."""

    power_w: float = 100.0
    heater_on: bool = False
    t_room: float = 21.0

    def __post_init__(self) -> None:
        _require_finite(power_w=self.power_w, t_room=self.t_room)
        if self.power_w < 0:
            raise ValueError(f"power_w must be >= 0, got {self.power_w}")

    @property
    def heat_w(self) -> float:
        """Power actually delivered: P*u."""
        return self.power_w if self.heater_on else 0.0


@dataclass(frozen=True)
class ThermalState:
    """Temperatures of the box. t_heater is ignored by the two-parameter
    model and may be None there."""

    t_bair: float
    t_heater: float | None = None

    def __post_init__(self) -> None:
        _require_finite(t_bair=self.t_bair)
        if self.t_heater is not None:
            _require_finite(t_heater=self.t_heater)


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    state: ThermalState
    inp: PlantInput


@dataclass
class Trajectory:
    """Time-ordered record of states and inputs; timestamps strictly increase."""

    samples: list[TrajectorySample] = field(default_factory=list)

    def __post_init__(self) -> None:
        for a, b in zip(self.samples, self.samples[1:]):
            if not b.t > a.t:
                raise ValueError(f"timestamps must strictly increase: {a.t} -> {b.t}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TrajectorySample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.samples]

    @property
    def t_bair(self) -> list[float]:
        return [s.state.t_bair for s in self.samples]

    def to_jsonl(self) -> str:
        lines = []
        for s in self.samples:
            lines.append(json.dumps({
                "t": s.t,
                "t_bair": s.state.t_bair,
                "t_heater": s.state.t_heater,
                "t_room": s.inp.t_room,
                "heater_on": s.inp.heater_on,
                "power_w": s.inp.power_w,
            }, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        samples = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append(TrajectorySample(
                t=float(rec["t"]),
                state=ThermalState(float(rec["t_bair"]),
                                   None if rec.get("t_heater") is None
                                   else float(rec["t_heater"])),
                inp=PlantInput(power_w=float(rec.get("power_w", 100.0)),
                               heater_on=bool(rec["heater_on"]),
                               t_room=float(rec["t_room"])),
            ))
        return cls(samples)


class InputSchedule:
    """Piecewise-constant (zero-order-hold) input over time.

    Built from (time, PlantInput) breakpoints; the input at time t is the
    one from the latest breakpoint with time <= t. A bare PlantInput is
    accepted as a constant schedule.
    """

    def __init__(self, breakpoints: PlantInput | Iterable[tuple[float, PlantInput]]):
        if isinstance(breakpoints, PlantInput):
            breakpoints = [(0.0, breakpoints)]
        pts = sorted(breakpoints, key=lambda p: p[0])
        if not pts:
            raise ValueError("input schedule needs at least one breakpoint")
        self._times = [t for t, _ in pts]
        self._inputs = [u for _, u in pts]

    def at(self, t: float) -> PlantInput:
        # linear scan is fine at the breakpoint counts used here
        current = self._inputs[0]
        for bt, u in zip(self._times, self._inputs):
            if bt <= t:
                current = u
            else:
                break
        return current


Schedule = Union[PlantInput, InputSchedule, Sequence[tuple[float, PlantInput]]]


def model_a_derivative(state: ThermalState, inp: PlantInput,
                       params: ModelAParams) -> float:
    """Rate of change of the boxed-air temperature, K/s."""
    return (inp.heat_w - params.g_box * (state.t_bair - inp.t_room)) / params.c_air


def model_b_derivative(state: ThermalState, inp: PlantInput,
                       params: ModelBParams) -> tuple[float, float]:
    """Rates of change (heatbed, boxed air), K/s."""
    if state.t_heater is None:
        raise ValueError("four-parameter model needs t_heater in the state")
    flow = params.g_heater * (state.t_heater - state.t_bair)
    rate_heater = (inp.heat_w - flow) / params.c_heater
    rate_air = (flow - params.g_box * (state.t_bair - inp.t_room)) / params.c_air
    return rate_heater, rate_air


def heat_energy(mass_kg: float, specific_heat_j_per_kg_k: float,
                delta_t_k: float) -> float:
    """Energy to change a mass by delta_t: Q = c*m*dT, in joules."""
    _require_finite(mass_kg=mass_kg, specific_heat=specific_heat_j_per_kg_k,
                    delta_t_k=delta_t_k)
    if mass_kg < 0 or specific_heat_j_per_kg_k < 0:
        raise ValueError("mass and specific heat must be >= 0")
    return specific_heat_j_per_kg_k * mass_kg * delta_t_k


def _as_schedule(schedule: Schedule) -> InputSchedule:
    if isinstance(schedule, InputSchedule):
        return schedule
    return InputSchedule(schedule)


def integrate(params: ModelParams, initial: ThermalState, schedule: Schedule,
              t_end: float, dt: float, method: str = "euler") -> Trajectory:
    """Fixed-step explicit integration from t=0 to t_end.

    Inputs are held constant within each step (value at the step start);
    a schedule breakpoint landing mid-step takes effect at the next step.
    The trajectory contains a sample at every step boundary including
    t=0 and t_end. dt larger than t_end gives a single (shortened) step.
    """
    if not math.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not math.isfinite(t_end) or t_end < 0:
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")

    sched = _as_schedule(schedule)
    two_state = isinstance(params, ModelBParams)
    if two_state and initial.t_heater is None:
        raise ValueError("four-parameter model needs an initial t_heater")

    tb = initial.t_bair
    th = initial.t_heater
    t = 0.0
    # sample k records the input that acts over [t_k, t_{k+1})
    samples = [TrajectorySample(t, ThermalState(tb, th), sched.at(0.0))]
    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        u = sched.at(t)
        if two_state:
            tb, th = _step_b(params, tb, th, u, h, method)
        else:
            tb = _step_a(params, tb, u, h, method)
        if not math.isfinite(tb) or (th is not None and not math.isfinite(th)):
            raise ArithmeticError(f"integration diverged at t={t + h}")
        t += h
        samples.append(TrajectorySample(t, ThermalState(tb, th), sched.at(t)))
    return Trajectory(samples)


def _step_a(params: ModelAParams, tb: float, u: PlantInput, h: float,
            method: str) -> float:
    def f(x: float) -> float:
        return (u.heat_w - params.g_box * (x - u.t_room)) / params.c_air

    if method == "euler":
        return tb + h * f(tb)
    k1 = f(tb)
    k2 = f(tb + 0.5 * h * k1)
    k3 = f(tb + 0.5 * h * k2)
    k4 = f(tb + h * k3)
    return tb + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _step_b(params: ModelBParams, tb: float, th: float, u: PlantInput,
            h: float, method: str) -> tuple[float, float]:
    def f(xb: float, xh: float) -> tuple[float, float]:
        flow = params.g_heater * (xh - xb)
        return ((flow - params.g_box * (xb - u.t_room)) / params.c_air,
                (u.heat_w - flow) / params.c_heater)

    if method == "euler":
        db, dh = f(tb, th)
        return tb + h * db, th + h * dh
    k1b, k1h = f(tb, th)
    k2b, k2h = f(tb + 0.5 * h * k1b, th + 0.5 * h * k1h)
    k3b, k3h = f(tb + 0.5 * h * k2b, th + 0.5 * h * k2h)
    k4b, k4h = f(tb + h * k3b, th + h * k3h)
    return (tb + h * (k1b + 2 * k2b + 2 * k3b + k4b) / 6.0,
            th + h * (k1h + 2 * k2h + 2 * k3h + k4h) / 6.0)
