"""Configuration files and environment overrides.

Config files are INI-style: one [section] per module with key=value
pairs, e.g.

    [plant]
    sample_period = 3.0
    noise_sigma = 0.5
    seed = 7

    [controller]
    ll = 35
    ul = 40

Environment variables override file values as INCUBATOR_<SECTION>_<KEY>
(e.g. INCUBATOR_PLANT_SEED=9); INCUBATOR_BUS_ADDR overrides the broker
address everywhere.
"""

from __future__ import annotations

import configparser
import os

from incubator_twin.controller import ControllerConfig
from incubator_twin.estimator import KalmanConfig
from incubator_twin.models import ModelBParams
from incubator_twin.orchestrator import OrchestratorConfig
from incubator_twin.plant import PlantConfig

ENV_PREFIX = "INCUBATOR_"

SECTIONS = ("bus", "plant", "controller", "estimator", "orchestrator",
            "datalog", "gateway", "demo")


def load_config(path: str | None = None) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    if path:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    config: dict[str, dict[str, str]] = {
        section: dict(parser[section]) for section in parser.sections()}
    for key, value in os.environ.items():
        if not key.startswith(ENV_PREFIX) or key == "INCUBATOR_BUS_ADDR":
            continue
        rest = key[len(ENV_PREFIX):].lower()
        section, _, option = rest.partition("_")
        if section in SECTIONS and option:
            config.setdefault(section, {})[option] = value
    return config


def _get(section: dict[str, str], key: str, cast, default):
    if key not in section:
        return default
    raw = section[key]
    if cast is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return cast(raw)


def plant_config(config: dict[str, dict[str, str]], **overrides) -> PlantConfig:
    s = config.get("plant", {})
    params = ModelBParams(
        c_air=_get(s, "c_air", float, 486.12),
        g_box=_get(s, "g_box", float, 0.856),
        c_heater=_get(s, "c_heater", float, 33.65),
        g_heater=_get(s, "g_heater", float, 0.87))
    kwargs = dict(
        params=params,
        power_w=_get(s, "power_w", float, 100.0),
        t_room=_get(s, "t_room", float, 21.0),
        sample_period=_get(s, "sample_period", float, 3.0),
        noise_sigma=_get(s, "noise_sigma", float, 0.5),
        time_scale=_get(s, "time_scale", float, 1.0),
        substep=_get(s, "substep", float, 0.5),
        safety_threshold=_get(s, "safety_threshold", float, 70.0),
        seed=_get(s, "seed", int, None),
        start_ts=_get(s, "start_ts", float, None),
        initial_heater_on=_get(s, "initial_heater_on", bool, False),
        fan_on=_get(s, "fan_on", bool, True),
        duration=_get(s, "duration", float, None),
    )
    kwargs.update(overrides)
    return PlantConfig(**kwargs)


def controller_config(config: dict[str, dict[str, str]], **overrides) -> ControllerConfig:
    s = config.get("controller", {})
    kwargs = dict(
        ll=_get(s, "ll", float, 35.0),
        ul=_get(s, "ul", float, 40.0),
        h=_get(s, "h", float, 30.0),
        c=_get(s, "c", float, 20.0))
    kwargs.update(overrides)
    return ControllerConfig(**kwargs)


def kalman_config(config: dict[str, dict[str, str]], **overrides) -> KalmanConfig:
    s = config.get("estimator", {})
    params = ModelBParams(
        c_air=_get(s, "c_air", float, 486.12),
        g_box=_get(s, "g_box", float, 0.856),
        c_heater=_get(s, "c_heater", float, 33.65),
        g_heater=_get(s, "g_heater", float, 0.87))
    kwargs = dict(
        params=params,
        dt=_get(s, "dt", float, 3.0),
        r=_get(s, "r", float, 0.25),
        tau=_get(s, "tau", float, 3.0),
        window=_get(s, "window", int, 10),
        min_hits=_get(s, "min_hits", int, 5),
        power_w=_get(s, "power_w", float, 100.0))
    kwargs.update(overrides)
    return KalmanConfig(**kwargs)


def orchestrator_config(config: dict[str, dict[str, str]], **overrides) -> OrchestratorConfig:
    s = config.get("orchestrator", {})
    kwargs = dict(
        model=_get(s, "model", str, "b"),
        experiment_on=_get(s, "experiment_on", float, 300.0),
        experiment_off=_get(s, "experiment_off", float, 300.0),
        cooldown_margin=_get(s, "cooldown_margin", float, 2.0),
        propose=_get(s, "propose", bool, False),
        power_w=_get(s, "power_w", float, 100.0),
        horizon=_get(s, "horizon", float, 2000.0))
    kwargs.update(overrides)
    return OrchestratorConfig(**kwargs)
