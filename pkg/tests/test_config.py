"""Tests for config file loading and environment overrides."""

import pytest

from incubator_twin import config as configmod


CONFIG = """\
[plant]
sample_period = 3.0
noise_sigma = 0.1
seed = 7
initial_heater_on = true

[controller]
ll = 32
ul = 38
h = 25
c = 15

[estimator]
r = 0.5
tau = 2.5

[orchestrator]
propose = yes
experiment_on = 120
"""


class TestLoadConfig:
    def test_sections_parse(self, tmp_path):
        path = tmp_path / "twin.ini"
        path.write_text(CONFIG)
        cfg = configmod.load_config(str(path))
        assert cfg["plant"]["seed"] == "7"
        assert cfg["controller"]["ll"] == "32"

    def test_missing_file_is_empty(self):
        assert configmod.load_config(None) == {}

    def test_env_overrides(self, tmp_path, monkeypatch):
        path = tmp_path / "twin.ini"
        path.write_text(CONFIG)
        monkeypatch.setenv("INCUBATOR_PLANT_SEED", "99")
        monkeypatch.setenv("INCUBATOR_CONTROLLER_LL", "30")
        cfg = configmod.load_config(str(path))
        assert cfg["plant"]["seed"] == "99"
        assert cfg["controller"]["ll"] == "30"


class TestBuilders:
    def _cfg(self, tmp_path):
        path = tmp_path / "twin.ini"
        path.write_text(CONFIG)
        return configmod.load_config(str(path))

    def test_plant_config(self, tmp_path):
        plant = configmod.plant_config(self._cfg(tmp_path))
        assert plant.noise_sigma == 0.1
        assert plant.seed == 7
        assert plant.initial_heater_on is True
        assert plant.params.c_air == 486.12   # untouched default

    def test_controller_config(self, tmp_path):
        ctrl = configmod.controller_config(self._cfg(tmp_path))
        assert (ctrl.ll, ctrl.ul, ctrl.h, ctrl.c) == (32.0, 38.0, 25.0, 15.0)

    def test_kalman_config(self, tmp_path):
        kalman = configmod.kalman_config(self._cfg(tmp_path))
        assert kalman.r == 0.5
        assert kalman.tau == 2.5

    def test_orchestrator_config_and_overrides(self, tmp_path):
        orch = configmod.orchestrator_config(self._cfg(tmp_path),
                                             propose=False)
        assert orch.experiment_on == 120.0
        assert orch.propose is False   # explicit override wins

    def test_invalid_values_raise(self, tmp_path):
        path = tmp_path / "twin.ini"
        path.write_text("[controller]\nll = 50\nul = 45\n")
        cfg = configmod.load_config(str(path))
        with pytest.raises(ValueError):
            configmod.controller_config(cfg)
