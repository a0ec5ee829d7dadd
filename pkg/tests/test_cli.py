"""Tests for the command line interface."""

import json
import math

import pytest

from incubator_twin.cli import main
from incubator_twin.datalog import DataLog
from incubator_twin.models import (
    InputSchedule,
    ModelAParams,
    PlantInput,
    ThermalState,
    integrate,
)


class TestUsage:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as err:
            main(["--help"])
        assert err.value.code == 0


def write_step_response(path, t_end=1500.0):
    sched = InputSchedule([
        (0.0, PlantInput(100.0, True, 21.0)),
        (600.0, PlantInput(100.0, False, 21.0)),
        (1200.0, PlantInput(100.0, True, 21.0)),
    ])
    fine = integrate(ModelAParams(616.56, 0.65), ThermalState(21.0), sched,
                     t_end, 0.5)
    samples = fine.samples[::6]
    from incubator_twin.models import Trajectory
    path.write_text(Trajectory(list(samples)).to_jsonl())


class TestCalibrateCommand:
    def test_fit_from_trajectory_file(self, tmp_path, capsys):
        traj = tmp_path / "run.jsonl"
        write_step_response(traj)
        code = main(["calibrate", "--model", "a", "--input", str(traj),
                     "--theta0", "300,1.0"])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["status"] == "ok"
        assert result["converged"] is True
        assert result["theta"]["c_air"] == pytest.approx(616.56, rel=1e-3)
        assert result["theta"]["g_box"] == pytest.approx(0.65, rel=1e-3)

    def test_csv_plot_data(self, tmp_path, capsys):
        traj = tmp_path / "run.jsonl"
        write_step_response(traj, t_end=600.0)
        csv = tmp_path / "fit.csv"
        assert main(["calibrate", "--model", "a", "--input", str(traj),
                     "--csv", str(csv)]) == 0
        lines = csv.read_text().splitlines()
        assert lines[0] == "t,measured,simulated"
        assert len(lines) == 202   # header + 201 samples

    def test_missing_input_is_usage_error(self, capsys):
        assert main(["calibrate", "--model", "a"]) == 2


class TestWhatifCommand:
    def test_scenario_file(self, tmp_path, capsys):
        spec = {"controller": {"ll": 35, "ul": 40, "h": 30, "c": 20},
                "initial": {"t_bair": 30.0, "t_heater": 30.0},
                "horizon": 600.0}
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(spec))
        assert main(["whatif", "--scenario", str(path)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["energy_used"] > 0
        assert "trajectory" in result

    def test_grid_file(self, tmp_path, capsys):
        spec = {"candidates": [
                    {"ll": 35, "ul": 40, "h": 10, "c": 20},
                    {"ll": 35, "ul": 40, "h": 30, "c": 20}],
                "initial": {"t_bair": 21.0, "t_heater": 21.0},
                "horizon": 900.0}
        path = tmp_path / "grid.json"
        path.write_text(json.dumps(spec))
        assert main(["whatif", "--grid", str(path)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert len(result["results"]) == 2
        assert result["best"] in [r["controller"] for r in result["results"]]

    def test_scenario_and_grid_together_is_usage_error(self, tmp_path):
        assert main(["whatif", "--scenario", "x", "--grid", "y"]) == 2


class TestDemoCommand:
    def test_short_demo_produces_a_recording(self, tmp_path, capsys):
        code = main(["demo", "--duration", "150", "--time-scale", "0.001",
                     "--seed", "3", "--data-dir", str(tmp_path),
                     "--services", "recorder,controller"])
        assert code == 0
        out = capsys.readouterr().out
        run_dir = json.loads(out.splitlines()[-1])["run_dir"]
        driver_file = f"{run_dir}/incubator_driver_state.jsonl"
        lines = open(driver_file).read().splitlines()
        assert len(lines) >= 50
        first = json.loads(lines[0])
        assert first["body"]["time"] == 0.0

    def test_fixed_seed_demo_recordings_are_byte_identical(self, tmp_path, capsys):
        def run(sub):
            data = tmp_path / sub
            assert main(["demo", "--duration", "300", "--time-scale", "0.002",
                         "--seed", "1234", "--data-dir", str(data),
                         "--services", "recorder,controller,estimator"]) == 0
            run_dir = json.loads(
                capsys.readouterr().out.splitlines()[-1])["run_dir"]
            return open(f"{run_dir}/incubator_driver_state.jsonl", "rb").read()

        assert run("a") == run("b")


class TestReplayCommand:
    def test_replay_round_trip(self, tmp_path, capsys):
        # record a tiny demo, then replay it into a fresh broker+recorder
        assert main(["demo", "--duration", "60", "--time-scale", "0.001",
                     "--seed", "5", "--data-dir", str(tmp_path / "orig"),
                     "--services", "recorder"]) == 0
        run_dir = json.loads(capsys.readouterr().out.splitlines()[-1])["run_dir"]

        from incubator_twin.bus import Broker
        from incubator_twin.datalog import Recorder
        broker = Broker(port=0).serve()
        rec = Recorder(tmp_path / "replayed", *broker.address).start()
        assert rec.ready.wait(5.0)
        code = main(["replay", "--input", run_dir, "--as-fast-as-possible",
                     "--bus", f"{broker.address[0]}:{broker.address[1]}"])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert summary["skipped"] == 0 and summary["sent"] >= 21
        import time
        time.sleep(0.5)
        rec.stop()
        broker.close()

        original = DataLog(tmp_path / "orig").query(
            "incubator.driver.state", 0.0, 1e12)
        replayed = DataLog(tmp_path / "replayed").query(
            "incubator.driver.state", 0.0, 1e12)
        assert [m.body for m in replayed] == [m.body for m in original]
