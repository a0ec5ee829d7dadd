"""Tests for the self-adaptation orchestrator, with faked peer services."""

import time

import pytest

from incubator_twin import topics
from incubator_twin.bus import Broker, BusClient
from incubator_twin.orchestrator import (
    APPLYING,
    CALIBRATING,
    COOLING_DOWN,
    EXPERIMENTING,
    MONITORING,
    OPTIMIZING,
    RECONFIGURING,
    Orchestrator,
    OrchestratorConfig,
)

THETA = {"c_air": 480.0, "g_box": 0.9, "c_heater": 30.0, "g_heater": 0.8}
BEST = {"ll": 35.0, "ul": 40.0, "h": 10.0, "c": 20.0}


@pytest.fixture
def broker():
    b = Broker(port=0).serve()
    yield b
    b.close()


class Harness:
    """Publishes fake peer traffic and records everything the orchestrator
    says and asks."""

    def __init__(self, broker, config=None):
        self.orch = Orchestrator(config or OrchestratorConfig(), *broker.address)
        self.probe = BusClient(*broker.address)
        self.states = self.probe.subscribe(topics.ORCHESTRATOR_STATE)
        self.ctrl = self.probe.subscribe(topics.CONTROLLER_STATE)
        self.cmds = self.probe.subscribe(topics.DRIVER_COMMAND)
        self.calib_req = self.probe.subscribe(topics.CALIBRATION_REQUEST)
        self.whatif_req = self.probe.subscribe(topics.WHATIF_REQUEST)
        self.estim = self.probe.subscribe(topics.ESTIMATOR_STATE)
        assert self.probe.sync()
        self.orch.start()
        assert self.orch.ready.wait(5.0)
        self.t = 0.0

    def drive(self, temp, n=1, t_room=21.0):
        for _ in range(n):
            self.probe.publish(topics.DRIVER_STATE,
                               {"time": self.t, "average_temperature": temp,
                                "t_room": t_room, "heater_on": False},
                               ts=self.t)
            self.t += 3.0
        time.sleep(0.01)

    def anomaly(self, flag=True):
        self.probe.publish(topics.ESTIMATOR_STATE,
                           {"t_bair_hat": 37.0, "t_heater_hat": 50.0,
                            "anomaly": flag, "ts": self.t}, ts=self.t)
        time.sleep(0.05)

    def state_sequence(self, timeout=0.3):
        seq = []
        while True:
            msg = self.states.get(timeout=timeout)
            if msg is None:
                return seq
            if "state" in msg.body:
                seq.append(msg.body["state"])

    def wait_state(self, name, timeout=5.0):
        deadline = time.time() + timeout
        while time.time() < deadline:
            if self.orch.state == name:
                return True
            time.sleep(0.01)
        return False

    def next_request(self, sub, timeout=5.0):
        deadline = time.time() + timeout
        while time.time() < deadline:
            msg = sub.get(timeout=timeout)
            if msg is not None and "id" in msg.body:
                return msg.body
        return None

    def close(self):
        self.orch.stop()
        self.probe.close()


class TestFullCycle:
    def test_cycle_grammar_and_side_effects(self, broker):
        h = Harness(broker)
        try:
            h.drive(38.0, n=2)
            h.anomaly()
            assert h.wait_state(COOLING_DOWN)

            # controller suspended and heater commanded off
            suspended = False
            while (msg := h.ctrl.get(timeout=0.5)) is not None:
                if msg.body.get("suspend"):
                    suspended = True
                    break
            assert suspended
            assert h.cmds.get(timeout=2.0).body == {"heater_on": False}

            # still warm: stays cooling; then cooled: experiment begins
            h.drive(30.0, n=2)
            assert h.orch.state == COOLING_DOWN
            h.drive(22.5)
            assert h.wait_state(EXPERIMENTING)
            assert h.cmds.get(timeout=2.0).body == {"heater_on": True}
            exp_start = h.t - 3.0

            # heater-on phase (300 s), then off phase (300 s)
            for _ in range(230):
                h.drive(30.0, n=1)
                if h.orch.state != EXPERIMENTING:
                    break
                heater_off = h.cmds.get(timeout=0.01)
                if heater_off is not None:
                    assert heater_off.body == {"heater_on": False}
            request = h.next_request(h.calib_req)
            assert request is not None
            assert h.orch.state == CALIBRATING
            assert request["model"] == "b"
            assert request["from_ts"] == pytest.approx(exp_start)
            assert request["to_ts"] >= request["from_ts"] + 600.0 - 1e-6

            # fake calibration: converged result with the matching id
            h.probe.publish(topics.CALIBRATION_RESULT,
                            {"status": "ok", "converged": True, "theta": THETA,
                             "cost": 0.5, "id": request["id"]})
            grid_req = h.next_request(h.whatif_req)
            assert grid_req is not None
            assert h.orch.state == OPTIMIZING
            assert grid_req["grid"]["params"] == THETA
            assert len(grid_req["grid"]["candidates"]) >= 2

            # estimator got the new parameters first
            reconfigured = False
            while (msg := h.estim.get(timeout=0.5)) is not None:
                if msg.body.get("set_params") == THETA:
                    reconfigured = True
                    break
            assert reconfigured

            # fake what-if: best candidate
            h.probe.publish(topics.WHATIF_RESULT,
                            {"status": "ok", "best": BEST,
                             "results": [], "id": grid_req["id"]})
            assert h.wait_state(MONITORING)
            assert h.orch.cycles_completed == 1

            # controller got the new config and was resumed
            got_set = got_resume = False
            while (msg := h.ctrl.get(timeout=0.5)) is not None:
                if msg.body.get("set") == BEST:
                    got_set = True
                if msg.body.get("resume"):
                    got_resume = True
            assert got_set and got_resume

            # the published sequence follows the cycle
            seq = [s for s in h.state_sequence()]
            expected = [MONITORING, COOLING_DOWN, EXPERIMENTING, CALIBRATING,
                        RECONFIGURING, OPTIMIZING, APPLYING, MONITORING]
            assert [s for i, s in enumerate(seq) if i == 0 or s != seq[i - 1]] == expected
        finally:
            h.close()

    def test_without_anomaly_stays_monitoring(self, broker):
        h = Harness(broker)
        try:
            h.drive(37.0, n=10)
            h.anomaly(flag=False)
            h.drive(37.0, n=10)
            assert h.orch.state == MONITORING
            assert set(h.state_sequence()) == {MONITORING}
        finally:
            h.close()

    def test_failed_calibration_reverts_to_monitoring(self, broker):
        h = Harness(broker)
        try:
            h.drive(38.0)
            h.anomaly()
            h.drive(22.0)
            assert h.wait_state(EXPERIMENTING)
            for _ in range(210):
                h.drive(30.0, n=1)
                if h.orch.state == CALIBRATING:
                    break
            request = h.next_request(h.calib_req)
            h.probe.publish(topics.CALIBRATION_RESULT,
                            {"status": "error", "reason": "too few samples",
                             "id": request["id"]})
            assert h.wait_state(MONITORING)
            # controller resumed, no config pushed
            bodies = []
            while (msg := h.ctrl.get(timeout=0.5)) is not None:
                bodies.append(msg.body)
            assert any(b.get("resume") for b in bodies)
            assert not any("set" in b for b in bodies)
        finally:
            h.close()

    def test_anomalies_mid_cycle_do_not_restart(self, broker):
        h = Harness(broker)
        try:
            h.drive(38.0)
            h.anomaly()
            assert h.wait_state(COOLING_DOWN)
            entered = h.orch.since
            h.anomaly()   # second alarm while already adapting
            h.drive(30.0, n=2)
            assert h.orch.state == COOLING_DOWN
            assert h.orch.since == entered
            # exactly one suspension was issued
            suspends = 0
            while (msg := h.ctrl.get(timeout=0.3)) is not None:
                suspends += 1 if msg.body.get("suspend") else 0
            assert suspends == 1
        finally:
            h.close()

    def test_cooldown_timeout_aborts_and_resumes(self, broker):
        config = OrchestratorConfig(cooldown_timeout=30.0)   # simulated s
        h = Harness(broker, config)
        try:
            h.drive(38.0)
            h.anomaly()
            assert h.wait_state(COOLING_DOWN)
            h.drive(38.0, n=15)   # 45 simulated s, never cools
            assert h.wait_state(MONITORING)
            resumed = False
            while (msg := h.ctrl.get(timeout=0.5)) is not None:
                resumed = resumed or bool(msg.body.get("resume"))
            assert resumed
        finally:
            h.close()


class TestProposeMode:
    def test_apply_waits_for_confirmation(self, broker):
        config = OrchestratorConfig(propose=True)
        h = Harness(broker, config)
        try:
            h.drive(38.0)
            h.anomaly()
            h.drive(22.0)
            assert h.wait_state(EXPERIMENTING)
            for _ in range(210):
                h.drive(30.0, n=1)
                if h.orch.state == CALIBRATING:
                    break
            request = h.next_request(h.calib_req)
            h.probe.publish(topics.CALIBRATION_RESULT,
                            {"status": "ok", "converged": True, "theta": THETA,
                             "id": request["id"]})
            grid_req = h.next_request(h.whatif_req)
            h.probe.publish(topics.WHATIF_RESULT,
                            {"status": "ok", "best": BEST, "results": [],
                             "id": grid_req["id"]})
            assert h.wait_state(APPLYING)
            time.sleep(0.3)
            assert h.orch.state == APPLYING   # waiting for the operator

            h.probe.publish(topics.ORCHESTRATOR_STATE, {"confirm": True})
            assert h.wait_state(MONITORING)
            applied = False
            while (msg := h.ctrl.get(timeout=0.5)) is not None:
                applied = applied or msg.body.get("set") == BEST
            assert applied
        finally:
            h.close()

    def test_mode_switch_via_bus(self, broker):
        h = Harness(broker)
        try:
            assert h.orch.propose is False
            h.probe.publish(topics.ORCHESTRATOR_STATE, {"set_mode": "propose"})
            deadline = time.time() + 3.0
            while time.time() < deadline and not h.orch.propose:
                time.sleep(0.02)
            assert h.orch.propose is True
        finally:
            h.close()
