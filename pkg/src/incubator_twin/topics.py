"""Bus topic names and the body conventions used on them.

Topics carrying both service output and requests to that service
discriminate by body shape: request bodies carry one of the REQUEST_KEYS
below and never the service's own output keys, so a service can safely
subscribe to its own topic (the bus delivers a client its own messages).

Body schemas in brief:

driver.state        {"time", "t1", "t2", "t3", "average_temperature",
                     "t_room", "heater_on", "fan_on", "execution_interval",
                     "elapsed"}
driver.command      {"heater_on": bool} and/or {"fan_on": bool}
controller.state    output: {"mode", "ll", "ul", "h", "c", "heater_on",
                     "suspended", "ts"}; requests: {"set": {...}},
                     {"suspend": true}, {"resume": true}
plant.disturbance   request: {"kind", "magnitude", "duration"};
                    reply: {"status": "active"|"rejected"|"ok"|"expired", ...}
calibration.request {"model": "a"|"b", "from_ts", "to_ts", "theta0"?, "id"?}
calibration.result  {"status": "ok"|"error", "theta"?, "cost"?, "iterations"?,
                     "converged"?, "id"?, "reason"?}
estimator.state     output: {"t_bair_hat", "t_heater_hat", "p", "innovation",
                     "s", "anomaly", "ts"}; request: {"set_params": {...}}
whatif.request      {"scenario": {...}} or {"grid": {...}}, optional "id"
whatif.result       {"status", "best"?, "results"?, "trajectory"?, "id"?}
orchestrator.state  output: {"state", "since", "last_result"}; requests:
                    {"set_mode": "propose"|"auto"}, {"confirm": true};
                    alerts: {"alert": str}
"""

DRIVER_STATE = "incubator.driver.state"
DRIVER_COMMAND = "incubator.driver.command"
CONTROLLER_STATE = "incubator.controller.state"
PLANT_DISTURBANCE = "incubator.plant.disturbance"
CALIBRATION_REQUEST = "incubator.calibration.request"
CALIBRATION_RESULT = "incubator.calibration.result"
ESTIMATOR_STATE = "incubator.estimator.state"
WHATIF_REQUEST = "incubator.whatif.request"
WHATIF_RESULT = "incubator.whatif.result"
ORCHESTRATOR_STATE = "incubator.orchestrator.state"

ALL_PATTERN = "incubator.#"

REQUEST_KEYS = ("set", "suspend", "resume", "set_params", "set_mode", "confirm")


def is_request(body: dict) -> bool:
    """True when a body on a shared state topic is a request, not output."""
    return any(k in body for k in REQUEST_KEYS)
