"""Command line entry point: service launchers and batch tools.

Every long-running subcommand (broker, plant, controller, estimator,
calibrate-service via `calibrate --serve`, whatif service, orchestrator,
record, gateway) runs until interrupted; `demo` wires everything
in-process against a private broker with accelerated time. Batch tools
(`calibrate`, `whatif`, `replay`) run to completion and print JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import signal
import sys
import threading

from incubator_twin import config as configmod
from incubator_twin.bus import Broker, BusClient, default_address
from incubator_twin.calibration import (
    CalibrationService,
    calibrate,
    load_trajectory_file,
)
from incubator_twin.controller import ControllerConfig, ControllerService
from incubator_twin.datalog import DataLog, Recorder, replay
from incubator_twin.demo import ALL_SERVICES, Twin, TwinOptions
from incubator_twin.estimator import EstimatorService
from incubator_twin.orchestrator import Orchestrator
from incubator_twin.plant import VirtualPlant
from incubator_twin.whatif import (
    Scenario,
    WhatIfService,
    optimize_controller,
    run_scenario,
    _params_from_body,
)

logger = logging.getLogger(__name__)


def _addr(raw: str | None) -> tuple[str, int]:
    if raw is None:
        return default_address()
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)


def _wait_forever(*stoppables) -> int:
    stop = threading.Event()

    def handler(_sig, _frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    try:
        while not stop.is_set():
            stop.wait(0.5)
    finally:
        for s in stoppables:
            s.stop() if hasattr(s, "stop") else s.close()
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bus", metavar="HOST:PORT",
                        help="broker address (default INCUBATOR_BUS_ADDR or "
                             "127.0.0.1:7878)")
    parser.add_argument("--config", metavar="FILE",
                        help="INI-style config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incubator-twin",
        description="Digital twin of a thermal incubator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("broker", help="run the message broker")
    p.add_argument("--bind", metavar="HOST:PORT")
    _add_common(p)

    p = sub.add_parser("plant", help="run the virtual plant")
    _add_common(p)
    p.add_argument("--time-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)

    p = sub.add_parser("controller", help="run the bang-bang controller")
    _add_common(p)

    p = sub.add_parser("estimator", help="run the Kalman state estimator")
    _add_common(p)

    p = sub.add_parser("calibrate", help="fit model parameters")
    _add_common(p)
    p.add_argument("--serve", action="store_true",
                   help="run as the on-demand calibration service")
    p.add_argument("--model", choices=("a", "b"), default="b")
    p.add_argument("--input", metavar="RUN_JSONL",
                   help="recorded driver file or plain trajectory JSONL")
    p.add_argument("--theta0", metavar="V1,V2[,V3,V4]",
                   help="initial parameter guess")
    p.add_argument("--power", type=float, default=100.0)
    p.add_argument("--csv", metavar="FILE",
                   help="also write t,measured,simulated plot data")
    p.add_argument("--data-dir", default="data",
                   help="data log root (service mode)")

    p = sub.add_parser("whatif", help="run what-if scenarios")
    _add_common(p)
    p.add_argument("--serve", action="store_true",
                   help="run as the what-if service")
    p.add_argument("--scenario", metavar="FILE", help="scenario JSON")
    p.add_argument("--grid", metavar="FILE", help="candidate grid JSON")

    p = sub.add_parser("orchestrator", help="run the self-adaptation loop")
    _add_common(p)
    p.add_argument("--propose", action="store_true",
                   help="wait for operator confirmation before applying")

    p = sub.add_parser("record", help="record all bus traffic to disk")
    _add_common(p)
    p.add_argument("--data-dir", default="data")

    p = sub.add_parser("replay", help="replay a recording onto the bus")
    _add_common(p)
    p.add_argument("--input", required=True, metavar="FILE_OR_RUN_DIR")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--as-fast-as-possible", action="store_true")

    p = sub.add_parser("gateway", help="run the HTTP/WebSocket gateway")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1:8080", metavar="HOST:PORT")
    p.add_argument("--data-dir", default="data")

    p = sub.add_parser("demo", help="run the whole twin in one process")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--duration", type=float, default=4000.0)
    p.add_argument("--time-scale", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sigma", type=float, default=None,
                   help="sensor noise (default 0.5 K)")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--services", default=",".join(ALL_SERVICES),
                   help="comma-separated subset of services")
    p.add_argument("--perturb", type=float, default=0.0,
                   help="start the twin's model this fraction off the truth")
    p.add_argument("--propose", action="store_true")
    p.add_argument("--gateway", metavar="HOST:PORT", default=None,
                   help="also serve the HTTP gateway")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    cfg = configmod.load_config(getattr(args, "config", None))
    host, port = _addr(getattr(args, "bus", None))

    if args.command == "broker":
        bind_host, bind_port = _addr(args.bind) if args.bind else (host, port)
        broker = Broker(bind_host, bind_port).serve()
        print(f"broker listening on {broker.host}:{broker.port}", flush=True)
        return _wait_forever(broker)

    if args.command == "plant":
        overrides = {}
        if args.time_scale is not None:
            overrides["time_scale"] = args.time_scale
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.duration is not None:
            overrides["duration"] = args.duration
        plant = VirtualPlant(configmod.plant_config(cfg, **overrides),
                             host, port).start()
        return _wait_forever(plant)

    if args.command == "controller":
        svc = ControllerService(configmod.controller_config(cfg), host, port)
        return _wait_forever(svc.start())

    if args.command == "estimator":
        svc = EstimatorService(configmod.kalman_config(cfg), host, port)
        return _wait_forever(svc.start())

    if args.command == "calibrate":
        if args.serve:
            svc = CalibrationService(DataLog(args.data_dir),
                                     host=host, port=port)
            return _wait_forever(svc.start())
        return _run_calibrate(args)

    if args.command == "whatif":
        if args.serve:
            return _wait_forever(WhatIfService(host, port).start())
        return _run_whatif(args)

    if args.command == "orchestrator":
        oc = configmod.orchestrator_config(cfg, propose=args.propose)
        return _wait_forever(Orchestrator(oc, host, port).start())

    if args.command == "record":
        return _wait_forever(Recorder(args.data_dir, host, port).start())

    if args.command == "replay":
        bus = BusClient(host, port)
        speed = math.inf if args.as_fast_as_possible else args.speed
        summary = replay(args.input, bus, speed=speed)
        bus.close()
        print(json.dumps(summary))
        return 0

    if args.command == "gateway":
        from incubator_twin.gateway.app import serve_gateway
        bind_host, bind_port = _addr(args.bind)
        serve_gateway(bind_host, bind_port, bus_host=host, bus_port=port,
                      data_dir=args.data_dir)
        return 0

    if args.command == "demo":
        return _run_demo(args, cfg)

    parser.print_usage(sys.stderr)
    return 2


def _run_calibrate(args) -> int:
    if not args.input:
        print("calibrate: --input is required (or use --serve)",
              file=sys.stderr)
        return 2
    theta0 = None
    if args.theta0:
        theta0 = [float(v) for v in args.theta0.split(",")]
    problem = load_trajectory_file(args.input, args.model, theta0=theta0,
                                   power_w=args.power)
    result = calibrate(problem)
    print(json.dumps(result.to_body(), indent=2))
    if args.csv:
        sim = problem.y - result.residuals
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("t,measured,simulated\n")
            for t, y, s in zip(problem.ts, problem.y, sim):
                fh.write(f"{t},{y},{s}\n")
    return 0


def _run_whatif(args) -> int:
    if bool(args.scenario) == bool(args.grid):
        print("whatif: exactly one of --scenario or --grid is required "
              "(or use --serve)", file=sys.stderr)
        return 2
    if args.scenario:
        with open(args.scenario, encoding="utf-8") as fh:
            spec = json.load(fh)
        scenario = _scenario_from_json(spec)
        result = run_scenario(scenario)
        print(json.dumps({**result.summary(),
                          "controller": scenario.controller.to_body(),
                          "trajectory": result.trajectory_body()}, indent=2))
        return 0
    with open(args.grid, encoding="utf-8") as fh:
        spec = json.load(fh)
    candidates = [ControllerConfig.from_body(c) for c in spec["candidates"]]
    base = _scenario_from_json({**spec, "controller": spec["candidates"][0]})
    best, ranked = optimize_controller(base, candidates)
    print(json.dumps({
        "best": best.to_body(),
        "results": [{"controller": c.to_body(), **r.summary()}
                    for c, r in ranked]}, indent=2))
    return 0


def _scenario_from_json(spec: dict) -> Scenario:
    initial = spec.get("initial", {})
    return Scenario(
        controller=ControllerConfig.from_body(spec["controller"]),
        params=_params_from_body(spec.get("params")),
        t_bair=float(initial.get("t_bair", 21.0)),
        t_heater=float(initial.get("t_heater", initial.get("t_bair", 21.0))),
        t_room=float(spec.get("t_room", 21.0)),
        power_w=float(spec.get("power_w", 100.0)),
        horizon=float(spec.get("horizon", 4000.0)),
        dt=float(spec.get("dt", 3.0)),
        alpha=float(spec.get("alpha", 0.001)),
        beta=float(spec.get("beta", 1.0)),
    )


def _run_demo(args, cfg) -> int:
    options = TwinOptions(
        data_dir=args.data_dir,
        duration=args.duration,
        time_scale=args.time_scale,
        seed=args.seed,
        noise_sigma=args.sigma,
        services=tuple(s.strip() for s in args.services.split(",") if s.strip()),
        perturb_params=args.perturb,
        plant=None, controller=configmod.controller_config(cfg),
        kalman=None,
        orchestrator=configmod.orchestrator_config(cfg, propose=args.propose),
    )
    twin = Twin(options).start()
    gateway_thread = None
    stop_gateway = None
    if args.gateway:
        from incubator_twin.gateway.app import serve_gateway_background
        gw_host, gw_port = _addr(args.gateway)
        gateway_thread, stop_gateway = serve_gateway_background(
            gw_host, gw_port, bus_host=twin.address[0],
            bus_port=twin.address[1], data_dir=args.data_dir)
        print(f"gateway on http://{gw_host}:{gw_port}", flush=True)
    print(f"twin running; broker at {twin.address[0]}:{twin.address[1]}",
          flush=True)
    try:
        budget = max(60.0, 3 * args.duration * args.time_scale + 30.0)
        if not twin.wait(timeout=budget):
            print("demo timed out", file=sys.stderr)
            return 1
        import time as _time
        _time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        twin.stop()
        if stop_gateway is not None:
            stop_gateway()
    print(json.dumps({"run_dir": str(twin.run_dir)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
