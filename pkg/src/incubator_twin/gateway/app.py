"""FastAPI gateway: streams bus traffic over WebSocket, proxies range
queries against the data log, and forwards operator commands onto the
bus. Commands are fire-and-forget (202 Accepted); their outcomes appear
on the stream. Slow WebSocket consumers are dropped once their backlog
reaches 1000 messages."""

from __future__ import annotations

import asyncio
import logging
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles
from pydantic import ValidationError

from incubator_twin import topics
from incubator_twin.bus import BusClient
from incubator_twin.datalog import DataLog
from incubator_twin.gateway import schemas

logger = logging.getLogger(__name__)

BACKLOG_LIMIT = 1000


class StreamHub:
    """Fans one bus subscription out to any number of WebSocket queues."""

    def __init__(self, bus: BusClient):
        self.bus = bus
        self._clients: dict[asyncio.Queue, asyncio.AbstractEventLoop] = {}
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._sub = None

    def start(self) -> None:
        self._sub = self.bus.subscribe(topics.ALL_PATTERN)
        self.bus.sync()
        self._thread = threading.Thread(target=self._pump, daemon=True,
                                        name="gateway-pump")
        self._thread.start()

    def stop(self) -> None:
        if self._sub is not None:
            self._sub.close()

    def register(self, queue: asyncio.Queue, loop) -> None:
        with self._lock:
            self._clients[queue] = loop

    def unregister(self, queue: asyncio.Queue) -> None:
        with self._lock:
            self._clients.pop(queue, None)

    def _pump(self) -> None:
        for msg in self._sub:
            record = msg.to_record()
            with self._lock:
                targets = list(self._clients.items())
            for queue, loop in targets:
                loop.call_soon_threadsafe(self._offer, queue, record)

    def _offer(self, queue: asyncio.Queue, record: dict) -> None:
        # runs on the event loop; None poisons a client that fell behind
        if queue.qsize() >= BACKLOG_LIMIT:
            self.unregister(queue)
            queue.put_nowait(None)
            logger.warning("dropping slow websocket client")
            return
        queue.put_nowait(record)


COMMAND_MODELS = {
    "disturbance": (schemas.DisturbancePayload, topics.PLANT_DISTURBANCE),
    "calibrate": (schemas.CalibratePayload, topics.CALIBRATION_REQUEST),
    "whatif": (schemas.WhatifPayload, topics.WHATIF_REQUEST),
    "controller_config": (schemas.ControllerConfigPayload, None),
    "orchestrator_mode": (schemas.OrchestratorModePayload,
                          topics.ORCHESTRATOR_STATE),
}


def create_app(bus_host: str | None = None, bus_port: int | None = None,
               data_dir: str | Path = "data",
               frontend_dir: str | Path | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.bus = BusClient(bus_host, bus_port)
        app.state.hub = StreamHub(app.state.bus)
        app.state.hub.start()
        yield
        app.state.hub.stop()
        app.state.bus.close()

    app = FastAPI(title="incubator twin gateway", lifespan=lifespan)
    datalog = DataLog(data_dir)

    @app.websocket("/ws")
    async def ws_stream(websocket: WebSocket):
        await websocket.accept()
        queue: asyncio.Queue = asyncio.Queue()
        app.state.hub.register(queue, asyncio.get_running_loop())
        try:
            while True:
                record = await queue.get()
                if record is None:   # dropped for falling behind
                    break
                await websocket.send_json(record)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            app.state.hub.unregister(queue)

    @app.get("/api/history")
    def history(topic: str = Query(...), from_ts: float = Query(alias="from"),
                to_ts: float = Query(alias="to"), run: str | None = None):
        if to_ts < from_ts:
            raise HTTPException(400, f"reversed range: {from_ts} > {to_ts}")
        if datalog.latest_run() is None:
            raise HTTPException(503, "data log unavailable")
        try:
            messages = datalog.query(topic, from_ts, to_ts, run=run)
        except OSError as exc:
            raise HTTPException(503, f"data log unavailable: {exc}") from exc
        return schemas.HistoryResponse(
            topic=topic, count=len(messages),
            messages=[m.to_record() for m in messages])

    @app.post("/api/command", status_code=202,
              response_model=schemas.CommandAccepted)
    def command(body: dict):
        ctype = body.get("type")
        if ctype not in COMMAND_MODELS:
            raise HTTPException(
                400, f"unknown command type {ctype!r}; "
                     f"expected one of {list(COMMAND_MODELS)}")
        model, topic = COMMAND_MODELS[ctype]
        try:
            payload = model(**body.get("payload", {}))
        except (ValidationError, TypeError) as exc:
            raise HTTPException(400, f"malformed {ctype} payload: {exc}")
        data = payload.model_dump(exclude_none=True)
        if ctype == "controller_config":
            topic = topics.CONTROLLER_STATE
            data = {"set": data}
        app.state.bus.publish(topic, data)
        return schemas.CommandAccepted(topic=topic)

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="dashboard")

    return app


def _find_frontend() -> Path | None:
    here = Path(__file__).resolve()
    for base in list(here.parents)[:6]:
        cand = base / "frontend" / "dist"
        if cand.is_dir():
            return cand
    return None


def serve_gateway(host: str, port: int, bus_host: str | None = None,
                  bus_port: int | None = None,
                  data_dir: str | Path = "data") -> None:
    import uvicorn

    app = create_app(bus_host, bus_port, data_dir,
                     frontend_dir=_find_frontend())
    uvicorn.run(app, host=host, port=port, log_level="warning")


def serve_gateway_background(host: str, port: int,
                             bus_host: str | None = None,
                             bus_port: int | None = None,
                             data_dir: str | Path = "data"):
    """Run uvicorn in a thread; returns (thread, stop_fn)."""
    import uvicorn

    app = create_app(bus_host, bus_port, data_dir,
                     frontend_dir=_find_frontend())
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True,
                              name="gateway")
    thread.start()

    def stop() -> None:
        server.should_exit = True
        thread.join(5.0)

    return thread, stop
