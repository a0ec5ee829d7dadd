"""Base class for bus-driven services: one client, one loop thread."""

from __future__ import annotations

import logging
import threading

from incubator_twin.bus import BusClient

logger = logging.getLogger(__name__)


class Service:
    name = "service"

    def __init__(self, host: str | None = None, port: int | None = None):
        self._host = host
        self._port = port
        self.bus: BusClient | None = None
        self.ready = threading.Event()   # set once subscriptions are live
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "Service":
        self.bus = BusClient(self._host, self._port)
        self._thread = threading.Thread(target=self._guarded_run,
                                        name=self.name, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self.bus is not None:
            self.bus.close()

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    @property
    def stopped(self) -> bool:
        return self._stop.is_set()

    def _guarded_run(self) -> None:
        try:
            self._run()
        except Exception:
            if not self._stop.is_set():
                logger.exception("%s crashed", self.name)

    def _run(self) -> None:
        raise NotImplementedError
