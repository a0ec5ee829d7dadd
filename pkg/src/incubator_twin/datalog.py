"""Time-series persistence and replay for bus traffic.

The recorder subscribes to incubator.# and appends every message to one
JSONL file per topic inside runs/<run-id>/, where <run-id> is a UTC
timestamp. Each line is the full message envelope:

    {"topic": ..., "ts": ..., "body": {...}}

Files are flushed on every write, so range queries can read closed files
and the live tail alike. The same files double as calibration input.
"""

from __future__ import annotations

import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path

from incubator_twin import topics
from incubator_twin.bus import BusClient, Message
from incubator_twin.service import Service

logger = logging.getLogger(__name__)


def topic_filename(topic: str) -> str:
    return topic.replace(".", "_") + ".jsonl"


def new_run_id() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S_%fZ")


class Recorder(Service):
    """Appends every incubator.# message to the current run directory."""

    name = "recorder"

    def __init__(self, root: str | Path, host: str | None = None,
                 port: int | None = None):
        super().__init__(host, port)
        self.root = Path(root)
        self.run_dir = self.root / "runs" / new_run_id()
        self._files: dict[str, object] = {}
        self._recording = True

    def _run(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        sub = self.bus.subscribe(topics.ALL_PATTERN)
        self.bus.sync()
        self.ready.set()
        try:
            while not self.stopped:
                msg = sub.get(timeout=0.2)
                if msg is None:
                    continue
                self._append(msg)
        finally:
            for fh in self._files.values():
                try:
                    fh.close()
                except OSError:
                    pass

    def _append(self, msg: Message) -> None:
        if not self._recording:
            return
        try:
            fh = self._files.get(msg.topic)
            if fh is None:
                path = self.run_dir / topic_filename(msg.topic)
                fh = open(path, "a", encoding="utf-8")
                self._files[msg.topic] = fh
            fh.write(json.dumps(msg.to_record(), separators=(",", ":")) + "\n")
            fh.flush()
        except OSError as exc:
            # disk trouble: stop recording, leave everything else running
            self._recording = False
            logger.error("recorder stopped: %s", exc)
            try:
                self.bus.publish(topics.ORCHESTRATOR_STATE,
                                 {"alert": f"recorder stopped: {exc}"})
            except Exception:
                pass


class DataLog:
    """Read-side of the run directory layout."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def runs(self) -> list[Path]:
        base = self.root / "runs"
        if not base.is_dir():
            return []
        return sorted(p for p in base.iterdir() if p.is_dir())

    def latest_run(self) -> Path | None:
        runs = self.runs()
        return runs[-1] if runs else None

    def query(self, topic: str, from_ts: float, to_ts: float,
              run: str | Path | None = None) -> list[Message]:
        """Messages on a topic with from_ts <= ts <= to_ts, in ts order.

        Unknown topics yield an empty result; a reversed range is an error.
        """
        if to_ts < from_ts:
            raise ValueError(f"reversed range: {from_ts} > {to_ts}")
        run_dir = Path(run) if run is not None else self.latest_run()
        if run_dir is None:
            return []
        path = run_dir / topic_filename(topic)
        if not path.is_file():
            return []
        out = []
        for msg in read_messages(path):
            if from_ts <= msg.ts <= to_ts:
                out.append(msg)
        out.sort(key=lambda m: m.ts)
        return out


def read_messages(path: str | Path) -> list[Message]:
    """Parse a recording file, skipping corrupt lines."""
    msgs, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                msgs.append(Message(rec["topic"], float(rec["ts"]), rec["body"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
    if skipped:
        logger.warning("%s: skipped %d corrupt lines", path, skipped)
    return msgs


def replay(source: str | Path, bus: BusClient, speed: float = 1.0,
           only_topics: list[str] | None = None) -> dict:
    """Republish a recorded run (directory) or a single recording file.

    Inter-message gaps are scaled by 1/speed; speed=inf sends back to back.
    Bodies are republished untouched; the envelope gets a fresh send-time
    timestamp. Returns {"sent": n, "skipped": n_corrupt}.
    """
    if speed <= 0:
        raise ValueError("speed must be positive (use math.inf for max speed)")
    src = Path(source)
    files = [src] if src.is_file() else sorted(src.glob("*.jsonl"))
    msgs: list[Message] = []
    skipped = 0
    for path in files:
        before = len(msgs)
        with open(path, encoding="utf-8") as fh:
            lines = sum(1 for line in fh if line.strip())
        msgs.extend(read_messages(path))
        skipped += lines - (len(msgs) - before)
    msgs.sort(key=lambda m: m.ts)
    if only_topics is not None:
        msgs = [m for m in msgs if m.topic in only_topics]

    sent = 0
    start_wall = time.monotonic()
    base_ts = msgs[0].ts if msgs else 0.0
    for msg in msgs:
        if speed != float("inf"):
            due = (msg.ts - base_ts) / speed
            lag = due - (time.monotonic() - start_wall)
            if lag > 0:
                time.sleep(lag)
        bus.publish(msg.topic, msg.body)
        sent += 1
    return {"sent": sent, "skipped": skipped}
