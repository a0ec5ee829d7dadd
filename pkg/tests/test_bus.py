"""Tests for the message bus: wire protocol, broker, and client."""

import itertools
import json
import socket
import struct
import threading
import time

import pytest

from incubator_twin.bus import (
    Broker,
    BusClient,
    ProtocolError,
    encode_frame,
    topic_matches,
    validate_pattern,
    validate_topic,
)


@pytest.fixture
def broker():
    b = Broker(port=0).serve()
    yield b
    b.close()


def client_for(broker: Broker) -> BusClient:
    return BusClient(*broker.address)


def brute_force_match(pattern: str, topic: str) -> bool:
    """Independent recursive matcher used as the oracle."""
    def match(pp: list[str], tp: list[str]) -> bool:
        if not pp:
            return not tp
        head, rest = pp[0], pp[1:]
        if head == "#":
            # zero or more trailing segments ('#' is last by construction)
            return not rest
        if not tp:
            return False
        if head == "*" or head == tp[0]:
            return match(rest, tp[1:])
        return False
    return match(pattern.split("."), topic.split("."))


class TestTopicMatching:
    def test_hash_matches_deeper_topics(self):
        assert topic_matches("incubator.#", "incubator.driver.state")

    def test_star_is_exactly_one_segment(self):
        assert topic_matches("incubator.*.state", "incubator.driver.state")
        assert not topic_matches("incubator.*.state", "incubator.state")

    def test_hash_matches_zero_segments(self):
        assert topic_matches("incubator.#", "incubator")

    def test_exhaustive_against_brute_force(self):
        # every topic over {a,b} and every valid pattern over {a,b,*,#},
        # both up to 4 segments
        topics = []
        for n in range(1, 5):
            topics += [".".join(c) for c in itertools.product("ab", repeat=n)]
        patterns = []
        for n in range(1, 5):
            for combo in itertools.product(["a", "b", "*", "#"], repeat=n):
                if "#" in combo and combo.index("#") != n - 1:
                    continue
                patterns.append(".".join(combo))
        for pattern in patterns:
            validate_pattern(pattern)
            for topic in topics:
                assert topic_matches(pattern, topic) == brute_force_match(
                    pattern, topic), (pattern, topic)

    def test_invalid_patterns_rejected(self):
        for bad in ("", "incubator..state", "a.#.b", "UPPER", "a b"):
            with pytest.raises(ValueError):
                validate_pattern(bad)
        with pytest.raises(ValueError):
            validate_topic("a.*")


class TestFraming:
    def test_oversized_frame_rejected(self):
        with pytest.raises(ProtocolError):
            encode_frame("pub", "t", 0.0, {"blob": "x" * (1 << 20)})

    def test_round_trip_encoding(self):
        data = encode_frame("pub", "incubator.driver.state", 1.5, {"k": 1})
        (length,) = struct.unpack(">I", data[:4])
        frame = json.loads(data[4:])
        assert length == len(data) - 4
        assert frame == {"op": "pub", "topic": "incubator.driver.state",
                         "ts": 1.5, "body": {"k": 1}}


class TestBrokerRouting:
    def test_wildcard_subscriber_receives_publication(self, broker):
        sub_client = client_for(broker)
        pub_client = client_for(broker)
        sub = sub_client.subscribe("incubator.#")
        time.sleep(0.05)
        pub_client.publish("incubator.driver.state", {"n": 1}, ts=12.0)
        msg = sub.get(timeout=2.0)
        assert msg is not None
        assert msg.topic == "incubator.driver.state"
        assert msg.ts == 12.0 and msg.body == {"n": 1}
        sub_client.close()
        pub_client.close()

    def test_publish_without_subscribers_is_dropped(self, broker):
        c = client_for(broker)
        c.publish("incubator.driver.state", {"n": 1})
        c.publish("incubator.driver.state", {"n": 2})  # still alive
        c.close()

    def test_self_delivery(self, broker):
        c = client_for(broker)
        sub = c.subscribe("incubator.controller.state")
        time.sleep(0.05)
        c.publish("incubator.controller.state", {"mode": "cooling"})
        msg = sub.get(timeout=2.0)
        assert msg is not None and msg.body["mode"] == "cooling"
        c.close()

    def test_fifo_order_preserved(self, broker):
        sub_client = client_for(broker)
        pub_client = client_for(broker)
        sub = sub_client.subscribe("incubator.driver.state")
        time.sleep(0.05)
        for i in range(100):
            pub_client.publish("incubator.driver.state", {"n": i})
        seen = [sub.get(timeout=2.0).body["n"] for _ in range(100)]
        assert seen == list(range(100))
        sub_client.close()
        pub_client.close()

    def test_one_delivery_per_connection_despite_two_matching_patterns(self, broker):
        c = client_for(broker)
        sub_all = c.subscribe("incubator.#")
        sub_exact = c.subscribe("incubator.driver.state")
        time.sleep(0.05)
        pub = client_for(broker)
        pub.publish("incubator.driver.state", {"n": 7})
        # client-side fan-out: each local subscription yields it once
        assert sub_all.get(timeout=2.0).body["n"] == 7
        assert sub_exact.get(timeout=2.0).body["n"] == 7
        assert sub_all.get(timeout=0.2) is None
        c.close()
        pub.close()

    def test_concurrent_publishers_keep_per_publisher_order(self, broker):
        sub_client = client_for(broker)
        sub = sub_client.subscribe("incubator.driver.state")
        time.sleep(0.05)
        n_publishers, n_msgs = 10, 100

        def run(pid: int):
            c = client_for(broker)
            for i in range(n_msgs):
                c.publish("incubator.driver.state", {"pid": pid, "n": i})
            c.close()

        threads = [threading.Thread(target=run, args=(pid,))
                   for pid in range(n_publishers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        per_publisher = {pid: [] for pid in range(n_publishers)}
        for _ in range(n_publishers * n_msgs):
            msg = sub.get(timeout=5.0)
            assert msg is not None, "lost a message"
            per_publisher[msg.body["pid"]].append(msg.body["n"])
        for pid, seq in per_publisher.items():
            assert seq == list(range(n_msgs)), f"publisher {pid} reordered"
        sub_client.close()

    def test_malformed_frame_closes_offending_connection_only(self, broker):
        ok = client_for(broker)
        sub = ok.subscribe("incubator.#")
        time.sleep(0.05)

        raw = socket.create_connection(broker.address)
        raw.sendall(struct.pack(">I", 5) + b"junk!")
        time.sleep(0.2)
        # offender is gone: its socket reads EOF
        raw.settimeout(1.0)
        assert raw.recv(1) == b""
        raw.close()

        ok.publish("incubator.driver.state", {"n": 1})
        assert sub.get(timeout=2.0) is not None
        ok.close()

    def test_oversized_frame_header_closes_connection(self, broker):
        raw = socket.create_connection(broker.address)
        raw.sendall(struct.pack(">I", (1 << 20) + 1))
        raw.settimeout(1.0)
        assert raw.recv(1) == b""
        raw.close()

    def test_ping_pong(self, broker):
        raw = socket.create_connection(broker.address)
        raw.sendall(encode_frame("ping"))
        header = raw.recv(4)
        (length,) = struct.unpack(">I", header)
        frame = json.loads(raw.recv(length))
        assert frame["op"] == "pong"
        raw.close()


class TestClient:
    def test_unreachable_broker_raises(self):
        with pytest.raises(Exception):
            BusClient("127.0.0.1", 1, reconnect=False)

    def test_reconnect_and_resubscribe(self):
        b1 = Broker(port=0).serve()
        port = b1.port
        c = client_for(b1)
        sub = c.subscribe("incubator.#")
        time.sleep(0.05)
        b1.close()
        time.sleep(0.1)

        b2 = None
        for _ in range(50):  # old connections may hold the port briefly
            try:
                b2 = Broker(port=port).serve()
                break
            except Exception:
                time.sleep(0.1)
        assert b2 is not None, "could not rebind broker port"
        try:
            # client reconnects after ~1 s backoff and resubscribes
            deadline = time.time() + 10.0
            received = None
            pub = None
            while time.time() < deadline and received is None:
                try:
                    if pub is None:
                        pub = BusClient("127.0.0.1", port)
                    pub.publish("incubator.driver.state", {"n": 42})
                except Exception:
                    pub = None
                received = sub.get(timeout=0.5)
            assert received is not None and received.body["n"] == 42
            if pub is not None:
                pub.close()
            c.close()
        finally:
            b2.close()

    def test_non_object_body_rejected(self, broker):
        c = client_for(broker)
        with pytest.raises(ValueError):
            c.publish("incubator.driver.state", [1, 2, 3])  # type: ignore[arg-type]
        c.close()
