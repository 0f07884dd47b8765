import json
import math
import random

import pytest

import twinforge
from twinforge import bench


FIG_TEMPLATE = {
    "topic": "test/DHT22/things/twin/commands/modify",
    "path": "/features",
    "value": {
        "temperature": {"properties": {"value": "{0}"}},
        "humidity": {"properties": {"value": "{1}"}},
    },
}

SEED = {
    "policies": [{"policyId": "py:policy", "entries": {"gateway": {"read": True, "write": True}}}],
    "twins": [{"thingId": "py:sensor", "policyId": "py:policy", "features": {"temp": {"properties": {}}}}],
    "tenants": [
        {
            "tenantId": "py",
            "mapper": {"rules": [{"source": "/v", "target": "/features/temp/properties/value"}]},
            "devices": [{"deviceId": "py:sensor", "username": "s", "password": "pw"}],
        }
    ],
}


def wait_for(pred, timeout=10.0):
    import time

    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(0.02)
    return pred()


def test_thing_ids():
    assert twinforge.parse_thing_id("cepsa:LSRC3002.PF") == ("cepsa", "LSRC3002.PF")
    with pytest.raises(twinforge.Error, match="MalformedId"):
        twinforge.parse_thing_id("no-namespace")


def test_substitute_fills_numbers():
    rng = random.Random(3)
    for _ in range(20):
        a, b = rng.uniform(-50, 50), rng.uniform(0, 100)
        env = twinforge.substitute(FIG_TEMPLATE, [a, b])
        assert twinforge.is_valid_envelope(env)
        assert env["value"]["temperature"]["properties"]["value"] == a
        assert env["value"]["humidity"]["properties"]["value"] == b
    with pytest.raises(twinforge.Error, match="IndexOutOfRange"):
        twinforge.substitute(FIG_TEMPLATE, [1.0])


def test_value_codec_matches_struct():
    import struct

    data = twinforge.encode_values(["float64", "int32"], [2.5, -7])
    assert data == struct.pack("<di", 2.5, -7)
    assert twinforge.decode_values(["float64", "int32"], data) == [2.5, -7.0]


def test_watchdog_interval():
    e = twinforge.WatchdogEngine()
    e.put_device("d")
    sec = 1_000_000_000
    e.on_message("d", 0)
    e.on_message("d", int(2.3 * sec))
    assert e.learned_interval("d") == 3 * sec + 200_000_000
    e.advance_to(20 * sec)
    times = [t for t, dev, _ in e.take_dispatches()]
    expected_interval = 3.2 * sec
    assert len(times) == math.floor((20 * sec - 2.3 * sec) / expected_interval)


def test_bench_statistics():
    s = bench.latency_stats([10.0, 0.0, 5.0])
    assert s["mean_ms"] == pytest.approx(5.0)
    assert s["p95_ms"] == pytest.approx(9.5)
    assert bench.spearman([1, 2, 3, 4], [10, 20, 30, 25]) == pytest.approx(0.8)
    r = bench.reconcile([1, 2, 3], [1, 1, 3])
    assert r == {"sent": 3, "stored": 2, "lost": 1, "duplicates": 1}


def test_platform_round_trip(tmp_path):
    p = twinforge.Platform(str(tmp_path / "data"))
    p.seed(SEED)
    p.start()
    try:
        for i in range(5):
            p.ingest("py", "py:sensor", "s", "pw", {"v": i * 1.5}, {"x-ts": str(1_000 + i)})
        assert wait_for(lambda: len(p.query("py:sensor", "temp")) == 5)
        points = p.query("py:sensor", "temp")
        assert [pt["value"] for pt in points] == [0.0, 1.5, 3.0, 4.5, 6.0]
        assert {pt["originator"] for pt in points} == {"gateway"}
        assert p.get_twin("py:sensor")["features"]["temp"]["properties"]["value"] == 6.0
        with pytest.raises(twinforge.Error, match="AuthFailed"):
            p.ingest("py", "py:sensor", "s", "wrong", {"v": 1})

        p.kill("gateway")
        assert not p.alive("gateway")
        with pytest.raises(twinforge.Error, match="Unavailable"):
            p.ingest("py", "py:sensor", "s", "pw", {"v": 1})
        p.restart("gateway")
        assert p.alive("gateway")
        metrics = dict(line.split() for line in p.metrics().splitlines())
        assert metrics["twinforge_ingested"] == "5"
        assert metrics["twinforge_auth_failures"] == "1"
    finally:
        p.stop()


def test_http_api(tmp_path):
    import urllib.request

    p = twinforge.Platform(str(tmp_path / "data"))
    p.seed(SEED)
    p.start()
    try:
        port = p.serve()
        with urllib.request.urlopen(f"http://127.0.0.1:{port}/api/things") as r:
            assert json.load(r) == ["py:sensor"]
    finally:
        p.stop()


def test_core_flow(tmp_path):
    report = bench.run_core_flow({"messages": 10}, 1, str(tmp_path))
    assert report["sent"] == 10
    assert report["lost"] == 0
    assert len(report["latency_samples_ms"]) == 10
