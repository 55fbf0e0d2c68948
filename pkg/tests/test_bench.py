from __future__ import annotations

import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wrapify.bench import CSV_FIELDS, BenchConfig, latency_stats, make_payload, run_bench, to_csv


def test_native_inproc_record():
    rec = run_bench("native", 1024, 100, "inproc")
    assert rec.count == len(rec.latencies_us) == 100
    assert rec.stats["p50"] <= rec.stats["p95"] <= rec.stats["p99"]
    assert rec.stats == latency_stats(rec.latencies_us[5:])
    assert rec.stats["p50"] < 5000


def test_image_tcp_record():
    rec = run_bench("image", 120000, 30, "tcp")
    assert rec.count == 30 and rec.stats["p50"] < 20000


def test_audio_inproc_record():
    rec = run_bench("audio", 35280, 10, "inproc")
    assert len(rec.latencies_us) == 10


def test_count_precondition():
    with pytest.raises(ValueError):
        run_bench(count=5)
    with pytest.raises(ValueError):
        BenchConfig(kind="video")


def test_payload_sizes():
    assert len(make_payload("native", 1024)) + 2 == 1024
    img = make_payload("image", 120000)
    assert (img.width, img.height, img.channels) == (200, 200, 3)
    assert len(make_payload("image", 1000).pixel_data) == 1000
    assert make_payload("audio", 35280).chunk == 8820


@given(st.lists(st.integers(0, 10**7), min_size=1, max_size=200))
def test_stats_monotone(samples):
    s = latency_stats(samples)
    assert min(samples) <= s["p50"] <= s["p95"] <= s["p99"] <= max(samples)
    assert min(samples) <= s["mean"] <= max(samples)


def test_csv_and_json():
    rec = run_bench(count=10)
    rows = list(csv.DictReader(io.StringIO(to_csv([rec]))))
    assert tuple(rows[0]) == CSV_FIELDS and rows[0]["count"] == "10"
    assert json.loads(rec.to_json())["latencies_us"] == rec.latencies_us
