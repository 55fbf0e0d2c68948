from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from wrapify.codec import DTYPES, AudioChunk, DenseArray, ImageFrame
from wrapify.transport import Broker, Runtime

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

INT64 = st.integers(min_value=-(2**63), max_value=2**63 - 1)
FLOATS = st.floats(allow_nan=False, allow_infinity=False)
KEYS = st.text(max_size=12)

native_values = st.recursive(
    st.none() | st.booleans() | INT64 | FLOATS | st.text(max_size=40),
    lambda children: st.lists(children, max_size=6) | st.dictionaries(KEYS, children, max_size=6),
    max_leaves=40,
)


@st.composite
def dense_arrays(draw):
    dtype = draw(st.sampled_from(sorted(DTYPES)))
    shape = tuple(draw(st.lists(st.integers(0, 5), max_size=3)))
    nbytes = math.prod(shape) * DTYPES[dtype].itemsize
    data = draw(st.binary(min_size=nbytes, max_size=nbytes))
    if dtype == "bool":
        data = bytes(b & 1 for b in data)
    device = draw(st.none() | st.sampled_from(["cpu", "gpu:0", "gpu:1"]))
    return DenseArray(shape, dtype, data, device)


def random_image(rng: np.random.Generator, width: int, height: int, channels: int) -> ImageFrame:
    return ImageFrame(width, height, channels, rng.integers(0, 256, width * height * channels, dtype=np.uint8).tobytes())


def random_audio(rng: np.random.Generator, rate: int, chunk: int, channels: int) -> AudioChunk:
    return AudioChunk(rate, chunk, channels, rng.uniform(-1, 1, chunk * channels).astype(np.float32))


@pytest.fixture
def broker():
    b = Broker(sub_port=0).start()
    yield b
    b.stop()


@pytest.fixture
def registry_file(tmp_path):
    return str(tmp_path / "registry.json")


@pytest.fixture
def runtime(broker, registry_file):
    rt = Runtime(broker=broker.address, registry=registry_file)
    yield rt
    rt.close()


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
