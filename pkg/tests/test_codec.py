from __future__ import annotations

import binascii
import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dense_arrays, native_values, random_audio, random_image
from wrapify.codec import (
    ESCAPE_KEY,
    LITERAL_KEY,
    AudioChunk,
    DenseArray,
    Extension,
    ImageFrame,
    MessageEnvelope,
    Plugin,
    PluginRegistry,
    decode_audio,
    decode_image,
    decode_native,
    decode_native_envelope,
    encode_audio,
    encode_image,
    encode_native,
    encode_native_envelope,
    make_envelope,
)
from wrapify.errors import (
    DepthExceeded,
    DuplicatePlugin,
    GeometryMismatch,
    InvalidPluginId,
    KindMismatch,
    MalformedEnvelope,
    MalformedJson,
    NonFiniteFloat,
    PluginDecodeFailure,
    SampleCountMismatch,
    SampleOutOfRange,
    UnknownPlugin,
)


# -- native -------------------------------------------------------------------


def test_listing_object_encodes_as_plain_json():
    assert encode_native({"msg": "hi", "msg_ip": "yo"}) == b'{"msg":"hi","msg_ip":"yo"}'


def test_null():
    assert encode_native(None) == b"null"
    assert decode_native(b"null") is None


def test_dense_array_escape_matches_independent_encoding():
    raw = struct.pack("<4i", 1, 2, 3, 4)
    assert raw == bytes.fromhex("01000000020000000300000004000000")
    b64 = binascii.b2a_base64(raw, newline=False).decode()
    assert b64 == "AQAAAAIAAAADAAAABAAAAA=="
    arr = DenseArray.from_numpy(np.array([[1, 2], [3, 4]], dtype=np.int32))
    expected = {ESCAPE_KEY: ["dense_array", b64, {"shape": [2, 2], "dtype": "i32"}]}
    assert json.loads(encode_native(arr)) == expected
    assert encode_native(arr) == b'{"__wrapyfi__":["dense_array","AQAAAAIAAAADAAAABAAAAA==",{"shape":[2,2],"dtype":"i32"}]}'


def test_big_endian_numpy_input_is_stored_little_endian():
    arr = DenseArray.from_numpy(np.array([1, 2], dtype=">i4"))
    assert arr.data == struct.pack("<2i", 1, 2)


def test_device_remap():
    arr = DenseArray.from_numpy(np.arange(6, dtype=np.float32).reshape(2, 3), device_tag="gpu:0")
    back = decode_native(encode_native(arr), {"device_remap": {"gpu:0": "cpu"}})
    assert back.device_tag == "cpu"
    assert (back.shape, back.dtype, back.data) == (arr.shape, arr.dtype, arr.data)
    assert decode_native(encode_native(arr)).device_tag == "gpu:0"


def test_ndarray_round_trip():
    a = np.arange(24, dtype=np.uint16).reshape(2, 3, 4)
    b = decode_native(encode_native({"a": a}))["a"]
    assert isinstance(b, np.ndarray) and b.dtype == a.dtype and np.array_equal(a, b)


def test_unknown_plugin_on_decode():
    text = json.dumps({ESCAPE_KEY: ["nope", "", {}]})
    with pytest.raises(UnknownPlugin):
        decode_native(text)


def test_unknown_plugin_on_encode():
    with pytest.raises(UnknownPlugin):
        encode_native(object())
    with pytest.raises(UnknownPlugin):
        encode_native(Extension("not_registered", 1))


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_non_finite_rejected(bad):
    with pytest.raises(NonFiniteFloat):
        encode_native([1, bad])


def test_non_standard_constants_rejected_on_decode():
    with pytest.raises(MalformedJson):
        decode_native(b"[NaN]")


def test_depth_limit():
    v: object = 0
    for _ in range(63):
        v = [v]
    assert decode_native(encode_native(v)) == v
    with pytest.raises(DepthExceeded):
        encode_native([v])


def test_malformed_json():
    with pytest.raises(MalformedJson):
        decode_native(b"{not json")
    with pytest.raises(MalformedJson):
        decode_native(b"\xff\xfe")


def test_plugin_registration_rules():
    reg = PluginRegistry(builtins=False)
    p = Plugin("thing", lambda v: isinstance(v, complex), lambda v: ("", {"re": v.real, "im": v.imag}),
               lambda t, m, o: complex(m["re"], m["im"]))
    reg.register(p)
    with pytest.raises(DuplicatePlugin):
        reg.register(p)
    for bad in ("a.b", "a$b", ""):
        with pytest.raises(InvalidPluginId):
            reg.register(Plugin(bad, p.detect, p.encode, p.decode))
    assert decode_native(encode_native([1j + 2], reg), registry=reg) == [2 + 1j]


def test_user_plugins_consulted_after_builtins():
    reg = PluginRegistry()
    seen = []
    reg.register(Plugin("greedy", lambda v: seen.append(v) or True, lambda v: ("", {}), lambda t, m, o: None))
    arr = DenseArray((1,), "u8", b"\x07")
    assert json.loads(encode_native(arr, reg))[ESCAPE_KEY][0] == "dense_array"
    assert seen == []


def test_failing_plugin_decode():
    text = json.dumps({ESCAPE_KEY: ["dense_array", "AAAA", {"shape": [5], "dtype": "i32"}]})
    with pytest.raises(PluginDecodeFailure):
        decode_native(text)


@given(native_values)
def test_native_round_trip(v):
    text = encode_native(v)
    json.loads(text)  # independent parser accepts it
    assert decode_native(text, {}) == v


@given(st.dictionaries(st.sampled_from([ESCAPE_KEY, LITERAL_KEY, "x"]), native_values, min_size=1, max_size=3))
def test_magic_keys_survive(v):
    assert decode_native(encode_native(v)) == v
    assert decode_native(encode_native({LITERAL_KEY: v})) == {LITERAL_KEY: v}


@given(dense_arrays())
def test_dense_array_round_trip_bit_exact(arr):
    back = decode_native(encode_native(arr))
    assert (back.shape, back.dtype, back.data, back.device_tag) == (arr.shape, arr.dtype, arr.data, arr.device_tag)


# -- envelopes ----------------------------------------------------------------


@given(native_values)
def test_envelope_parts(v):
    env = encode_native_envelope(v, "/a/b")
    parts = env.parts
    assert parts[0].decode() == "/a/b"
    header = json.loads(parts[1])
    assert set(header) == {"ver", "ts", "kind", "meta"} and header["ver"] == 1
    back = MessageEnvelope.from_parts(parts)
    assert back.parts == parts
    assert decode_native_envelope(back) == v


def test_unknown_header_keys_ignored():
    parts = [b"/a", b'{"ver":1,"ts":1.5,"kind":"native","meta":{},"extra":true}', b"[1]"]
    env = MessageEnvelope.from_parts(parts)
    assert decode_native_envelope(env) == [1]
    assert env.parts == parts


def test_bad_header():
    with pytest.raises(MalformedEnvelope):
        MessageEnvelope.from_parts([b"/a", b'{"ver":2,"ts":0,"kind":"native","meta":{}}', b"1"])
    with pytest.raises(MalformedEnvelope):
        MessageEnvelope.from_parts([b"/a"])


# -- images ---------------------------------------------------------------------


def test_image_envelope_layout():
    img = ImageFrame(2, 2, 3, bytes(range(12)))
    env = encode_image(img, "/cam")
    assert env.meta == {"width": 2, "height": 2, "channels": 3, "encoding": "raw8"}
    assert len(env.parts[2]) == 12
    assert decode_image(env) == img


def test_listing_sized_image():
    img = random_image(np.random.default_rng(1), 200, 200, 3)
    assert len(encode_image(img, "/cam").parts[2]) == 120000


def test_image_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        encode_image(ImageFrame(2, 2, 3, bytes(11)), "/cam")
    with pytest.raises(GeometryMismatch):
        encode_image(ImageFrame(2, 2, 2, bytes(8)), "/cam")
    env = make_envelope("/cam", "image", {"width": 2, "height": 2, "channels": 3, "encoding": "raw8"}, [bytes(11)])
    with pytest.raises(GeometryMismatch):
        decode_image(env)


def test_kind_mismatch():
    aud = encode_audio(AudioChunk(8000, 1, 1, np.zeros(1, np.float32)), "/mic")
    with pytest.raises(KindMismatch):
        decode_image(aud)
    with pytest.raises(KindMismatch):
        decode_audio(encode_image(ImageFrame(1, 1, 1, b"\0"), "/cam"))


def test_seeded_mono_frames_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        img = random_image(rng, 64, 48, 1)
        assert decode_image(encode_image(img, "/cam")).pixel_data == img.pixel_data


def test_jpeg_is_lossy_but_decodable():
    pytest.importorskip("PIL")
    img = random_image(np.random.default_rng(3), 32, 24, 3)
    jpg = img.to_jpeg()
    assert jpg.encoding == "jpeg" and jpg.pixel_data[:2] == b"\xff\xd8"
    back = decode_image(encode_image(jpg, "/cam")).to_raw()
    assert (back.width, back.height, back.channels) == (32, 24, 3)


# -- audio ----------------------------------------------------------------------


def test_listing_sized_audio():
    aud = random_audio(np.random.default_rng(2), 44100, 8820, 1)
    env = encode_audio(aud, "/mic")
    assert len(env.parts[2]) == 35280
    assert env.meta == {"rate": 44100, "chunk": 8820, "channels": 1, "format": "f32le"}


def test_zero_sample():
    env = encode_audio(AudioChunk(16000, 1, 1, [0.0]), "/mic")
    assert env.parts[2] == b"\0\0\0\0"


def test_audio_invariants():
    with pytest.raises(SampleOutOfRange):
        encode_audio(AudioChunk(16000, 1, 1, [1.5]), "/mic")
    with pytest.raises(SampleOutOfRange):
        encode_audio(AudioChunk(16000, 1, 1, [float("nan")]), "/mic")
    with pytest.raises(SampleCountMismatch):
        encode_audio(AudioChunk(16000, 2, 1, [0.0]), "/mic")
    env = make_envelope("/mic", "audio", {"rate": 8000, "chunk": 2, "channels": 2, "format": "f32le"}, [bytes(12)])
    with pytest.raises(SampleCountMismatch):
        decode_audio(env)


def test_audio_samples_little_endian():
    env = encode_audio(AudioChunk(8000, 2, 1, [0.5, -0.25]), "/mic")
    assert env.parts[2] == struct.pack("<2f", 0.5, -0.25)


def test_seeded_three_channel_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(50):
        aud = random_audio(rng, 48000, int(rng.integers(1, 256)), 3)
        back = decode_audio(encode_audio(aud, "/mic"))
        assert back == aud and back.samples.tobytes() == aud.samples.tobytes()


def test_image_and_audio_nest_inside_native():
    rng = np.random.default_rng(5)
    img, aud = random_image(rng, 4, 3, 3), random_audio(rng, 8000, 5, 2)
    back = decode_native(encode_native({"img": img, "aud": [aud]}))
    assert back == {"img": img, "aud": [aud]}
