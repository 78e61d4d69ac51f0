import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonalign.audio import (BoundaryRecord, MfccConfig, SegmentError, WavFormatError, Waveform, deltas,
                             extract_segments, featurize_dir, frame_centers, load_feature_cache, mfcc39,
                             read_manifest, read_wav, write_manifest, write_wav)


def _wav_bytes(pcm, rate=16000, code=1, channels=1, bits=16):
    return struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16, code, channels,
                       rate, rate * 2, 2, bits, b"data", len(pcm)) + pcm


def test_read_wav_scales_to_half(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(np.full(160, 16384, dtype="<i2").tobytes()))
    w = read_wav(p)
    assert w.sample_rate == 16000
    assert len(w.samples) == 160 and np.all(w.samples == 0.5)


@pytest.mark.parametrize("field,kwargs", [("compression", {"code": 3}), ("channel", {"channels": 2}),
                                          ("bits", {"bits": 8})])
def test_read_wav_rejects_bad_format_naming_field(tmp_path, field, kwargs):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(b"\x00\x00" * 4, **kwargs))
    with pytest.raises(WavFormatError, match=field):
        read_wav(p)


def test_read_wav_bad_magic(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFX" + _wav_bytes(b"")[4:])
    with pytest.raises(WavFormatError, match="magic"):
        read_wav(p)


def test_read_wav_zero_length_data(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(b""))
    assert len(read_wav(p).samples) == 0


def test_wav_round_trip(tmp_path, rng):
    x = np.round(rng.uniform(-1, 1, 500) * 32767) / 32768
    write_wav(tmp_path / "a.wav", x, 8000)
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == 8000 and np.array_equal(w.samples, x)


def test_mfcc_one_second_gives_98_frames(rng):
    w = Waveform(16000, rng.normal(size=16000) * 0.1)
    f = mfcc39(w)
    assert f.shape == ((16000 - 400) // 160 + 1, 39) == (98, 39)
    assert np.all(np.isfinite(f))


def test_mfcc_silence_has_zero_deltas():
    f = mfcc39(Waveform(16000, np.zeros(8000)))
    assert np.all(f[:, :13] == f[0, :13])
    assert np.max(np.abs(f[:, 13:])) < 1e-9


def test_mfcc_too_short():
    with pytest.raises(ValueError):
        mfcc39(Waveform(16000, np.zeros(100)))


def test_deltas_of_linear_ramp_are_slope():
    feat = np.arange(20, dtype=float)[:, None] * 0.5
    d = deltas(feat, 2)
    np.testing.assert_allclose(d[2:-2, 0], 0.5)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(400, 4000), seed=st.integers(0, 1000))
def test_mfcc_shape_contract(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    f = mfcc39(Waveform(16000, x))
    assert f.shape == ((n - 400) // 160 + 1, 39) and not np.isnan(f).any()


def _feats(T):
    return np.arange(T * 39, dtype=float).reshape(T, 39)


def test_segment_whole_utterance():
    centers = frame_centers(98, 16000)
    rec = BoundaryRecord("u", "w", "s", 0.0, float(centers[-1] + 0.01))
    (seg,) = extract_segments({"u": _feats(98)}, [rec], 16000)
    assert seg.frames.shape == (98, 39)


def test_segment_center_membership():
    # centers sit at 0.01 t + 0.0125; [0.10, 0.20) holds t = 9..18
    centers = frame_centers(98, 16000)
    (seg,) = extract_segments({"u": _feats(98)}, [BoundaryRecord("u", "w", "s", 0.10, 0.20)], 16000)
    expect = np.nonzero((centers >= 0.10) & (centers < 0.20))[0]
    assert list(expect) == list(range(9, 19))
    np.testing.assert_array_equal(seg.frames, _feats(98)[9:19])


def test_segments_partition_bound():
    recs = [BoundaryRecord("u", "a", "s", 0.0, 0.3), BoundaryRecord("u", "b", "s", 0.3, 0.9)]
    segs = extract_segments({"u": _feats(98)}, recs, 16000)
    assert sum(len(s.frames) for s in segs) <= 98


def test_segment_without_frames_names_utterance():
    with pytest.raises(SegmentError, match="utt7"):
        extract_segments({"utt7": _feats(98)}, [BoundaryRecord("utt7", "w", "s", 5.0, 5.1)], 16000)


def test_manifest_round_trip_and_validation(tmp_path):
    recs = [BoundaryRecord("u1", "cat", "s1", 0.1, 0.4), BoundaryRecord("u1", None, "s1", 0.4, 0.5)]
    write_manifest(tmp_path / "m.jsonl", recs)
    assert read_manifest(tmp_path / "m.jsonl") == recs
    (tmp_path / "bad.jsonl").write_text('{"utterance_id": "u", "start_s": 0.5, "end_s": 0.2}\n')
    with pytest.raises(SegmentError):
        read_manifest(tmp_path / "bad.jsonl")


def test_featurize_dir_and_cache(tmp_path, rng):
    audio = tmp_path / "audio"
    audio.mkdir()
    write_wav(audio / "u1.wav", rng.normal(size=16000) * 0.1, 16000)
    recs = [BoundaryRecord("u1", "a", "s", 0.0, 0.5), BoundaryRecord("u1", "b", "s", 0.5, 0.98)]
    segs = featurize_dir(audio, recs, tmp_path / "feats")
    feats, rates = load_feature_cache(tmp_path / "feats")
    assert rates == {"u1": 16000} and feats["u1"].shape == (98, 39)
    assert [s.word for s in segs] == ["a", "b"]
    again = extract_segments(feats, recs, rates, MfccConfig())
    for x, y in zip(segs, again):
        assert np.array_equal(x.frames, y.frames)
