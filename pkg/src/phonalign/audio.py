"""WAV reading, 39-dim MFCC features and word segment extraction."""
from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dct

from .numkit.tsv import load_tsv, save_tsv

log = logging.getLogger(__name__)

N_FEATURES = 39


class WavFormatError(ValueError):
    pass


class SegmentError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    sample_rate: int
    samples: np.ndarray


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_filters: int = 26
    n_ceps: int = 13
    delta_window: int = 2
    preemphasis: float = 0.97

    def __post_init__(self):
        if self.frame_ms < self.hop_ms:
            raise ValueError("frame length must be >= hop")
        if self.n_ceps > self.n_filters:
            raise ValueError("cepstral coefficient count must be <= filter count")

    def frame_samples(self, sr):
        return int(round(self.frame_ms * sr / 1000.0))

    def hop_samples(self, sr):
        return int(round(self.hop_ms * sr / 1000.0))


@dataclass(frozen=True)
class SpokenWordSegment:
    word: Optional[str]
    speaker: str
    utterance_id: str
    frames: np.ndarray  # (T, 39)


@dataclass(frozen=True)
class BoundaryRecord:
    utterance_id: str
    word: Optional[str]
    speaker: str
    start_s: float
    end_s: float


def read_wav(path):
    """Read a mono 16-bit PCM RIFF/WAVE file into samples scaled to [-1, 1)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != b"RIFF":
        raise WavFormatError(f"{path}: bad RIFF magic {data[:4]!r}")
    if data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: bad WAVE form type {data[8:12]!r}")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: fmt chunk too short ({len(body)} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    code, channels, rate, _, _, bits = fmt
    if code != 1:
        raise WavFormatError(f"{path}: compression code {code} is not PCM (1)")
    if channels != 1:
        raise WavFormatError(f"{path}: channel count {channels}, expected mono")
    if bits != 16:
        raise WavFormatError(f"{path}: bits per sample {bits}, expected 16")
    if rate <= 0:
        raise WavFormatError(f"{path}: sample rate {rate}")
    if pcm is None:
        raise WavFormatError(f"{path}: missing data chunk")
    n = len(pcm) // 2
    samples = np.frombuffer(pcm[: 2 * n], dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(sample_rate=rate, samples=samples)


def write_wav(path, samples, sample_rate):
    """Write int16-range samples (already scaled to [-1, 1]) as mono PCM-16."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
                         1, 1, sample_rate, sample_rate * 2, 2, 16, b"data", len(pcm))
    with open(path, "wb") as f:
        f.write(header + pcm)


def _mel(hz):
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _inv_mel(mel):
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def mel_filterbank(n_filters, nfft, sr):
    points = _inv_mel(np.linspace(_mel(0.0), _mel(sr / 2.0), n_filters + 2))
    bins = np.floor((nfft + 1) * points / sr).astype(int)
    fb = np.zeros((n_filters, nfft // 2 + 1))
    for i in range(n_filters):
        lo, mid, hi = bins[i], bins[i + 1], bins[i + 2]
        for j in range(lo, mid):
            fb[i, j] = (j - lo) / max(mid - lo, 1)
        for j in range(mid, hi):
            fb[i, j] = (hi - j) / max(hi - mid, 1)
    return fb


def deltas(feat, window=2):
    """HTK regression deltas with edge frames repeated."""
    T = len(feat)
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    padded = np.pad(feat, ((window, window), (0, 0)), mode="edge")
    out = np.zeros_like(feat)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + T] - padded[window - n:window - n + T])
    return out / denom


def mfcc39(w, cfg=MfccConfig()):
    """Static MFCCs (C0 replaced by log energy) plus deltas and delta-deltas."""
    sr = w.sample_rate
    flen, hop = cfg.frame_samples(sr), cfg.hop_samples(sr)
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < flen:
        raise ValueError(f"audio has {len(x)} samples, fewer than one {flen}-sample frame")
    y = np.append(x[0], x[1:] - cfg.preemphasis * x[:-1])
    T = (len(y) - flen) // hop + 1
    idx = np.arange(flen)[None, :] + hop * np.arange(T)[:, None]
    frames = y[idx]
    energy = np.log(np.maximum(np.sum(frames * frames, axis=1), 1e-10))
    nfft = 1 << (flen - 1).bit_length()
    spec = np.abs(np.fft.rfft(frames * np.hamming(flen), n=nfft)) ** 2 / nfft
    fbank = np.log(np.maximum(spec @ mel_filterbank(cfg.n_filters, nfft, sr).T, 1e-10))
    ceps = dct(fbank, type=2, axis=1, norm="ortho")[:, : cfg.n_ceps]
    ceps[:, 0] = energy
    d1 = deltas(ceps, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    return np.hstack([ceps, d1, d2])


def frame_centers(n_frames, sr, cfg=MfccConfig()):
    """Window-center timestamps in seconds."""
    hop, flen = cfg.hop_samples(sr), cfg.frame_samples(sr)
    return (np.arange(n_frames) * hop + flen / 2.0) / sr


def extract_segments(frames_by_utt, manifest, sample_rates, cfg=MfccConfig()):
    """Cut per-utterance feature matrices into word segments.

    A frame belongs to a record when its window center lies in [start, end).
    ``sample_rates`` maps utterance id to sample rate (or is a single int).
    """
    out = []
    for rec in manifest:
        feats = frames_by_utt[rec.utterance_id]
        sr = sample_rates if isinstance(sample_rates, int) else sample_rates[rec.utterance_id]
        centers = frame_centers(len(feats), sr, cfg)
        sel = np.nonzero((centers >= rec.start_s - 1e-9) & (centers < rec.end_s - 1e-9))[0]
        if len(sel) == 0:
            raise SegmentError(
                f"utterance {rec.utterance_id}: interval [{rec.start_s}, {rec.end_s}) covers no frames")
        out.append(SpokenWordSegment(rec.word, rec.speaker, rec.utterance_id, feats[sel]))
    return out


def segment_indices(n_frames, sr, start_s, end_s, cfg=MfccConfig()):
    centers = frame_centers(n_frames, sr, cfg)
    return np.nonzero((centers >= start_s - 1e-9) & (centers < end_s - 1e-9))[0]


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            rec = BoundaryRecord(str(d["utterance_id"]), d.get("word"), str(d.get("speaker") or d["utterance_id"]),
                                 float(d["start_s"]), float(d["end_s"]))
            if not rec.start_s < rec.end_s:
                raise SegmentError(f"{path}:{lineno}: start {rec.start_s} >= end {rec.end_s}")
            records.append(rec)
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({"utterance_id": r.utterance_id, "word": r.word, "speaker": r.speaker,
                                "start_s": r.start_s, "end_s": r.end_s}) + "\n")


def featurize_dir(audio_dir, manifest, out_dir, cfg=MfccConfig()):
    """Compute features for every utterance named in the manifest.

    Writes ``<utt>.tsv`` files plus an ``index.tsv`` (utterance id, path) into
    ``out_dir`` and returns the extracted segments.
    """
    os.makedirs(out_dir, exist_ok=True)
    feats, rates = {}, {}
    index_lines = []
    for utt in sorted({r.utterance_id for r in manifest}):
        w = read_wav(os.path.join(audio_dir, f"{utt}.wav"))
        if w.sample_rate != 16000:
            log.warning("utterance %s has sample rate %d; no resampling is done", utt, w.sample_rate)
        feats[utt] = mfcc39(w, cfg)
        rates[utt] = w.sample_rate
        path = os.path.join(out_dir, f"{utt}.tsv")
        save_tsv(path, feats[utt])
        index_lines.append(f"{utt}\t{path}\t{w.sample_rate}")
    with open(os.path.join(out_dir, "index.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(index_lines) + "\n")
    return extract_segments(feats, manifest, rates, cfg)


def load_feature_cache(out_dir):
    feats, rates = {}, {}
    with open(os.path.join(out_dir, "index.tsv"), encoding="utf-8") as f:
        for line in f:
            if line.strip():
                utt, path, sr = line.rstrip("\n").split("\t")
                feats[utt] = load_tsv(path)
                rates[utt] = int(sr)
    return feats, rates
