"""Generative toy language standing in for a small transcribed speech corpus.

Words get random pronunciations over a small phoneme inventory.  Each phoneme
has an acoustic prototype: a fixed random linear image of its SPE feature row
plus a phoneme-specific perturbation, so acoustic similarity follows
articulatory similarity.  A spoken token is its phonemes' prototype frames,
plus a per-speaker offset, plus Gaussian noise.  Word order in utterances and
in LM transcripts follows one sparse bigram grammar.
"""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass

import numpy as np

from ..audio import BoundaryRecord, SpokenWordSegment, write_manifest
from ..numkit.tsv import read_blocks, write_blocks
from ..text import load_spe_table, write_lexicon

# mixes vowels and consonants so short inventories stay pronounceable
PHONEME_ORDER = ("AA", "S", "IY", "T", "UW", "M", "EH", "K", "OW", "N", "L", "AE", "P", "Z", "IH",
                 "D", "R", "AO", "F", "G", "SH", "B", "EY", "V", "NG", "AH", "TH", "W", "Y", "HH",
                 "CH", "JH", "DH", "ZH", "ER", "UH", "AW", "AY", "OY")


@dataclass(frozen=True)
class SynthSpec:
    n_phonemes: int = 10
    vocab_size: int = 50
    min_len: int = 2
    max_len: int = 5
    speakers: int = 4
    tokens_per_word: int = 8
    feature_dim: int = 39
    frames_per_phoneme: int = 3
    speaker_scale: float = 1.0
    noise_scale: float = 0.3
    phoneme_jitter: float = 0.3
    successors: int = 3
    grammar_strength: float = 0.9
    utterance_len: tuple = (3, 8)
    n_transcripts: int = 2000
    seed: int = 0

    def __post_init__(self):
        for name in ("n_phonemes", "vocab_size", "min_len", "max_len", "speakers", "tokens_per_word",
                     "feature_dim", "frames_per_phoneme", "successors"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_scale < 0 or self.speaker_scale < 0:
            raise ValueError("noise and speaker scales must be non-negative")
        if self.min_len > self.max_len:
            raise ValueError("min_len > max_len")
        if self.n_phonemes > len(PHONEME_ORDER):
            raise ValueError(f"at most {len(PHONEME_ORDER)} phonemes available")


@dataclass
class SynthCorpus:
    segments: list
    manifest: list
    lexicon: dict
    transcripts: list
    utterances: list  # list of lists of token indices, in spoken order


def word_name(i):
    return f"w{i:03d}"


def _pronunciations(spec, rng, inventory):
    space = sum(len(inventory) ** L for L in range(spec.min_len, spec.max_len + 1))
    if spec.vocab_size > space:
        raise ValueError(f"vocabulary of {spec.vocab_size} exceeds the {space} possible pronunciations")
    seen, prons = set(), []
    if space <= 4 * spec.vocab_size:
        allp = [p for L in range(spec.min_len, spec.max_len + 1) for p in itertools.product(inventory, repeat=L)]
        pick = rng.choice(len(allp), size=spec.vocab_size, replace=False)
        return [tuple(allp[i]) for i in pick]
    while len(prons) < spec.vocab_size:
        L = int(rng.integers(spec.min_len, spec.max_len + 1))
        p = tuple(inventory[i] for i in rng.integers(len(inventory), size=L))
        if p not in seen:
            seen.add(p)
            prons.append(p)
    return prons


def _grammar(spec, rng):
    V = spec.vocab_size
    return [rng.choice(V, size=min(spec.successors, V), replace=False) for _ in range(V)]


def _next_word(spec, rng, grammar, prev, allowed=None):
    """Sample the next word; ``allowed`` (bool mask) restricts to words with budget left."""
    V = spec.vocab_size
    if prev is not None and rng.random() < spec.grammar_strength:
        succ = grammar[prev] if allowed is None else [w for w in grammar[prev] if allowed[w]]
        if len(succ):
            return int(succ[rng.integers(len(succ))])
    pool = np.arange(V) if allowed is None else np.nonzero(allowed)[0]
    return int(pool[rng.integers(len(pool))])


def synth_corpus(spec=SynthSpec(), table=None):
    rng = np.random.default_rng(spec.seed)
    table = table or load_spe_table()
    inventory = list(PHONEME_ORDER[: spec.n_phonemes])
    prons = _pronunciations(spec, rng, inventory)
    lexicon = {word_name(i): p for i, p in enumerate(prons)}

    mix = rng.normal(size=(spec.feature_dim, 15)) / np.sqrt(15.0)
    proto = {p: mix @ table[p] + spec.phoneme_jitter * rng.normal(size=spec.feature_dim) for p in inventory}
    spk_offset = spec.speaker_scale * rng.normal(size=(spec.speakers, spec.feature_dim))
    grammar = _grammar(spec, rng)

    budget = np.full(spec.vocab_size, spec.tokens_per_word)
    lo, hi = spec.utterance_len
    utt_words = []
    while budget.sum() > 0:
        n = int(rng.integers(lo, hi + 1))
        words, prev = [], None
        for _ in range(n):
            if budget.sum() == 0:
                break
            w = _next_word(spec, rng, grammar, prev, allowed=budget > 0)
            budget[w] -= 1
            words.append(w)
            prev = w
        utt_words.append(words)

    segments, manifest, utterances = [], [], []
    for u, words in enumerate(utt_words):
        utt_id = f"utt{u:04d}"
        speaker = f"spk{u % spec.speakers}"
        offset = spk_offset[u % spec.speakers]
        t0 = 0
        idxs = []
        for w in words:
            frames = np.repeat(np.stack([proto[p] for p in prons[w]]), spec.frames_per_phoneme, axis=0)
            frames = frames + offset + spec.noise_scale * rng.normal(size=frames.shape)
            idxs.append(len(segments))
            segments.append(SpokenWordSegment(word_name(w), speaker, utt_id, frames))
            T = len(frames)
            manifest.append(BoundaryRecord(utt_id, word_name(w), speaker, round(t0 * 0.01, 6),
                                           round((t0 + T) * 0.01, 6)))
            t0 += T
        utterances.append(idxs)

    transcripts = []
    for _ in range(spec.n_transcripts):
        n = int(rng.integers(lo, hi + 1))
        prev, sent = None, []
        for _ in range(n):
            prev = _next_word(spec, rng, grammar, prev)
            sent.append(word_name(prev))
        transcripts.append(" ".join(sent))
    return SynthCorpus(segments, manifest, lexicon, transcripts, utterances)


def save_corpus(out_dir, corpus):
    """Write segments (TSV blocks), manifest (JSON lines), lexicon and transcripts."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "segments.tsv"), "w", encoding="utf-8") as f:
        write_blocks(f, {f"seg{i:06d}": s.frames for i, s in enumerate(corpus.segments)})
    write_manifest(os.path.join(out_dir, "manifest.jsonl"), corpus.manifest)
    write_lexicon(os.path.join(out_dir, "lexicon.txt"), corpus.lexicon)
    with open(os.path.join(out_dir, "transcripts.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(corpus.transcripts) + "\n")
    with open(os.path.join(out_dir, "utterances.json"), "w", encoding="utf-8") as f:
        json.dump(corpus.utterances, f)


def load_corpus(out_dir):
    from ..audio import read_manifest
    from ..text import load_lexicon

    with open(os.path.join(out_dir, "segments.tsv"), encoding="utf-8") as f:
        blocks = read_blocks(f.readlines())
    manifest = read_manifest(os.path.join(out_dir, "manifest.jsonl"))
    segments = [SpokenWordSegment(r.word, r.speaker, r.utterance_id, blocks[f"seg{i:06d}"])
                for i, r in enumerate(manifest)]
    with open(os.path.join(out_dir, "transcripts.txt"), encoding="utf-8") as f:
        transcripts = [line.strip() for line in f if line.strip()]
    with open(os.path.join(out_dir, "utterances.json"), encoding="utf-8") as f:
        utterances = json.load(f)
    return SynthCorpus(segments, manifest, load_lexicon(os.path.join(out_dir, "lexicon.txt")),
                       transcripts, utterances)
