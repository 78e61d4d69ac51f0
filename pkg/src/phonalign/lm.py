"""Add-k smoothed bigram language model and beam-search rescoring of K-best word lists."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
FORMAT_VERSION = "phonalign-bigram 1"


@dataclass
class BigramLM:
    """Bigram counts with add-k smoothing.

    Predicted events are the vocabulary plus ``</s>`` and ``<unk>``.  A history
    never seen in training backs off to the smoothed unigram distribution over
    the same events.
    """

    vocab: tuple
    unigram: dict          # event -> count
    bigram: dict           # (history, event) -> count
    history_totals: dict   # history -> count
    k: float = 1.0

    def __post_init__(self):
        self._vocab_set = frozenset(self.vocab)

    @property
    def events(self):
        return self.vocab + (EOS, UNK)

    def _map_prev(self, w):
        if w == BOS or w in self._vocab_set:
            return w
        return UNK

    def _map_next(self, w):
        if w == EOS or w in self._vocab_set:
            return w
        return UNK

    def prob(self, prev, word):
        prev, word = self._map_prev(prev), self._map_next(word)
        E = len(self.vocab) + 2
        total = self.history_totals.get(prev, 0)
        if total == 0:
            n = sum(self.unigram.values())
            return (self.unigram.get(word, 0) + self.k) / (n + self.k * E)
        return (self.bigram.get((prev, word), 0) + self.k) / (total + self.k * E)

    def logprob(self, prev, word):
        return math.log(self.prob(prev, word))


def train_bigram(corpus, k=1.0):
    """Count bigrams over sentences, each padded with ``<s>`` and ``</s>``."""
    sentences = [list(s.split()) if isinstance(s, str) else list(s) for s in corpus]
    if not sentences or not any(sentences):
        raise ValueError("language model corpus is empty")
    if k <= 0:
        raise ValueError("smoothing constant must be positive")
    vocab = tuple(sorted({w for s in sentences for w in s}))
    unigram, bigram, totals = Counter(), Counter(), Counter()
    for s in sentences:
        prev = BOS
        for w in s + [EOS]:
            unigram[w] += 1
            bigram[(prev, w)] += 1
            totals[prev] += 1
            prev = w
    return BigramLM(vocab, dict(unigram), dict(bigram), dict(totals), float(k))


def lm_logprob(lm, prev, word):
    """Natural-log probability of ``word`` (or ``</s>``) after ``prev`` (or ``<s>``)."""
    return lm.logprob(prev, word)


def save_lm(path, lm):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_lm(lm))


def format_lm(lm):
    lines = [
        f"# {FORMAT_VERSION}",
        "# scores: natural-log probabilities",
        f"# smoothing: add-k k={lm.k!r}",
        "# events: vocabulary + </s> + <unk>; unseen histories back off to smoothed unigrams",
        "# oov: words outside the vocabulary map to <unk>",
        f"\\vocab {len(lm.vocab)}",
        *lm.vocab,
        f"\\unigram {len(lm.unigram)}",
        *(f"{w}\t{lm.unigram[w]}" for w in sorted(lm.unigram)),
        f"\\bigram {len(lm.bigram)}",
        *(f"{h}\t{w}\t{lm.bigram[(h, w)]}" for h, w in sorted(lm.bigram)),
        "\\end",
    ]
    return "\n".join(lines) + "\n"


def load_lm(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != f"# {FORMAT_VERSION}":
        raise ValueError(f"{path}: not a {FORMAT_VERSION} file")
    k = None
    i = 0
    while lines[i].startswith("#"):
        if lines[i].startswith("# smoothing: add-k k="):
            k = float(lines[i].split("=", 1)[1])
        i += 1

    def block(tag):
        nonlocal i
        head, n = lines[i].split()
        if head != f"\\{tag}":
            raise ValueError(f"{path}: expected \\{tag} block, found {lines[i]!r}")
        rows = lines[i + 1:i + 1 + int(n)]
        i += 1 + int(n)
        return rows

    vocab = tuple(block("vocab"))
    unigram = {}
    for row in block("unigram"):
        w, c = row.split("\t")
        unigram[w] = int(c)
    bigram, totals = {}, Counter()
    for row in block("bigram"):
        h, w, c = row.split("\t")
        bigram[(h, w)] = int(c)
        totals[h] += int(c)
    return BigramLM(vocab, unigram, bigram, dict(totals), k)


@dataclass(frozen=True)
class RescoreConfig:
    beam: int = 50
    cos_weight: float = 1.0
    lm_weight: float = 0.05
    end_transition: bool = True

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam width must be >= 1")
        if not (math.isfinite(self.cos_weight) and math.isfinite(self.lm_weight)):
            raise ValueError("fusion weights must be finite")


@dataclass(frozen=True)
class BeamHypothesis:
    words: tuple
    score: float

    @property
    def last(self):
        return self.words[-1] if self.words else BOS


def _extend_score(lm, cfg, prev, word, cos, final):
    s = cfg.cos_weight * cos + cfg.lm_weight * lm.logprob(prev, word)
    if final and cfg.end_transition:
        s += cfg.lm_weight * lm.logprob(word, EOS)
    return s


def beam_rescore(candidates, lm, cfg=RescoreConfig()):
    """Best word sequence through per-position ``[(word, cosine), ...]`` lists.

    Each extension adds ``cos_weight * cosine + lm_weight * log P(word | prev)``;
    the first word is scored after ``<s>`` and, when enabled, the last word's
    ``</s>`` transition is included before the final pruning.  Up to ``beam``
    hypotheses survive each position; ties go to the lexicographically
    smaller word sequence.  Returns ``(words, score)``.
    """
    for pos, cands in enumerate(candidates):
        if not cands:
            raise ValueError(f"empty candidate list at position {pos}")
    if not candidates:
        return [], 0.0
    beam = [BeamHypothesis((), 0.0)]
    last = len(candidates) - 1
    for pos, cands in enumerate(candidates):
        ext = []
        for h in beam:
            for word, cos in cands:
                s = h.score + _extend_score(lm, cfg, h.last, word, cos, pos == last)
                ext.append(BeamHypothesis(h.words + (word,), s))
        ext.sort(key=lambda h: (-h.score, h.words))
        beam = ext[: cfg.beam]
    best = beam[0]
    return list(best.words), best.score

