"""Top-k accuracy, evaluation reports and per-word PCA coordinates."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numkit.pca import pca_fit, pca_project


def _word(c):
    return c[0] if isinstance(c, (tuple, list)) else c


def eval_topk(ranked, refs, ks=(1, 10)):
    """Percent of tokens whose reference is among the first ``k`` candidates.

    ``ranked`` holds one list per token, of words or ``(word, score)`` pairs.
    Returns ``{k: accuracy}``.
    """
    if len(ranked) != len(refs):
        raise ValueError(f"{len(ranked)} prediction lists for {len(refs)} references")
    if not refs:
        raise ValueError("no tokens to evaluate")
    out = {}
    for k in ks:
        hits = 0
        for cands, ref in zip(ranked, refs):
            if not cands:
                raise ValueError("empty candidate list")
            hits += any(_word(c) == ref for c in cands[:k])
        out[k] = 100.0 * hits / len(refs)
    return out


def round1(x):
    return float(f"{x:.1f}")


@dataclass
class EvalReport:
    paired_top1: float
    paired_top10: float
    unpaired_top1: float
    unpaired_top10: float
    n_seeds: int
    n_unpaired: int
    no_lm_top1: float = 0.0
    beam_accuracy: dict = field(default_factory=dict)   # beam width -> unpaired top-1 after rescoring
    transcripts_before: list = field(default_factory=list)
    transcripts_after: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("paired_top1", "paired_top10", "unpaired_top1", "unpaired_top10"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.paired_top10 < self.paired_top1 or self.unpaired_top10 < self.unpaired_top1:
            raise ValueError("top-10 accuracy below top-1")

    def to_json(self, with_timings=True):
        d = asdict(self)
        d["beam_accuracy"] = {str(k): v for k, v in self.beam_accuracy.items()}
        if not with_timings:
            d.pop("timings")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["beam_accuracy"] = {int(k): v for k, v in d["beam_accuracy"].items()}
        return cls(**d)

    def table(self):
        lines = [
            f"{'':<12}{'Paired acc. (%)':>18}{'Unpaired acc. (%)':>20}",
            f"{'':<12}{'top1':>9}{'top10':>9}{'top1':>10}{'top10':>10}",
            f"{'N=' + str(self.n_seeds):<12}{self.paired_top1:>9.1f}{self.paired_top10:>9.1f}"
            f"{self.unpaired_top1:>10.1f}{self.unpaired_top10:>10.1f}",
        ]
        if self.beam_accuracy:
            lines += ["", f"{'Beam width K':<14}{'Accuracy (%)':>14}", f"{'no LM':<14}{self.no_lm_top1:>14.1f}"]
            lines += [f"{k:<14}{v:>14.1f}" for k, v in sorted(self.beam_accuracy.items())]
        return "\n".join(lines) + "\n"


def ablation_table(rows):
    head = f"{'Disentangle':<13}{'Features':<10}{'top1':>8}{'top10':>8}"
    out = [head]
    for r in rows:
        out.append(f"{'yes' if r['disentangle'] else 'no':<13}{'one-hot' if r['one_hot'] else 'SPE':<10}"
                   f"{r['unpaired_top1']:>8.1f}{r['unpaired_top10']:>8.1f}")
    return "\n".join(out) + "\n"


def dump_pca_coords(vectors, labels, words, n_components=3):
    """Per-word mean vector projected onto the set's leading PCA components.

    The PCA is fitted on the whole embedding set, so coordinates of a word do
    not depend on which other words are requested.  Returns ``(n_words, 3)``.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = list(labels)
    present = set(labels)
    missing = [w for w in words if w not in present]
    if missing:
        raise KeyError(f"words not in the embedding set: {missing[:5]}")
    model = pca_fit(vectors, n_components)
    lab = np.array(labels, dtype=object)
    means = np.stack([vectors[lab == w].mean(axis=0) for w in words])
    return pca_project(model, means)


def write_coords(path, words, coords):
    with open(path, "w", encoding="utf-8") as f:
        f.write("word\t" + "\t".join(f"pc{i + 1}" for i in range(np.shape(coords)[1])) + "\n")
        for w, row in zip(words, coords):
            f.write(w + "\t" + "\t".join(f"{x:.17g}" for x in row) + "\n")
