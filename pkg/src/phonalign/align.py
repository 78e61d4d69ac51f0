"""Alignment of the speech and text embedding spaces.

Both embedding sets are standardized and PCA-projected to a shared dimension
``k``.  A pair of linear maps ``T_ab`` (speech -> text) and ``T_ba`` (text ->
speech) is fitted to a few seed pairs with a two-way fit loss plus
cycle-consistency terms, starting from identity.  Spoken words are decoded by
cosine nearest neighbour of ``T_ab a`` among the text vectors.
"""
from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .numkit.optim import AdamState, adam_step
from .numkit.pca import PCAModel, pca_fit, pca_project
from .numkit.tape import ShapeError
from .numkit.tsv import read_blocks, write_blocks

log = logging.getLogger(__name__)


class AlignmentDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class ProjectedSet:
    labels: list
    vectors: np.ndarray  # (n, k)
    pca: PCAModel

    @property
    def k(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SeedPairs:
    a_index: np.ndarray  # token indices into A
    b_index: np.ndarray  # word indices into B
    words: list
    rule: str = "most-frequent"

    def __len__(self):
        return len(self.words)


@dataclass
class TransformPair:
    T_ab: np.ndarray
    T_ba: np.ndarray

    @classmethod
    def identity(cls, k):
        return cls(np.eye(k), np.eye(k))


@dataclass(frozen=True)
class AlignConfig:
    cycle_weight: float = 0.5
    lr: float = 1e-4
    iterations: int = 20000
    k: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.cycle_weight < 0:
            raise ValueError("cycle weight must be non-negative")
        if self.k < 1:
            raise ValueError("PCA dimension must be >= 1")


def build_projected_sets(Vp, labels_p, Vt, labels_t, k):
    """Standardize and PCA-project each space independently to ``k`` dims."""
    Vp, Vt = np.asarray(Vp, dtype=np.float64), np.asarray(Vt, dtype=np.float64)
    limit = min(len(Vp), len(Vt), Vp.shape[1], Vt.shape[1])
    if k > limit:
        raise ValueError(f"k={k} exceeds min(sample counts, dims) = {limit}")
    pa, pb = pca_fit(Vp, k), pca_fit(Vt, k)
    A = ProjectedSet(list(labels_p), pca_project(pa, Vp), pa)
    B = ProjectedSet(list(labels_t), pca_project(pb, Vt), pb)
    return A, B


def select_seeds(labels, N, seed=0, text_labels=None):
    """The ``N`` most frequent words, each with one randomly chosen token.

    Frequency ties are broken lexicographically.  Unlabeled tokens (None) are
    ignored.  When ``text_labels`` is given, ``b_index`` points into it.
    """
    counts = Counter(w for w in labels if w is not None)
    if N < 1 or len(counts) < N:
        raise ValueError(f"need N in [1, {len(counts)}] distinct labeled words, got N={N}")
    words = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:N]]
    if N > len(labels) / 2:
        warnings.warn(f"{N} seed pairs is more than half of the {len(labels)} spoken tokens", stacklevel=2)
    rng = np.random.default_rng(seed)
    by_word = {}
    for i, w in enumerate(labels):
        by_word.setdefault(w, []).append(i)
    a_index = np.array([by_word[w][rng.integers(len(by_word[w]))] for w in words], dtype=int)
    if text_labels is None:
        b_index = np.arange(N)
    else:
        pos = {w: i for i, w in enumerate(text_labels)}
        missing = [w for w in words if w not in pos]
        if missing:
            raise KeyError(f"seed words missing from text vocabulary: {missing[:5]}")
        b_index = np.array([pos[w] for w in words], dtype=int)
    return SeedPairs(a_index, b_index, words)


def _check(T, A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    k = T.T_ab.shape[0]
    if A.shape != B.shape or A.shape[1] != k or T.T_ab.shape != (k, k) or T.T_ba.shape != (k, k):
        raise ShapeError(f"seed matrices {A.shape}, {B.shape} do not match transforms of size {k}")
    return A, B


def align_loss(T, A, B, cycle_weight):
    """Two-way fit plus weighted cycle-consistency, summed over seed rows of A and B."""
    A, B = _check(T, A, B)
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_terms(T, A, B, cycle_weight)


def _loss_terms(T, A, B, cycle_weight):
    P = A @ T.T_ab.T
    Q = B @ T.T_ba.T
    return (np.sum((B - P) ** 2) + np.sum((A - Q) ** 2)
            + cycle_weight * np.sum((A - P @ T.T_ba.T) ** 2)
            + cycle_weight * np.sum((B - Q @ T.T_ab.T) ** 2))


def align_grad(T, A, B, cycle_weight):
    """Analytic gradient of :func:`align_loss`; returns ``(dT_ab, dT_ba)``."""
    A, B = _check(T, A, B)
    Tab, Tba = T.T_ab, T.T_ba
    P = A @ Tab.T
    Q = B @ Tba.T
    R1 = B - P
    R2 = A - Q
    R3 = A - P @ Tba.T
    R4 = B - Q @ Tab.T
    lam = cycle_weight
    d_ab = -2.0 * R1.T @ A - 2.0 * lam * Tba.T @ R3.T @ A - 2.0 * lam * R4.T @ Q
    d_ba = -2.0 * R2.T @ B - 2.0 * lam * R3.T @ P - 2.0 * lam * Tab.T @ R4.T @ B
    return d_ab, d_ba


def train_alignment(A_seed, B_seed, cfg=AlignConfig(), trace_every=1):
    """Full-batch Adam on the alignment loss from identity transforms.

    Returns ``(TransformPair, trace)``; ``trace[i]`` is the loss before update
    ``i * trace_every`` and the final entry is the loss after training.
    """
    A_seed, B_seed = np.atleast_2d(A_seed), np.atleast_2d(B_seed)
    if len(A_seed) < 1:
        raise ValueError("need at least one seed pair")
    k = A_seed.shape[1]
    params = {"T_ab": np.eye(k), "T_ba": np.eye(k)}
    opt = AdamState(lr=cfg.lr)
    trace = []
    for it in range(cfg.iterations):
        T = TransformPair(params["T_ab"], params["T_ba"])
        if it % trace_every == 0:
            loss = align_loss(T, A_seed, B_seed, cfg.cycle_weight)
            if not np.isfinite(loss):
                raise AlignmentDiverged(f"alignment loss became {loss} at iteration {it}; lower the learning rate")
            trace.append(float(loss))
        d_ab, d_ba = align_grad(T, A_seed, B_seed, cfg.cycle_weight)
        params, opt = adam_step(params, {"T_ab": d_ab, "T_ba": d_ba}, opt)
    T = TransformPair(params["T_ab"], params["T_ba"])
    final = align_loss(T, A_seed, B_seed, cfg.cycle_weight)
    if not np.isfinite(final):
        raise AlignmentDiverged(f"alignment loss became {final}; lower the learning rate")
    trace.append(float(final))
    return T, trace


def _cosine_scores(Q, B):
    qn = np.linalg.norm(Q, axis=1)
    if np.any(qn == 0):
        raise ValueError("transformed query has zero norm; cosine similarity undefined")
    bn = np.linalg.norm(B, axis=1)
    bn = np.where(bn == 0, np.inf, bn)
    return (Q @ B.T) / qn[:, None] / bn[None, :]


def decode_knn(a, T, B, K):
    """Top-``K`` text words for one projected speech vector, by cosine of ``T_ab a``."""
    return decode_knn_batch(np.atleast_2d(a), T, B, K)[0]


def decode_knn_batch(Aq, T, B, K):
    n = len(B.labels)
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    Aq = np.atleast_2d(np.asarray(Aq, dtype=np.float64))
    if Aq.shape[1] != T.T_ab.shape[1]:
        raise ShapeError(f"query dim {Aq.shape[1]} != transform dim {T.T_ab.shape[1]}")
    S = _cosine_scores(Aq @ T.T_ab.T, B.vectors)
    labels = B.labels
    out = []
    for row in S:
        # fast path: partial sort, then exact tie-aware ordering over a widened window
        if K < n:
            cut = np.partition(-row, K - 1)[K - 1]
            cand = np.nonzero(-row <= cut)[0]
        else:
            cand = np.arange(n)
        sub = sorted(cand, key=lambda j: (-row[j], labels[j]))[:K]
        out.append([(labels[j], float(row[j])) for j in sub])
    return out


def save_transform(path, T, cycle_weight, iterations):
    k = T.T_ab.shape[0]
    with open(path, "w", encoding="utf-8") as f:
        f.write("# phonalign-transform-pair 1\n")
        f.write(f"# k = {k}\n# cycle_weight = {cycle_weight!r}\n# iterations = {iterations}\n")
        write_blocks(f, {"T_ab": T.T_ab, "T_ba": T.T_ba})


def load_transform(path):
    with open(path, encoding="utf-8") as f:
        blocks = read_blocks(f.readlines())
    return TransformPair(blocks["T_ab"], blocks["T_ba"])


def dump_projected_set(path, P):
    with open(path, "w", encoding="utf-8") as f:
        for lab, v in zip(P.labels, P.vectors):
            f.write(json.dumps({"label": lab, "vector": [float(x) for x in v]}) + "\n")
