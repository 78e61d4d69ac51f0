"""GRU layers built on the tape.

Cell convention::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    c  = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c

With all-zero weights and a zero initial state the state stays at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .tape import ShapeError, Tape


INIT_SCALE = 0.08


@dataclass(frozen=True)
class GRUParams:
    W: np.ndarray  # (D, 3H)
    U: np.ndarray  # (H, 3H)
    b: np.ndarray  # (3H,)

    @property
    def input_size(self):
        return self.W.shape[0]

    @property
    def hidden_size(self):
        return self.U.shape[0]

    def as_dict(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.b": self.b}

    @classmethod
    def from_dict(cls, weights, prefix):
        return cls(weights[f"{prefix}.W"], weights[f"{prefix}.U"], weights[f"{prefix}.b"])


def init_gru(rng, input_size, hidden_size, scale=INIT_SCALE):
    H = hidden_size
    return GRUParams(
        W=rng.uniform(-scale, scale, size=(input_size, 3 * H)),
        U=rng.uniform(-scale, scale, size=(H, 3 * H)),
        b=np.zeros(3 * H),
    )


def zero_gru(input_size, hidden_size):
    H = hidden_size
    return GRUParams(np.zeros((input_size, 3 * H)), np.zeros((H, 3 * H)), np.zeros(3 * H))


def gru_forward(params, inputs, h0, tape=None):
    """Run one GRU over a single sequence.

    ``inputs`` is (T, D), ``h0`` is (H,).  Returns the (T, H) hidden states.
    When ``tape`` is given the computation is recorded on it and a tuple
    ``(states, Var)`` is returned, where the Var covers ``h0`` plus all states.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    h0 = np.asarray(h0, dtype=np.float64)
    H, D = params.hidden_size, params.input_size
    if inputs.ndim != 2 or (inputs.shape[0] and inputs.shape[1] != D):
        raise ShapeError(f"inputs must be (T, {D}), got {inputs.shape}")
    if h0.shape != (H,):
        raise ShapeError(f"h0 must have shape ({H},), got {h0.shape}")
    x = inputs.reshape(inputs.shape[0], 1, D)
    if tape is None:
        tape = Tape()
        hs = tp.gru_sequence(tape.const(x), tape.const(h0[None]), params.W, params.U, params.b)
        return hs.value[1:, 0, :]
    v = params.as_dict("gru")
    pv = {k: tape.param(k, w) for k, w in v.items()}
    hs = tp.gru_sequence(tape.const(x), tape.const(h0[None]), pv["gru.W"], pv["gru.U"], pv["gru.b"])
    return hs.value[1:, 0, :], hs


def pad_batch(seqs):
    """Stack variable-length (T_i, D) arrays into time-major (T, B, D) plus a (T, B) mask."""
    lengths = np.array([len(s) for s in seqs])
    T = int(lengths.max()) if len(seqs) else 0
    D = seqs[0].shape[1]
    x = np.zeros((T, len(seqs), D))
    mask = np.zeros((T, len(seqs)))
    for i, s in enumerate(seqs):
        x[: len(s), i] = s
        mask[: len(s), i] = 1.0
    return x, mask, lengths


def reverse_index(lengths, T):
    """Time indices that reverse each sequence's valid prefix, padding left in place."""
    B = len(lengths)
    t_idx = np.tile(np.arange(T)[:, None], (1, B))
    for i, n in enumerate(lengths):
        t_idx[:n, i] = np.arange(n - 1, -1, -1)
    return t_idx, np.tile(np.arange(B)[None, :], (T, 1))


def bigru_final(x, mask, lengths, fwd, bwd):
    """Concatenated final states of a bidirectional GRU over a padded batch.

    ``x`` is a Var (T, B, D); ``fwd``/``bwd`` are dicts with Var entries W, U, b.
    Masked steps carry the state, so the last row of each direction is the
    state after the final valid frame.
    """
    T, B, _ = x.value.shape
    H = fwd["U"].value.shape[0]
    h0 = np.zeros((B, H))
    hf = tp.gru_sequence(x, h0, fwd["W"], fwd["U"], fwd["b"], mask)
    t_idx, b_idx = reverse_index(lengths, T)
    xr = tp.index(x, (t_idx, b_idx))
    hb = tp.gru_sequence(xr, h0, bwd["W"], bwd["U"], bwd["b"], mask)
    return tp.concat([hf[T], hb[T]], axis=-1)
