"""Composite layers shared by the speech and text sequence autoencoders."""
from __future__ import annotations

import numpy as np

from . import tape as tp
from .gru import bigru_final, init_gru, pad_batch


def init_dense(rng, n_in, n_out, scale=0.08):
    return rng.uniform(-scale, scale, size=(n_in, n_out)), np.zeros(n_out)


def init_bigru(rng, prefix, input_size, hidden):
    w = {}
    for d in ("f", "b"):
        w.update(init_gru(rng, input_size, hidden).as_dict(f"{prefix}.{d}"))
    return w


def init_decoder(rng, prefix, cond_size, out_size, hiddens):
    h1, h2 = hiddens
    w = {}
    w.update(init_gru(rng, out_size, h1).as_dict(f"{prefix}.l1"))
    w.update(init_gru(rng, h1, h2).as_dict(f"{prefix}.l2"))
    w[f"{prefix}.init1.W"], w[f"{prefix}.init1.b"] = init_dense(rng, cond_size, h1)
    w[f"{prefix}.init2.W"], w[f"{prefix}.init2.b"] = init_dense(rng, cond_size, h2)
    w[f"{prefix}.out.W"], w[f"{prefix}.out.b"] = init_dense(rng, h2, out_size)
    return w


def _gru_vars(p, prefix):
    return {"W": p[f"{prefix}.W"], "U": p[f"{prefix}.U"], "b": p[f"{prefix}.b"]}


def bigru_encode(p, prefix, x, mask, lengths):
    """Final-state embedding (B, 2H) of a padded batch; ``p`` maps names to Vars."""
    return bigru_final(x, mask, lengths, _gru_vars(p, f"{prefix}.f"), _gru_vars(p, f"{prefix}.b"))


def decode(p, prefix, cond, T):
    """Unroll the two-layer decoder for ``T`` steps; returns a Var (T, B, out).

    Both layer states start from linear projections of ``cond``; the input at
    step 1 is zero and afterwards the previous predicted frame.
    """
    B = cond.value.shape[0]
    out_size = p[f"{prefix}.out.W"].value.shape[1]
    h1 = tp.linear(cond, p[f"{prefix}.init1.W"], p[f"{prefix}.init1.b"])
    h2 = tp.linear(cond, p[f"{prefix}.init2.W"], p[f"{prefix}.init2.b"])
    l1, l2 = _gru_vars(p, f"{prefix}.l1"), _gru_vars(p, f"{prefix}.l2")
    inp = cond.tape.const(np.zeros((1, B, out_size)))
    ys = []
    for _ in range(T):
        h1 = tp.gru_sequence(inp, h1, l1["W"], l1["U"], l1["b"])[1]
        h2 = tp.gru_sequence(tp.reshape(h1, (1,) + h1.value.shape), h2, l2["W"], l2["U"], l2["b"])[1]
        y = tp.linear(h2, p[f"{prefix}.out.W"], p[f"{prefix}.out.b"])
        ys.append(y)
        inp = tp.reshape(y, (1, B, out_size))
    return tp.stack(ys, axis=0)


def mlp_logits(p, prefix, x, n_layers):
    h = x
    for i in range(n_layers):
        h = tp.relu(tp.linear(h, p[f"{prefix}.{i}.W"], p[f"{prefix}.{i}.b"]))
    return tp.linear(h, p[f"{prefix}.out.W"], p[f"{prefix}.out.b"])


def batch_inputs(tape, seqs):
    x, mask, lengths = pad_batch(seqs)
    return tape.const(x), mask, lengths


def minibatches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
