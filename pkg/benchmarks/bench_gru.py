"""Time the GRU sequence kernels: compiled extension vs numpy fallback.

    python3 benchmarks/bench_gru.py [--repeat 5] [--shapes 20x8x64,20x64x64,...]

Shapes are TxBxH with input width 39.  Prints best-of-repeat milliseconds for
forward and forward+backward, plus the speedup of the compiled kernels.
"""
import argparse
import timeit

import numpy as np

from phonalign._kernels import _gru_py

try:
    from phonalign._kernels import _gru_cy
except ImportError:
    _gru_cy = None

DEFAULT_SHAPES = "15x1x64,15x8x64,15x64x64,15x8x256,15x64x256,40x64x256"


def make_inputs(T, B, H, D=39, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.uniform(-0.08, 0.08, size=(D, 3 * H))
    U = rng.uniform(-0.08, 0.08, size=(H, 3 * H))
    x = rng.normal(size=(T, B, D))
    xw = x @ W
    mask = (np.arange(T)[:, None] < rng.integers(T // 2, T + 1, size=B)[None, :]).astype(float)
    h0 = np.zeros((B, H))
    dhs = rng.normal(size=(T + 1, B, H))
    return xw, mask, h0, U, dhs


def bench(mod, args, repeat, number):
    xw, mask, h0, U, dhs = args

    def fwd():
        return mod.gru_seq_forward(xw, mask, h0, U)

    def both():
        hs, z, r, c = mod.gru_seq_forward(xw, mask, h0, U)
        mod.gru_seq_backward(dhs, mask, hs, z, r, c, U)

    t_f = min(timeit.repeat(fwd, repeat=repeat, number=number)) / number
    t_b = min(timeit.repeat(both, repeat=repeat, number=number)) / number
    return 1e3 * t_f, 1e3 * t_b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shapes", default=DEFAULT_SHAPES)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    if _gru_cy is None:
        print("compiled extension not built; only the numpy kernels are available")
    print(f"{'T x B x H':<14}{'numpy fwd':>11}{'numpy f+b':>11}{'cython fwd':>12}{'cython f+b':>12}{'speedup':>9}")
    for spec in args.shapes.split(","):
        T, B, H = (int(v) for v in spec.split("x"))
        inputs = make_inputs(T, B, H)
        pf, pb = bench(_gru_py, inputs, args.repeat, args.number)
        row = f"{spec:<14}{pf:>11.3f}{pb:>11.3f}"
        if _gru_cy is not None:
            ref = _gru_py.gru_seq_forward(*inputs[:4])[0]
            assert np.allclose(_gru_cy.gru_seq_forward(*inputs[:4])[0], ref, atol=1e-12)
            cf, cb = bench(_gru_cy, inputs, args.repeat, args.number)
            row += f"{cf:>12.3f}{cb:>12.3f}{pb / cb:>8.2f}x"
        print(row)


if __name__ == "__main__":
    main()
