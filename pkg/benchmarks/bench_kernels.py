"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--frames 200] [--vocab 32]

Prints one line per kernel and backend plus the speedup, and checks that
both backends return bitwise-identical results.
"""
import argparse
import time

import numpy as np

from amtl import _pykernels

try:
    from amtl import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, np.ndarray):
        return a.tobytes() == b.tobytes()
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--frames", type=int, default=200, help="CTC input length T'")
    ap.add_argument("--vocab", type=int, default=32)
    ap.add_argument("--target", type=int, default=40, help="CTC target length")
    ap.add_argument("--words", type=int, default=300, help="words per side for edit distance")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    logits = rng.standard_normal((args.frames, args.vocab))
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    target = rng.integers(1, args.vocab, size=args.target).tolist()
    ref = [str(w) for w in rng.integers(0, 50, size=args.words)]
    hyp = [str(w) for w in rng.integers(0, 50, size=args.words)]

    cases = [
        (f"ctc_forward_backward T'={args.frames} V={args.vocab} U={args.target}", "ctc_forward_backward", (log_probs, target, 0)),
        (f"edit_ops {args.words}x{args.words} words", "edit_ops", (ref, hyp)),
    ]
    if _ckernels is None:
        print("compiled extension not built; timing the Python backend only")
    for label, name, call_args in cases:
        py_t, py_out = best_of(lambda: getattr(_pykernels, name)(*call_args), args.repeat)
        print(f"{label:<48} python {py_t * 1e3:9.2f} ms")
        if _ckernels is not None:
            c_t, c_out = best_of(lambda: getattr(_ckernels, name)(*call_args), args.repeat)
            print(f"{label:<48} cython {c_t * 1e3:9.2f} ms  speedup x{py_t / c_t:.1f}  identical={same(py_out, c_out)}")


if __name__ == "__main__":
    main()
