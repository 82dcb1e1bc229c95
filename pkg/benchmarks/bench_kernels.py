"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from diqkd import _kernels_py

try:
    from diqkd import _kernels as compiled
except ImportError:
    compiled = None


def schur_case(n, m, density, seed=0):
    rng = np.random.default_rng(seed)
    ia, ja, va, indptr = [], [], [], [0]
    for _ in range(m):
        A = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
        A = A + A.T
        r, c = np.nonzero(A)
        ia.extend(r), ja.extend(c), va.extend(A[r, c])
        indptr.append(len(ia))
    g = rng.normal(size=(n, n))
    X = g @ g.T
    trip = (np.array(indptr, np.int64), np.array(ia, np.int64), np.array(ja, np.int64), np.array(va))

    def run(impl):
        M = np.zeros((m, m))
        impl.schur_block(*trip, X, X, M)

    return run


def program_case(preset, rho=0.06):
    """Schur blocks of the guessing program exactly as the solver builds them."""
    from diqkd.behavior import MeasurementAngles, singlet_behavior
    from diqkd.guess import KeyFunction, build_guess_program
    from diqkd.sdp import _Compiled

    b = singlet_behavior(rho, getattr(MeasurementAngles, preset)())
    cp = _Compiled(build_guess_program(b, KeyFunction.identity()))
    rng = np.random.default_rng(1)
    blocks = []
    for k, n in enumerate(cp.blocks):
        sub = cp.A[:, cp.offsets[k]:cp.offsets[k + 1]].tocsr()
        sub = sub[np.flatnonzero(np.diff(sub.indptr))].tocsr()
        if sub.shape[0] == 0:
            continue
        sub.sort_indices()
        g = rng.normal(size=(n, n))
        X = np.ascontiguousarray(g @ g.T)
        trip = (sub.indptr.astype(np.int64), (sub.indices // n).astype(np.int64),
                (sub.indices % n).astype(np.int64), sub.data.astype(float))
        blocks.append((trip, X, sub.shape[0]))

    def run(impl):
        for trip, X, m in blocks:
            impl.schur_block(*trip, X, X, np.zeros((m, m)))

    return run


def hash_case(seeds, n, m, seed=0):
    rng = np.random.default_rng(seed)
    S = rng.integers(0, 2, (seeds, n + m - 1)).astype(np.uint8)
    x = rng.integers(0, 2, n).astype(np.uint8)
    return lambda impl: impl.toeplitz_hash_batch(S, x)


def decode_case(n, m, weight, seed=0):
    rng = np.random.default_rng(seed)
    cols = rng.integers(0, 2**m, n).astype(np.uint64)
    syn = int(np.bitwise_xor.reduce(cols[:weight]))
    return lambda impl: impl.decode_min_weight(cols, syn, 0)


CASES = {
    "schur_block, guessing program (CHSH, level 2)": program_case("chsh"),
    "schur_block, guessing program (2x3, level 2)": program_case("ekert"),
    "schur_block random n=13 m=60": schur_case(13, 60, 0.05),
    "schur_block random n=20 m=120": schur_case(20, 120, 0.03),
    "toeplitz_hash_batch 1e5 seeds, n=32 m=8": hash_case(100_000, 32, 8),
    "decode_min_weight n=16 m=12 weight 2": decode_case(16, 12, 2),
    "decode_min_weight n=24 m=16 weight 3": decode_case(24, 16, 3),
}


def best(fn, impl, repeat):
    number = 1
    while timeit.timeit(lambda: fn(impl), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: fn(impl), number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'case':48s} {'numpy':>12s} {'compiled':>12s} {'speedup':>8s}")
    for name, fn in CASES.items():
        t_py = best(fn, _kernels_py, args.repeat)
        if compiled is None:
            print(f"{name:48s} {t_py * 1e3:10.3f}ms")
            continue
        t_c = best(fn, compiled, args.repeat)
        print(f"{name:48s} {t_py * 1e3:10.3f}ms {t_c * 1e3:10.3f}ms {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
