"""Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the ``SLILASR_NUMBA`` switch does not
matter here. The first numba call (compilation or cache load) is excluded.
"""
import argparse
import timeit

import numpy as np

from slilasr import _accel, kernels


def cases(rng):
    B, T, H = 32, 30, 48
    xp = rng.normal(size=(B, T, 3 * H))
    w_hh = rng.normal(size=(H, 3 * H)) * 0.2
    b_hh = rng.normal(size=3 * H) * 0.1
    lengths = rng.integers(T // 2, T + 1, size=B).astype(np.int64)
    lengths[0] = T
    out, cache = kernels._gru_forward_numpy(xp, w_hh, b_hh, lengths, False)
    dout = rng.normal(size=out.shape)
    logits = rng.normal(size=(28, 14))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    target = rng.integers(1, 14, size=8).astype(np.int64)
    a = rng.integers(2, 14, size=12).astype(np.int64)
    b = rng.integers(2, 14, size=11).astype(np.int64)
    return {
        "gru forward  (B=32 T=30 H=48)": (
            lambda: kernels._gru_forward_numpy(xp, w_hh, b_hh, lengths, False),
            lambda: kernels._gru_forward_numba(xp, w_hh, b_hh, lengths, False)),
        "gru backward (B=32 T=30 H=48)": (
            lambda: kernels._gru_backward_numpy(dout, w_hh, lengths, False, cache),
            lambda: kernels._gru_backward_numba(dout, w_hh, lengths, False, cache)),
        "ctc lattice  (T=28 V=14 m=8)": (
            lambda: kernels._ctc_numpy(lp, target),
            lambda: kernels._ctc_numba(lp, target)),
        "edit distance (12 x 11)": (
            lambda: kernels._edit_distance_numpy(a, b),
            lambda: kernels._edit_distance_numba(a, b)),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _accel.USE_NUMBA:
        print("numba backend unavailable or disabled; nothing to compare")
        return
    print(f"{'kernel':<32}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases(np.random.default_rng(0)).items():
        nb_fn()  # compile / load from cache
        number = 20
        t_np = best_of(np_fn, args.repeat, number)
        t_nb = best_of(nb_fn, args.repeat, number)
        print(f"{name:<32}{1e3 * t_np:>10.3f}ms{1e3 * t_nb:>10.3f}ms{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
