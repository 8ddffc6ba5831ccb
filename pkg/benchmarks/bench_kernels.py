"""Time the numba and pure-numpy paths of every kernel on stereo-sized inputs.

    python3 benchmarks/bench_kernels.py --height 64 --width 128 --repeat 5
"""

import argparse
import timeit

import numpy as np

from lrdstereo import kernels
from lrdstereo import _accel


def cases(h, w, rng):
    disp = rng.random((h, w)) * 12
    img = rng.random((h, w, 3))
    valid = rng.random((h, w)) > 0.05
    return {
        "resample_bilinear": (kernels.resample_bilinear, (disp, valid, h // 4, w // 4)),
        "warp_rows": (kernels.warp_rows, (img, disp, -1)),
        "occlusion_mask": (kernels.occlusion_mask, (disp, -1, 0.5)),
        "block_match": (kernels.block_match, (img, np.roll(img, -3, axis=1), 16, 2, 2)),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--height", type=int, default=64)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    print(f"{args.height}x{args.width}, best of {args.repeat}; numba available: {_accel.numba is not None}")
    print(f"{'kernel':20s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fn, call_args) in cases(args.height, args.width, rng).items():
        fn.loop_impl(*call_args)  # compile outside the timed region
        t_loop = min(timeit.repeat(lambda: fn.loop_impl(*call_args), number=1, repeat=args.repeat))
        t_np = min(timeit.repeat(lambda: fn.numpy_impl(*call_args), number=1, repeat=args.repeat))
        print(f"{name:20s} {1e3 * t_loop:10.3f} {1e3 * t_np:10.3f} {t_np / t_loop:7.1f}x")


if __name__ == "__main__":
    main()
