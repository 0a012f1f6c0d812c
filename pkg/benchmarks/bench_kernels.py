"""Compare the compiled and numpy kernel backends on evaluation-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is timed on both backends (best of N) and the outputs are checked
for bit equality.
"""

import argparse
import json
import timeit

import numpy as np

from natrobust.distortions import gaussian_kernel
from natrobust.image import _bilinear_axis, _box_axis
from natrobust.kernels import BACKENDS


def cases(rng):
    frame = rng.random((240, 320, 3))
    crop = rng.random((224, 224, 3))
    a = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    hsv = np.column_stack([rng.random(224 * 224) * 360, rng.random(224 * 224), rng.random(224 * 224)])
    return {
        "linf_u8 224x224": ("linf_u8", (a, b)),
        "blur sigma=2 224x224": ("blur_separable", (crop, gaussian_kernel(2.0))),
        "blur sigma=4 224x224": ("blur_separable", (crop, gaussian_kernel(4.0))),
        "bilinear 320x240->341x256": ("resize_bilinear",
                                      (frame, *_bilinear_axis(240, 256), *_bilinear_axis(320, 341))),
        "box 224->16": ("resize_box", (crop, *_box_axis(224, 16), *_box_axis(224, 16))),
        "rgb_to_hsv 50k px": ("rgb_to_hsv", (crop.reshape(-1, 3),)),
        "hsv_to_rgb 50k px": ("hsv_to_rgb", (hsv,)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    if "cython" not in BACKENDS:
        print("compiled backend not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':30s} {'backend':8s} {'ms/call':>10s} {'speedup':>8s} equal")
    for name, (fn, inputs) in cases(rng).items():
        times, outs = {}, {}
        for backend, mod in BACKENDS.items():
            f = getattr(mod, fn)
            outs[backend] = f(*inputs)
            t = min(timeit.repeat(lambda: f(*inputs), repeat=args.repeat, number=args.number))
            times[backend] = 1000 * t / args.number
        ref = outs["python"]
        for backend in BACKENDS:
            equal = np.array_equal(np.asarray(outs[backend]), np.asarray(ref))
            speedup = times["python"] / times[backend]
            print(f"{name:30s} {backend:8s} {times[backend]:10.3f} {speedup:7.1f}x {equal}")
            rows.append({"kernel": name, "backend": backend, "ms_per_call": times[backend],
                         "speedup_vs_python": speedup, "bit_equal": bool(equal)})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
