"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs under both backends on identical inputs; the table reports
the best wall time of ``--repeat`` runs and the max absolute difference
between backend outputs.
"""

import argparse
import json
import time

import numpy as np

from frameproj import kernels
from frameproj import tensor as T
from frameproj.data import SyntheticConfig, generate_synthetic_classification
from frameproj.frames import compute_views, morlet_scales
from frameproj.trainer import BundleConfig, TrainConfig, build_bundle, pretrain_loss


def _cases(seed=0):
    rng = np.random.default_rng(seed)
    x2 = rng.standard_normal((64, 8, 48, 64))
    w2 = rng.standard_normal((16, 8, 3, 3))
    gy2 = rng.standard_normal((64, 16, 24, 32))
    x1 = rng.standard_normal((128, 16, 1, 64))
    w1 = rng.standard_normal((32, 16, 1, 5))
    sig = rng.standard_normal((128, 128))
    scales = morlet_scales(48, 1.0, 128.0)

    ds = generate_synthetic_classification(SyntheticConfig(samples_per_class=43), seed)
    batch = ds.batch.subset(np.arange(128))
    spec, scal = compute_views(batch)
    bundle = build_bundle(BundleConfig(), seed)
    cfg = TrainConfig()

    def train_step():
        for p in bundle.pretrain_parameters():
            p.grad = None
        total, *_ = pretrain_loss(bundle, batch.samples, spec.magnitudes, spec.phases, scal.coefficients, cfg)
        T.backward(total)
        return np.concatenate([p.grad.ravel() for p in bundle.pretrain_parameters() if p.grad is not None])

    return {
        "conv2d forward 64x8x48x64 k3 s2": lambda: kernels.conv2d_forward(x2, w2, (2, 2), (1, 1)),
        "conv2d grad input": lambda: kernels.conv2d_backward_input(gy2, w2, (48, 64), (2, 2), (1, 1)),
        "conv2d grad weight": lambda: kernels.conv2d_backward_weight(x2, gy2, (3, 3), (2, 2), (1, 1)),
        "conv1d forward 128x16x64 k5": lambda: kernels.conv2d_forward(x1, w1, (1, 1), (0, 2)),
        "cwt 128 signals x 48 scales": lambda: kernels.cwt_direct(sig, scales, 1.0, 5.0 / (2 * np.pi), 4.0),
        "pretrain step (batch 128)": train_step,
    }


def _best(fn, repeat):
    out = fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    cases = _cases()
    rows = []
    print(f"{'case':<34s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}{'max diff':>12s}")
    for name, fn in cases.items():
        times, outs = {}, {}
        for b in backends:
            kernels.use_backend(b)
            times[b], outs[b] = _best(fn, args.repeat)
        diff = float(np.abs(outs[backends[0]] - outs[backends[-1]]).max()) if len(backends) > 1 else 0.0
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        rows.append({"case": name, "seconds": times, "speedup": speed, "max_abs_diff": diff})
        print(f"{name:<34s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
              + f"{speed:9.2f}x{diff:12.2e}")
    kernels.use_backend("compiled" if "compiled" in backends else "python")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
