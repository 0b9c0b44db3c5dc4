"""Compare the compiled and pure-Python convolution kernels.

Times im2col, col2im and one full conv forward/backward step of the
saliency64 network on both backends:

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 8]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from evosynth import kernels

# (channels, size, kernel, stride) of the saliency64 conv layers
SHAPES = [
    (3, 64, 9, 1),
    (12, 64, 7, 2),
    (16, 32, 7, 1),
    (24, 64, 7, 1),
    (11, 64, 15, 1),
]


def bench_kernel(backend, batch, repeat):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(0)
    total_fwd = total_bwd = 0.0
    for c, size, kk, s in SHAPES:
        pad = kk // 2
        hp = size + 2 * pad
        out = (hp - kk) // s + 1
        xp = rng.random((batch, c, hp, hp), dtype=np.float32)
        cols = rng.random((batch * out * out, c * kk * kk), dtype=np.float32)
        total_fwd += min(timeit.repeat(lambda: k.im2col(xp, kk, kk, s, out, out), number=1, repeat=repeat))
        total_bwd += min(timeit.repeat(lambda: k.col2im(cols, batch, c, hp, hp, kk, kk, s, out, out),
                                       number=1, repeat=repeat))
    return total_fwd, total_bwd


def bench_train_step(batch, repeat):
    """One SGD step of the saliency64 net with whichever backend is active."""
    code = f"""
import timeit, numpy as np
from evosynth import kernels, nn
from evosynth.config import load_config
cfg = load_config({os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'configs', 'saliency64.ini')!r})
net = nn.initialize(cfg.template(), 0)
rng = np.random.default_rng(0)
x = rng.random(({batch}, 3, 64, 64), dtype=np.float32)
y = (rng.random(({batch}, 1, 64, 64)) > 0.7).astype(np.float32)
t = min(timeit.repeat(lambda: nn.loss_and_gradients(net, x, y, "bce"), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""
    results = {}
    for backend in kernels.available_backends():
        env = dict(os.environ, EVOSYNTH_PURE_PYTHON="1" if backend == "python" else "0")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, t = out.stdout.split()
        results[name] = float(t)
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"batch {args.batch}, best of {args.repeat}")
    print(f"{'backend':<8} {'im2col s':>10} {'col2im s':>10} {'step s':>10}")
    steps = bench_train_step(args.batch, max(1, args.repeat // 2))
    rows = {}
    for b in backends:
        f, g = bench_kernel(b, args.batch, args.repeat)
        rows[b] = (f, g, steps[b])
        print(f"{b:<8} {f:>10.4f} {g:>10.4f} {steps[b]:>10.4f}")
    if len(rows) == 2:
        c, p = rows["cython"], rows["python"]
        print(f"speedup  {p[0] / c[0]:>9.2f}x {p[1] / c[1]:>9.2f}x {p[2] / c[2]:>9.2f}x")


if __name__ == "__main__":
    main()
