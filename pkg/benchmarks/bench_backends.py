"""Numba vs pure-numpy kernels, then a full forward/backward step per backend.

    python3 benchmarks/bench_backends.py [--repeat N]

Kernel timings call both backend modules directly. The end-to-end timing runs
in a subprocess per backend so ``SHOTNET_PURE_NUMPY`` selects the kernels the
way it does for users.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from shotnet.kernels import _numba, _numpy

STEP_SNIPPET = """
import json, timeit, numpy as np
from shotnet import kernels, net
from shotnet.tensor import Tape, sigmoid_xent_loss
cfg = net.ModelConfig(filters=(4, 4, 4), proj_dim=16, sim_dim=16, hidden=32)
params = net.init_params(cfg, 0)
x = np.random.default_rng(0).random((4, 40, 9, 16, 3)).astype(np.float32)
y = np.zeros((4, 40))
def step():
    with Tape() as tape:
        s, a = net.forward(x, params, cfg, training=True)
        loss = sigmoid_xent_loss(s, y, 5.0)
    tape.backward(loss)
step()
best = min(timeit.repeat(step, number=1, repeat={repeat}))
print(json.dumps({{"backend": kernels.BACKEND, "seconds": best}}))
"""


def _kernel_cases(rng):
    x2 = rng.random((160, 27, 48, 3)).astype(np.float32)
    w2 = rng.standard_normal((3, 3, 3, 16)).astype(np.float32)
    b2 = np.zeros(16, np.float32)
    dy2 = rng.standard_normal((160, 27, 48, 16)).astype(np.float32)
    x1 = rng.random((4, 40, 27 * 48, 16)).astype(np.float32)
    w1 = rng.standard_normal((3, 16, 16)).astype(np.float32)
    b1 = np.zeros(16, np.float32)
    dy1 = rng.standard_normal((4, 40, 27 * 48, 16)).astype(np.float32)
    px = rng.random((400, 27 * 48, 3)).astype(np.float32)
    return {
        "conv2d_forward": lambda m: m.conv2d_forward(x2, w2, b2),
        "conv2d_backward": lambda m: m.conv2d_backward(x2, w2, dy2),
        "conv1d_forward d=4": lambda m: m.conv1d_forward(x1, w1, b1, 4),
        "conv1d_backward d=4": lambda m: m.conv1d_backward(x1, w1, dy1, 4),
        "rgb_histogram": lambda m: m.rgb_histogram(px),
    }


def bench_kernels(repeat):
    rows = []
    for name, fn in _kernel_cases(np.random.default_rng(0)).items():
        fn(_numba)  # compile
        times = {}
        for mod in (_numpy, _numba):
            times[mod] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat))
        rows.append((name, times[_numpy], times[_numba]))
    return rows


def bench_step(backend, repeat):
    env = dict(os.environ)
    env.pop("SHOTNET_PURE_NUMPY", None)
    if backend == "numpy":
        env["SHOTNET_PURE_NUMPY"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, t_np, t_nb in bench_kernels(args.repeat):
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")

    print()
    print("training step, micro model, batch 4 x 40 frames at 9x16")
    steps = {b: bench_step(b, args.repeat) for b in ("numpy", "numba")}
    for b, r in steps.items():
        print(f"  {r['backend']:<8}{r['seconds'] * 1e3:>10.1f} ms")
    print(f"  speed-up {steps['numpy']['seconds'] / steps['numba']['seconds']:.2f}x")


if __name__ == "__main__":
    main()
