"""Time the compiled and numpy kernels on the operations used by training.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import sys
import timeit

import numpy as np

from minimaxdnn import kernels
from minimaxdnn.network import NetworkArch, glorot_init


def make_problem(L, width, batch, seed=0):
    rng = np.random.default_rng(seed)
    arch = NetworkArch.uniform(16, L, width, s=width * width, B=2.0)
    net = glorot_init(arch, rng)
    X = rng.uniform(size=(batch, 16))
    y = np.where(rng.uniform(size=batch) < 0.5, 1.0, -1.0)
    return arch, [w.copy() for w in net.weights], [v.copy() for v in net.shifts], X, y


def bench(backend, L, width, batch, repeat):
    k = kernels.get_backend(backend)
    arch, ws, vs, X, y = make_problem(L, width, batch)
    s = max(1, width * width // 10)

    def step():
        _, gw, gv = k.hinge_risk_grad(ws, vs, X, y, arch.B, None)
        for p, g in zip(ws + vs, gw + gv):
            p -= 1e-3 * g
            k.clip_prune(p, s, arch.B)

    step()
    t = min(timeit.repeat(step, number=50, repeat=repeat)) / 50
    f = min(timeit.repeat(lambda: k.forward_batch(ws, vs, X, arch.B), number=50, repeat=repeat)) / 50
    return t, f


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy backend only", file=sys.stderr)
    print("L,width,batch,backend,train_step_us,forward_us")
    cases = [(7, 16, 32), (10, 16, 32), (10, 32, 32), (10, 16, 1024)]
    for L, width, batch in cases:
        res = {}
        for b in backends:
            res[b] = bench(b, L, width, batch, args.repeat)
            print(f"{L},{width},{batch},{b},{res[b][0] * 1e6:.1f},{res[b][1] * 1e6:.1f}")
        if len(res) == 2:
            sp = res["python"][0] / res["cython"][0]
            print(f"# speedup of compiled train step: {sp:.2f}x", file=sys.stderr)


if __name__ == "__main__":
    main()
