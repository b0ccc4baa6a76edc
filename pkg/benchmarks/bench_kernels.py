"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Shapes follow the desk-scale depth net (batch 4, 64x32 frames). Each row
reports the best of ``--repeat`` runs and checks that both backends agree.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from advdepth.tensor.kernels import available_backends, get_backend


def cases(rng):
    x = rng.normal(size=(4, 3, 32, 64))
    w1 = rng.normal(size=(16, 3, 3, 3))
    h = rng.normal(size=(4, 32, 16, 32))
    w2 = rng.normal(size=(32, 32, 3, 3))
    img = rng.uniform(size=(4, 3, 32, 64))
    v, u = np.mgrid[0:32, 0:64].astype(np.float64)
    coords = np.stack([u - 1.3 + 0.2 * rng.normal(size=u.shape), v + 0.1 * rng.normal(size=v.shape)])
    coords = np.ascontiguousarray(np.broadcast_to(coords, (4, 2, 32, 64)))

    def conv_fwd(k, x=x, w=w1):
        return k.conv2d_forward(x, w, 1, 1)

    def conv_bwd(k, x=x, w=w1):
        return k.conv2d_backward(x, w, np.ones((4, 16, 32, 64)), 1, 1)

    def conv_fwd_s2(k):
        return k.conv2d_forward(h, w2, 2, 1)

    def conv_bwd_s2(k):
        return k.conv2d_backward(h, w2, np.ones((4, 32, 8, 16)), 2, 1)

    def bil_fwd(k):
        return k.bilinear_forward(img, coords)

    def bil_bwd(k):
        return k.bilinear_backward(img, coords, np.ones((4, 3, 32, 64)))

    return {
        "conv2d_forward 3->16 s1": conv_fwd,
        "conv2d_backward 3->16 s1": conv_bwd,
        "conv2d_forward 32->32 s2": conv_fwd_s2,
        "conv2d_backward 32->32 s2": conv_bwd_s2,
        "bilinear_forward": bil_fwd,
        "bilinear_backward": bil_bwd,
    }


def _flat(out):
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=np.float64).ravel() for o in out]
    return [np.asarray(out, dtype=np.float64).ravel()]


def run(repeat=5, number=3):
    backends = available_backends()
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        outs = {}
        for b in backends:
            k = get_backend(b)
            outs[b] = _flat(fn(k))
            t = min(timeit.repeat(lambda: fn(k), repeat=repeat, number=number)) / number
            row[b] = t
        if len(outs) == 2:
            a, c = outs["cython"], outs["python"]
            row["max_abs_diff"] = max(float(np.abs(p - q).max()) for p, q in zip(a, c))
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
    return backends, rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=3)
    p.add_argument("--json", help="write the results here as JSON")
    args = p.parse_args(argv)
    backends, rows = run(args.repeat, args.number)
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)
    head = f"{'kernel':28s}" + "".join(f"{b + ' ms':>12s}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10s}{'max diff':>11s}"
    print(head)
    for r in rows:
        line = f"{r['kernel']:28s}" + "".join(f"{r[b] * 1e3:12.3f}" for b in backends)
        if "speedup" in r:
            line += f"{r['speedup']:9.1f}x{r['max_abs_diff']:11.1e}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
