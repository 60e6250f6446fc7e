"""Compiled vs pure-Python kernel timings.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]

Times the MPO sweep (``W^T v`` over a batch), the sigmoid, Bernoulli sampling
and one full Gibbs step of an MPO-RBM for several sizes, once per backend,
and reports the median wall time and the speed-up of the compiled kernels.
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from tnrbm import _backend
from tnrbm.models import model_for, sample_layer

CASES = [
    # visible dims, hidden dims, interior rank, batch
    ((28, 28), (10, 10), 1, 10),
    ((28, 28), (10, 10), 40, 10),
    ((28, 28), (10, 10), 40, 100),
    ((4, 7, 4, 7), (2, 5, 2, 5), 8, 10),
]


def _sweep_args(m, batch, rng):
    mats, shapes = [], []
    for c in m.mpo.cores:
        r, i, j, rn = c.shape
        mats.append(np.ascontiguousarray(c).reshape(r * i, j * rn))
        shapes.append((r, i, j, rn))
    state = rng.integers(0, 2, size=(batch, int(np.prod(m.visible_dims)))).astype(np.float64)
    return state, mats, shapes


def _time(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _gibbs_step(m, v, rng):
    h = sample_layer(m.cond_hidden(v), rng)
    return sample_layer(m.cond_visible(h), rng)


def run(repeat):
    backends = ["python"] + (["compiled"] if _backend._ckernels is not None else [])
    rows = []
    for vis, hid, rank, batch in CASES:
        ranks = (1,) + (rank,) * (len(vis) - 1) + (1,)
        m = model_for("mporbm", vis, hid, ranks, scale=0.01, seed=0)
        rng = np.random.default_rng(0)
        state, mats, shapes = _sweep_args(m, batch, rng)
        x = rng.normal(size=(batch,) + vis)
        u = rng.random((batch,) + vis)
        v = (u < 0.5).astype(np.float64)
        label = f"{'x'.join(map(str, vis))}->{'x'.join(map(str, hid))} R={rank} N={batch}"
        timings = {}
        for name in backends:
            k = _backend.load(name)
            timings[("sweep", name)] = _time(lambda: k.sweep(state, mats, shapes), repeat)
            timings[("sigmoid", name)] = _time(lambda: k.sigmoid(x), repeat)
            timings[("bernoulli", name)] = _time(lambda: k.bernoulli(u, u), repeat)
            saved = (_backend.sweep, _backend.sigmoid, _backend.bernoulli)
            _backend.sweep, _backend.sigmoid, _backend.bernoulli = k.sweep, k.sigmoid, k.bernoulli
            try:
                grng = np.random.default_rng(1)
                timings[("gibbs", name)] = _time(lambda: _gibbs_step(m, v, grng), repeat)
            finally:
                _backend.sweep, _backend.sigmoid, _backend.bernoulli = saved
        for kernel in ("sweep", "sigmoid", "bernoulli", "gibbs"):
            py = timings[(kernel, "python")]
            comp = timings.get((kernel, "compiled"), float("nan"))
            rows.append((label, kernel, py * 1e6, comp * 1e6, py / comp))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--csv", help="also write the table as CSV")
    args = parser.parse_args(argv)
    if _backend._ckernels is None:
        print("compiled extension not built; timing the python backend only", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'case':34s} {'kernel':10s} {'python us':>12s} {'compiled us':>12s} {'speed-up':>9s}")
    for label, kernel, py, comp, ratio in rows:
        print(f"{label:34s} {kernel:10s} {py:12.1f} {comp:12.1f} {ratio:9.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["case", "kernel", "python_us", "compiled_us", "speedup"])
            writer.writerows(rows)


if __name__ == "__main__":
    main()
