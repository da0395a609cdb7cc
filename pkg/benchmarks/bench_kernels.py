"""Time the engine rasterizer under the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py --sizes 32 64 128 --renders 50 --output bench.json

Both backends render identical vectors; the script also checks that their
outputs agree bitwise before reporting timings.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from avatarfit._accel import NUMBA_AVAILABLE
from avatarfit.engine import Engine, build_catalog
from avatarfit.schema import default_schema


def time_backend(engine: Engine, vectors) -> tuple[float, list]:
    engine.render(vectors[0])  # compile / warm caches outside the timed region
    start = time.perf_counter()
    outs = [engine.render(v) for v in vectors]
    return (time.perf_counter() - start) / len(vectors), outs


def main(argv=None) -> dict:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--renders", type=int, default=40)
    ap.add_argument("--supersample", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", default=None, help="optional JSON path for the results")
    args = ap.parse_args(argv)

    schema = default_schema()
    catalog = build_catalog(schema)
    vectors = [schema.random_strict([args.seed, i]) for i in range(args.renders)]
    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    results = []
    for size in args.sizes:
        row = {"size": size, "supersample": args.supersample}
        outs = {}
        for b in backends:
            eng = Engine(schema, catalog, size=size, supersample=args.supersample, backend=b)
            row[f"{b}_ms"], outs[b] = time_backend(eng, vectors)
            row[f"{b}_ms"] *= 1e3
        if len(backends) == 2:
            row["identical"] = all(np.array_equal(a.image, b.image) and np.array_equal(a.segmentation, b.segmentation)
                                   for a, b in zip(outs["numpy"], outs["numba"]))
            row["speedup"] = row["numpy_ms"] / row["numba_ms"]
        results.append(row)
        print("  ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)
    if args.output:
        with open(args.output, "w") as f:
            json.dump(results, f, indent=1)
    return {"results": results}


if __name__ == "__main__":
    main()
