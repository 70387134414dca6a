"""Time ancestral sampling on the Barcelona-shaped merged network."""
import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from popsynth.bayesnet import read_model, sample
from popsynth.pipeline import Pipeline, load_config
from popsynth.scenario import write_barcelona


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1_600_000)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--dest", default=None)
    args = ap.parse_args()
    dest = Path(args.dest or tempfile.mkdtemp(prefix="popsynth_bcn_"))
    pipe = Pipeline(load_config(write_barcelona(dest)))
    pipe.run("ingest")
    pipe.run("merge")
    net = read_model(pipe.model_path)
    print(f"{len(net.nodes)} nodes, {len(net.structure.edges)} edges")
    ref = None
    for w in args.workers:
        t0 = time.perf_counter()
        d = sample(net, args.n, 1, workers=w)
        dt = time.perf_counter() - t0
        same = "" if ref is None else f"  identical to first run: {np.array_equal(d, ref)}"
        ref = d if ref is None else ref
        print(f"workers={w}: {args.n} individuals in {dt:.2f}s ({args.n / dt:,.0f}/s){same}")


if __name__ == "__main__":
    main()
