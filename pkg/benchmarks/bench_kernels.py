"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on message-passing sized inputs, then a full encoder
forward/backward pass over the planted benchmark set, once per backend.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from molcpt import kernels
from molcpt import ndiff as nd
from molcpt.encoder import GraphBatch, encode_batch, init_encoder
from molcpt.synthetic import planted_dataset


def kernel_cases(rng: np.random.Generator):
    n_edges, n_nodes, d = 20000, 8000, 64
    src = rng.normal(size=(n_edges, d))
    idx = rng.integers(0, n_nodes, n_edges)
    seg_scores = rng.normal(size=(5000, 4))
    seg = np.sort(rng.integers(0, 600, 5000))
    # a long chain with a ring every few atoms: mixes bridges and ring bonds
    a, b = [], []
    for i in range(3999):
        a.append(i)
        b.append(i + 1)
        if i % 6 == 5:
            a.append(i)
            b.append(i - 5)
    return {
        "scatter_add_rows": lambda: kernels.scatter_add_rows(src, idx, n_nodes),
        "segment_max": lambda: kernels.segment_max(seg_scores, seg, 600),
        "bridge_mask": lambda: kernels.bridge_mask(4000, a, b),
    }


def encoder_case():
    graphs = planted_dataset().graphs
    enc = init_encoder(64, 5, seed=0)
    batch = GraphBatch.from_graphs(graphs)
    params = enc.tensors()

    def step():
        loss = nd.sum(encode_batch(batch, enc).graph)
        nd.backward(loss, params)

    return step


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    cases = kernel_cases(np.random.default_rng(0))
    cases["encoder fwd+bwd (200 mols)"] = encoder_case()
    backends = [name for name in ("cython", "python") if name in kernels.AVAILABLE]
    print(f"{'case':32s}" + "".join(f"{b:>14s}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        times = []
        for backend in backends:
            with kernels.use_backend(backend):
                fn()
                times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
        row = f"{name:32s}" + "".join(f"{t * 1e3:12.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
