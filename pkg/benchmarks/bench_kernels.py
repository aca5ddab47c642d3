"""Compare the compiled segment kernels against the numpy fallback.

Times the three hot per-edge operations on realistic flattened-batch sizes
(a 256-sequence batch yields a few thousand nodes and tens of thousands of
edges per relation), then a full training step with whichever backend the
package selected. Run the step benchmark under both backends via:

    python benchmarks/bench_kernels.py
    DEMINET_KERNELS=numpy python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from deminet import kernels
from deminet.kernels import numpy_backend

try:
    from deminet.kernels import _segment as cython_backend
except ImportError:
    cython_backend = None


def _time(fn, *args, repeat=30):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(num_nodes=5000, num_edges=60000, d=4, seed=0):
    rng = np.random.default_rng(seed)
    seg = np.sort(rng.integers(0, num_nodes, size=num_edges)).astype(np.int64)
    scores = rng.normal(size=num_edges)
    rows = rng.normal(size=(num_edges, d))
    grad = rng.normal(size=num_edges)

    backends = [("numpy", numpy_backend)]
    if cython_backend is not None:
        backends.append(("cython", cython_backend))

    print(f"kernel timings: {num_edges} edges, {num_nodes} segments, d={d} (best of 30)")
    results = {}
    for name, impl in backends:
        alpha = impl.edge_softmax_fwd(scores, seg, num_nodes)
        times = {
            "edge_softmax_fwd": _time(impl.edge_softmax_fwd, scores, seg, num_nodes),
            "edge_softmax_bwd": _time(impl.edge_softmax_bwd, alpha, grad, seg, num_nodes),
            "segment_sum_rows": _time(impl.segment_sum_rows, rows, seg, num_nodes),
        }
        results[name] = times
        for op, t in times.items():
            print(f"  {name:>6} {op:<18} {t * 1e6:9.1f} us")
    if "cython" in results:
        for op in results["numpy"]:
            ratio = results["numpy"][op] / results["cython"][op]
            print(f"  speedup {op:<18} {ratio:5.1f}x")

    # agreement between the two implementations
    if cython_backend is not None:
        a1 = numpy_backend.edge_softmax_fwd(scores, seg, num_nodes)
        a2 = cython_backend.edge_softmax_fwd(scores, seg, num_nodes)
        print(f"  max |numpy - cython| edge_softmax: {np.abs(a1 - a2).max():.3e}")


def bench_train_step(batch_size=256, steps=5):
    from deminet.data import build_samples, build_vocab, synth_generate, temporal_split
    from deminet.model import DemiNet, ModelConfig, encode_batch
    from deminet.rng import stream_rng
    from deminet.training import Adam, TrainHyper, train_step

    log, _ = synth_generate(300, 500, 8, 50, 0.1, stream_rng(7, "data"))
    train_log, _, _ = temporal_split(log, 0.8)
    vocab = build_vocab(log)
    samples = build_samples(train_log, vocab, 20, 5, 1, stream_rng(7, "negatives"))
    cfg = ModelConfig(num_items=vocab.num_items, num_categories=vocab.num_categories)
    model = DemiNet(cfg, stream_rng(7, "init"))
    opt = Adam(model.named_parameters())
    hyper = TrainHyper()
    rngs = (stream_rng(7, "dropout-view-1"), stream_rng(7, "dropout-view-2"))
    batch = encode_batch(samples[:batch_size])
    train_step(batch, model, opt, hyper, rngs)  # warm up
    t0 = time.perf_counter()
    for _ in range(steps):
        train_step(batch, model, opt, hyper, rngs)
    per_step = (time.perf_counter() - t0) / steps
    print(f"train step ({kernels.BACKEND} backend, batch {batch_size}): {per_step * 1e3:.0f} ms")


if __name__ == "__main__":
    bench_kernels()
    print()
    bench_train_step()
