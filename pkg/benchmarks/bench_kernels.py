"""Benchmark: compiled kernel backend vs pure-Python fallback.

Times the hot kernels on training-typical shapes and a full incremental run
through each backend, and verifies both backends produce bit-identical
numbers (they share accumulation order by construction).

Usage:
    python benchmarks/bench_kernels.py            # full comparison
    python benchmarks/bench_kernels.py --quick    # smaller end-to-end run
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from array import array

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cilbench._kernels import _purepy  # noqa: E402
from cilbench.prng import SplitMix64  # noqa: E402

try:
    from cilbench._kernels import _fastk
except ImportError:
    _fastk = None


def _buf(rng, n):
    return array("d", [rng.next_uniform(-1.0, 1.0) for _ in range(n)])


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels() -> None:
    rng = SplitMix64(7)
    n, k, m = 64, 16, 32          # batch x input -> hidden, training-typical
    a, b = _buf(rng, n * k), _buf(rng, k * m)
    logits = _buf(rng, n * m)
    w = _buf(rng, k * m)
    g = _buf(rng, k * m)

    cases = {
        "matmul 64x16x32": lambda impl: impl.matmul(a, b, array("d", bytes(8 * n * m)), n, k, m),
        "softmax_rows 64x32": lambda impl: impl.softmax_rows(
            logits, array("d", bytes(8 * n * m)), array("d", bytes(8 * n)), n, m),
        "sgd_update 512": lambda impl: impl.sgd_update(
            array("d", w), g, array("d", bytes(8 * k * m)), k * m, 0.1, 0.9),
        "relu 2048": lambda impl: impl.relu(logits, array("d", bytes(8 * n * m)), n * m),
    }
    backends = [("pure", _purepy)] + ([("fast", _fastk)] if _fastk else [])
    print(f"{'kernel':22s}" + "".join(f"{name:>12s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, call in cases.items():
        times = [_time(lambda impl=impl: call(impl), repeats=30) for _, impl in backends]
        row = f"{label:22s}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)

    if _fastk is not None:
        out_py = array("d", bytes(8 * n * m))
        out_c = array("d", bytes(8 * n * m))
        _purepy.matmul(a, b, out_py, n, k, m)
        _fastk.matmul(a, b, out_c, n, k, m)
        assert out_py.tobytes() == out_c.tobytes(), "backends disagree!"
        print("matmul outputs bit-identical across backends: ok")


END_TO_END = {
    "method": "memo",
    "seed": 3,
    "probes": {"enabled": False},
}

QUICK = {
    "dataset": {"classes": 6, "train_per_class": 30, "test_per_class": 10},
    "split": {"x": 0, "y": 2},
    "learner": {"epochs": 10},
}


def bench_end_to_end(quick: bool) -> None:
    cfg = dict(END_TO_END)
    if quick:
        cfg.update(QUICK)
    results = {}
    for backend in ("pure", "fast") if _fastk else ("pure",):
        env = dict(os.environ, CILBENCH_KERNELS=backend)
        code = (
            "import json, sys, time\n"
            "from cilbench.runner import run_experiment\n"
            "cfg = json.loads(sys.argv[1])\n"
            "t0 = time.perf_counter()\n"
            "rec = run_experiment(cfg)\n"
            "print(json.dumps({'wall': time.perf_counter() - t0, "
            "'accs': rec.stage_accuracies}))\n"
        )
        out = subprocess.run([sys.executable, "-c", code, json.dumps(cfg)],
                             capture_output=True, text=True, env=env, check=True)
        results[backend] = json.loads(out.stdout)
        print(f"end-to-end run ({backend:4s} backend): {results[backend]['wall']:.2f}s")
    if len(results) == 2:
        assert results["pure"]["accs"] == results["fast"]["accs"], \
            "backends must produce identical trajectories"
        print("stage accuracies identical across backends: ok "
              f"(speedup {results['pure']['wall'] / results['fast']['wall']:.1f}x)")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller end-to-end run")
    args = parser.parse_args()
    if _fastk is None:
        print("note: compiled backend unavailable; timing the fallback only")
    bench_kernels()
    print()
    bench_end_to_end(args.quick)
