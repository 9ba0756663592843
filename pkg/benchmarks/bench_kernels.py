"""Compiled kernels vs the numpy fallback on the operations that use them.

Each backend runs in its own interpreter (the backend is fixed at import),
times the same seeded workloads and hashes the results, so the table also
shows that both backends produce identical output.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def workloads():
    import numpy as np

    from fxfusion import net
    from fxfusion.forest import ForestParams, fit_forest, predict
    from fxfusion.synth import gen_topic_corpus
    from fxfusion.topics import fit_lda

    rng = np.random.default_rng(0)
    X = rng.normal(size=(315, 20))
    y = X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.1 * rng.normal(size=315)
    bags, _ = gen_topic_corpus(300, 3, seed=0)
    forest = fit_forest(X, y, ForestParams(n_trees=20, seed=0))
    samples = [net.WindowSample(rng.uniform(size=(14, 3)), float(t), i) for i, t in enumerate(rng.uniform(size=250))]

    def lda():
        return fit_lda(bags, 4, 50, seed=0).phi

    def forest_fit():
        return predict(fit_forest(X, y, ForestParams(n_trees=20, seed=0)), X)

    def forest_predict():
        return predict(forest, np.tile(X, (10, 1)))

    def lstm_train():
        cfg = net.ModelConfig(hidden=32, fc=16, dropout=0.1, batch=32, epochs=5, patience=None)
        return net.train(samples, cfg).params["out_W"]

    return {"lda 300 docs, K=4, 50 sweeps": lda,
            "forest fit 20 trees, 315x20": forest_fit,
            "forest predict 3150 rows": forest_predict,
            "bi-lstm 5 epochs, 250 windows": lstm_train}


def child(repeat):
    import numpy as np

    from fxfusion._kernels import BACKEND

    out = {"backend": BACKEND, "results": {}}
    for name, fn in workloads().items():
        best = float("inf")
        for _ in range(repeat):
            start = time.perf_counter()
            value = fn()
            best = min(best, time.perf_counter() - start)
        digest = hashlib.sha256(np.ascontiguousarray(value).tobytes()).hexdigest()[:12]
        out["results"][name] = {"seconds": best, "digest": digest}
    print(json.dumps(out))


def run_backend(pure, repeat):
    env = dict(os.environ)
    env.pop("FXFUSION_PURE_PYTHON", None)
    if pure:
        env["FXFUSION_PURE_PYTHON"] = "1"
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="best of N runs per workload")
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child(args.repeat)
        return
    compiled = run_backend(False, args.repeat)
    python = run_backend(True, args.repeat)
    if compiled["backend"] != "cython":
        print("compiled kernels are not built; only the fallback is available")
    print(f"{'workload':34s} {compiled['backend']:>10s} {python['backend']:>10s} {'speedup':>8s}  same output")
    for name, c in compiled["results"].items():
        p = python["results"][name]
        same = "yes" if c["digest"] == p["digest"] else "NO"
        print(f"{name:34s} {c['seconds']:9.3f}s {p['seconds']:9.3f}s {p['seconds'] / c['seconds']:7.1f}x  {same}")


if __name__ == "__main__":
    main()
