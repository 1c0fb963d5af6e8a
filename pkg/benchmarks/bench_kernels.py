"""Numba vs plain-numpy timings for the model kernels.

Each path runs in its own interpreter because RISKMT_DISABLE_NUMBA is read at
import time. Usage:

    python benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
import numpy as np
from riskmt._jit import USING_NUMBA
from riskmt.model import ModelConfig, Seq2Seq, Vocab

repeats = int(sys.argv[1])
vocab = Vocab([f"w{i}" for i in range(40)])
model = Seq2Seq(ModelConfig(len(vocab), 16, 32, max_len=24, seed=0, init_scale=0.3), vocab)
rng = np.random.default_rng(0)
srcs = [tuple(f"w{i}" for i in rng.integers(0, 40, 8)) for _ in range(32)]
tgts = [tuple(f"w{i}" for i in rng.integers(0, 40, 8)) for _ in range(32)]
src_ids = [model.ids(s) for s in srcs]
tgt_ids = [model.ids(t) for t in tgts]

def grad():
    g = model.params.zeros_like()
    model.batch_log_prob(src_ids, tgt_ids, grad=g)

def sample():
    for s in srcs[:8]:
        model.sample(s, 0.3, rng, n=8)

def beam():
    for s in srcs[:8]:
        model.beam_search(s, 4)

# warm-up (includes compilation when numba is on)
t0 = time.perf_counter()
grad(); sample(); beam()
warm = time.perf_counter() - t0
out = {"numba": USING_NUMBA, "warmup_s": warm}
for name, fn in (("grad_32_pairs", grad), ("sample_8x8", sample), ("beam4_8", beam)):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def run(disable: bool, repeats: int) -> dict:
    env = dict(os.environ)
    env["RISKMT_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    t0 = time.time()
    fast = run(False, args.repeats)
    slow = run(True, max(1, args.repeats // 5))
    print(f"{'kernel':<16}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for key in ("grad_32_pairs", "sample_8x8", "beam4_8"):
        print(f"{key:<16}{fast[key]:>12.4f}{slow[key]:>12.4f}{slow[key] / fast[key]:>9.1f}x")
    print(f"numba warm-up (compile or cache load): {fast['warmup_s']:.2f}s; "
          f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
