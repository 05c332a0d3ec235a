"""Scratch: tune acceptance criterion 4/5 families. Delete before commit."""

import sys
import time

import numpy as np

sys.path.insert(0, "tests")
from conftest import chain_1d, make_spec

from nlbab import RunConfig, bab_verify, build_table
from nlbab.oracle import OracleConfig, grid_min_1d

t0 = time.time()
table = build_table(["sin", "sigmoid", "gelu"], lu_range=(-9.0, 9.0), step=0.5)
print(f"table build: {time.time() - t0:.1f}s", flush=True)


def c4_instances():
    rng = np.random.default_rng(4400)
    out = []
    for _ in range(25):
        a = float(rng.uniform(1.5, 5.5))
        b = float(rng.uniform(0.0, np.pi))
        out.append(("sin", chain_1d(["sin"], [a], [b])))
    for _ in range(25):
        a1 = float(rng.uniform(1.0, 2.5) * rng.choice([-1.0, 1.0]))
        b1 = float(rng.uniform(-1.5, 1.5))
        a2 = float(rng.uniform(0.8, 1.8) * rng.choice([-1.0, 1.0]))
        b2 = float(rng.uniform(-1.0, 1.0))
        out.append(("gelu", chain_1d(["gelu", "gelu"], [a1, a2], [b1, b2])))
    return out


t0 = time.time()
ok = 0
stats = []
for i, (kind, g) in enumerate(c4_instances()):
    spec0 = make_spec([0.0], 1.0, [[1.0]], [0.0])
    m = grid_min_1d(g, spec0)
    spec = make_spec([0.0], 1.0, [[1.0]], [1e-3 - m])
    cfg = RunConfig(timeout=120, max_domains=10_000, heuristic="bbps",
                    branch_points=table, alpha_iters=20, seed=0, serial=True)
    t1 = time.time()
    rep = bab_verify(g, spec, cfg)
    dt = time.time() - t1
    good = rep.status == "verified" and rep.domains < 10_000
    ok += good
    stats.append((dt, rep.domains, kind, rep.status))
    print(f"  [{i}] {kind}: {rep.status} domains={rep.domains} {dt:.1f}s",
          flush=True)
print(f"c4: {ok}/50 verified, total {time.time() - t0:.1f}s")
stats.sort(reverse=True)
print("slowest:", [(f"{d:.1f}s", n, k, s) for d, n, k, s in stats[:5]])
