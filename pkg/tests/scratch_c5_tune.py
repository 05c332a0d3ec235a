"""Scratch: tune acceptance criterion 5 family + cap. Delete before commit."""

import sys
import time

import numpy as np

sys.path.insert(0, "tests")
from conftest import make_graph, make_spec

from nlbab import AlphaStore, BetaStore, Domain, RunConfig, bab_verify, build_table
from nlbab.bab import compute_intermediate_bounds
from nlbab.oracle import OracleConfig, sampled_min
from nlbab.paramopt import optimize_parameters


def net_graph(rng, kind, width, wscale):
    nodes = [{"id": "x", "op": "input"}]
    prev, pw = "x", 2
    for k in range(2):
        W = rng.uniform(-wscale, wscale, (width, pw)).round(6)
        b = rng.uniform(-0.5, 0.5, width).round(6)
        nodes.append({"id": f"z{k}", "op": "affine", "inputs": [prev],
                      "weight": W.tolist(), "bias": b.tolist()})
        nodes.append({"id": f"n{k}", "op": kind, "inputs": [f"z{k}"]})
        prev, pw = f"n{k}", width
    W = rng.uniform(-wscale, wscale, (1, pw)).round(6)
    nodes.append({"id": "out", "op": "affine", "inputs": [prev],
                  "weight": W.tolist(), "bias": [0.0]})
    return make_graph({"input_dim": 2, "nodes": nodes, "output": "out"})


def plain_root_bound(g, spec):
    box, _ = compute_intermediate_bounds(g, spec)
    dom = Domain(box=box, alphas=AlphaStore(), beta_store=BetaStore(),
                 bound_rows=np.full(spec.rows, -np.inf), bound=-np.inf)
    rows, _ = optimize_parameters(g, spec, dom, iters=0)
    return float(rows.min())


def gen_candidates(seed, n_per_kind, delta_frac):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_per_kind * 2):
        kind = "sigmoid" if i % 2 == 0 else "sin"
        width = 3 + (i // 2) % 2
        wscale = 1.6 if kind == "sigmoid" else 1.9
        g = net_graph(rng, kind, width, wscale)
        center = rng.uniform(-0.3, 0.3, 2).round(6)
        eps = float(rng.choice([0.3, 0.5]))
        probe = make_spec(center, eps, [[1.0]], [0.0])
        m_hat = sampled_min(g, probe, OracleConfig(samples=4000, seed=7))
        t = m_hat - delta_frac * (1.0 + abs(m_hat))
        spec = make_spec(center, eps, [[1.0]], [t])
        out.append((kind, g, spec))
    return out


def screen(cands):
    kept = []
    for kind, g, spec in cands:
        if plain_root_bound(g, spec) >= 0:
            continue
        if sampled_min(g, spec, OracleConfig(samples=100_000, seed=11)) <= 0:
            continue
        kept.append((kind, g, spec))
    return kept


def run_counts(kept, table, cap, iters=8):
    cfgs = {
        "nobab": RunConfig(timeout=10, max_domains=1, alpha_iters=iters,
                           seed=0, serial=True),
        "babsr_mid": RunConfig(timeout=10, max_domains=cap, heuristic="babsr",
                               alpha_iters=iters, seed=0, serial=True),
        "bbps_mid": RunConfig(timeout=10, max_domains=cap, heuristic="bbps",
                              alpha_iters=iters, seed=0, serial=True),
        "bbps_tab": RunConfig(timeout=10, max_domains=cap, heuristic="bbps",
                              branch_points=table, alpha_iters=iters,
                              seed=0, serial=True),
    }
    counts = {k: 0 for k in cfgs}
    tmax = 0.0
    per = {k: [] for k in cfgs}
    for i, (kind, g, spec) in enumerate(kept):
        for name, cfg in cfgs.items():
            t1 = time.time()
            rep = bab_verify(g, spec, cfg)
            dt = time.time() - t1
            tmax = max(tmax, dt)
            counts[name] += rep.status == "verified"
            per[name].append(rep.status == "verified")
    return counts, tmax, per


if __name__ == "__main__":
    t0 = time.time()
    table = build_table(["sin", "sigmoid", "gelu"], lu_range=(-9.0, 9.0),
                        step=0.5)
    print(f"table: {time.time()-t0:.0f}s", flush=True)

    for delta in (0.03, 0.08):
        cands = gen_candidates(5200, 60, delta)
        kept = screen(cands)
        kinds = {}
        for k, _, _ in kept:
            kinds[k] = kinds.get(k, 0) + 1
        print(f"delta={delta}: kept {len(kept)}/120 {kinds}", flush=True)
        sub = kept[:40]
        for cap in (64, 200):
            t1 = time.time()
            counts, tmax, _ = run_counts(sub, table, cap)
            print(f"  cap={cap}: {counts} tmax={tmax:.1f}s "
                  f"({time.time()-t1:.0f}s)", flush=True)
