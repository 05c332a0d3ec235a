"""Scratch: branching module checks. Not shipped."""
import sys

import numpy as np

sys.path.insert(0, "src")

from nlbab.graph import load_graph, load_spec, evaluate
from nlbab.boundprop import backward_bound, compute_intermediate_bounds, Box
from nlbab.branching import (ScoreContext, bbps_score, babsr_score,
                             build_table, load_table, save_table,
                             optimize_branch_point, query_table, select_branch,
                             signature_of, tightness_loss, BranchDecision)
from nlbab.relaxation import AlphaStore
from nlbab.paramopt import BetaStore, optimize_parameters

from scratch_boundprop_check import random_model, sample_rows


class Dom:
    def __init__(self, box):
        self.box = box
        self.alphas = AlphaStore()
        self.beta_store = BetaStore()

    @property
    def splits(self):
        return self.beta_store.splits()

    @property
    def betas(self):
        return self.beta_store.betas()


def node_values(g, x):
    vals = {g.input_id: x}
    import nlbab.graph as G
    fns = {"relu": lambda z: np.maximum(z, 0), "sigmoid": G.sigmoid,
           "tanh": np.tanh, "sin": np.sin, "gelu": G.gelu,
           "square": np.square}
    for node in g.nodes:
        if node.op == "input":
            v = x
        elif node.op == "affine":
            v = vals[node.inputs[0]] @ node.weight.T + node.bias
        elif node.op == "add":
            v = vals[node.inputs[0]] + vals[node.inputs[1]]
        elif node.op == "mul":
            v = vals[node.inputs[0]] * vals[node.inputs[1]]
        else:
            v = fns[node.op](vals[node.inputs[0]])
        vals[node.id] = v
    return vals


def check_soundness():
    rng = np.random.default_rng(42)
    worst = 0.0
    tried = 0
    for i in range(200):
        g, spec = random_model(rng)
        box, sc = compute_intermediate_bounds(g, spec)
        dom = Dom(box)
        if rng.random() < 0.5:
            optimize_parameters(g, spec, dom, iters=5)
        br = g.branchable_nodes()
        nid = br[int(rng.integers(len(br)))]
        l, u = box.interval(nid)
        j = int(rng.integers(l.size))
        if u[j] - l[j] < 1e-5:
            continue
        p = float(rng.uniform(l[j] + 0.25 * (u[j] - l[j]),
                              u[j] - 0.25 * (u[j] - l[j])))
        for score_fn in (bbps_score, babsr_score):
            s1, s2 = score_fn(g, spec, dom, sc, (nid, j), p)
            if score_fn is babsr_score:
                continue  # baseline drops a term; only bbps claims soundness
            x, vals = sample_rows(g, spec, 8000, rng)
            nv = node_values(g, x)[nid][:, j]
            m1 = vals[nv <= p]
            m2 = vals[nv >= p]
            if m1.size:
                gap = s1 - m1.min()
                worst = max(worst, gap)
                if gap > 1e-7:
                    print(f"[{i}] bbps child1 UNSOUND at {nid}[{j}]: {gap:.3e}")
                    return False
            if m2.size:
                gap = s2 - m2.min()
                worst = max(worst, gap)
                if gap > 1e-7:
                    print(f"[{i}] bbps child2 UNSOUND at {nid}[{j}]: {gap:.3e}")
                    return False
            tried += 1
    print(f"bbps score soundness OK on {tried} candidates, worst slack {worst:.3e}")
    return True


def check_identity_exact():
    # input feeds the nonlinearity directly: estimate == plain recompute
    rng = np.random.default_rng(3)
    for trial in range(30):
        d = int(rng.integers(1, 4))
        ow = int(rng.integers(1, 3))
        nodes = [{"id": "x", "op": "input"},
                 {"id": "s", "op": ["sin", "tanh", "gelu"][trial % 3],
                  "inputs": ["x"]},
                 {"id": "out", "op": "affine", "inputs": ["s"],
                  "weight": rng.standard_normal((ow, d)).tolist(),
                  "bias": rng.standard_normal(ow).tolist()}]
        g = load_graph({"input_dim": d, "nodes": nodes, "output": "out"})
        spec = load_spec({"center": rng.standard_normal(d).tolist(),
                          "eps": float(rng.uniform(0.3, 1.5)),
                          "S": rng.standard_normal((2, ow)).tolist(),
                          "t": rng.standard_normal(2).tolist()})
        box, sc = compute_intermediate_bounds(g, spec)
        dom = Dom(box)
        j = int(rng.integers(d))
        l, u = box.interval("x")
        p = float(rng.uniform(l[j] + 0.2 * (u[j] - l[j]),
                              u[j] - 0.2 * (u[j] - l[j])))
        s1, s2 = bbps_score(g, spec, dom, sc, ("x", j), p)
        for k, (lo, hi) in enumerate(((l[j], p), (p, u[j]))):
            child = Dom(box.replaced("x", j, lo, hi))
            lb, _ = backward_bound(g, spec, child.box, child)
            want = float(lb.min())
            got = (s1, s2)[k]
            if abs(got - want) > 1e-9 * (1 + abs(want)):
                print(f"identity mismatch trial {trial} k={k}: {got} vs {want}")
                return False
    print("identity-shortcut exactness OK (30 trials)")
    return True


def trapz_loss(kind, l, u, p, panels=20000):
    from nlbab.relaxation import relax_unary, relax_mul
    total = 0.0
    for a, b in ((l, p), (p, u)):
        if kind == "mul":
            r = relax_mul(a, b, l, u)
            xs = np.linspace(a, b, panels + 1)
            ys = np.linspace(l, u, panels + 1)
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            gap = ((r.up_a - r.lo_a) * X + (r.up_ay - r.lo_ay) * Y
                   + (r.up_b - r.lo_b))
            t1 = np.trapezoid(gap, xs, axis=0)
            total += float(np.trapezoid(t1, ys))
        else:
            r = relax_unary(kind, a, b)
            xs = np.linspace(a, b, panels + 1)
            gap = (r.up_a - r.lo_a) * xs + (r.up_b - r.lo_b)
            total += float(np.trapezoid(gap, xs))
    return total


def check_loss():
    assert tightness_loss("relu", -1.0, 1.0, 0.0) == 0.0
    rng = np.random.default_rng(9)
    worst = 0.0
    for kind in ("sin", "sigmoid", "tanh", "gelu", "square", "relu", "mul"):
        for _ in range(20):
            l = float(rng.uniform(-4, 3))
            u = l + float(rng.uniform(0.2, 4))
            p = float(rng.uniform(l + 0.05, u - 0.05))
            got = tightness_loss(kind, l, u, p)
            ref = trapz_loss(kind, l, u, p, 4000 if kind == "mul" else 200000)
            rel = abs(got - ref) / max(1e-12, abs(ref), abs(got))
            worst = max(worst, rel)
            if rel > 1e-5:
                print(f"loss mismatch {kind} ({l:.3f},{u:.3f},{p:.3f}): "
                      f"{got} vs {ref} rel {rel:.2e}")
                return False
    print(f"tightness_loss matches trapezoid, worst rel {worst:.3e}")
    # mirrored sin symmetry
    for _ in range(50):
        l = float(rng.uniform(-4, 3)); u = l + float(rng.uniform(0.3, 5))
        p = float(rng.uniform(l + 0.05, u - 0.05))
        a = tightness_loss("sin", l, u, p)
        b = tightness_loss("sin", -u, -l, -p)
        assert abs(a - b) < 1e-9 * (1 + abs(a)), (l, u, p, a, b)
    print("sin mirror symmetry OK")
    # combined signature is the sum
    a = tightness_loss("sin+tanh", -2.0, 1.0, 0.3)
    b = tightness_loss("sin", -2.0, 1.0, 0.3) + tightness_loss("tanh", -2.0, 1.0, 0.3)
    assert abs(a - b) < 1e-12
    # optimize beats midpoint
    for kind in ("sin", "sigmoid", "mul"):
        for _ in range(15):
            l = float(rng.uniform(-4, 3)); u = l + float(rng.uniform(0.3, 5))
            p = optimize_branch_point(kind, l, u)
            assert l < p < u
            assert (tightness_loss(kind, l, u, p)
                    <= tightness_loss(kind, l, u, 0.5 * (l + u)) + 1e-12)
    print("optimize_branch_point beats midpoint OK")
    return True


def check_spearman():
    from scipy.stats import spearmanr
    rng = np.random.default_rng(77)
    wins = ties = losses = 0
    for trial in range(20):
        nodes = [{"id": "x", "op": "input"}]
        d, w = 3, 6
        nodes.append({"id": "a1", "op": "affine", "inputs": ["x"],
                      "weight": (rng.standard_normal((w, d)) * 1.5).tolist(),
                      "bias": rng.standard_normal(w).tolist()})
        nodes.append({"id": "s1", "op": "sigmoid", "inputs": ["a1"]})
        nodes.append({"id": "a2", "op": "affine", "inputs": ["s1"],
                      "weight": (rng.standard_normal((w, w)) * 1.5).tolist(),
                      "bias": rng.standard_normal(w).tolist()})
        nodes.append({"id": "s2", "op": "sigmoid", "inputs": ["a2"]})
        nodes.append({"id": "out", "op": "affine", "inputs": ["s2"],
                      "weight": rng.standard_normal((1, w)).tolist(),
                      "bias": rng.standard_normal(1).tolist()})
        g = load_graph({"input_dim": d, "nodes": nodes, "output": "out"})
        spec = load_spec({"center": rng.standard_normal(d).tolist(),
                          "eps": 0.6, "S": [[1.0]], "t": [0.0]})
        box, sc = compute_intermediate_bounds(g, spec)
        dom = Dom(box)
        exact, s_bbps, s_babsr = [], [], []
        ctx = ScoreContext(g, spec, dom, sc)
        for nid in g.branchable_nodes():
            l, u = box.interval(nid)
            for j in range(l.size):
                if u[j] - l[j] < 1e-6:
                    continue
                p = 0.5 * (l[j] + u[j])
                b1 = bbps_score(g, spec, dom, sc, (nid, j), p, context=ctx)
                b2 = babsr_score(g, spec, dom, sc, (nid, j), p, context=ctx)
                s_bbps.append(min(b1))
                s_babsr.append(min(b2))
                ch = []
                for lo, hi in ((l[j], p), (p, u[j])):
                    child = Dom(box.replaced(nid, j, lo, hi))
                    lb, _ = backward_bound(g, spec, child.box, child)
                    ch.append(float(lb.min()))
                exact.append(min(ch))
        r_bbps = spearmanr(s_bbps, exact).statistic
        r_babsr = spearmanr(s_babsr, exact).statistic
        if r_bbps > r_babsr + 1e-12:
            wins += 1
        elif r_babsr > r_bbps + 1e-12:
            losses += 1
        else:
            ties += 1
    print(f"spearman: bbps better {wins}, ties {ties}, babsr better {losses}")
    return wins > losses


def check_table():
    tab = build_table(["sin"], lu_range=(-2.0, 2.0), step=0.5)
    e = tab.get("sin")
    n = e.points.shape[0]
    assert n == 9
    for i in range(n):
        for j in range(n):
            gl, gu = e.grid[i], e.grid[j]
            if gl < gu - 1e-12:
                assert gl < e.points[i, j] < gu
            else:
                assert np.isnan(e.points[i, j])
    save_table(tab, "/tmp/t1.json")
    save_table(build_table(["sin"], lu_range=(-2.0, 2.0), step=0.5), "/tmp/t2.json")
    b1 = open("/tmp/t1.json", "rb").read()
    b2 = open("/tmp/t2.json", "rb").read()
    assert b1 == b2, "table build not deterministic"
    t2 = load_table("/tmp/t1.json")
    # exact grid pair returns stored
    assert query_table(t2, "sin", -1.0, 1.0) == e.points[2, 6]
    # nearest rounding
    assert query_table(t2, "sin", -1.02, 0.98) == e.points[2, 6]
    # out of range -> midpoint
    assert query_table(t2, "sin", -40.0, 40.0) == 0.0
    # unknown kind -> midpoint
    assert query_table(t2, "tanh", -1.0, 3.0) == 1.0
    print("table build/save/load/query OK")
    return True


def check_select():
    rng = np.random.default_rng(1)
    g, spec = random_model(rng)
    box, sc = compute_intermediate_bounds(g, spec)
    dom = Dom(box)
    d1 = select_branch(g, spec, dom, sc, "bbps", None)
    d2 = select_branch(g, spec, dom, sc, "bbps", None)
    assert d1 == d2, "select_branch not deterministic"
    l, u = box.interval(d1.node_id)
    assert l[d1.neuron] < d1.point < u[d1.neuron]
    r1 = select_branch(g, spec, dom, sc, "random", None,
                       rng=np.random.default_rng(5))
    r2 = select_branch(g, spec, dom, sc, "random", None,
                       rng=np.random.default_rng(5))
    assert r1 == r2
    print("select_branch determinism OK:", d1)
    return True


def main():
    ok = check_loss()
    ok = check_table() and ok
    ok = check_identity_exact() and ok
    ok = check_soundness() and ok
    ok = check_select() and ok
    ok = check_spearman() and ok
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
