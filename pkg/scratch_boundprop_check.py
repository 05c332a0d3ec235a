"""Scratch: boundprop soundness vs sampling on random graphs. Not shipped."""
import sys

import numpy as np

sys.path.insert(0, "src")

from nlbab.graph import Graph, load_graph, load_spec, evaluate
from nlbab.boundprop import (backward_bound, compute_intermediate_bounds,
                             concretize, Box, Split)

NL = ["relu", "sigmoid", "tanh", "sin", "gelu", "square"]


def random_model(rng, depth=None, width=None, use_mul=True):
    d = int(rng.integers(1, 4))
    depth = depth if depth is not None else int(rng.integers(1, 4))
    nodes = [{"id": "x", "op": "input"}]
    prev, pw = "x", d
    k = 0
    for _ in range(depth):
        w = width if width is not None else int(rng.integers(1, 6))
        nodes.append({"id": f"a{k}", "op": "affine", "inputs": [prev],
                      "weight": (rng.standard_normal((w, pw)) * 1.5).tolist(),
                      "bias": (rng.standard_normal(w) * 0.5).tolist()})
        prev, pw = f"a{k}", w
        if use_mul and rng.random() < 0.25:
            nodes.append({"id": f"b{k}", "op": "affine", "inputs": [prev],
                          "weight": rng.standard_normal((w, w)).tolist(),
                          "bias": rng.standard_normal(w).tolist()})
            nodes.append({"id": f"m{k}", "op": "mul",
                          "inputs": [prev, f"b{k}"]})
            prev = f"m{k}"
        else:
            op = NL[int(rng.integers(0, len(NL)))]
            nodes.append({"id": f"n{k}", "op": op, "inputs": [prev]})
            prev = f"n{k}"
        k += 1
    ow = int(rng.integers(1, 3))
    nodes.append({"id": "out", "op": "affine", "inputs": [prev],
                  "weight": rng.standard_normal((ow, pw)).tolist(),
                  "bias": rng.standard_normal(ow).tolist()})
    g = load_graph({"input_dim": d, "nodes": nodes, "output": "out"})
    rows = int(rng.integers(1, 3))
    spec = load_spec({
        "center": rng.standard_normal(d).tolist(),
        "eps": float(rng.uniform(0.05, 0.8)),
        "S": rng.standard_normal((rows, ow)).tolist(),
        "t": rng.standard_normal(rows).tolist(),
    })
    return g, spec


def sample_rows(g, spec, n, rng, l=None, u=None):
    if l is None:
        l, u = spec.lower(), spec.upper()
    x = rng.uniform(l, u, size=(n, g.input_dim))
    x = np.vstack([x, spec.center[None, :], l[None, :], u[None, :]])
    y = evaluate(g, x)
    vals = y @ spec.S.T + spec.t
    return x, vals


def main():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(300):
        g, spec = random_model(rng)
        box, shortcuts = compute_intermediate_bounds(g, spec)
        lb, form = backward_bound(g, spec, box)
        x, vals = sample_rows(g, spec, 4000, rng)
        gap = lb - vals.min(axis=0)
        if np.any(gap > 1e-9):
            print(f"[{i}] UNSOUND final bound: gap {gap.max():.3e}")
            return 1
        # intermediate boxes must contain sampled node values
        vals_by_node = {}
        vb = {}
        xs = x
        cur = {g.input_id: xs}
        for node in g.nodes:
            if node.op == "input":
                v = xs
            elif node.op == "affine":
                v = cur[node.inputs[0]] @ node.weight.T + node.bias
            elif node.op == "add":
                v = cur[node.inputs[0]] + cur[node.inputs[1]]
            elif node.op == "mul":
                v = cur[node.inputs[0]] * cur[node.inputs[1]]
            else:
                import nlbab.graph as G
                f = {"relu": lambda z: np.maximum(z, 0), "sigmoid": G.sigmoid,
                     "tanh": np.tanh, "sin": np.sin, "gelu": G.gelu,
                     "square": np.square}[node.op]
                v = f(cur[node.inputs[0]])
            cur[node.id] = v
        for nid in box.lower:
            l_, u_ = box.interval(nid)
            v = cur[nid]
            if np.any(v < l_ - 1e-9) or np.any(v > u_ + 1e-9):
                print(f"[{i}] box violated at {nid}: "
                      f"{(l_ - v).max():.3e} {(v - u_).max():.3e}")
                return 1
        # shortcut forms must bound node values
        x0, eps = box.input_center_eps(g)
        for nid, nf in shortcuts.forms.items():
            v = cur[nid]
            lo_form = nf.lower.A @ xs.T + nf.lower.c[:, None]
            up_form = nf.upper.A @ xs.T + nf.upper.c[:, None]
            if np.any(lo_form > v.T + 1e-9) or np.any(up_form < v.T - 1e-9):
                print(f"[{i}] shortcut form violated at {nid}")
                return 1
        worst = max(worst, float(gap.max()))
    print(f"300 random graphs OK, worst final-bound slack violation {worst:.3e}")

    # beta orientation: penalty must stay sound on the constrained side
    rng = np.random.default_rng(11)
    for i in range(120):
        g, spec = random_model(rng)
        box, _ = compute_intermediate_bounds(g, spec)
        bnode = g.branchable_nodes()[int(rng.integers(0, len(g.branchable_nodes())))]
        l_, u_ = box.interval(bnode)
        j = int(rng.integers(0, l_.size))
        p = float(rng.uniform(l_[j], u_[j]))
        for upper_branch in (False, True):
            split = Split(bnode, j, upper_branch, p)

            class Dom:
                alphas = None
                splits = [split]
                betas = [np.full(spec.rows, float(rng.uniform(0, 2.0)))]

            lb, _ = backward_bound(g, spec, box, Dom())
            # sample, keep only points on the constrained side of the split
            x, vals = sample_rows(g, spec, 6000, rng)
            cur = x
            for node in g.nodes:
                if node.id == bnode:
                    break
            # recompute node values to filter on the split side
            vvals = {g.input_id: x}
            for node in g.nodes:
                if node.op == "input":
                    v = x
                elif node.op == "affine":
                    v = vvals[node.inputs[0]] @ node.weight.T + node.bias
                elif node.op == "add":
                    v = vvals[node.inputs[0]] + vvals[node.inputs[1]]
                elif node.op == "mul":
                    v = vvals[node.inputs[0]] * vvals[node.inputs[1]]
                else:
                    import nlbab.graph as G
                    f = {"relu": lambda z: np.maximum(z, 0),
                         "sigmoid": G.sigmoid, "tanh": np.tanh, "sin": np.sin,
                         "gelu": G.gelu, "square": np.square}[node.op]
                    v = f(vvals[node.inputs[0]])
                vvals[node.id] = v
            side = vvals[bnode][:, j] >= p if upper_branch else vvals[bnode][:, j] <= p
            if side.sum() == 0:
                continue
            fv = vals[side]
            gap = lb - fv.min(axis=0)
            if np.any(gap > 1e-9):
                print(f"[{i}] beta UNSOUND (upper={upper_branch}): {gap.max():.3e}")
                return 1
    print("beta penalty soundness OK (120 random split cases)")

    # spec concretize example
    from nlbab.boundprop import LinearForm
    lf = LinearForm(np.array([[1.0, -1.0]]), np.array([0.0]))
    got = concretize(lf, np.array([0.5, 0.5]), 0.1, lower=True)
    print("concretize example:", got, "(want -0.2)")
    assert abs(got[0] + 0.2) < 1e-15
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
