"""Shared builders for the test suite."""

import numpy as np
import pytest

from nlbab import Graph, VerificationSpec, load_graph, load_spec

NL_UNARY = ["relu", "sigmoid", "tanh", "sin", "gelu", "square"]


def make_graph(doc) -> Graph:
    return load_graph(doc)


def make_spec(center, eps, S, t) -> VerificationSpec:
    return load_spec({"center": center, "eps": eps, "S": S, "t": t})


def chain_1d(ops, weights, biases, out_bias=0.0):
    """Width-1 chain x -> affine -> op -> affine -> op -> ... -> affine."""
    nodes = [{"id": "x", "op": "input"}]
    prev = "x"
    for k, (op, w, b) in enumerate(zip(ops, weights, biases)):
        nodes.append({"id": f"a{k}", "op": "affine", "inputs": [prev],
                      "weight": [[float(w)]], "bias": [float(b)]})
        nodes.append({"id": f"n{k}", "op": op, "inputs": [f"a{k}"]})
        prev = f"n{k}"
    nodes.append({"id": "out", "op": "affine", "inputs": [prev],
                  "weight": [[1.0]], "bias": [float(out_bias)]})
    return load_graph({"input_dim": 1, "nodes": nodes, "output": "out"})


def random_problem(rng, depth=None, width=None, use_mul=True, max_dim=3):
    """Random small graph plus a random box property over it."""
    d = int(rng.integers(1, max_dim + 1))
    depth = depth if depth is not None else int(rng.integers(1, 4))
    nodes = [{"id": "x", "op": "input"}]
    prev, pw = "x", d
    for k in range(depth):
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
            op = NL_UNARY[int(rng.integers(0, len(NL_UNARY)))]
            nodes.append({"id": f"n{k}", "op": op, "inputs": [f"a{k}"]})
            prev = f"n{k}"
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


def forward_values(g, xs):
    """Evaluate every node of the graph on a batch, by declaration order."""
    from nlbab.graph import gelu, sigmoid

    acts = {"relu": lambda z: np.maximum(z, 0.0), "sigmoid": sigmoid,
            "tanh": np.tanh, "sin": np.sin, "gelu": gelu, "square": np.square}
    vals = {}
    for node in g.nodes:
        if node.op == "input":
            v = xs
        elif node.op == "affine":
            v = vals[node.inputs[0]] @ node.weight.T + node.bias
        elif node.op == "mul":
            v = vals[node.inputs[0]] * vals[node.inputs[1]]
        else:
            v = acts[node.op](vals[node.inputs[0]])
        vals[node.id] = v
    return vals


def sample_rows_min(g, spec, n, rng, lower=None, upper=None):
    """Empirical min of the worst property row over a box, plus endpoints."""
    from nlbab import evaluate

    l = spec.lower() if lower is None else lower
    u = spec.upper() if upper is None else upper
    x = rng.uniform(l, u, size=(n, g.input_dim))
    x = np.vstack([x, spec.center[None, :], l[None, :], u[None, :]])
    vals = evaluate(g, x) @ spec.S.T + spec.t
    return float(vals.min(axis=-1).min())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
