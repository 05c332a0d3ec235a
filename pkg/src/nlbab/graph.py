"""Computation graphs: loading, validation, and forward evaluation.

A model is a DAG of named nodes over a fixed set of elementwise and affine
operations. Node declarations must be topologically ordered (every edge
references an earlier node), which also rules out cycles. Graphs are loaded
from a plain JSON document::

    {"input_dim": 2,
     "nodes": [{"id": "x", "op": "input"},
               {"id": "h", "op": "affine", "inputs": ["x"],
                "weight": [[1.0, -1.0]], "bias": [0.5]},
               {"id": "s", "op": "sin", "inputs": ["h"]}],
     "output": "s"}

Verification specs pair an input box (center, radius) with an affine
readout of the output node: the verified quantity is ``min_x min_row
S f(x) + t`` over the box.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "GraphError",
    "SpecError",
    "Node",
    "Graph",
    "VerificationSpec",
    "load_graph",
    "load_spec",
    "evaluate",
    "OPS",
    "NONLINEAR_OPS",
]

# Elementwise nonlinear ops need linear relaxations during bound propagation;
# everything else propagates exactly.
NONLINEAR_OPS = frozenset({"relu", "sigmoid", "tanh", "sin", "gelu", "mul", "square"})
LINEAR_OPS = frozenset({"input", "affine", "add"})
OPS = NONLINEAR_OPS | LINEAR_OPS

UNARY_OPS = frozenset({"relu", "sigmoid", "tanh", "sin", "gelu", "square", "affine"})
BINARY_OPS = frozenset({"mul", "add"})


class GraphError(ValueError):
    """Raised for a malformed model document; messages name the offending node."""


class SpecError(ValueError):
    """Raised for a malformed verification spec document."""


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple[str, ...]
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass(frozen=True)
class Graph:
    """Validated computation graph.

    ``nodes`` is in declaration order, which is topological. ``consumers``
    maps a node id to the ids of nodes that read it (in declaration order,
    with duplicates when one node reads the same input twice).
    """

    input_dim: int
    nodes: tuple[Node, ...]
    output: str
    node_map: dict[str, Node] = field(repr=False)
    widths: dict[str, int] = field(repr=False)
    consumers: dict[str, tuple[str, ...]] = field(repr=False)

    @property
    def input_id(self) -> str:
        return self.nodes[0].id

    @property
    def output_width(self) -> int:
        return self.widths[self.output]

    def node(self, node_id: str) -> Node:
        return self.node_map[node_id]

    def width(self, node_id: str) -> int:
        return self.widths[node_id]

    def nonlinear_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.op in NONLINEAR_OPS)

    def branchable_nodes(self) -> tuple[str, ...]:
        """Ids of nodes feeding at least one nonlinear node, declaration order."""
        out = []
        for n in self.nodes:
            if any(self.node_map[c].op in NONLINEAR_OPS for c in self.consumers[n.id]):
                out.append(n.id)
        return tuple(out)


@dataclass(frozen=True)
class VerificationSpec:
    """Input box and affine output readout.

    The input region is the per-dimension box ``[center - eps, center + eps]``;
    the property to verify is ``S f(x) + t > 0`` for every row.
    """

    center: np.ndarray
    eps: np.ndarray
    S: np.ndarray
    t: np.ndarray

    @property
    def rows(self) -> int:
        return self.S.shape[0]

    def lower(self) -> np.ndarray:
        return self.center - self.eps

    def upper(self) -> np.ndarray:
        return self.center + self.eps

    def with_t(self, t: np.ndarray) -> "VerificationSpec":
        t = np.asarray(t, dtype=np.float64)
        if t.shape != self.t.shape:
            raise SpecError(f"t shape {t.shape} does not match {self.t.shape}")
        return VerificationSpec(self.center, self.eps, self.S, t)


def _as_matrix(raw, node_id: str, what: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GraphError(f"node '{node_id}': {what} is not numeric") from exc
    if not np.all(np.isfinite(arr)):
        raise GraphError(f"node '{node_id}': {what} contains non-finite values")
    return arr


def load_graph(source) -> Graph:
    """Parse and validate a model document.

    ``source`` may be a dict, a JSON string, or a path to a JSON file.
    Raises :class:`GraphError` naming the offending node on any defect:
    unknown op, duplicate id, reference to an undeclared/later node, or a
    weight/bias shape mismatch.
    """
    doc = _load_doc(source, GraphError)

    if not isinstance(doc.get("input_dim"), int) or doc["input_dim"] < 1:
        raise GraphError("input_dim must be a positive integer")
    input_dim = doc["input_dim"]
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise GraphError("nodes must be a non-empty list")

    nodes: list[Node] = []
    widths: dict[str, int] = {}
    node_map: dict[str, Node] = {}
    consumers: dict[str, list[str]] = {}

    for raw in raw_nodes:
        node_id = raw.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise GraphError(f"node with id {node_id!r}: id must be a non-empty string")
        if node_id in node_map:
            raise GraphError(f"node '{node_id}': duplicate id")
        op = raw.get("op")
        if op not in OPS:
            raise GraphError(f"node '{node_id}': unknown op {op!r}")
        inputs = tuple(raw.get("inputs", ()))

        for ref in inputs:
            if ref not in node_map:
                # Either undeclared, or declared later: a forward reference
                # would make the declaration order non-topological (cycle or
                # out-of-order edge).
                later = any(r.get("id") == ref for r in raw_nodes)
                kind = "forward reference (cycle?)" if later else "unknown input"
                raise GraphError(f"node '{node_id}': {kind} '{ref}'")

        if op == "input":
            if nodes:
                raise GraphError(f"node '{node_id}': input node must be declared first")
            if inputs:
                raise GraphError(f"node '{node_id}': input node takes no inputs")
            width = input_dim
            weight = bias = None
        elif op == "affine":
            if len(inputs) != 1:
                raise GraphError(f"node '{node_id}': affine takes exactly one input")
            weight = _as_matrix(raw.get("weight"), node_id, "weight")
            if weight.ndim != 2:
                raise GraphError(f"node '{node_id}': weight must be a matrix")
            in_width = widths[inputs[0]]
            if weight.shape[1] != in_width:
                raise GraphError(
                    f"node '{node_id}': weight has {weight.shape[1]} columns but "
                    f"input '{inputs[0]}' has width {in_width}"
                )
            width = weight.shape[0]
            if raw.get("bias") is None:
                bias = np.zeros(width)
            else:
                bias = _as_matrix(raw["bias"], node_id, "bias")
                if bias.shape != (width,):
                    raise GraphError(
                        f"node '{node_id}': bias has shape {bias.shape}, "
                        f"expected ({width},)"
                    )
        elif op in BINARY_OPS:
            if len(inputs) != 2:
                raise GraphError(f"node '{node_id}': {op} takes exactly two inputs")
            w0, w1 = widths[inputs[0]], widths[inputs[1]]
            if w0 != w1:
                raise GraphError(
                    f"node '{node_id}': {op} inputs have widths {w0} and {w1}"
                )
            width = w0
            weight = bias = None
        else:  # unary elementwise
            if len(inputs) != 1:
                raise GraphError(f"node '{node_id}': {op} takes exactly one input")
            width = widths[inputs[0]]
            weight = bias = None

        node = Node(node_id, op, inputs, weight, bias)
        nodes.append(node)
        node_map[node_id] = node
        widths[node_id] = width
        consumers[node_id] = []
        for ref in inputs:
            consumers[ref].append(node_id)

    if nodes[0].op != "input":
        raise GraphError(f"node '{nodes[0].id}': first node must be the input node")

    output = doc.get("output")
    if output not in node_map:
        raise GraphError(f"output references unknown node {output!r}")

    return Graph(
        input_dim=input_dim,
        nodes=tuple(nodes),
        output=output,
        node_map=node_map,
        widths=widths,
        consumers={k: tuple(v) for k, v in consumers.items()},
    )


def load_spec(source) -> VerificationSpec:
    """Parse and validate a verification-spec document (dict, JSON str, or path)."""
    doc = _load_doc(source, SpecError)

    try:
        center = np.asarray(doc["center"], dtype=np.float64)
        S = np.asarray(doc["S"], dtype=np.float64)
        t = np.asarray(doc["t"], dtype=np.float64)
        raw_eps = doc["eps"]
    except KeyError as exc:
        raise SpecError(f"spec is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise SpecError(f"spec field is not numeric: {exc}") from exc

    if center.ndim != 1 or center.size == 0:
        raise SpecError("center must be a non-empty vector")
    eps = np.asarray(raw_eps, dtype=np.float64)
    if eps.ndim == 0:
        eps = np.full(center.shape, float(eps))
    if eps.shape != center.shape:
        raise SpecError(f"eps shape {eps.shape} does not match center {center.shape}")
    if np.any(eps < 0):
        raise SpecError("eps must be non-negative")
    if S.ndim != 2 or S.shape[0] == 0:
        raise SpecError("S must be a matrix with at least one row")
    if t.shape != (S.shape[0],):
        raise SpecError(f"t has shape {t.shape}, expected ({S.shape[0]},)")
    for name, arr in (("center", center), ("eps", eps), ("S", S), ("t", t)):
        if not np.all(np.isfinite(arr)):
            raise SpecError(f"spec field {name} contains non-finite values")

    return VerificationSpec(center=center, eps=eps, S=S, t=t)


def _load_doc(source, err):
    if isinstance(source, dict):
        return source
    if isinstance(source, os.PathLike):
        source = os.fspath(source)
    if isinstance(source, (str, bytes)):
        text = str(source)
        if text.lstrip().startswith("{"):
            try:
                return json.loads(text)
            except json.JSONDecodeError as exc:
                raise err(f"invalid JSON: {exc}") from exc
        try:
            with open(text, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except OSError as exc:
            raise err(f"cannot read {text!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise err(f"invalid JSON in {text!r}: {exc}") from exc
    raise err(f"unsupported source type {type(source).__name__}")


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF form, x * Phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


_SIGMOID_CLIP = 500.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_SIGMOID_CLIP, _SIGMOID_CLIP)))


def evaluate(g: Graph, x: np.ndarray) -> np.ndarray:
    """Forward-evaluate the output node at ``x``.

    ``x`` may be a single point of shape ``(input_dim,)`` or a batch of shape
    ``(n, input_dim)``; the result has the output node's width as its trailing
    dimension. Pure: no state survives the call.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != g.input_dim:
        raise GraphError(
            f"input has shape {x.shape}, expected (n, {g.input_dim})"
        )

    values: dict[str, np.ndarray] = {}
    for node in g.nodes:
        if node.op == "input":
            v = x
        elif node.op == "affine":
            v = values[node.inputs[0]] @ node.weight.T + node.bias
        elif node.op == "add":
            v = values[node.inputs[0]] + values[node.inputs[1]]
        elif node.op == "mul":
            v = values[node.inputs[0]] * values[node.inputs[1]]
        elif node.op == "relu":
            v = np.maximum(values[node.inputs[0]], 0.0)
        elif node.op == "sigmoid":
            v = sigmoid(values[node.inputs[0]])
        elif node.op == "tanh":
            v = np.tanh(values[node.inputs[0]])
        elif node.op == "sin":
            v = np.sin(values[node.inputs[0]])
        elif node.op == "gelu":
            v = gelu(values[node.inputs[0]])
        elif node.op == "square":
            v = np.square(values[node.inputs[0]])
        else:  # pragma: no cover - load_graph rejects unknown ops
            raise GraphError(f"node '{node.id}': unknown op {node.op!r}")
        values[node.id] = v

    out = values[g.output]
    return out[0] if single else out
