"""Backward linear bound propagation over the computation graph.

A bound pass maintains a map {node id -> coefficient matrix} while walking
nodes in reverse declaration (reverse topological) order, starting from a
seed matrix on one node. Affine and add nodes propagate coefficients
exactly; a nonlinearity replaces each incoming coefficient column with its
linear relaxation, picking the lower or upper line per entry by coefficient
sign. The surviving input-level form is concretized over the input box.

Split constraints (from branch and bound) enter as Lagrangian penalty terms
on the branched neuron's coefficient column: for a lower bound, side
``x <= p`` adds ``beta * (x - p)`` and side ``x >= p`` adds ``beta * (p - x)``
with ``beta >= 0``, which under-approximates the constrained minimum by weak
duality. (Signs flip for an upper-bound pass.)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, Node, VerificationSpec
from .relaxation import (AlphaStore, RelaxationResult, op_range, relax_mul,
                         relax_unary)

__all__ = [
    "LinearForm",
    "Box",
    "NodeForms",
    "ShortcutBounds",
    "Split",
    "TraceNonlinear",
    "TraceSplit",
    "BoundTrace",
    "backward_bound",
    "backward_to_node",
    "concretize",
    "compute_intermediate_bounds",
    "push_through_unary",
    "push_through_mul",
    "apply_split_terms",
]


@dataclass
class LinearForm:
    """Coefficients ``A`` (rows x node-width) and constant ``c`` (rows,)."""

    A: np.ndarray
    c: np.ndarray

    def copy(self) -> "LinearForm":
        return LinearForm(self.A.copy(), self.c.copy())


@dataclass
class Box:
    """Per-node interval bounds for every node that needs them."""

    lower: dict[str, np.ndarray] = field(default_factory=dict)
    upper: dict[str, np.ndarray] = field(default_factory=dict)

    def set(self, node_id: str, l: np.ndarray, u: np.ndarray) -> None:
        self.lower[node_id] = np.asarray(l, dtype=np.float64)
        self.upper[node_id] = np.asarray(u, dtype=np.float64)

    def interval(self, node_id: str) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.lower[node_id], self.upper[node_id]
        except KeyError:
            raise KeyError(f"no stored interval for node {node_id!r}") from None

    def has(self, node_id: str) -> bool:
        return node_id in self.lower

    def replaced(self, node_id: str, neuron: int, l: float, u: float) -> "Box":
        """Copy with one neuron's interval overridden (used by splits)."""
        out = Box(lower=dict(self.lower), upper=dict(self.upper))
        lo = out.lower[node_id].copy()
        hi = out.upper[node_id].copy()
        lo[neuron] = l
        hi[neuron] = u
        out.lower[node_id] = lo
        out.upper[node_id] = hi
        return out

    def input_center_eps(self, g: Graph) -> tuple[np.ndarray, np.ndarray]:
        l, u = self.interval(g.input_id)
        return 0.5 * (l + u), 0.5 * (u - l)


@dataclass
class NodeForms:
    """Input-level linear bounds of one node: lower and upper forms."""

    lower: LinearForm
    upper: LinearForm


@dataclass
class ShortcutBounds:
    """Stored input-level forms for every branchable node."""

    forms: dict[str, NodeForms] = field(default_factory=dict)

    def get(self, node_id: str) -> NodeForms:
        try:
            return self.forms[node_id]
        except KeyError:
            raise KeyError(f"no shortcut bounds for node {node_id!r}") from None


@dataclass(frozen=True)
class Split:
    """One branch constraint: neuron of a node is <= or >= ``point``."""

    node_id: str
    neuron: int
    upper_branch: bool  # False: x <= point; True: x >= point
    point: float


@dataclass
class TraceNonlinear:
    node: Node
    A: np.ndarray  # lower-pass coefficients accumulated at this node
    relax: RelaxationResult


@dataclass
class TraceSplit:
    index: int  # position in the domain's split list
    split: Split
    beta: np.ndarray


@dataclass
class BoundTrace:
    """Lower-pass record for gradient computation and branch scoring."""

    nonlinear: dict[str, TraceNonlinear] = field(default_factory=dict)
    splits: list[TraceSplit] = field(default_factory=list)
    input_form: LinearForm | None = None


# ---------------------------------------------------------------------------
# coefficient pushes


def push_through_unary(A: np.ndarray, res: RelaxationResult, lower: bool):
    """Replace coefficients on a unary nonlinearity by relaxation lines.

    Returns the coefficient matrix landing on the input node and the bias
    picked up, choosing per entry the lower or upper line by the sign of the
    outgoing coefficient (roles swap for an upper-bound pass).
    """
    Ap = np.maximum(A, 0.0)
    An = np.minimum(A, 0.0)
    if lower:
        a1, b1, a2, b2 = res.lo_a, res.lo_b, res.up_a, res.up_b
    else:
        a1, b1, a2, b2 = res.up_a, res.up_b, res.lo_a, res.lo_b
    A_in = Ap * a1 + An * a2
    c = (Ap * b1 + An * b2).sum(axis=-1)
    return A_in, c


def push_through_mul(A: np.ndarray, res: RelaxationResult, lower: bool):
    """Plane counterpart of :func:`push_through_unary` for mul nodes."""
    Ap = np.maximum(A, 0.0)
    An = np.minimum(A, 0.0)
    if lower:
        ax1, ay1, b1 = res.lo_a, res.lo_ay, res.lo_b
        ax2, ay2, b2 = res.up_a, res.up_ay, res.up_b
    else:
        ax1, ay1, b1 = res.up_a, res.up_ay, res.up_b
        ax2, ay2, b2 = res.lo_a, res.lo_ay, res.lo_b
    A_x = Ap * ax1 + An * ax2
    A_y = Ap * ay1 + An * ay2
    c = (Ap * b1 + An * b2).sum(axis=-1)
    return A_x, A_y, c


def apply_split_terms(A: np.ndarray, c: np.ndarray, terms, lower: bool):
    """Add the Lagrangian split penalties for one node onto (A, c) in place.

    ``terms`` is a sequence of (Split, beta) pairs for this node; beta is a
    per-row vector. Orientation: see the module docstring.
    """
    for split, beta in terms:
        beta = np.asarray(beta, dtype=np.float64)
        if np.any(beta < 0):
            raise ValueError("negative beta multiplier")
        sigma = -1.0 if split.upper_branch else 1.0
        if not lower:
            sigma = -sigma
        A[:, split.neuron] += sigma * beta
        c -= sigma * beta * split.point


# ---------------------------------------------------------------------------
# the backward pass


def _node_relaxation(node: Node, box: Box, alphas: AlphaStore | None):
    if node.op == "mul":
        lx, ux = box.interval(node.inputs[0])
        ly, uy = box.interval(node.inputs[1])
        alo = aup = None
        if alphas is not None:
            alo = alphas.get(node.id, "lo")
            aup = alphas.get(node.id, "up")
        return relax_mul(lx, ux, ly, uy, alo, aup)
    l, u = box.interval(node.inputs[0])
    alo = aup = None
    if alphas is not None:
        alo = alphas.get(node.id, "lo")
        aup = alphas.get(node.id, "up")
    return relax_unary(node.op, l, u, alo, aup)


def _run_backward(g: Graph, start_id: str, A_low: np.ndarray,
                  A_up: np.ndarray | None, box: Box,
                  alphas: AlphaStore | None = None,
                  split_terms=(), c_low=None, want_trace: bool = False,
                  divert_at: str | None = None):
    """Backward pass from ``start_id`` seeded with coefficient matrices.

    Returns (lower LinearForm, upper LinearForm or None, BoundTrace or None,
    diverted matrix or None). The two sides run in lockstep so each node's
    relaxation is built once. With ``divert_at``, every lower-pass
    coefficient arriving at that node is withheld from propagation and
    returned instead (branch scoring stops there and substitutes stored
    interval bounds).
    """
    rows = A_low.shape[0]
    amap_lo: dict[str, np.ndarray] = {start_id: np.array(A_low, dtype=np.float64)}
    c_lo = np.zeros(rows) if c_low is None else np.array(c_low, dtype=np.float64)
    want_upper = A_up is not None
    amap_up: dict[str, np.ndarray] = {}
    c_up = np.zeros(rows)
    if want_upper:
        amap_up[start_id] = np.array(A_up, dtype=np.float64)
    trace = BoundTrace() if want_trace else None

    by_node: dict[str, list] = {}
    for idx, (split, beta) in enumerate(split_terms):
        by_node.setdefault(split.node_id, []).append((idx, split, beta))

    def _acc(amap, key, val):
        if key in amap:
            amap[key] = amap[key] + val
        else:
            amap[key] = np.array(val, dtype=np.float64)

    diverted: np.ndarray | None = None
    started = False
    for node in reversed(g.nodes):
        if node.id == start_id:
            started = True
        if not started:
            continue
        A = amap_lo.pop(node.id, None)
        Au = amap_up.pop(node.id, None) if want_upper else None
        if A is None and Au is None:
            continue
        if A is None:
            A = np.zeros((rows, g.width(node.id)))
        if want_upper and Au is None:
            Au = np.zeros((rows, g.width(node.id)))

        terms = by_node.get(node.id)
        if terms:
            for idx, split, beta in terms:
                apply_split_terms(A, c_lo, [(split, beta)], lower=True)
                if want_upper:
                    apply_split_terms(Au, c_up, [(split, beta)], lower=False)
                if trace is not None:
                    trace.splits.append(TraceSplit(idx, split,
                                                   np.asarray(beta, float)))

        if node.id == divert_at:
            diverted = A
            A = np.zeros_like(A)  # upper side, if any, keeps flowing

        if node.op == "input":
            form_lo = LinearForm(A, c_lo)
            form_up = LinearForm(Au, c_up) if want_upper else None
            if trace is not None:
                trace.input_form = form_lo
            return form_lo, form_up, trace, diverted

        if node.op == "affine":
            W = node.weight
            _acc(amap_lo, node.inputs[0], A @ W)
            c_lo = c_lo + A @ node.bias
            if want_upper:
                _acc(amap_up, node.inputs[0], Au @ W)
                c_up = c_up + Au @ node.bias
        elif node.op == "add":
            for w in node.inputs:
                _acc(amap_lo, w, A)
                if want_upper:
                    _acc(amap_up, w, Au)
        elif node.op == "mul":
            res = _node_relaxation(node, box, alphas)
            Ax, Ay, dc = push_through_mul(A, res, lower=True)
            _acc(amap_lo, node.inputs[0], Ax)
            _acc(amap_lo, node.inputs[1], Ay)
            c_lo = c_lo + dc
            if want_upper:
                Ax, Ay, dc = push_through_mul(Au, res, lower=False)
                _acc(amap_up, node.inputs[0], Ax)
                _acc(amap_up, node.inputs[1], Ay)
                c_up = c_up + dc
            if trace is not None:
                trace.nonlinear[node.id] = TraceNonlinear(node, A.copy(), res)
        else:  # unary nonlinearity
            res = _node_relaxation(node, box, alphas)
            A_in, dc = push_through_unary(A, res, lower=True)
            _acc(amap_lo, node.inputs[0], A_in)
            c_lo = c_lo + dc
            if want_upper:
                A_in, dc = push_through_unary(Au, res, lower=False)
                _acc(amap_up, node.inputs[0], A_in)
                c_up = c_up + dc
            if trace is not None:
                trace.nonlinear[node.id] = TraceNonlinear(node, A.copy(), res)

    # A DAG rooted at the input always terminates at the input node above;
    # reaching here means start_id is the input node itself (or the whole
    # lower flow was diverted).
    form_lo = LinearForm(amap_lo.get(g.input_id,
                                     np.zeros((rows, g.input_dim))), c_lo)
    form_up = None
    if want_upper:
        form_up = LinearForm(amap_up.get(g.input_id,
                                         np.zeros((rows, g.input_dim))), c_up)
    if trace is not None:
        trace.input_form = form_lo
    return form_lo, form_up, trace, diverted


def concretize(lf: LinearForm, x0, eps, lower: bool = True) -> np.ndarray:
    """Evaluate a linear form's extreme over the box ``|x - x0| <= eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), x0.shape)
    base = lf.A @ x0 + lf.c
    rad = np.abs(lf.A) @ eps
    return base - rad if lower else base + rad


def _domain_params(domain):
    """Extract (alphas, split terms) from a Domain-like object (or None)."""
    if domain is None:
        return None, ()
    alphas = getattr(domain, "alphas", None)
    splits = getattr(domain, "splits", ()) or ()
    betas = getattr(domain, "betas", ()) or ()
    return alphas, list(zip(splits, betas))


def backward_bound(g: Graph, spec: VerificationSpec, box: Box, domain=None,
                   want_trace: bool = False):
    """Lower-bound every spec row of ``S f(x) + t`` over the box.

    Returns ``(bound vector, input LinearForm)``, plus the pass trace when
    ``want_trace`` is set. The domain (if given) supplies relaxation
    parameters and split penalties.
    """
    alphas, terms = _domain_params(domain)
    out_node = g.node(g.output)
    S = np.asarray(spec.S, dtype=np.float64)
    if S.shape[1] != g.width(out_node.id):
        raise ValueError("spec S width does not match graph output width")
    form_lo, _, trace, _ = _run_backward(
        g, g.output, S, None, box, alphas=alphas, split_terms=terms,
        c_low=spec.t, want_trace=want_trace)
    x0, eps = box.input_center_eps(g)
    lb = concretize(form_lo, x0, eps, lower=True)
    if want_trace:
        return lb, form_lo, trace
    return lb, form_lo


def node_interval_forms(g: Graph, node_id: str, box: Box):
    """Identity-seeded backward pass from one node: both-side input forms."""
    n = g.width(node_id)
    eye = np.eye(n)
    form_lo, form_up, _, _ = _run_backward(g, node_id, eye, eye, box)
    return NodeForms(form_lo, form_up)


def backward_to_node(g: Graph, spec: VerificationSpec, box: Box,
                     node_id: str, domain=None):
    """Lower pass that withholds every coefficient arriving at one node.

    Returns ``(M, rest)``: M is the (rows x width) matrix of withheld
    coefficients (split penalties on that node included); ``rest`` is the
    input-level form of all flow bypassing the node, carrying the full
    constant term. Bounding each withheld column by the node's stored
    interval and adding the concretized rest reproduces a valid, if looser,
    lower bound; branch scoring swaps single columns of that decomposition.
    """
    alphas, terms = _domain_params(domain)
    S = np.asarray(spec.S, dtype=np.float64)
    form_lo, _, _, M = _run_backward(
        g, g.output, S, None, box, alphas=alphas, split_terms=terms,
        c_low=spec.t, divert_at=node_id)
    if M is None:
        M = np.zeros((S.shape[0], g.width(node_id)))
    return M, form_lo


def _interval_image(node: Node, ival: dict) -> tuple[np.ndarray, np.ndarray]:
    """Exact interval-arithmetic image of one node given its parents' ranges."""
    if node.op == "affine":
        W = node.weight
        Wp = np.maximum(W, 0.0)
        Wn = np.minimum(W, 0.0)
        pl, pu = ival[node.inputs[0]]
        return Wp @ pl + Wn @ pu + node.bias, Wp @ pu + Wn @ pl + node.bias
    if node.op == "add":
        al, au = ival[node.inputs[0]]
        bl, bu = ival[node.inputs[1]]
        return al + bl, au + bu
    if node.op == "mul":
        xl, xu = ival[node.inputs[0]]
        yl, yu = ival[node.inputs[1]]
        corners = np.stack([xl * yl, xl * yu, xu * yl, xu * yu])
        return corners.min(axis=0), corners.max(axis=0)
    return op_range(node.op, *ival[node.inputs[0]])


def compute_intermediate_bounds(g: Graph, spec: VerificationSpec,
                                domain=None) -> tuple[Box, ShortcutBounds]:
    """Interval bounds plus stored input-level forms for branchable nodes.

    Each branchable node (anything feeding a nonlinearity) gets a backward
    pass treating it as the output, concretized into its interval and
    intersected with a forward interval-arithmetic pass (either bounding can
    win: the linear pass sees cross-neuron cancellation, the interval pass
    is immune to relaxation slack stacking up over depth). Domain overrides,
    if any, replace the branched neurons' intervals; everything else keeps
    the root bounds. Passes here use default relaxation parameters;
    per-domain parameters only tune the final objective pass.
    """
    box = Box()
    l0 = spec.center - spec.eps
    u0 = spec.center + spec.eps
    overrides = getattr(domain, "overrides", None) if domain is not None else None
    if overrides and g.input_id in overrides:
        ol, ou = overrides[g.input_id]
        l0 = np.maximum(l0, ol)
        u0 = np.minimum(u0, ou)
    box.set(g.input_id, l0, np.maximum(u0, l0))

    shortcuts = ShortcutBounds()
    branchable = set(g.branchable_nodes())
    if g.input_id in branchable:
        eye = np.eye(g.input_dim)
        shortcuts.forms[g.input_id] = NodeForms(
            LinearForm(eye, np.zeros(g.input_dim)),
            LinearForm(eye.copy(), np.zeros(g.input_dim)))

    x0, eps = box.input_center_eps(g)
    ival: dict[str, tuple[np.ndarray, np.ndarray]] = {
        g.input_id: box.interval(g.input_id)}
    for node in g.nodes:
        if node.op == "input":
            continue
        fl, fu = _interval_image(node, ival)
        if node.id not in branchable:
            ival[node.id] = (fl, fu)
            continue
        forms = node_interval_forms(g, node.id, box)
        l = np.maximum(concretize(forms.lower, x0, eps, lower=True), fl)
        u = np.minimum(concretize(forms.upper, x0, eps, lower=False), fu)
        if overrides and node.id in overrides:
            ol, ou = overrides[node.id]
            l = np.maximum(l, ol)
            u = np.minimum(u, ou)
        box.set(node.id, l, np.maximum(u, l))
        ival[node.id] = box.interval(node.id)
        shortcuts.forms[node.id] = forms
    return box, shortcuts
