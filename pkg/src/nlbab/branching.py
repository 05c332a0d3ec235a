"""Branch decisions: which neuron to split and where to split it.

Two halves. The offline half measures, for a nonlinearity kind, how much
relaxation looseness a split at point p leaves behind (closed-form integral
of the upper-minus-lower gap over both pieces) and tabulates the best p on
an (l, u) grid so runtime lookups are a nearest-cell read. The online half
scores split candidates: a stored backward pass is decomposed around the
candidate node so that swapping one neuron's contribution (re-relaxed
consumers, child interval) estimates each child's bound without a full
repass. Every estimate is itself a sound lower bound for its child region,
just a looser one than a dedicated pass would give.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .boundprop import (Box, ShortcutBounds, backward_bound,
                        backward_to_node, concretize)
from .graph import NONLINEAR_OPS, Graph, VerificationSpec
from .relaxation import relax_mul, relax_unary

__all__ = [
    "BranchDecision",
    "BranchPointTable",
    "TableEntry",
    "UnbranchableDomain",
    "tightness_loss",
    "optimize_branch_point",
    "build_table",
    "save_table",
    "load_table",
    "query_table",
    "signature_of",
    "ScoreContext",
    "bbps_score",
    "babsr_score",
    "select_branch",
    "CANDIDATE_CAP",
    "MIN_BRANCH_WIDTH",
]

CANDIDATE_CAP = 512
MIN_BRANCH_WIDTH = 1e-6


class UnbranchableDomain(Exception):
    """No candidate neuron has a wide-enough interval to split."""


@dataclass(frozen=True)
class BranchDecision:
    """Split neuron ``neuron`` of node ``node_id`` at ``point``.

    Branch 1 keeps [l, point], branch 2 keeps [point, u].
    """

    node_id: str
    neuron: int
    point: float


# ---------------------------------------------------------------------------
# tightness loss (offline)


def _unary_gap_integral(kind: str, a, b):
    """Integral of (upper - lower) relaxation line gap over [a, b]."""
    res = relax_unary(kind, a, b)
    da = res.up_a - res.lo_a
    db = res.up_b - res.lo_b
    return da * (b * b - a * a) * 0.5 + db * (b - a)


def _mul_gap_integral(a, b, l, u):
    """Plane gap integrated over the rectangle [a,b] x [l,u].

    Both factors share one tabulated interval: the table keys a single
    (l, u), the x side is split at p, the y side keeps the full range.
    """
    res = relax_mul(a, b, l, u)
    dax = res.up_a - res.lo_a
    day = res.up_ay - res.lo_ay
    db = res.up_b - res.lo_b
    area = (b - a) * (u - l)
    return area * (dax * (a + b) * 0.5 + day * (l + u) * 0.5 + db)


def tightness_loss(kind: str, l, u, p):
    """Relaxation looseness left after splitting (l, u) at p.

    ``kind`` is a single op name or a '+'-joined consumer signature (a node
    feeding several nonlinearities accumulates each consumer's gap). Uses
    default relaxation parameters so the value is domain-independent.
    Vectorizes over array-valued ``p`` (or l/u).
    """
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    total = np.zeros(np.broadcast_shapes(l.shape, u.shape, p.shape))
    for part in kind.split("+"):
        if part == "mul":
            total = total + _mul_gap_integral(l, p, l, u)
            total = total + _mul_gap_integral(p, u, l, u)
        else:
            total = total + _unary_gap_integral(part, l, p)
            total = total + _unary_gap_integral(part, p, u)
    return np.maximum(total, 0.0) if total.ndim else float(max(total, 0.0))


def _candidate_step(kind: str) -> float:
    return 0.1 if "mul" in kind.split("+") else 0.01


def optimize_branch_point(kind: str, l: float, u: float,
                          step: float | None = None) -> float:
    """Enumerate split points on a fixed step; return the loss argmin.

    The midpoint is always among the candidates, so the returned point never
    does worse than splitting in the middle.
    """
    if not l < u:
        raise ValueError(f"need l < u, got ({l}, {u})")
    if step is None:
        step = _candidate_step(kind)
    pts = np.arange(l + step, u - 0.5 * step, step)
    margin = 1e-9 * (1.0 + abs(l) + abs(u))
    pts = pts[(pts > l + margin) & (pts < u - margin)]
    pts = np.unique(np.append(pts, 0.5 * (l + u)))
    losses = tightness_loss(kind, l, u, pts)
    return float(pts[int(np.argmin(losses))])


@dataclass
class TableEntry:
    kind: str
    consumers: list[str]
    lu_range: tuple[float, float]
    step: float
    points: np.ndarray  # (n, n), row-major over (l, u); NaN where l >= u

    @property
    def grid(self) -> np.ndarray:
        lo, hi = self.lu_range
        n = self.points.shape[0]
        return lo + self.step * np.arange(n)


@dataclass
class BranchPointTable:
    """Pre-optimized split points per consumer signature."""

    entries: dict[str, TableEntry] = field(default_factory=dict)

    def get(self, kind: str) -> TableEntry | None:
        return self.entries.get(kind)


def build_table(kinds, lu_range=(-5.0, 5.0), step=0.1) -> BranchPointTable:
    """Tabulate optimize_branch_point over the (l, u) grid for each kind.

    Cells with l >= u are invalid (NaN). Pure enumeration with a fixed
    candidate order: two builds with the same settings match bitwise.
    """
    lo, hi = float(lu_range[0]), float(lu_range[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError(f"bad table range ({lo}, {hi})")
    if not step > 0:
        raise ValueError("grid step must be positive")
    n = int(round((hi - lo) / step)) + 1
    grid = lo + step * np.arange(n)
    table = BranchPointTable()
    for kind in kinds:
        sig = "+".join(sorted(kind.split("+")))
        pts = np.full((n, n), np.nan)
        for i, gl in enumerate(grid):
            for j, gu in enumerate(grid):
                if gl < gu - 1e-12:
                    pts[i, j] = optimize_branch_point(sig, float(gl), float(gu))
        table.entries[sig] = TableEntry(
            kind=sig, consumers=sig.split("+"),
            lu_range=(lo, hi), step=float(step), points=pts)
    return table


def save_table(table: BranchPointTable, path: str) -> None:
    docs = []
    for sig in sorted(table.entries):
        e = table.entries[sig]
        rows = [[None if np.isnan(v) else float(v) for v in row]
                for row in e.points]
        docs.append({"kind": e.kind, "consumers": list(e.consumers),
                     "range": [e.lu_range[0], e.lu_range[1]],
                     "step": e.step, "points": rows})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(docs, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_table(path: str) -> BranchPointTable:
    with open(path, "r", encoding="utf-8") as fh:
        docs = json.load(fh)
    table = BranchPointTable()
    for doc in docs:
        pts = np.array([[np.nan if v is None else float(v) for v in row]
                        for row in doc["points"]])
        table.entries[doc["kind"]] = TableEntry(
            kind=doc["kind"], consumers=list(doc["consumers"]),
            lu_range=(float(doc["range"][0]), float(doc["range"][1])),
            step=float(doc["step"]), points=pts)
    return table


def query_table(table: BranchPointTable, kind: str, l: float, u: float) -> float:
    """Stored point at the nearest (l, u) grid cell; midpoint when unusable."""
    mid = 0.5 * (l + u)
    entry = table.get(kind) if table is not None else None
    if entry is None:
        return mid
    lo, hi = entry.lu_range
    if l < lo or l > hi or u < lo or u > hi:
        return mid
    grid = entry.grid
    i = int(np.argmin(np.abs(grid - l)))
    j = int(np.argmin(np.abs(grid - u)))
    p = entry.points[i, j]
    if np.isnan(p) or not (l < p < u):
        return mid
    return float(p)


def signature_of(g: Graph, node_id: str) -> str:
    """Consumer signature: sorted '+'-joined ops of nonlinear consumers."""
    ops = [g.node(c).op for c in g.consumers[node_id]
           if g.node(c).op in NONLINEAR_OPS]
    return "+".join(sorted(ops))


# ---------------------------------------------------------------------------
# candidate scoring (online)


def _col(arr, j):
    """Column j of a relaxation coefficient array of shape (w,) or (rows, w)."""
    a = np.asarray(arr)
    return a[..., j]


def _stored_push(consumer, tr, box: Box, node_id: str):
    """Per-column contributions the stored pass pushed from one consumer.

    Returns (per input slot that equals node_id: coefficient (rows, w)),
    (other-slot coefficient or None, other node id), intercept c (rows, w).
    """
    Ap = np.maximum(tr.A, 0.0)
    An = np.minimum(tr.A, 0.0)
    r = tr.relax
    c = Ap * r.lo_b + An * r.up_b
    if consumer.op == "mul":
        mx = Ap * r.lo_a + An * r.up_a
        my = Ap * r.lo_ay + An * r.up_ay
        x_id, y_id = consumer.inputs
        own = np.zeros_like(tr.A)
        other = None
        other_id = None
        if x_id == node_id:
            own = own + mx
        else:
            other = mx
            other_id = x_id
        if y_id == node_id:
            own = own + my
        else:
            other = my if other is None else other + my
            other_id = y_id
        return own, other, other_id, c
    m = Ap * r.lo_a + An * r.up_a
    return m, None, None, c


def _child_push(consumer, tr, box: Box, node_id: str, lc, uc):
    """Same contributions under a child interval, default parameters."""
    Ap = np.maximum(tr.A, 0.0)
    An = np.minimum(tr.A, 0.0)
    if consumer.op == "mul":
        x_id, y_id = consumer.inputs
        if x_id == node_id and y_id == node_id:
            r = relax_mul(lc, uc, lc, uc)
        elif x_id == node_id:
            ly, uy = box.interval(y_id)
            r = relax_mul(lc, uc, ly, uy)
        else:
            lx, ux = box.interval(x_id)
            r = relax_mul(lx, ux, lc, uc)
        c = Ap * r.lo_b + An * r.up_b
        mx = Ap * r.lo_a + An * r.up_a
        my = Ap * r.lo_ay + An * r.up_ay
        own = np.zeros_like(tr.A)
        other = None
        other_id = None
        if x_id == node_id:
            own = own + mx
        else:
            other, other_id = mx, x_id
        if y_id == node_id:
            own = own + my
        else:
            other = my if other is None else other + my
            other_id = y_id
        return own, other, other_id, c
    r = relax_unary(consumer.op, lc, uc)
    c = Ap * r.lo_b + An * r.up_b
    m = Ap * r.lo_a + An * r.up_a
    return m, None, None, c


def _interval_sub(m: np.ndarray, l, u) -> np.ndarray:
    """Lower-bound substitution of coefficient-times-value by an interval."""
    return np.maximum(m, 0.0) * l + np.minimum(m, 0.0) * u


class ScoreContext:
    """Everything one domain needs to score all of its split candidates.

    Holds the stored pass trace plus, per candidate node, the decomposition
    (withheld column matrix M, bypass form, per-neuron interval pieces).
    Estimates follow by swapping single columns; see the module docstring.
    """

    def __init__(self, g: Graph, spec: VerificationSpec, domain,
                 shortcuts: ShortcutBounds | None = None):
        self.g = g
        self.spec = spec
        self.domain = domain
        self.box: Box = domain.box
        rows, _, self.trace = backward_bound(g, spec, self.box, domain,
                                             want_trace=True)
        self.stored_min = float(np.min(rows))
        self.x0, self.eps = self.box.input_center_eps(g)
        self._ref: dict[str, tuple] = {}

    def _ref_data(self, node_id: str):
        cached = self._ref.get(node_id)
        if cached is not None:
            return cached
        M, rest = backward_to_node(self.g, self.spec, self.box, node_id,
                                   self.domain)
        l, u = self.box.interval(node_id)
        pieces = _interval_sub(M, l, u)  # (rows, width)
        base = concretize(rest, self.x0, self.eps, lower=True)
        v_ref = base + pieces.sum(axis=1)
        data = (M, pieces, v_ref, l, u)
        self._ref[node_id] = data
        return data

    def _consumer_deltas(self, node_id: str, points: np.ndarray,
                         child_low: bool):
        """Column deltas from re-relaxing every nonlinear consumer.

        Vectorized over all neurons of the node at once: ``points`` has one
        split point per neuron; the child interval is [l, p] or [p, u].
        Returns (delta M (rows, w), delta c (rows, w), partner piece
        (rows, w)).
        """
        g = self.g
        box = self.box
        l, u = box.interval(node_id)
        lc = l if child_low else points
        uc = points if child_low else u
        dM = None
        dc = None
        partner = None
        for cid in dict.fromkeys(g.consumers[node_id]):
            consumer = g.node(cid)
            if consumer.op not in NONLINEAR_OPS:
                continue
            tr = self.trace.nonlinear.get(cid)
            if tr is None:
                continue  # consumer carries no objective flow
            m_st, o_st, o_id, c_st = _stored_push(consumer, tr, box, node_id)
            m_ch, o_ch, _, c_ch = _child_push(consumer, tr, box, node_id,
                                              lc, uc)
            dM = m_ch - m_st if dM is None else dM + (m_ch - m_st)
            dc = c_ch - c_st if dc is None else dc + (c_ch - c_st)
            if o_id is not None:
                dlt = o_ch - o_st
                lo_o, up_o = box.interval(o_id)
                pp = _interval_sub(dlt, lo_o, up_o)
                partner = pp if partner is None else partner + pp
        return dM, dc, partner

    def score_node(self, node_id: str, points: np.ndarray,
                   drop_linear: bool = False):
        """Per-neuron child-bound estimates for both branches.

        Returns (s1, s2), each (width,): the worst-row estimated bound of
        the low/high child when that neuron splits at its point.
        ``drop_linear`` switches to the baseline heuristic that discards the
        branched node's coefficient term instead of substituting intervals.
        """
        M, pieces, v_ref, l, u = self._ref_data(node_id)
        scores = []
        for child_low in (True, False):
            lc = l if child_low else points
            uc = points if child_low else u
            dM, dc, partner = self._consumer_deltas(node_id, points, child_low)
            M_new = M if dM is None else M + dM
            if drop_linear:
                piece_new = np.zeros_like(M_new)
            else:
                piece_new = _interval_sub(M_new, lc, uc)
            est = v_ref[:, None] - pieces + piece_new
            if dc is not None:
                est = est + dc
            if partner is not None and not drop_linear:
                est = est + partner
            scores.append(est.min(axis=0))
        return scores[0], scores[1]


def bbps_score(g: Graph, spec: VerificationSpec, domain,
               shortcuts: ShortcutBounds | None, candidate: tuple[str, int],
               p: float, context: ScoreContext | None = None):
    """Estimated child bounds for splitting one neuron at ``p``.

    Re-relaxes only the candidate's nonlinear consumers under each child
    interval, keeps the rest of the stored pass, and bounds the branched
    neuron's own term by its (child) interval. Returns (score1, score2) for
    the [l,p] and [p,u] children; both are sound lower bounds of the
    property on their child regions.
    """
    node_id, j = candidate
    ctx = context or ScoreContext(g, spec, domain, shortcuts)
    l, u = ctx.box.interval(node_id)
    if not (l[j] < p < u[j]):
        raise ValueError(f"split point {p} outside ({l[j]}, {u[j]})")
    points = 0.5 * (l + u)
    points[j] = p
    s1, s2 = ctx.score_node(node_id, points)
    return float(s1[j]), float(s2[j])


def babsr_score(g: Graph, spec: VerificationSpec, domain,
                shortcuts: ShortcutBounds | None, candidate: tuple[str, int],
                p: float, context: ScoreContext | None = None):
    """Baseline score: like bbps_score but the propagation stops before the
    branched node and the remaining coefficient term is dropped, keeping
    only the re-relaxed consumers' intercept changes."""
    node_id, j = candidate
    ctx = context or ScoreContext(g, spec, domain, shortcuts)
    l, u = ctx.box.interval(node_id)
    if not (l[j] < p < u[j]):
        raise ValueError(f"split point {p} outside ({l[j]}, {u[j]})")
    points = 0.5 * (l + u)
    points[j] = p
    s1, s2 = ctx.score_node(node_id, points, drop_linear=True)
    return float(s1[j]), float(s2[j])


def _candidates(g: Graph, box: Box, cap: int = CANDIDATE_CAP):
    """Branchable (node, neuron) pairs, widest first, capped at ``cap``."""
    found = []
    for order, nid in enumerate(g.branchable_nodes()):
        l, u = box.interval(nid)
        for j in range(l.size):
            w = u[j] - l[j]
            if w > MIN_BRANCH_WIDTH:
                found.append((-w, order, j, nid))
    found.sort()
    return [(nid, j) for _, order, j, nid in found[:cap]]


def _branch_point(g: Graph, node_id: str, j: int, l: float, u: float,
                  branch_points) -> float:
    """Split point per policy: a table lookup or the midpoint."""
    if isinstance(branch_points, BranchPointTable):
        p = query_table(branch_points, signature_of(g, node_id), l, u)
    else:
        p = 0.5 * (l + u)
    if not (l < p < u):
        p = 0.5 * (l + u)
    return p


def select_branch(g: Graph, spec: VerificationSpec, domain,
                  shortcuts: ShortcutBounds | None = None,
                  heuristic: str = "bbps", branch_points=None,
                  rng: np.random.Generator | None = None,
                  cap: int = CANDIDATE_CAP) -> BranchDecision:
    """Pick the neuron and point to split a domain on.

    Scores every candidate at its policy point, aggregates the two child
    estimates pessimistically (min), and takes the argmax; ties fall to the
    first candidate in (node declaration, neuron index) order. ``heuristic``
    is one of ``bbps``, ``babsr``, ``random``.
    """
    box: Box = domain.box
    cands = _candidates(g, box, cap)
    if not cands:
        raise UnbranchableDomain("no neuron with interval wider than "
                                 f"{MIN_BRANCH_WIDTH}")

    if heuristic == "random":
        rng = rng or np.random.default_rng()
        nid, j = cands[int(rng.integers(len(cands)))]
        l, u = box.interval(nid)
        p = _branch_point(g, nid, j, float(l[j]), float(u[j]), branch_points)
        return BranchDecision(nid, j, p)
    if heuristic not in ("bbps", "babsr"):
        raise ValueError(f"unknown branching heuristic {heuristic!r}")

    ctx = ScoreContext(g, spec, domain, shortcuts)
    by_node: dict[str, list[int]] = {}
    for nid, j in cands:
        by_node.setdefault(nid, []).append(j)

    best_score = -np.inf
    best = None
    best_width = 0.0
    # ties fall to the first candidate in ascending (node id, neuron) order,
    # so iterate that order and replace only on strict improvement
    for nid in sorted(by_node):
        l, u = box.interval(nid)
        points = 0.5 * (l + u)
        for j in by_node[nid]:
            points[j] = _branch_point(g, nid, j, float(l[j]), float(u[j]),
                                      branch_points)
        s1, s2 = ctx.score_node(nid, points,
                                drop_linear=(heuristic == "babsr"))
        score = np.minimum(s1, s2)
        for j in sorted(by_node[nid]):
            if float(score[j]) > best_score:
                best_score = float(score[j])
                best = BranchDecision(nid, j, float(points[j]))
                best_width = float(u[j] - l[j])

    # when no candidate predicts improvement over what the domain already
    # certifies and the argmax sits on a sliver, the score signal is
    # exhausted; fall back to the widest interval (cands is widest first)
    baseline = ctx.stored_min
    held = getattr(domain, "bound", None)
    if held is not None and np.isfinite(held):
        baseline = max(baseline, float(held))
    wid, wj = cands[0]
    l, u = box.interval(wid)
    if (best_score <= baseline + 1e-12
            and best_width < 0.05 * float(u[wj] - l[wj])):
        p = _branch_point(g, wid, wj, float(l[wj]), float(u[wj]), branch_points)
        return BranchDecision(wid, wj, p)
    return best
