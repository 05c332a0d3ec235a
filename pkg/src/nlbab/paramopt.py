"""Projected gradient ascent on relaxation parameters and split multipliers.

The concretized lower bound is piecewise-differentiable in the relaxation
parameters (alpha, one per spec row / neuron / side) and in the Lagrange
multipliers (beta, one per spec row per split). Gradients come from one
reverse bound pass plus a forward adjoint sweep: the pass records, at every
nonlinearity, the coefficient matrix it received and the relaxation lines it
applied; the sweep then computes for each node the sensitivity of the final
bound to a unit coefficient planted there. Chain rule against the stored
line-coefficient derivatives gives all parameter gradients in closed form.

Each spec row's bound depends only on that row's parameters, so the rows
optimize independently and the returned bound may take each row's best
iterate separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundprop import (BoundTrace, Box, LinearForm, Split, apply_split_terms,
                        backward_bound)
from .graph import Graph, VerificationSpec
from .relaxation import AlphaStore

__all__ = [
    "BetaEntry",
    "BetaStore",
    "apply_beta",
    "bound_and_gradients",
    "optimize_parameters",
]


@dataclass
class BetaEntry:
    """One split constraint with its per-row multiplier."""

    split: Split
    beta: np.ndarray  # (rows,), >= 0

    def copy(self) -> "BetaEntry":
        return BetaEntry(self.split, self.beta.copy())


@dataclass
class BetaStore:
    """The domain's split history with multipliers, in split order."""

    entries: list[BetaEntry] = field(default_factory=list)

    def append(self, split: Split, rows: int) -> None:
        # beta starts at 0: the child bound starts equal to the
        # unconstrained bound and ascent can only improve it.
        self.entries.append(BetaEntry(split, np.zeros(rows)))

    def tighten(self, split: Split, rows: int) -> None:
        """Record a split, superseding any same-side split of the neuron.

        Re-splitting a neuron on the same side yields a strictly tighter
        constraint that implies the old one, so the old entry is replaced
        in place and its multiplier is kept as a warm start.  Keeping the
        stale point instead would leave a multiplier attached to a slack
        constraint, which drags the child bound down until ascent unwinds
        it.
        """
        for e in self.entries:
            s = e.split
            if (s.node_id == split.node_id and s.neuron == split.neuron
                    and s.upper_branch == split.upper_branch):
                e.split = split
                return
        self.append(split, rows)

    def splits(self) -> list[Split]:
        return [e.split for e in self.entries]

    def betas(self) -> list[np.ndarray]:
        return [e.beta for e in self.entries]

    def copy(self) -> "BetaStore":
        return BetaStore([e.copy() for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


def apply_beta(lf: LinearForm, entries) -> LinearForm:
    """Add split penalty terms to a lower-bound linear form at one node.

    ``entries`` is an iterable of :class:`BetaEntry` (or (Split, beta)
    pairs) whose neurons index columns of ``lf.A``. Returns a new form;
    negative multipliers are rejected.
    """
    out = lf.copy()
    pairs = []
    for e in entries:
        if isinstance(e, BetaEntry):
            pairs.append((e.split, e.beta))
        else:
            pairs.append(e)
    apply_split_terms(out.A, out.c, pairs, lower=True)
    return out


# ---------------------------------------------------------------------------
# gradients


def _adjoint_sweep(g: Graph, trace: BoundTrace, x_eff: np.ndarray):
    """Forward sensitivity sweep: v[node][row, j] = dV/d(coefficient at node).

    ``x_eff`` is the effective input the concretization pairs with each
    coefficient: x0 - eps * sign(A0) per row and dimension.
    """
    rows = x_eff.shape[0]
    v: dict[str, np.ndarray] = {}
    for node in g.nodes:
        if node.op == "input":
            v[node.id] = x_eff
        elif node.op == "affine":
            v[node.id] = v[node.inputs[0]] @ node.weight.T + node.bias
        elif node.op == "add":
            v[node.id] = v[node.inputs[0]] + v[node.inputs[1]]
        else:
            tr = trace.nonlinear.get(node.id)
            if tr is None:
                # no objective flow through this node; its sensitivity is
                # irrelevant for everything that does carry flow
                v[node.id] = np.zeros((rows, g.width(node.id)))
                continue
            r = tr.relax
            if node.op == "mul":
                vx = v[node.inputs[0]]
                vy = v[node.inputs[1]]
                lo = vx * r.lo_a + vy * r.lo_ay + r.lo_b
                up = vx * r.up_a + vy * r.up_ay + r.up_b
            else:
                vin = v[node.inputs[0]]
                lo = vin * r.lo_a + r.lo_b
                up = vin * r.up_a + r.up_b
            v[node.id] = np.where(tr.A > 0, lo, np.where(tr.A < 0, up, 0.0))
    return v


def bound_and_gradients(g: Graph, spec: VerificationSpec, box: Box, domain):
    """One bound evaluation with gradients for every alpha and beta.

    Returns ``(bound rows, alpha grads keyed like AlphaStore, beta grads
    listed in split order)``. Gradients are of each row's bound w.r.t. that
    row's own parameters (rows never interact).
    """
    lb, form, trace = backward_bound(g, spec, box, domain, want_trace=True)
    x0, eps = box.input_center_eps(g)
    x_eff = x0[None, :] - eps[None, :] * np.sign(form.A)
    v = _adjoint_sweep(g, trace, x_eff)

    grads_alpha: dict[tuple[str, str], np.ndarray] = {}
    for node_id, tr in trace.nonlinear.items():
        node = tr.node
        Ap = np.maximum(tr.A, 0.0)
        An = np.minimum(tr.A, 0.0)
        if node.op == "mul":
            vx = v[node.inputs[0]]
            vy = v[node.inputs[1]]
            if tr.relax.d_lo is not None:
                da, day, db = tr.relax.d_lo
                grads_alpha[(node_id, "lo")] = Ap * (vx * da + vy * day + db)
            if tr.relax.d_up is not None:
                da, day, db = tr.relax.d_up
                grads_alpha[(node_id, "up")] = An * (vx * da + vy * day + db)
        else:
            vin = v[node.inputs[0]]
            if tr.relax.d_lo is not None:
                da, db = tr.relax.d_lo
                grads_alpha[(node_id, "lo")] = Ap * (vin * da + db)
            if tr.relax.d_up is not None:
                da, db = tr.relax.d_up
                grads_alpha[(node_id, "up")] = An * (vin * da + db)

    n_splits = len(getattr(domain, "splits", ()) or ())
    grads_beta: list[np.ndarray | None] = [None] * n_splits
    for ts in trace.splits:
        sigma = -1.0 if ts.split.upper_branch else 1.0
        vr = v[ts.split.node_id][:, ts.split.neuron]
        grads_beta[ts.index] = sigma * (vr - ts.split.point)
    return lb, grads_alpha, grads_beta, trace


def _seed_alphas(store: AlphaStore, trace: BoundTrace, rows: int) -> None:
    """Fill missing store entries with the defaults the pass actually used."""
    for node_id, tr in trace.nonlinear.items():
        for side, alpha, abox in (("lo", tr.relax.lo_alpha, tr.relax.lo_box),
                                  ("up", tr.relax.up_alpha, tr.relax.up_box)):
            if alpha is None:
                continue
            shape = (rows,) + (np.shape(alpha)[-1:] or (1,))
            if store.get(node_id, side) is None:
                store.put(node_id, side,
                          np.broadcast_to(alpha, shape).copy())
            if abox is not None:
                store.boxes[(node_id, side)] = (
                    np.array(np.broadcast_to(abox[0], shape)),
                    np.array(np.broadcast_to(abox[1], shape)))


def optimize_parameters(g: Graph, spec: VerificationSpec, domain,
                        iters: int = 20, lr: float = 0.1,
                        decay: float = 0.98):
    """Tighten a domain's bound by projected gradient ascent on (alpha, beta).

    Mutates the domain's parameter stores toward the best iterate seen and
    returns ``(bound rows, trace)`` where the bound takes each row's best
    value across iterations and ``trace`` lists the best-so-far worst-row
    bound after every evaluation (non-decreasing by construction).
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    box: Box = domain.box
    store: AlphaStore = domain.alphas
    rows = spec.rows

    lb, g_alpha, g_beta, trace = bound_and_gradients(g, spec, box, domain)
    _seed_alphas(store, trace, rows)
    best_rows = lb.copy()
    best_min = float(lb.min())
    best_state = (store.copy(), [b.copy() for b in domain.betas])
    history = [best_min]

    # adaptive per-coordinate scaling: the bound is piecewise linear in beta
    # with subgradient jumps the size of the split slacks, so raw lr*g steps
    # overshoot the kinks and oscillate instead of settling
    b1, b2, tiny = 0.9, 0.999, 1e-12
    m_a: dict = {}
    v_a: dict = {}
    m_b: list = [None] * len(g_beta)
    v_b: list = [None] * len(g_beta)

    step = lr
    for t in range(1, iters + 1):
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for key, ga in g_alpha.items():
            if key not in store.values or not np.all(np.isfinite(ga)):
                continue
            m = m_a.get(key)
            if m is None or m.shape != ga.shape:
                m = np.zeros_like(ga)
                v = np.zeros_like(ga)
            else:
                v = v_a[key]
            m = b1 * m + (1.0 - b1) * ga
            v = b2 * v + (1.0 - b2) * ga * ga
            m_a[key], v_a[key] = m, v
            store.values[key] = store.values[key] + step * (m / c1) / (
                np.sqrt(v / c2) + tiny)
        store.clip_()
        for k, gb in enumerate(g_beta):
            if gb is None or not np.all(np.isfinite(gb)):
                continue
            m = m_b[k]
            if m is None:
                m = np.zeros_like(gb)
                v = np.zeros_like(gb)
            else:
                v = v_b[k]
            m = b1 * m + (1.0 - b1) * gb
            v = b2 * v + (1.0 - b2) * gb * gb
            m_b[k], v_b[k] = m, v
            np.maximum(domain.betas[k] + step * (m / c1) / (np.sqrt(v / c2) + tiny),
                       0.0, out=domain.betas[k])
        step *= decay

        lb, g_alpha, g_beta, trace = bound_and_gradients(g, spec, box, domain)
        # relaxation cases can shift as alpha moves; refresh the valid boxes
        # the projection uses
        _seed_alphas(store, trace, rows)
        np.maximum(best_rows, lb, out=best_rows)
        if float(lb.min()) > best_min:
            best_min = float(lb.min())
            best_state = (store.copy(), [b.copy() for b in domain.betas])
        history.append(float(best_rows.min()))

    domain.alphas = best_state[0]
    for k, b in enumerate(best_state[1]):
        domain.betas[k][:] = b
    return best_rows, history
