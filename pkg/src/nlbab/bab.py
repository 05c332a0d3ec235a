"""Branch-and-bound driver: falsification probe, root bound, then refine.

The pool is a min-heap keyed on (bound, seq), so the domain with the worst
certified bound is processed first and ties go to the older domain.  Each
popped domain is split once, both children are re-optimized, and children
whose bound clears zero are pruned.  The run ends when the pool drains
(verified), a counterexample shows up (falsified), or a resource limit is
hit (unknown).
"""

from __future__ import annotations

import heapq
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundprop import Box, ShortcutBounds, Split, compute_intermediate_bounds
from .branching import (
    BranchDecision,
    BranchPointTable,
    UnbranchableDomain,
    select_branch,
)
from .graph import Graph, VerificationSpec, evaluate
from .paramopt import AlphaStore, BetaStore, optimize_parameters

HEURISTICS = ("bbps", "babsr", "random")

# exhaustive corner enumeration is 2**d points; beyond this we sample
CORNER_DIM_CAP = 12


@dataclass
class Domain:
    """One region of the input box together with its certificate state."""

    box: Box
    alphas: AlphaStore
    beta_store: BetaStore
    bound_rows: np.ndarray
    bound: float
    depth: int = 0
    seq: int = 0

    @property
    def splits(self):
        return self.beta_store.splits()

    @property
    def betas(self):
        return self.beta_store.betas()

    @property
    def overrides(self):
        # every stored interval is valid for this (sub)region, so interval
        # recomputation may intersect against all of them
        return {nid: self.box.interval(nid) for nid in self.box.lower}


@dataclass
class RunConfig:
    timeout: float = 300.0
    max_domains: int = 100_000
    batch: int = 1
    heuristic: str = "bbps"
    branch_points: BranchPointTable | None = None
    alpha_iters: int = 20
    alpha_lr: float = 0.1
    # None: children get min(alpha_iters, 10) steps. Raise this when the
    # target margin is tight; split constraints only pay off once their
    # multipliers have grown, which takes more steps than slope tuning.
    child_iters: int | None = None
    seed: int = 0
    serial: bool = False
    falsify_budget: int = 2000

    def validate(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_domains < 1:
            raise ValueError("max_domains must be at least 1")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic {self.heuristic!r}")
        if self.alpha_iters < 0:
            raise ValueError("alpha_iters must be nonnegative")
        if self.child_iters is not None and self.child_iters < 0:
            raise ValueError("child_iters must be nonnegative")
        if self.falsify_budget < 0:
            raise ValueError("falsify_budget must be nonnegative")


@dataclass
class VerdictReport:
    """Final verdict plus the numbers needed to audit it."""

    status: str
    bound: float
    domains: int
    time_s: float
    counterexample: np.ndarray | None = None
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "bound": float(self.bound),
            "domains": int(self.domains),
            "time_s": float(self.time_s),
        }
        if self.counterexample is not None:
            out["counterexample"] = [float(v) for v in self.counterexample]
        return out

    def canonical_json(self) -> str:
        # timing is excluded so fixed-seed runs compare byte for byte
        out = self.to_dict()
        del out["time_s"]
        return json.dumps(out, sort_keys=True)


def _row_values(g: Graph, spec: VerificationSpec, x: np.ndarray) -> np.ndarray:
    return evaluate(g, x) @ spec.S.T + spec.t


def _min_row(g: Graph, spec: VerificationSpec, x: np.ndarray) -> np.ndarray:
    return _row_values(g, spec, x).min(axis=-1)


def falsify(
    g: Graph,
    spec: VerificationSpec,
    budget: int = 2000,
    rng: np.random.Generator | None = None,
) -> np.ndarray | None:
    """Search the input box for a point violating the property.

    The center is checked first, then the box corners (exhaustively up to
    12 dimensions, sampled above that), then `budget` uniform samples, and
    finally a coordinate-descent polish from the most violating point seen.
    Returns a witness input or None.  budget=0 keeps only the center and
    corner checks.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    lo, hi = spec.lower(), spec.upper()
    d = g.input_dim

    if _min_row(g, spec, spec.center) <= 0:
        return spec.center.copy()

    if d <= CORNER_DIM_CAP:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    else:
        signs = rng.choice((-1.0, 1.0), size=(1024 if budget > 0 else 256, d))
    corners = spec.center + signs * spec.eps
    vals = _min_row(g, spec, corners)
    if vals.min() <= 0:
        return corners[int(np.argmin(vals))].copy()

    best_x = corners[int(np.argmin(vals))]
    best_v = float(vals.min())

    if budget <= 0:
        return None

    samples = rng.uniform(lo, hi, size=(budget, d))
    vals = _min_row(g, spec, samples)
    if vals.min() <= 0:
        return samples[int(np.argmin(vals))].copy()
    if vals.min() < best_v:
        best_v = float(vals.min())
        best_x = samples[int(np.argmin(vals))]

    # coordinate descent on the worst objective row, eval count capped
    x = best_x.copy()
    step = 0.25 * spec.eps.astype(float)
    evals = 0
    while evals < budget and step.max() > 1e-12:
        improved = False
        for j in range(d):
            cand = np.tile(x, (4, 1))
            cand[0, j] = min(hi[j], x[j] + step[j])
            cand[1, j] = max(lo[j], x[j] - step[j])
            cand[2, j] = lo[j]
            cand[3, j] = hi[j]
            vals = _min_row(g, spec, cand)
            evals += 4
            k = int(np.argmin(vals))
            if vals[k] < best_v:
                best_v = float(vals[k])
                x = cand[k]
                improved = True
                if best_v <= 0:
                    return x.copy()
        if not improved:
            step *= 0.5
    return None


def pop_batch(pool: list, n: int) -> list[Domain]:
    """Pop up to n domains, worst bound first, older seq breaking ties."""
    if not pool:
        raise ValueError("pop_batch on an empty pool")
    out = []
    while pool and len(out) < n:
        out.append(heapq.heappop(pool)[2])
    return out


def split_domain(domain: Domain, decision: BranchDecision) -> tuple[Domain, Domain]:
    """Split one input coordinate or hidden neuron at the decision point.

    Children inherit copies of the parent's relaxation parameters; hidden
    splits also get a fresh zero-initialized multiplier row.  Nothing
    mutable is shared with the parent.
    """
    nid, j, p = decision.node_id, decision.neuron, decision.point
    l, u = domain.box.interval(nid)
    children = []
    for upper_branch, (cl, cu) in (
        (False, (l[j], p)),
        (True, (p, u[j])),
    ):
        box = domain.box.replaced(nid, j, cl, cu)
        betas = domain.beta_store.copy()
        betas.tighten(Split(nid, j, upper_branch, p), domain.bound_rows.shape[0])
        children.append(
            Domain(
                box=box,
                alphas=domain.alphas.copy(),
                beta_store=betas,
                bound_rows=domain.bound_rows.copy(),
                bound=domain.bound,
                depth=domain.depth + 1,
            )
        )
    return children[0], children[1]


def _optimize_child(
    g: Graph,
    spec: VerificationSpec,
    child: Domain,
    parent: Domain,
    iters: int,
    lr: float,
) -> None:
    # refresh intermediate intervals under the split before optimizing;
    # downstream relaxations tighten as the branched interval shrinks
    child.box, _ = compute_intermediate_bounds(g, spec, child)
    rows, _ = optimize_parameters(g, spec, child, iters=iters, lr=lr)
    # the child covers a subset of the parent, so the parent's certified
    # per-row bounds remain valid and can only help
    rows = np.maximum(rows, parent.bound_rows)
    child.bound_rows = rows
    child.bound = float(rows.min())


def bab_verify(
    g: Graph,
    spec: VerificationSpec,
    config: RunConfig | None = None,
) -> VerdictReport:
    """Run the full verification loop and return a verdict report."""
    cfg = config or RunConfig()
    cfg.validate()
    t0 = time.monotonic()
    stages: dict[str, float] = {}
    rng = np.random.default_rng(cfg.seed)

    cex = falsify(g, spec, cfg.falsify_budget, rng)
    stages["falsify"] = time.monotonic() - t0
    if cex is not None:
        return VerdictReport(
            status="falsified",
            bound=float(_min_row(g, spec, cex)),
            domains=0,
            time_s=time.monotonic() - t0,
            counterexample=cex,
            stages=stages,
        )

    t1 = time.monotonic()
    box, shortcuts = compute_intermediate_bounds(g, spec)
    root = Domain(
        box=box,
        alphas=AlphaStore(),
        beta_store=BetaStore(),
        bound_rows=np.full(spec.S.shape[0], -np.inf),
        bound=-np.inf,
    )
    rows, _ = optimize_parameters(g, spec, root, iters=cfg.alpha_iters, lr=cfg.alpha_lr)
    root.bound_rows = rows
    root.bound = float(rows.min())
    stages["root"] = time.monotonic() - t1
    if root.bound > 0:
        return VerdictReport(
            status="verified",
            bound=root.bound,
            domains=0,
            time_s=time.monotonic() - t0,
            stages=stages,
        )

    if cfg.child_iters is None:
        child_iters = min(cfg.alpha_iters, 10)
    else:
        child_iters = cfg.child_iters

    def process(parent: Domain):
        if cfg.heuristic == "random":
            dom_rng = np.random.default_rng((cfg.seed, parent.seq))
        else:
            dom_rng = None
        try:
            decision = select_branch(
                g,
                spec,
                parent,
                shortcuts,
                heuristic=cfg.heuristic,
                branch_points=cfg.branch_points,
                rng=dom_rng,
            )
        except UnbranchableDomain:
            return parent, None
        c1, c2 = split_domain(parent, decision)
        for ch in (c1, c2):
            _optimize_child(g, spec, ch, parent, child_iters, cfg.alpha_lr)
        return parent, (c1, c2)

    pool: list = [(root.bound, root.seq, root)]
    seq = 1
    explored = 0
    completed_min = np.inf
    status = "verified"
    stuck: list[Domain] = []
    executor = None
    if not cfg.serial and cfg.batch > 1:
        executor = ThreadPoolExecutor(max_workers=cfg.batch)

    t2 = time.monotonic()
    try:
        while pool:
            if time.monotonic() - t0 > cfg.timeout:
                status = "unknown"
                break
            if explored >= cfg.max_domains:
                status = "unknown"
                break
            batch = pop_batch(pool, min(cfg.batch, cfg.max_domains - explored))
            if executor is not None and len(batch) > 1:
                results = list(executor.map(process, batch))
            else:
                results = [process(parent) for parent in batch]
            # merge in pop order so seq assignment is schedule-independent
            for parent, children in results:
                explored += 1
                if children is None:
                    stuck.append(parent)
                    status = "unknown"
                    continue
                for ch in children:
                    ch.seq = seq
                    seq += 1
                    if ch.bound > 0:
                        completed_min = min(completed_min, ch.bound)
                    else:
                        heapq.heappush(pool, (ch.bound, ch.seq, ch))
            if status == "unknown":
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    stages["search"] = time.monotonic() - t2

    open_bounds = [b for b, _, _ in pool] + [d.bound for d in stuck]
    if open_bounds:
        status = "unknown"
        bound = min(min(open_bounds), completed_min)
    else:
        bound = completed_min if np.isfinite(completed_min) else root.bound
    return VerdictReport(
        status=status,
        bound=float(bound),
        domains=explored,
        time_s=time.monotonic() - t0,
        stages=stages,
    )
