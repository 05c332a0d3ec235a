"""Scratch: paramopt gradcheck + monotone improvement. Not shipped."""
import sys

import numpy as np

sys.path.insert(0, "src")

from nlbab.graph import evaluate
from nlbab.boundprop import backward_bound, compute_intermediate_bounds, Split
from nlbab.paramopt import (BetaStore, bound_and_gradients, optimize_parameters,
                            _seed_alphas)
from nlbab.relaxation import AlphaStore

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


def gradcheck(seed):
    rng = np.random.default_rng(seed)
    g, spec = random_model(rng)
    box, _ = compute_intermediate_bounds(g, spec)
    dom = Dom(box)
    # maybe a split with interior beta
    br = g.branchable_nodes()
    if rng.random() < 0.7 and br:
        nid = br[int(rng.integers(len(br)))]
        l, u = box.interval(nid)
        j = int(rng.integers(l.size))
        p = float(rng.uniform(l[j] + 0.1 * (u[j] - l[j]),
                              u[j] - 0.1 * (u[j] - l[j])))
        if p > l[j] and p < u[j]:
            s = Split(nid, j, bool(rng.random() < 0.5), p)
            dom.beta_store.append(s, spec.rows)
            dom.beta_store.entries[0].beta[:] = rng.uniform(0.05, 0.5, spec.rows)

    # seed alphas, then randomize into box interiors to dodge kinks
    lb, ga, gb, trace = bound_and_gradients(g, spec, box, dom)
    _seed_alphas(dom.alphas, trace, spec.rows)
    for key, val in dom.alphas.values.items():
        bx = dom.alphas.boxes.get(key)
        if bx is not None:
            r = rng.uniform(0.25, 0.75, val.shape)
            dom.alphas.values[key] = bx[0] + r * (bx[1] - bx[0])

    lb, ga, gb, trace = bound_and_gradients(g, spec, box, dom)
    h = 1e-5
    worst = 0.0
    checked = 0
    for key, grad in ga.items():
        val = dom.alphas.values[key]
        bx = dom.alphas.boxes.get(key)
        if val.size == 0:
            continue
        for _ in range(min(4, val.size)):
            idx = np.unravel_index(int(rng.integers(val.size)), val.shape)
            if bx is not None and bx[1][idx] - bx[0][idx] < 10 * h:
                continue  # pinned entry, derivative zero by convention
            old = val[idx]
            val[idx] = old + h
            hi, _ = backward_bound(g, spec, box, dom)
            val[idx] = old - h
            lo, _ = backward_bound(g, spec, box, dom)
            val[idx] = old
            fd = (hi[idx[0]] - lo[idx[0]]) / (2 * h)
            an = grad[idx]
            err = abs(fd - an) / max(1.0, abs(fd), abs(an))
            worst = max(worst, err)
            checked += 1
            if err > 1e-4:
                print(f"  seed {seed} ALPHA GRAD MISMATCH {key}{idx}: "
                      f"fd={fd:.8f} an={an:.8f} err={err:.2e}")
                return worst, checked, False
    for k, grad in enumerate(gb):
        if grad is None:
            continue
        beta = dom.beta_store.entries[k].beta
        for row in range(beta.size):
            old = beta[row]
            beta[row] = old + h
            hi, _ = backward_bound(g, spec, box, dom)
            beta[row] = max(old - h, 0.0)
            lo, _ = backward_bound(g, spec, box, dom)
            beta[row] = old
            fd = (hi[row] - lo[row]) / (h + old - max(old - h, 0.0))
            an = grad[row]
            err = abs(fd - an) / max(1.0, abs(fd), abs(an))
            worst = max(worst, err)
            checked += 1
            if err > 1e-4:
                print(f"  seed {seed} BETA GRAD MISMATCH split {k} row {row}: "
                      f"fd={fd:.8f} an={an:.8f}")
                return worst, checked, False
    return worst, checked, True


def main():
    worst = 0.0
    total = 0
    for seed in range(60):
        w, c, ok = gradcheck(seed)
        worst = max(worst, w)
        total += c
        if not ok:
            return 1
    print(f"gradcheck OK: {total} entries, worst rel err {worst:.3e}")

    # monotone improvement + soundness after optimization
    rng = np.random.default_rng(123)
    improved = 0
    for i in range(40):
        g, spec = random_model(rng)
        box, _ = compute_intermediate_bounds(g, spec)
        dom = Dom(box)
        lb0, _ = backward_bound(g, spec, box, dom)
        best, hist = optimize_parameters(g, spec, dom, iters=20)
        assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:])), "non-monotone"
        assert best.min() >= lb0.min() - 1e-12, "worse than initial"
        if best.min() > lb0.min() + 1e-9:
            improved += 1
        x, vals = sample_rows(g, spec, 4000, rng)
        assert np.all(best <= vals.min(axis=0) + 1e-9), \
            f"[{i}] unsound after opt: {(best - vals.min(axis=0)).max():.3e}"
        # iters=0 returns the initial bound
        dom0 = Dom(box)
        b0, h0 = optimize_parameters(g, spec, dom0, iters=0)
        assert np.allclose(b0, lb0), "iters=0 changed the bound"
    print(f"optimize OK on 40 graphs; improved strictly on {improved}")

    # beta improves a split child's bound
    rng = np.random.default_rng(5)
    cnt = better = 0
    while cnt < 25:
        g, spec = random_model(rng)
        box, _ = compute_intermediate_bounds(g, spec)
        br = g.branchable_nodes()
        nid = br[int(rng.integers(len(br)))]
        l, u = box.interval(nid)
        j = int(rng.integers(l.size))
        if u[j] - l[j] < 1e-3:
            continue
        p = 0.5 * (l[j] + u[j])
        dom = Dom(box.replaced(nid, j, l[j], p))
        dom.beta_store.append(Split(nid, j, False, p), spec.rows)
        lb0, _ = backward_bound(g, spec, dom.box, dom)
        best, _ = optimize_parameters(g, spec, dom, iters=20)
        if best.min() > lb0.min() + 1e-9:
            better += 1
        cnt += 1
    print(f"beta/alpha improved split children on {better}/25 cases")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
