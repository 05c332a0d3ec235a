"""Scratch soundness sweep for the relaxations (not a test file)."""
import numpy as np

from nlbab import relaxation as rx
from nlbab.graph import gelu, sigmoid

rng = np.random.default_rng(0)

FUNCS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "sin": np.sin,
    "gelu": gelu,
    "square": np.square,
}

N = 400
GRID = 2001
TOL = 1e-9

worst = {}
for kind, f in FUNCS.items():
    span = 14.0 if kind == "sin" else 8.0
    a = rng.uniform(-span, span, size=N)
    b = rng.uniform(-span, span, size=N)
    l, u = np.minimum(a, b), np.maximum(a, b)
    # include tiny and degenerate intervals
    l[:20] = rng.uniform(-3, 3, 20)
    u[:20] = l[:20] + 10.0 ** rng.uniform(-14, -6, 20)
    for mode in ("default", "random"):
        if mode == "default":
            res = rx.relax_unary(kind, l, u)
        else:
            r0 = rx.relax_unary(kind, l, u)
            if r0.lo_box is None and r0.up_box is None:
                continue
            alo = None
            aup = None
            if r0.lo_box is not None:
                alo = rng.uniform(r0.lo_box[0], np.maximum(r0.lo_box[1], r0.lo_box[0]))
            if r0.up_box is not None:
                aup = rng.uniform(r0.up_box[0], np.maximum(r0.up_box[1], r0.up_box[0]))
            if kind == "relu":
                res = rx.relax_relu(l, u, alo)
            else:
                res = rx.relax_unary(kind, l, u, alo, aup)
        ts = np.linspace(0.0, 1.0, GRID)
        X = l[:, None] + (u - l)[:, None] * ts[None, :]
        FX = f(X)
        lo = res.lo_a[..., None] * X + res.lo_b[..., None]
        up = res.up_a[..., None] * X + res.up_b[..., None]
        v1 = np.max(lo - FX)
        v2 = np.max(FX - up)
        worst[(kind, mode)] = (float(v1), float(v2))
        bad = np.argwhere((lo - FX) > TOL)
        if bad.size:
            i = bad[0][0]
            print(f"FAIL {kind} {mode} lower: interval ({l[i]}, {u[i]}) "
                  f"viol {v1:.3e} a={res.lo_a[i]} b={res.lo_b[i]}")
        bad = np.argwhere((FX - up) > TOL)
        if bad.size:
            i = bad[0][0]
            print(f"FAIL {kind} {mode} upper: interval ({l[i]}, {u[i]}) "
                  f"viol {v2:.3e} a={res.up_a[i]} b={res.up_b[i]}")

# mul soundness
lx = rng.uniform(-5, 5, N); ux = lx + rng.uniform(0, 6, N)
ly = rng.uniform(-5, 5, N); uy = ly + rng.uniform(0, 6, N)
for mode in ("default", "random"):
    al = None if mode == "default" else rng.uniform(0, 1, N)
    au = None if mode == "default" else rng.uniform(0, 1, N)
    res = rx.relax_mul(lx, ux, ly, uy, al, au)
    ts = np.linspace(0, 1, 81)
    X = lx[:, None, None] + (ux - lx)[:, None, None] * ts[None, :, None]
    Y = ly[:, None, None] + (uy - ly)[:, None, None] * ts[None, None, :]
    P = X * Y
    lo = res.lo_a[:, None, None] * X + res.lo_ay[:, None, None] * Y + res.lo_b[:, None, None]
    up = res.up_a[:, None, None] * X + res.up_ay[:, None, None] * Y + res.up_b[:, None, None]
    worst[("mul", mode)] = (float(np.max(lo - P)), float(np.max(P - up)))

print()
for k in sorted(worst):
    v1, v2 = worst[k]
    flag = "OK " if max(v1, v2) <= TOL else "FAIL"
    print(f"{flag} {k[0]:8s} {k[1]:8s}  lower-viol {v1:+.3e}  upper-viol {v2:+.3e}")
