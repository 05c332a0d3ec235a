"""Scratch: stress regimes + tangency residuals + mul endpoints."""
import numpy as np

from nlbab import relaxation as rx
from nlbab.graph import gelu

rng = np.random.default_rng(1)
GRID = 4001
TOL = 1e-9

# --- sin, very wide intervals (many periods) ---
a = rng.uniform(-40, 40, 500)
w = rng.uniform(0, 60, 500)
l, u = a, a + w
res = rx.relax_sin(l, u)
ts = np.linspace(0, 1, GRID)
X = l[:, None] + w[:, None] * ts[None, :]
FX = np.sin(X)
v1 = np.max(res.lo_a[:, None] * X + res.lo_b[:, None] - FX)
v2 = np.max(FX - res.up_a[:, None] * X - res.up_b[:, None])
print(f"sin wide: lower-viol {v1:+.3e} upper-viol {v2:+.3e}")

# random alpha in box
alo = rng.uniform(res.lo_box[0], res.lo_box[1])
aup = rng.uniform(res.up_box[0], res.up_box[1])
res2 = rx.relax_sin(l, u, alo, aup)
v1 = np.max(res2.lo_a[:, None] * X + res2.lo_b[:, None] - FX)
v2 = np.max(FX - res2.up_a[:, None] * X - res2.up_b[:, None])
print(f"sin wide rand-alpha: lower-viol {v1:+.3e} upper-viol {v2:+.3e}")

# --- tangency residual for sin tangent lanes (criterion: < 1e-6) ---
# a tangent lane has nonzero box width; residual of line vs sin at t
bw = res.lo_box[1] - res.lo_box[0]
lane = bw > 1e-8
t = res.lo_alpha  # parameter; for multi lanes maps via k, use line-touch test:
# residual = min over x-grid of f(x) - line(x) should be ~0 (touches)
gap = FX - (res.lo_a[:, None] * X + res.lo_b[:, None])
touch = np.min(gap, axis=1)
print(f"sin lower tangent touch residual: max {np.max(touch[lane]):.3e}")
gap_u = (res.up_a[:, None] * X + res.up_b[:, None]) - FX
bwu = res.up_box[1] - res.up_box[0]
laneu = bwu > 1e-8
print(f"sin upper tangent touch residual: max {np.max(touch[laneu]):.3e}")

# --- gelu, asymmetric mixed intervals ---
l = -(10.0 ** rng.uniform(-6, 0.7, 500))
u = 10.0 ** rng.uniform(-6, 1.3, 500)
res = rx.relax_gelu(l, u)
X = l[:, None] + (u - l)[:, None] * ts[None, :]
FX = gelu(X)
v1 = np.max(res.lo_a[:, None] * X + res.lo_b[:, None] - FX)
v2 = np.max(FX - res.up_a[:, None] * X - res.up_b[:, None])
print(f"gelu asym: lower-viol {v1:+.3e} upper-viol {v2:+.3e}")
gap = FX - (res.lo_a[:, None] * X + res.lo_b[:, None])
print(f"gelu lower touch residual: max {np.max(np.min(gap, axis=1)):.3e}")

# extreme: (-0.01, 10), (-5, 0.01)
for (ll, uu) in [(-0.01, 10.0), (-5.0, 0.01), (-0.7518, 50.0), (-1e-6, 30.0)]:
    r = rx.relax_gelu(np.array([ll]), np.array([uu]))
    xs = np.linspace(ll, uu, 200001)
    fx = gelu(xs)
    w1 = np.max(r.lo_a[0] * xs + r.lo_b[0] - fx)
    w2 = np.max(fx - r.up_a[0] * xs - r.up_b[0])
    print(f"gelu ({ll},{uu}): lo-viol {w1:+.2e} up-viol {w2:+.2e}")

# --- mul bitwise endpoints ---
lx = rng.uniform(-5, 5, 200); ux = lx + rng.uniform(0, 6, 200)
ly = rng.uniform(-5, 5, 200); uy = ly + rng.uniform(0, 6, 200)
r1 = rx.relax_mul(lx, ux, ly, uy, np.ones(200), np.ones(200))
exact1 = (np.array_equal(r1.lo_a, ly) and np.array_equal(r1.lo_ay, lx)
          and np.array_equal(r1.lo_b, -lx * ly)
          and np.array_equal(r1.up_a, uy) and np.array_equal(r1.up_ay, lx)
          and np.array_equal(r1.up_b, -lx * uy))
r0 = rx.relax_mul(lx, ux, ly, uy, np.zeros(200), np.zeros(200))
exact0 = (np.array_equal(r0.lo_a, uy) and np.array_equal(r0.lo_ay, ux)
          and np.array_equal(r0.lo_b, -ux * uy)
          and np.array_equal(r0.up_a, ly) and np.array_equal(r0.up_ay, ux)
          and np.array_equal(r0.up_b, -ux * ly))
print(f"mul endpoints bitwise: alpha=1 {exact1}, alpha=0 {exact0}")

# --- sigmoid/tanh tangency residuals on tangent lanes ---
for kind, f in (("sigmoid", None), ("tanh", np.tanh), ("gelu", gelu)):
    a = rng.uniform(-6, 6, 500); b = rng.uniform(-6, 6, 500)
    l, u = np.minimum(a, b), np.maximum(a, b)
    res = rx.relax_unary(kind, l, u)
    from nlbab.graph import sigmoid as sg
    fr = sg if kind == "sigmoid" else f
    X = l[:, None] + (u - l)[:, None] * ts[None, :]
    FX = fr(X)
    for side, (aa, bb, box) in (
            ("lo", (res.lo_a, res.lo_b, res.lo_box)),
            ("up", (res.up_a, res.up_b, res.up_box))):
        lane = (box[1] - box[0]) > 1e-8
        if side == "lo":
            gap = FX - (aa[:, None] * X + bb[:, None])
        else:
            gap = (aa[:, None] * X + bb[:, None]) - FX
        if np.any(lane):
            print(f"{kind} {side} touch residual: {np.max(np.min(gap[lane], axis=1)):.3e}"
                  f"  (n={lane.sum()})")
