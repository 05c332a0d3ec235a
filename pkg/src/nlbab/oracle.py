"""Independent reference values for checking the engine's outputs.

Everything here recomputes quantities the engine derives analytically, but
by brute force: dense sampling for objective minima, trapezoid quadrature
for relaxation gap areas, dense 1-D grids for ground-truth minima.  None of
it is fast and none of it is used by the verifier itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, VerificationSpec, evaluate
from .relaxation import relax_mul, relax_unary

__all__ = [
    "OracleConfig",
    "sampled_min",
    "trapezoid_loss",
    "grid_min_1d",
]

# corner enumeration is 2**d points; skip it above this input dimension
CORNER_DIM_CAP = 12


@dataclass(frozen=True)
class OracleConfig:
    samples: int = 100_000
    grid_resolution: int = 100_001
    seed: int = 0

    def validate(self) -> None:
        if self.samples < 0:
            raise ValueError("samples must be nonnegative")
        if self.grid_resolution < 3:
            raise ValueError("grid_resolution must be at least 3")


def _row_min(g: Graph, spec: VerificationSpec, x: np.ndarray) -> np.ndarray:
    return (evaluate(g, x) @ spec.S.T + spec.t).min(axis=-1)


def sampled_min(g: Graph, spec: VerificationSpec,
                config: OracleConfig | None = None,
                samples: int | None = None) -> float:
    """Empirical minimum of the worst property row over the input box.

    Evaluates the center, the box corners (when the dimension allows
    enumerating them), and uniform samples.  The result is an upper bound
    on the true minimum, so any sound verifier bound must sit at or below
    it.
    """
    cfg = config or OracleConfig()
    cfg.validate()
    n = cfg.samples if samples is None else samples
    if n < 0:
        raise ValueError("samples must be nonnegative")
    lo, hi = spec.lower(), spec.upper()
    d = g.input_dim

    pts = [spec.center[None, :]]
    if d <= CORNER_DIM_CAP:
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * d),
                                     indexing="ij")).reshape(d, -1).T
        pts.append(spec.center + signs * spec.eps)
    if n > 0:
        rng = np.random.default_rng(cfg.seed)
        pts.append(rng.uniform(lo, hi, size=(n, d)))
    best = np.inf
    for block in pts:
        # chunked so a large sample count does not hold one giant batch
        for k in range(0, len(block), 65536):
            best = min(best, float(_row_min(g, spec, block[k:k + 65536]).min()))
    return best


def trapezoid_loss(kind: str, l: float, u: float, p: float,
                   panels: int = 10_000) -> float:
    """Quadrature version of the split tightness loss.

    Integrates the gap between the default upper and lower relaxation lines
    over both pieces of the split interval; for ``mul`` the gap is a plane
    integrated over the piece times the full partner interval.  Composite
    kinds joined with "+" sum their parts.  Converges O(panels^-2) to the
    closed form.
    """
    if not (l < p < u):
        raise ValueError("need l < p < u")
    if panels < 1:
        raise ValueError("panels must be positive")
    total = 0.0
    for part in kind.split("+"):
        for a, b in ((l, p), (p, u)):
            if part == "mul":
                r = relax_mul(a, b, l, u)
                xs = np.linspace(a, b, panels + 1)
                ys = np.linspace(l, u, panels + 1)
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                gap = ((r.up_a - r.lo_a) * X + (r.up_ay - r.lo_ay) * Y
                       + (r.up_b - r.lo_b))
                inner = np.trapezoid(gap, xs, axis=0)
                total += float(np.trapezoid(inner, ys))
            else:
                r = relax_unary(part, a, b)
                xs = np.linspace(a, b, panels + 1)
                gap = (r.up_a - r.lo_a) * xs + (r.up_b - r.lo_b)
                total += float(np.trapezoid(gap, xs))
    return total


def grid_min_1d(g: Graph, spec: VerificationSpec,
                interval: tuple[float, float] | None = None,
                config: OracleConfig | None = None) -> float:
    """Ground-truth minimum of the worst row for a 1-D input, by dense grid.

    Scans ``interval`` (default: the spec's input box) at the configured
    resolution, then re-grids twice around the incumbent cell, so the
    result is exact to roughly machine precision for smooth objectives.
    Raises ValueError for inputs of dimension other than 1.
    """
    if g.input_dim != 1:
        raise ValueError("grid_min_1d needs a 1-dimensional input, got "
                         f"{g.input_dim}")
    cfg = config or OracleConfig()
    cfg.validate()
    if interval is None:
        lo, hi = float(spec.lower()[0]), float(spec.upper()[0])
    else:
        lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("empty interval")

    n = cfg.grid_resolution
    best = np.inf
    for _ in range(3):
        xs = np.linspace(lo, hi, n)
        vals = _row_min(g, spec, xs[:, None])
        k = int(np.argmin(vals))
        best = min(best, float(vals[k]))
        lo = xs[max(0, k - 1)]
        hi = xs[min(n - 1, k + 1)]
        if hi - lo <= 0:
            break
    return best
