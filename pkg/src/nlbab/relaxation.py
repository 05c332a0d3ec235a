"""Sound linear relaxations of the elementwise nonlinearities.

Every relaxation returns per-entry linear lower/upper bounds::

    lo_a * x + lo_b  <=  q(x)  <=  up_a * x + up_b      for all x in [l, u]

(for ``mul``, planes ``a*x + ay*y + b`` over the rectangle). Where a side has
a free parameter (a tangent point, an interpolation weight) the result also
carries the parameter's valid box and the derivatives of the coefficients
with respect to it, so a caller can run projected gradient steps.

Case analysis follows the curvature of each function. A chord is used on a
side only when it is provably sound: the gap ``q - chord`` has the chord's
endpoints as zeros, so the chord is one-side sound exactly when ``q' - slope``
changes sign once inside the interval. That crossing count is computed in
closed form (sigmoid, tanh, sin) or per monotone piece (GeLU). Tangent-line
sides solve for anchored tangent points by bisection; every construction
falls back to the exact constant interval bounds when no line in the family
is sound.

All functions are vectorized: ``l``/``u`` may be arrays, and parameters may
add leading dimensions (e.g. one parameter row per output specification row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .graph import gelu as _gelu_fn
from .graph import sigmoid as _sigmoid_fn

__all__ = [
    "RelaxationResult",
    "AlphaStore",
    "relax_relu",
    "relax_s_shaped",
    "relax_sigmoid",
    "relax_tanh",
    "relax_sin",
    "relax_gelu",
    "relax_square",
    "relax_mul",
    "relax_affine",
    "relax_unary",
    "op_range",
    "GELU_INFLECTION",
    "GELU_ARGMIN",
    "BISECT_TOL",
    "BISECT_MAX_ITER",
]

BISECT_TOL = 1e-9
BISECT_MAX_ITER = 100

_TWO_PI = 2.0 * np.pi
_HALF_PI = 0.5 * np.pi


@dataclass
class RelaxationResult:
    """Linear bounds of one elementwise op over per-entry intervals.

    ``lo_a``/``lo_b`` and ``up_a``/``up_b`` are the slope/intercept arrays of
    the lower and upper lines. For ``mul`` the plane's second slope sits in
    ``lo_ay``/``up_ay``. ``lo_box``/``up_box`` give the valid parameter range
    of each side as an ``(lo, hi)`` pair (a zero-width box marks entries whose
    side is fixed), or ``None`` when the whole side has no parameter.
    ``lo_alpha``/``up_alpha`` are the parameter values the coefficients were
    built from; ``d_lo``/``d_up`` hold the coefficient derivatives with
    respect to that side's parameter (same layout as the coefficients).
    """

    lo_a: np.ndarray
    lo_b: np.ndarray
    up_a: np.ndarray
    up_b: np.ndarray
    lo_ay: np.ndarray | None = None
    up_ay: np.ndarray | None = None
    lo_box: tuple[np.ndarray, np.ndarray] | None = None
    up_box: tuple[np.ndarray, np.ndarray] | None = None
    lo_alpha: np.ndarray | None = None
    up_alpha: np.ndarray | None = None
    d_lo: tuple[np.ndarray, ...] | None = None
    d_up: tuple[np.ndarray, ...] | None = None


# ---------------------------------------------------------------------------
# scalar helpers


def _prep(l, u):
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    shape = np.broadcast_shapes(l.shape, u.shape)
    l = np.broadcast_to(l, shape)
    u = np.broadcast_to(u, shape)
    if np.any(u - l < -1e-12):
        raise ValueError("interval with u < l")
    u = np.maximum(u, l)
    return l, u


def _degenerate(l, u):
    return (u - l) <= 1e-12 * (1.0 + np.abs(l) + np.abs(u))


def _safe_div(num, den):
    return num / np.where(np.abs(den) < 1e-300, 1e-300, den)


def _bisect(margin, lo, hi, sound_hi: bool,
            tol: float = BISECT_TOL, max_iter: int = BISECT_MAX_ITER):
    """Vectorized bisection of ``margin(t) = 0`` on monotone brackets.

    ``margin(t) >= 0`` is the sound condition; ``sound_hi`` says which end of
    the bracket satisfies it initially. The returned point is always taken
    from the sound side, so even an unconverged run yields a valid (merely
    conservative) tangent point.
    """
    lo = np.array(np.broadcast_to(np.asarray(lo, float), np.broadcast_shapes(
        np.shape(lo), np.shape(hi))), dtype=np.float64)
    hi = np.array(np.broadcast_to(np.asarray(hi, float), lo.shape), dtype=np.float64)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        ok = margin(mid) >= 0.0
        if sound_hi:
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        else:
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return hi if sound_hi else lo


def _count_in_open_interval(anchor, period, lo, hi):
    """How many points ``anchor + k*period`` fall inside ``(lo, hi)``."""
    k_hi = np.floor((hi - anchor) / period)
    k_lo = np.ceil((lo - anchor) / period)
    return np.maximum(0, (k_hi - k_lo + 1)).astype(np.int64)


# ---------------------------------------------------------------------------
# derivative-crossing counters (chord soundness tests)


def _expand(l, u):
    d = 1e-9 * (1.0 + np.abs(l) + np.abs(u))
    return l - d, u + d


def _sigmoid_dcount(l, u, s):
    """Crossings of sigmoid'(x) = s inside (l, u), conservatively expanded."""
    L, U = _expand(l, u)
    inner = 1.0 - 4.0 * s
    has = inner > 1e-15
    p = 0.5 * (1.0 + np.sqrt(np.where(has, inner, 0.0)))
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    r = np.log(p / (1.0 - p))
    c = ((-r > L) & (-r < U)).astype(np.int64) + ((r > L) & (r < U)).astype(np.int64)
    return np.where(has & (s > 0), c, 0)


def _tanh_dcount(l, u, s):
    L, U = _expand(l, u)
    inner = 1.0 - s
    has = (inner > 1e-15) & (s > 0)
    r = np.arctanh(np.clip(np.sqrt(np.where(has, inner, 0.0)), 0.0, 1.0 - 1e-16))
    c = ((-r > L) & (-r < U)).astype(np.int64) + ((r > L) & (r < U)).astype(np.int64)
    return np.where(has, c, 0)


def _sin_dcount(l, u, s):
    """Crossings of cos(x) = s inside (l, u)."""
    L, U = _expand(l, u)
    inside = np.abs(s) < 1.0 - 1e-15
    a = np.arccos(np.clip(s, -1.0, 1.0))
    c = _count_in_open_interval(a, _TWO_PI, L, U) + _count_in_open_interval(
        -a, _TWO_PI, L, U)
    return np.where(inside, c, 0)


def _phi(x):
    return np.exp(-0.5 * np.square(x)) / np.sqrt(2.0 * np.pi)


def _Phi(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_df(x):
    return _Phi(x) + x * _phi(x)


def _gelu_ddf(x):
    return _phi(x) * (2.0 - np.square(x))


GELU_INFLECTION = float(np.sqrt(2.0))


def _solve_gelu_argmin():
    lo, hi = -1.0, -0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _gelu_df(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


GELU_ARGMIN = float(_solve_gelu_argmin())


def _gelu_dcount(l, u, s):
    """Crossings of gelu'(x) = s inside (l, u), one per monotone piece."""
    L, U = _expand(l, u)
    r2 = GELU_INFLECTION
    total = np.zeros(np.broadcast_shapes(np.shape(L), np.shape(s)), dtype=np.int64)
    pieces = ((-30.0, -r2), (-r2, r2), (r2, 30.0))
    for plo, phi_ in pieces:
        a = np.clip(L, plo, phi_)
        b = np.clip(U, plo, phi_)
        nonempty = b - a > 1e-15
        fa = _gelu_df(a) - s
        fb = _gelu_df(b) - s
        total = total + (nonempty & (fa * fb < 0.0)).astype(np.int64)
    return total


# ---------------------------------------------------------------------------
# interval images (exact constant fallbacks)


def _monotone_minmax(f):
    def fmin(l, u):
        return np.minimum(f(l), f(u))

    def fmax(l, u):
        return np.maximum(f(l), f(u))

    return fmin, fmax


def _sin_min(l, u):
    trough = _count_in_open_interval(-_HALF_PI, _TWO_PI, l - 1e-12, u + 1e-12) > 0
    return np.where(trough, -1.0, np.minimum(np.sin(l), np.sin(u)))


def _sin_max(l, u):
    peak = _count_in_open_interval(_HALF_PI, _TWO_PI, l - 1e-12, u + 1e-12) > 0
    return np.where(peak, 1.0, np.maximum(np.sin(l), np.sin(u)))


def _gelu_min(l, u):
    inside = (l < GELU_ARGMIN) & (u > GELU_ARGMIN)
    return np.where(inside, _gelu_fn(GELU_ARGMIN),
                    np.minimum(_gelu_fn(l), _gelu_fn(u)))


def _gelu_max(l, u):
    return np.maximum(_gelu_fn(l), _gelu_fn(u))


def op_range(kind: str, l, u):
    """Exact elementwise range of one unary op over per-entry intervals."""
    l, u = _prep(l, u)
    if kind == "relu":
        return np.maximum(l, 0.0), np.maximum(u, 0.0)
    if kind == "sigmoid":
        return _sigmoid_fn(l), _sigmoid_fn(u)
    if kind == "tanh":
        return np.tanh(l), np.tanh(u)
    if kind == "sin":
        return _sin_min(l, u), _sin_max(l, u)
    if kind == "gelu":
        return _gelu_min(l, u), _gelu_max(l, u)
    if kind == "square":
        lo = np.where((l <= 0.0) & (u >= 0.0), 0.0, np.minimum(l * l, u * u))
        return lo, np.maximum(l * l, u * u)
    raise ValueError(f"no interval image for op {kind!r}")


# ---------------------------------------------------------------------------
# single-inflection core (convex left of m, concave right of m)


def _point_box(shape):
    z = np.zeros(shape)
    return z, z.copy()


def _resolve_alpha(alpha, box_lo, box_hi):
    if alpha is None:
        t = 0.5 * (box_lo + box_hi)
    else:
        t = np.clip(np.asarray(alpha, dtype=np.float64), box_lo, box_hi)
    return t


def _s_core(f, df, ddf, dcount, fmin, fmax, l, u, m, alpha_lo, alpha_up):
    """Relaxation of a convex-then-concave function with inflection at ``m``.

    Handles purely convex (``u <= m``) and purely concave (``l >= m``) lanes
    as degenerate cases. Returns a dict of coefficient/box/derivative arrays.
    """
    shape = np.broadcast_shapes(l.shape, np.shape(m))
    l = np.broadcast_to(l, shape)
    u = np.broadcast_to(u, shape)
    m = np.broadcast_to(np.asarray(m, float), shape)

    fl, fu = f(l), f(u)
    w = u - l
    ca = _safe_div(fu - fl, np.maximum(w, 1e-300))
    cb = fl - ca * l

    convex = u <= m
    concave = l >= m
    mixed = ~convex & ~concave

    count = dcount(l, u, ca)
    dir_lower = df(l) - ca > 0.0
    chord_lo = concave | (mixed & (count == 1) & dir_lower) | (mixed & (count == 0))
    chord_up = convex | (mixed & (count == 1) & ~dir_lower) | (mixed & (count == 0))

    # --- lower side ---------------------------------------------------
    tl = (convex | mixed) & ~chord_lo
    # Tangent at t <= t* stays below the right anchor (u, f(u)); the anchor
    # margin decreases in t on the convex piece, so the family is [l, t*].
    margin_l_at_l = fu - (fl + df(l) * w)
    const_lo = tl & mixed & (margin_l_at_l < 0.0)

    def _mlo(t):
        return fu - (f(t) + df(t) * (u - t))

    tstar = _bisect(_mlo, np.minimum(l, m), m, sound_hi=False)
    lo_box_lo = np.where(tl, l, 0.0)
    lo_box_hi = np.where(tl & mixed, np.maximum(tstar, l), np.where(tl, u, 0.0))
    lo_box_hi = np.maximum(lo_box_hi, lo_box_lo)
    t_lo = _resolve_alpha(alpha_lo, lo_box_lo, lo_box_hi)
    ta_lo = df(t_lo)
    tb_lo = f(t_lo) - ta_lo * t_lo

    lo_a = np.where(chord_lo, ca, np.where(const_lo, 0.0, ta_lo))
    lo_b = np.where(chord_lo, cb, np.where(const_lo, fmin(l, u), tb_lo))
    d_lo_a = np.where(tl & ~const_lo, ddf(t_lo), 0.0)
    d_lo_b = np.where(tl & ~const_lo, -t_lo * ddf(t_lo), 0.0)

    # --- upper side ---------------------------------------------------
    tu = (concave | mixed) & ~chord_up
    margin_u_at_u = (fu + df(u) * (l - u)) - fl
    const_up = tu & mixed & (margin_u_at_u < 0.0)

    def _mup(t):
        return (f(t) + df(t) * (l - t)) - fl

    sstar = _bisect(_mup, m, np.maximum(u, m), sound_hi=True)
    up_box_lo = np.where(tu & mixed, np.minimum(sstar, u), np.where(tu, l, 0.0))
    up_box_hi = np.where(tu, u, 0.0)
    up_box_lo = np.minimum(up_box_lo, up_box_hi)
    t_up = _resolve_alpha(alpha_up, up_box_lo, up_box_hi)
    ta_up = df(t_up)
    tb_up = f(t_up) - ta_up * t_up

    up_a = np.where(chord_up, ca, np.where(const_up, 0.0, ta_up))
    up_b = np.where(chord_up, cb, np.where(const_up, fmax(l, u), tb_up))
    d_up_a = np.where(tu & ~const_up, ddf(t_up), 0.0)
    d_up_b = np.where(tu & ~const_up, -t_up * ddf(t_up), 0.0)

    lo_param = tl & ~const_lo
    up_param = tu & ~const_up
    return {
        "lo_a": lo_a, "lo_b": lo_b, "up_a": up_a, "up_b": up_b,
        "lo_box": (np.where(lo_param, lo_box_lo, t_lo),
                   np.where(lo_param, lo_box_hi, t_lo)),
        "up_box": (np.where(up_param, up_box_lo, t_up),
                   np.where(up_param, up_box_hi, t_up)),
        "lo_alpha": t_lo, "up_alpha": t_up,
        "d_lo": (d_lo_a, d_lo_b), "d_up": (d_up_a, d_up_b),
    }


def _z_core(f, df, ddf, dcount, fmin, fmax, l, u, m, alpha_lo, alpha_up):
    """Concave-then-convex counterpart of :func:`_s_core` via negation."""

    def nf(x):
        return -f(x)

    def ndf(x):
        return -df(x)

    def nddf(x):
        return -ddf(x)

    def ndcount(lo, hi, s):
        return dcount(lo, hi, -s)

    def nfmin(lo, hi):
        return -fmax(lo, hi)

    def nfmax(lo, hi):
        return -fmin(lo, hi)

    r = _s_core(nf, ndf, nddf, ndcount, nfmin, nfmax, l, u, m, alpha_up, alpha_lo)
    return {
        "lo_a": -r["up_a"], "lo_b": -r["up_b"],
        "up_a": -r["lo_a"], "up_b": -r["lo_b"],
        "lo_box": r["up_box"], "up_box": r["lo_box"],
        "lo_alpha": r["up_alpha"], "up_alpha": r["lo_alpha"],
        "d_lo": (-r["d_up"][0], -r["d_up"][1]),
        "d_up": (-r["d_lo"][0], -r["d_lo"][1]),
    }


def _apply_degenerate(res, deg, l, u, f):
    """Pin degenerate (point) intervals to exact constant bounds."""
    if not np.any(deg):
        return res
    fl, fu = f(l), f(u)
    clo = np.minimum(fl, fu)
    cup = np.maximum(fl, fu)
    res.lo_a = np.where(deg, 0.0, res.lo_a)
    res.lo_b = np.where(deg, clo, res.lo_b)
    res.up_a = np.where(deg, 0.0, res.up_a)
    res.up_b = np.where(deg, cup, res.up_b)
    for dcoef in (res.d_lo, res.d_up):
        if dcoef is not None:
            for arr in dcoef:
                np.copyto(arr, 0.0, where=np.broadcast_to(deg, arr.shape))
    for box, alpha in ((res.lo_box, res.lo_alpha), (res.up_box, res.up_alpha)):
        if box is not None:
            np.copyto(box[0], alpha, where=np.broadcast_to(deg, box[0].shape))
            np.copyto(box[1], alpha, where=np.broadcast_to(deg, box[1].shape))
    return res


def _pack(core, deg, l, u, f):
    shape = np.broadcast_shapes(core["lo_a"].shape, deg.shape)

    def bc(a):
        return np.array(np.broadcast_to(a, shape), dtype=np.float64)

    res = RelaxationResult(
        lo_a=bc(core["lo_a"]), lo_b=bc(core["lo_b"]),
        up_a=bc(core["up_a"]), up_b=bc(core["up_b"]),
        lo_box=(bc(core["lo_box"][0]), bc(core["lo_box"][1])),
        up_box=(bc(core["up_box"][0]), bc(core["up_box"][1])),
        lo_alpha=bc(core["lo_alpha"]), up_alpha=bc(core["up_alpha"]),
        d_lo=tuple(bc(a) for a in core["d_lo"]),
        d_up=tuple(bc(a) for a in core["d_up"]),
    )
    return _apply_degenerate(res, deg, l, u, f)


# ---------------------------------------------------------------------------
# public relaxations


def relax_relu(l, u, alpha_lo=None) -> RelaxationResult:
    """ReLU: exact on sign-definite intervals, triangle otherwise.

    The upper line is the chord through ``(l, 0)`` and ``(u, u)``; the lower
    line is ``alpha * x`` with ``alpha in [0, 1]`` (default 1 when the
    interval leans positive, ``u >= -l``, else 0).
    """
    l, u = _prep(l, u)
    shape = l.shape
    neg = u <= 0.0
    pos = l >= 0.0
    mixed = ~neg & ~pos

    w = np.maximum(u - l, 1e-300)
    up_a = np.where(pos, 1.0, np.where(neg, 0.0, u / w))
    up_b = np.where(mixed, -l * u / w, 0.0)

    box_lo = np.where(mixed, 0.0, np.where(pos, 1.0, 0.0))
    box_hi = np.where(mixed, 1.0, box_lo)
    default = np.where(mixed, np.where(u >= -l, 1.0, 0.0), box_lo)
    if alpha_lo is None:
        a = default
    else:
        a = np.clip(np.asarray(alpha_lo, dtype=np.float64), box_lo, box_hi)
    lo_a = a
    lo_b = np.zeros(np.broadcast_shapes(shape, np.shape(lo_a)))

    full = np.broadcast_shapes(shape, np.shape(lo_a))
    bc = lambda x: np.array(np.broadcast_to(x, full), dtype=np.float64)
    return RelaxationResult(
        lo_a=bc(lo_a), lo_b=bc(lo_b), up_a=bc(up_a), up_b=bc(up_b),
        lo_box=(bc(box_lo), bc(box_hi)), up_box=None,
        lo_alpha=bc(a), up_alpha=None,
        d_lo=(bc(np.where(mixed, 1.0, 0.0)), bc(np.zeros(shape))), d_up=None,
    )


def _tanh_df(x):
    return 1.0 - np.square(np.tanh(x))


def _tanh_ddf(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - np.square(t))


def _sigmoid_df(x):
    s = _sigmoid_fn(x)
    return s * (1.0 - s)


def _sigmoid_ddf(x):
    s = _sigmoid_fn(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


_S_SHAPED_TABLE = {
    "sigmoid": (_sigmoid_fn, _sigmoid_df, _sigmoid_ddf, _sigmoid_dcount),
    "tanh": (np.tanh, _tanh_df, _tanh_ddf, _tanh_dcount),
}


def relax_s_shaped(kind: str, l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    """Sigmoid/tanh: chord on the sound side, anchored tangent otherwise.

    Both functions are convex left of zero and concave right of it. On a
    sign-definite interval one side is the exact chord and the other a
    tangent at any point of ``[l, u]``. On mixed intervals each side is the
    chord when the crossing test proves it sound, else a tangent anchored at
    the far endpoint, with the tangent point's valid range as the parameter
    box.
    """
    try:
        f, df, ddf, dcount = _S_SHAPED_TABLE[kind]
    except KeyError:
        raise ValueError(f"unknown s-shaped kind {kind!r}") from None
    l, u = _prep(l, u)
    fmin, fmax = _monotone_minmax(f)
    core = _s_core(f, df, ddf, dcount, fmin, fmax, l, u,
                   np.zeros(l.shape), alpha_lo, alpha_up)
    return _pack(core, _degenerate(l, u), l, u, f)


def relax_sigmoid(l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    return relax_s_shaped("sigmoid", l, u, alpha_lo, alpha_up)


def relax_tanh(l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    return relax_s_shaped("tanh", l, u, alpha_lo, alpha_up)


def _sin_inflections_inside(l, u):
    d = 1e-12 * (1.0 + np.abs(l) + np.abs(u))
    k_first = np.ceil((l + d) / np.pi)
    k_last = np.floor((u - d) / np.pi)
    return k_first, np.maximum(0, (k_last - k_first + 1)).astype(np.int64)


def _sin_multi_lower(l, u, alpha):
    """Tangent-line lower bound across full periods.

    Both endpoints anchor a family of sound tangents around the trough; the
    parameter runs in trough-centered coordinates ``[pi, 2*pi]`` and maps to
    a tangent point near the left or right endpoint's cycle.
    """
    k_l = np.floor((l + _HALF_PI) / _TWO_PI)
    xl = l - _TWO_PI * k_l  # in [-pi/2, 3*pi/2)
    k_r = np.floor((u - 1.5 * np.pi) / _TWO_PI)
    xu = u - _TWO_PI * k_r  # in [3*pi/2, 7*pi/2)

    def m_left(t):
        return np.sin(xl) - (np.sin(t) + np.cos(t) * (xl - t))

    def m_right(t):
        return np.sin(xu) - (np.sin(t) + np.cos(t) * (xu - t))

    a_lo = _bisect(m_left, np.full(l.shape, np.pi), np.full(l.shape, 1.5 * np.pi),
                   sound_hi=True)
    a_hi = _bisect(m_right, np.full(l.shape, 1.5 * np.pi), np.full(l.shape, _TWO_PI),
                   sound_hi=False)

    def line_of(t_param):
        t = t_param + _TWO_PI * np.where(t_param <= 1.5 * np.pi, k_l, k_r)
        a = np.cos(t)
        b = np.sin(t) - a * t
        return t, a, b

    if alpha is None:
        # Best of: left anchor, exact constant -1, right anchor, judged by
        # the summed endpoint tightness of the resulting line.
        best_val = None
        best = None
        for cand in (a_lo, np.full(l.shape, 1.5 * np.pi), a_hi):
            _, a, b = line_of(cand)
            val = (a * l + b) + (a * u + b)
            if best is None:
                best, best_val = np.array(cand), val
            else:
                take = val > best_val
                best = np.where(take, cand, best)
                best_val = np.maximum(val, best_val)
        t_param = best
    else:
        t_param = np.clip(np.asarray(alpha, dtype=np.float64), a_lo, a_hi)
    t, a, b = line_of(t_param)
    da = -np.sin(t)
    db = t * np.sin(t)
    return a, b, (a_lo, a_hi), t_param, da, db


def _sin_multi_upper(l, u, alpha):
    k_l = np.floor((l - _HALF_PI) / _TWO_PI)
    xl = l - _TWO_PI * k_l  # in [pi/2, 5*pi/2)
    k_r = np.floor((u - 2.5 * np.pi) / _TWO_PI)
    xu = u - _TWO_PI * k_r  # in [5*pi/2, 9*pi/2)

    def m_left(t):
        return (np.sin(t) + np.cos(t) * (xl - t)) - np.sin(xl)

    def m_right(t):
        return (np.sin(t) + np.cos(t) * (xu - t)) - np.sin(xu)

    a_lo = _bisect(m_left, np.full(l.shape, _TWO_PI), np.full(l.shape, 2.5 * np.pi),
                   sound_hi=True)
    a_hi = _bisect(m_right, np.full(l.shape, 2.5 * np.pi), np.full(l.shape, 3.0 * np.pi),
                   sound_hi=False)

    def line_of(t_param):
        t = t_param + _TWO_PI * np.where(t_param <= 2.5 * np.pi, k_l, k_r)
        a = np.cos(t)
        b = np.sin(t) - a * t
        return t, a, b

    if alpha is None:
        best_val = None
        best = None
        for cand in (a_lo, np.full(l.shape, 2.5 * np.pi), a_hi):
            _, a, b = line_of(cand)
            val = (a * l + b) + (a * u + b)
            if best is None:
                best, best_val = np.array(cand), val
            else:
                take = val < best_val
                best = np.where(take, cand, best)
                best_val = np.minimum(val, best_val)
        t_param = best
    else:
        t_param = np.clip(np.asarray(alpha, dtype=np.float64), a_lo, a_hi)
    t, a, b = line_of(t_param)
    da = -np.sin(t)
    db = t * np.sin(t)
    return a, b, (a_lo, a_hi), t_param, da, db


def relax_sin(l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    """Sine: chord / single-inflection treatment / cross-period tangents.

    With at most one inflection point inside the interval, sine is handled
    like the s-shaped kinds (orientation depends on the inflection's parity).
    Wider intervals get tangent lines anchored at the endpoint cycles; the
    parameter range always contains the exact constant bound (tangent point
    at the trough/peak).
    """
    l, u = _prep(l, u)
    shape = l.shape
    k_first, ninf = _sin_inflections_inside(l, u)
    single = ninf <= 1

    mid = 0.5 * (l + u)
    m_one = k_first * np.pi
    # ninf == 0: treat as one-sided around a virtual inflection at an endpoint.
    pure_convex = (ninf == 0) & (np.sin(mid) < 0.0)
    m_eff = np.where(ninf == 1, m_one, np.where(pure_convex, u, l))
    left_piece_mid = 0.5 * (l + np.where(ninf == 1, m_one, u))
    left_convex = np.where(ninf == 1, np.sin(left_piece_mid) < 0.0, True)

    s_core = _s_core(np.sin, np.cos, lambda x: -np.sin(x), _sin_dcount,
                     _sin_min, _sin_max, l, u, m_eff, alpha_lo, alpha_up)
    z_core = _z_core(np.sin, np.cos, lambda x: -np.sin(x), _sin_dcount,
                     _sin_min, _sin_max, l, u, m_eff, alpha_lo, alpha_up)

    # multi-period lanes: chord still allowed when provably sound
    fl, fu = np.sin(l), np.sin(u)
    ca = _safe_div(fu - fl, np.maximum(u - l, 1e-300))
    cb = fl - ca * l
    count = _sin_dcount(l, u, ca)
    dir_lower = np.cos(l) - ca > 0.0
    multi = ~single
    m_chord_lo = multi & (count == 1) & dir_lower
    m_chord_up = multi & (count == 1) & ~dir_lower

    ml_a, ml_b, ml_box, ml_t, ml_da, ml_db = _sin_multi_lower(l, u, alpha_lo)
    mu_a, mu_b, mu_box, mu_t, mu_da, mu_db = _sin_multi_upper(l, u, alpha_up)

    def pick(name, s_val, z_val, multi_val):
        v = np.where(single & left_convex, s_val, np.where(single, z_val, multi_val))
        return v

    lo_a = pick("lo_a", s_core["lo_a"], z_core["lo_a"],
                np.where(m_chord_lo, ca, ml_a))
    lo_b = pick("lo_b", s_core["lo_b"], z_core["lo_b"],
                np.where(m_chord_lo, cb, ml_b))
    up_a = pick("up_a", s_core["up_a"], z_core["up_a"],
                np.where(m_chord_up, ca, mu_a))
    up_b = pick("up_b", s_core["up_b"], z_core["up_b"],
                np.where(m_chord_up, cb, mu_b))

    lo_alpha = pick("", s_core["lo_alpha"], z_core["lo_alpha"],
                    np.where(m_chord_lo, ml_t, ml_t))
    up_alpha = pick("", s_core["up_alpha"], z_core["up_alpha"], mu_t)
    lo_box = (
        pick("", s_core["lo_box"][0], z_core["lo_box"][0],
             np.where(m_chord_lo, ml_t, ml_box[0])),
        pick("", s_core["lo_box"][1], z_core["lo_box"][1],
             np.where(m_chord_lo, ml_t, ml_box[1])),
    )
    up_box = (
        pick("", s_core["up_box"][0], z_core["up_box"][0],
             np.where(m_chord_up, mu_t, mu_box[0])),
        pick("", s_core["up_box"][1], z_core["up_box"][1],
             np.where(m_chord_up, mu_t, mu_box[1])),
    )
    d_lo = (
        pick("", s_core["d_lo"][0], z_core["d_lo"][0],
             np.where(m_chord_lo, 0.0, ml_da)),
        pick("", s_core["d_lo"][1], z_core["d_lo"][1],
             np.where(m_chord_lo, 0.0, ml_db)),
    )
    d_up = (
        pick("", s_core["d_up"][0], z_core["d_up"][0],
             np.where(m_chord_up, 0.0, mu_da)),
        pick("", s_core["d_up"][1], z_core["d_up"][1],
             np.where(m_chord_up, 0.0, mu_db)),
    )

    core = {
        "lo_a": lo_a, "lo_b": lo_b, "up_a": up_a, "up_b": up_b,
        "lo_box": lo_box, "up_box": up_box,
        "lo_alpha": lo_alpha, "up_alpha": up_alpha,
        "d_lo": d_lo, "d_up": d_up,
    }
    return _pack(core, _degenerate(l, u), l, u, np.sin)


def relax_gelu(l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    """GeLU: inflections at +-sqrt(2), dip minimum near -0.75.

    Sign-definite intervals see a single inflection and reuse the one-
    inflection machinery (orientation differs by side). Mixed intervals use
    the endpoint chord as the upper bound (its slope stays below 1, so the
    crossing test certifies it) and a family of tangent lines between the
    two endpoint-anchored tangent points as the lower bound.
    """
    l, u = _prep(l, u)
    shape = l.shape
    r2 = GELU_INFLECTION
    f, df, ddf = _gelu_fn, _gelu_df, _gelu_ddf

    neg = u <= 0.0
    pos = l >= 0.0
    mixed = ~neg & ~pos

    z_core = _z_core(f, df, ddf, _gelu_dcount, _gelu_min, _gelu_max,
                     l, u, np.full(shape, -r2), alpha_lo, alpha_up)
    s_core = _s_core(f, df, ddf, _gelu_dcount, _gelu_min, _gelu_max,
                     l, u, np.full(shape, r2), alpha_lo, alpha_up)

    # mixed: upper chord (guarded), lower tangent family
    fl, fu = f(l), f(u)
    ca = _safe_div(fu - fl, np.maximum(u - l, 1e-300))
    cb = fl - ca * l
    count = _gelu_dcount(l, u, ca)
    chord_up_ok = (count == 1) & (df(l) - ca < 0.0)

    def m_left(t):
        return fl - (f(t) + df(t) * (l - t))

    def m_right(t):
        return fu - (f(t) + df(t) * (u - t))

    a_lo = _bisect(m_left, l, np.zeros(shape), sound_hi=True)
    a_hi = _bisect(m_right, np.zeros(shape), np.minimum(u, r2), sound_hi=False)
    box_lo = np.minimum(a_lo, a_hi)
    box_hi = np.maximum(a_lo, a_hi)
    t_lo = _resolve_alpha(alpha_lo, box_lo, box_hi)
    mta = df(t_lo)
    mtb = f(t_lo) - mta * t_lo

    mixed_up_a = np.where(chord_up_ok, ca, 0.0)
    mixed_up_b = np.where(chord_up_ok, cb, _gelu_max(l, u))

    def pick(neg_val, pos_val, mixed_val):
        return np.where(neg, neg_val, np.where(pos, pos_val, mixed_val))

    core = {
        "lo_a": pick(z_core["lo_a"], s_core["lo_a"], mta),
        "lo_b": pick(z_core["lo_b"], s_core["lo_b"], mtb),
        "up_a": pick(z_core["up_a"], s_core["up_a"], mixed_up_a),
        "up_b": pick(z_core["up_b"], s_core["up_b"], mixed_up_b),
        "lo_box": (pick(z_core["lo_box"][0], s_core["lo_box"][0], box_lo),
                   pick(z_core["lo_box"][1], s_core["lo_box"][1], box_hi)),
        "up_box": (pick(z_core["up_box"][0], s_core["up_box"][0], t_lo * 0.0),
                   pick(z_core["up_box"][1], s_core["up_box"][1], t_lo * 0.0)),
        "lo_alpha": pick(z_core["lo_alpha"], s_core["lo_alpha"], t_lo),
        "up_alpha": pick(z_core["up_alpha"], s_core["up_alpha"], t_lo * 0.0),
        "d_lo": (pick(z_core["d_lo"][0], s_core["d_lo"][0], ddf(t_lo)),
                 pick(z_core["d_lo"][1], s_core["d_lo"][1], -t_lo * ddf(t_lo))),
        "d_up": (pick(z_core["d_up"][0], s_core["d_up"][0], np.zeros(shape)),
                 pick(z_core["d_up"][1], s_core["d_up"][1], np.zeros(shape))),
    }
    return _pack(core, _degenerate(l, u), l, u, f)


def relax_square(l, u) -> RelaxationResult:
    """x^2: tangent at the midpoint below, endpoint chord above. No parameter."""
    l, u = _prep(l, u)
    mid = 0.5 * (l + u)
    lo_a = l + u
    lo_b = -np.square(mid)
    up_a = l + u
    up_b = -l * u
    deg = _degenerate(l, u)
    res = RelaxationResult(
        lo_a=np.array(lo_a), lo_b=np.array(lo_b),
        up_a=np.array(up_a), up_b=np.array(up_b),
    )
    if np.any(deg):
        res.lo_a = np.where(deg, 0.0, res.lo_a)
        res.lo_b = np.where(deg, np.square(l), res.lo_b)
        res.up_a = np.where(deg, 0.0, res.up_a)
        res.up_b = np.where(deg, np.square(u), res.up_b)
    return res


def relax_mul(lx, ux, ly, uy, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    """Elementwise product: interpolation between the two optimal planes.

    At ``alpha = 1`` the lower plane is ``y_lo*x + x_lo*y - x_lo*y_lo`` and at
    ``alpha = 0`` it is ``y_hi*x + x_hi*y - x_hi*y_hi`` (mirrored for the
    upper side); every interpolation is sound on the rectangle.
    """
    lx, ux = _prep(lx, ux)
    ly, uy = _prep(ly, uy)
    shape = np.broadcast_shapes(lx.shape, ly.shape)

    def resolve(alpha):
        if alpha is None:
            return np.full(shape, 0.5)
        return np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)

    al = resolve(alpha_lo)
    au = resolve(alpha_up)

    lo_a = al * ly + (1.0 - al) * uy
    lo_ay = al * lx + (1.0 - al) * ux
    lo_b = -al * lx * ly - (1.0 - al) * ux * uy
    up_a = au * uy + (1.0 - au) * ly
    up_ay = au * lx + (1.0 - au) * ux
    up_b = -au * lx * uy - (1.0 - au) * ux * ly

    zeros = np.zeros(np.broadcast_shapes(shape, np.shape(al)))
    ones = np.ones_like(zeros)
    full = zeros.shape
    bc = lambda x: np.array(np.broadcast_to(x, full), dtype=np.float64)
    return RelaxationResult(
        lo_a=bc(lo_a), lo_b=bc(lo_b), up_a=bc(up_a), up_b=bc(up_b),
        lo_ay=bc(lo_ay), up_ay=bc(up_ay),
        lo_box=(zeros, ones), up_box=(zeros.copy(), ones.copy()),
        lo_alpha=bc(al), up_alpha=bc(au),
        d_lo=(bc(ly - uy), bc(lx - ux), bc(ux * uy - lx * ly)),
        d_up=(bc(uy - ly), bc(lx - ux), bc(ux * ly - lx * uy)),
    )


def relax_affine(weight, bias) -> RelaxationResult:
    """Scalar/diagonal affine map: both bounds are the map itself."""
    a = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    return RelaxationResult(lo_a=a.copy(), lo_b=b.copy(),
                            up_a=a.copy(), up_b=b.copy())


_UNARY_RELAX = {
    "relu": lambda l, u, alo, aup: relax_relu(l, u, alo),
    "sigmoid": lambda l, u, alo, aup: relax_sigmoid(l, u, alo, aup),
    "tanh": lambda l, u, alo, aup: relax_tanh(l, u, alo, aup),
    "sin": lambda l, u, alo, aup: relax_sin(l, u, alo, aup),
    "gelu": lambda l, u, alo, aup: relax_gelu(l, u, alo, aup),
    "square": lambda l, u, alo, aup: relax_square(l, u),
}


def relax_unary(op: str, l, u, alpha_lo=None, alpha_up=None) -> RelaxationResult:
    """Dispatch a unary elementwise relaxation by op name."""
    try:
        fn = _UNARY_RELAX[op]
    except KeyError:
        raise ValueError(f"no unary relaxation for op {op!r}") from None
    return fn(l, u, alpha_lo, alpha_up)


# ---------------------------------------------------------------------------
# parameter storage


@dataclass
class AlphaStore:
    """Relaxation parameters, keyed by (nonlinearity node id, side).

    Each value is an array of shape ``(rows, width)``: one parameter per
    output-spec row, per neuron of the nonlinearity, per bound side. For a
    unary op, neuron ``j`` of the nonlinearity corresponds to neuron ``j`` of
    its input node, so the pair identifies (input node, neuron, side,
    consumer) as well. ``boxes`` holds the latest valid range per entry;
    :meth:`clip_` projects the raw values into it.
    """

    values: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    boxes: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict)

    def get(self, node_id: str, side: str) -> np.ndarray | None:
        return self.values.get((node_id, side))

    def put(self, node_id: str, side: str, value: np.ndarray,
            box: tuple[np.ndarray, np.ndarray] | None = None) -> None:
        self.values[(node_id, side)] = np.asarray(value, dtype=np.float64)
        if box is not None:
            self.boxes[(node_id, side)] = (np.asarray(box[0], float),
                                           np.asarray(box[1], float))

    def lookup(self, node_id: str, neuron: int, side: str, consumer_id: str):
        """Parameter column for (input node, neuron, side, consumer)."""
        val = self.get(consumer_id, side)
        if val is None:
            return None
        return val[..., neuron]

    def clip_(self) -> None:
        for key, v in self.values.items():
            box = self.boxes.get(key)
            if box is not None:
                np.clip(v, box[0], box[1], out=v)

    def step_(self, grads: dict[tuple[str, str], np.ndarray], lr: float) -> None:
        """Ascent step followed by projection into the boxes."""
        for key, g in grads.items():
            if key in self.values and np.all(np.isfinite(g)):
                self.values[key] = self.values[key] + lr * g
        self.clip_()

    def copy(self) -> "AlphaStore":
        return AlphaStore(
            values={k: v.copy() for k, v in self.values.items()},
            boxes={k: (lo.copy(), hi.copy()) for k, (lo, hi) in self.boxes.items()},
        )

    def violates_boxes(self, tol: float = 0.0) -> bool:
        for key, v in self.values.items():
            box = self.boxes.get(key)
            if box is not None and (np.any(v < box[0] - tol)
                                    or np.any(v > box[1] + tol)):
                return True
        return False
