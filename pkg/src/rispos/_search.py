"""Shared 1-D maximization: uniform grid scan, golden-section, parabolic polish.

All refinement searches in the pipeline (AOD likelihood, delay rotation,
per-path coordinate ascent) use the same scheme so their ascent
guarantees are uniform: the incumbent point is always a candidate and is
only abandoned for a strictly better one.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def maximize_1d(f_batch, lo: float, hi: float, n_grid: int = 201,
                tol: float = 1e-7, incumbent: float | None = None):
    """Maximize a smooth scalar function over [lo, hi].

    Parameters
    ----------
    f_batch : callable
        Maps an ndarray of candidates to an ndarray of objective values.
    lo, hi : float
        Search bracket.
    n_grid : int
        Uniform scan resolution before the golden-section contraction.
    tol : float
        Final interval width relative to the bracket width.
    incumbent : float, optional
        A point guaranteed to be among the candidates; the result never
        has a smaller objective than the incumbent.

    Returns
    -------
    (x_best, f_best)
    """
    if hi < lo:
        lo, hi = hi, lo
    width = hi - lo
    if width <= 0.0:
        x = lo if incumbent is None else incumbent
        return x, float(f_batch(np.array([x]))[0])

    xs = np.linspace(lo, hi, n_grid)
    vals = np.asarray(f_batch(xs), dtype=float)
    best = int(np.argmax(vals))
    x_best, f_best = float(xs[best]), float(vals[best])

    # golden-section contraction inside the bracketing grid cells
    a = xs[max(best - 1, 0)]
    b = xs[min(best + 1, n_grid - 1)]
    abs_tol = tol * width

    def f1(x: float) -> float:
        return float(f_batch(np.array([x]))[0])

    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f1(c), f1(d)
    pts = [(c, fc), (d, fd)]
    while (b - a) > abs_tol and len(pts) < 200:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f1(c)
            pts.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f1(d)
            pts.append((d, fd))
    for x, v in pts:
        if v > f_best:
            x_best, f_best = float(x), float(v)

    # one parabolic interpolation step through the best local triple
    tried = sorted(set([(float(x), float(v)) for x, v in pts]
                       + [(x_best, f_best), (float(a), f1(a)), (float(b), f1(b))]))
    idx = max(range(len(tried)), key=lambda i: tried[i][1])
    if 0 < idx < len(tried) - 1:
        (x1, v1), (x2, v2), (x3, v3) = tried[idx - 1], tried[idx], tried[idx + 1]
        denom = (x2 - x1) * (v2 - v3) - (x2 - x3) * (v2 - v1)
        if abs(denom) > 0.0:
            xv = x2 - 0.5 * ((x2 - x1) ** 2 * (v2 - v3)
                             - (x2 - x3) ** 2 * (v2 - v1)) / denom
            if lo <= xv <= hi and np.isfinite(xv):
                fv = f1(xv)
                if fv > f_best:
                    x_best, f_best = float(xv), fv

    if incumbent is not None:
        f_inc = f1(float(incumbent))
        if f_inc >= f_best:
            return float(incumbent), f_inc
    return x_best, f_best
