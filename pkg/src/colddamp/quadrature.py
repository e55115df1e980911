"""Globally adaptive composite Simpson quadrature for vector-valued integrands."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QuadratureDiverged


@dataclass
class QuadResult:
    value: np.ndarray
    error: np.ndarray
    nodes: np.ndarray
    n_panels: int


def _simpson_pair(h, f):
    # f has shape (P, 5, K): nodes a, a+h/4, a+h/2, a+3h/4, b
    s1 = h[:, None] / 6.0 * (f[:, 0] + 4.0 * f[:, 2] + f[:, 4])
    s2 = h[:, None] / 12.0 * (f[:, 0] + 4.0 * f[:, 1] + 2.0 * f[:, 2] + 4.0 * f[:, 3] + f[:, 4])
    return s2 + (s2 - s1) / 15.0, np.abs(s2 - s1) / 15.0


def adaptive_simpson(func, edges, rtol=1e-3, atol=0.0, max_depth=20, max_rounds=200):
    """Integrate ``func`` over the union of panels defined by ``edges``.

    ``func`` maps a 1-D array of abscissae to an array of shape (M, K).
    Panels with the largest Richardson error estimates are bisected until
    the summed estimate is below max(rtol |I|, atol) for every component.
    Raises QuadratureDiverged if panels at the depth cap still carry too
    much error or the integrand is not finite.
    """
    edges = np.unique(np.asarray(edges, dtype=float))
    a = edges[:-1]
    h = np.diff(edges)
    x = a[:, None] + h[:, None] * np.linspace(0.0, 1.0, 5)[None, :]
    f = np.asarray(func(x.ravel()))
    f = f.reshape(len(a), 5, -1)
    depth = np.zeros(len(a), dtype=int)
    visited = [x.ravel()]

    for _ in range(max_rounds):
        if not np.all(np.isfinite(f)):
            raise QuadratureDiverged("integrand is not finite on the quadrature grid")
        est, err = _simpson_pair(h, f)
        total = est.sum(axis=0)
        target = np.maximum(rtol * np.abs(total), atol)
        target = np.where(target > 0, target, np.finfo(float).tiny)
        tot_err = err.sum(axis=0)
        if np.all(tot_err <= target):
            return QuadResult(total, tot_err, np.concatenate(visited), len(a))
        score = (err / target[None, :]).sum(axis=1)
        splittable = depth < max_depth
        if not np.any(splittable & (score > 0)):
            raise QuadratureDiverged(
                f"depth cap {max_depth} reached with error {tot_err.max():.3e}")
        # bisect the panels that together carry most of the excess error
        cand = np.where(splittable, score, 0.0)
        order = np.argsort(cand)[::-1]
        excess = float(np.max(tot_err / target))
        csum = np.cumsum(cand[order])
        need = cand.sum() * (1.0 - 0.5 / excess)
        n_split = int(np.searchsorted(csum, need) + 1)
        n_split = max(1, min(n_split, int(np.count_nonzero(cand > 0))))
        sel = np.zeros(len(a), dtype=bool)
        sel[order[:n_split]] = True
        if np.any(~splittable & (score > 0.5 * score.sum())):
            raise QuadratureDiverged("panel at depth cap dominates the error")

        ps, hs, fs = a[sel], h[sel], f[sel]
        hh = hs / 2.0
        new_l = ps[:, None] + hh[:, None] * np.array([0.25, 0.75])[None, :]
        new_r = new_l + hh[:, None]
        xn = np.concatenate([new_l, new_r], axis=1).ravel()
        fn = np.asarray(func(xn)).reshape(len(ps), 4, -1)
        visited.append(xn)
        left = np.stack([fs[:, 0], fn[:, 0], fs[:, 1], fn[:, 1], fs[:, 2]], axis=1)
        right = np.stack([fs[:, 2], fn[:, 2], fs[:, 3], fn[:, 3], fs[:, 4]], axis=1)
        keep = ~sel
        a = np.concatenate([a[keep], ps, ps + hh])
        h = np.concatenate([h[keep], hh, hh])
        f = np.concatenate([f[keep], left, right])
        d = depth[sel] + 1
        depth = np.concatenate([depth[keep], d, d])
        order = np.argsort(a, kind="stable")
        a, h, f, depth = a[order], h[order], f[order], depth[order]
    raise QuadratureDiverged(f"no convergence after {max_rounds} refinement rounds")


def tail_integral(func, lower, n_nodes=64):
    """Integral over [lower, inf) via u = 1/x and Gauss-Legendre in u.

    Suitable for integrands decaying at least like 1/x^2.
    """
    u_max = 1.0 / lower
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    # two panels, the inner one near u = 0 (x -> inf)
    for lo, hi in ((0.0, 0.1 * u_max), (0.1 * u_max, u_max)):
        u = 0.5 * (hi - lo) * (t + 1.0) + lo
        vals = np.asarray(func(1.0 / u)) / (u**2)[:, None]
        total = total + 0.5 * (hi - lo) * (w[:, None] * vals).sum(axis=0)
    return total
