"""Shared builders for tests: stacked models from known worlds and loop references."""

import numpy as np

from gvarsv import oracle
from gvarsv.stack import CountryBlock, stack_global


def world_model(world, truth=None, initial="final"):
    """GlobalModel carrying the true parameters (history from ``truth`` when given)."""
    blocks = []
    for s, p, v in zip(world.specs, world.params, world.vols):
        xh = truth.panel.matrix(s.id, [k.value for k in s.domestic_vars]) if truth else None
        hh = truth.h[s.id].h if truth else None
        blocks.append(CountryBlock(s, p, v, xh, hh))
    return stack_global(blocks, world.weights, initial=initial if truth else "mean")


def loop_paths(world, x_hist, h_hist, e, eta):
    """Joint simulation with the oracle's per-period loop; returns (x, h) each (R, H+1, k)."""
    R, H1, _ = e.shape
    xs, hs = [], []
    for r in range(R):
        X, H = list(x_hist), list(h_hist)
        for t in range(H1):
            x, h = oracle._step(world, X, H, e[r, t], eta[r, t])
            X.append(x)
            H.append(h)
        xs.append(X[len(x_hist):])
        hs.append(H[len(h_hist):])
    return np.array(xs), np.array(hs)
