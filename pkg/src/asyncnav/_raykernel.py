"""Compiled ray/box loop; same arithmetic as the numpy path in :func:`asyncnav.world.cast_rays`."""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def cast_rays_kernel(o, dirs, lo, hi, bounds, max_range, walls):
    n = dirs.shape[0]
    out = np.empty(n)
    for r in range(n):
        dx = dirs[r, 0]
        if abs(dx) < 1e-12:
            dx = 1e-12
        dy = dirs[r, 1]
        if abs(dy) < 1e-12:
            dy = 1e-12
        inv_x = 1.0 / dx
        inv_y = 1.0 / dy
        best = math.inf
        for k in range(lo.shape[0]):
            tx1 = (lo[k, 0] - o[0]) * inv_x
            tx2 = (hi[k, 0] - o[0]) * inv_x
            ty1 = (lo[k, 1] - o[1]) * inv_y
            ty2 = (hi[k, 1] - o[1]) * inv_y
            t_near = max(min(tx1, tx2), min(ty1, ty2))
            t_far = min(max(tx1, tx2), max(ty1, ty2))
            if t_near <= t_far and t_far >= 0:
                t = max(t_near, 0.0)
                if t < best:
                    best = t
        if walls:
            for a in range(3):
                d = dirs[r, a]
                if d > 0:
                    t = max((bounds[2 * a + 1] - o[a]) / d, 0.0)
                elif d < 0:
                    t = max((bounds[2 * a] - o[a]) / d, 0.0)
                else:
                    t = math.inf
                if t < best:
                    best = t
        if best > max_range:
            best = math.inf
        out[r] = best
    return out
