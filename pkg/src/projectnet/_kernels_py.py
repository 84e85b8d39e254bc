"""Pure numpy Dykstra kernels (fallback when the compiled core is unavailable).

Both backends take the packed plan produced by ``ProjectionPlan`` and must
agree to roundoff.  Affine sets carry no correction term: a correction lies
in the row space of A and projecting onto the affine set annihilates it.
Halfspace corrections are kept as a scalar multiple of the normal.
"""

import numpy as np

AFFINE, HALFSPACE, NONNEG, BOX, SIMPLEX = 0, 1, 2, 3, 4


def _simplex(y, total):
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - total
    idx = np.arange(1, y.shape[1] + 1)
    cond = u - css / idx > 0
    rho = y.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(y.shape[0]), rho] / (rho + 1)
    return tau


def dykstra_forward(pk, W, rhs, k, record, tol=0.0):
    B, d = W.shape
    x = np.array(W, dtype=float, copy=True)
    z = np.zeros((pk.nz, B, d))
    c = np.zeros((pk.nh, B))
    masks = np.zeros((B, k, pk.R), dtype=np.uint8) if record else None
    cycles = 0
    for t in range(k):
        xprev = x.copy() if tol > 0 else None
        for j, ent in enumerate(pk.entries):
            kind = ent[0]
            if kind == AFFINE:
                _, A, P, b = ent
                bb = rhs if (rhs is not None and j == pk.rhs_set) else b
                x = x - (x @ A.T - bb) @ P.T
            elif kind == HALFSPACE:
                _, idx, vals, bj, inv, h, mo = ent
                cj = c[h]
                s = x[:, idx] @ vals + cj / inv - bj
                lam = np.maximum(s, 0.0) * inv
                x[:, idx] += (cj - lam)[:, None] * vals
                c[h] = lam
                if record:
                    masks[:, t, mo] = s > 0
            else:
                zs, mo = ent[-2], ent[-1]
                y = x + z[zs]
                if kind == NONNEG:
                    x = np.maximum(y, 0.0)
                    m = y > 0
                elif kind == BOX:
                    lo, hi = ent[1], ent[2]
                    x = np.minimum(np.maximum(y, lo), hi)
                    m = (y > lo) & (y < hi)
                else:
                    tau = _simplex(y, ent[1])
                    x = np.maximum(y - tau[:, None], 0.0)
                    m = y - tau[:, None] > 0
                z[zs] = y - x
                if record:
                    masks[:, t, mo:mo + d] = m
        cycles = t + 1
        if tol > 0 and np.max(np.abs(x - xprev), initial=0.0) <= tol:
            break
    return x, masks, cycles


def dykstra_backward(pk, masks, G, k, need_rhs):
    B, d = G.shape
    gx = np.array(G, dtype=float, copy=True)
    gz = np.zeros((pk.nz, B, d))
    gc = np.zeros((pk.nh, B))
    grhs = np.zeros((B, pk.m_rhs)) if need_rhs else None
    for t in range(k - 1, -1, -1):
        for j in range(len(pk.entries) - 1, -1, -1):
            ent = pk.entries[j]
            kind = ent[0]
            if kind == AFFINE:
                _, A, P, b = ent
                if need_rhs and j == pk.rhs_set:
                    grhs += gx @ P
                gx = gx - (gx @ A.T) @ P.T
            elif kind == HALFSPACE:
                _, idx, vals, bj, inv, h, mo = ent
                m = masks[:, t, mo].astype(float)
                ad = gx[:, idx] @ vals
                glam = gc[h] - ad
                gx[:, idx] += (m * glam * inv)[:, None] * vals
                gc[h] = ad + m * glam
            else:
                zs, mo = ent[-2], ent[-1]
                m = masks[:, t, mo:mo + d].astype(float)
                v = gx - gz[zs]
                if kind == SIMPLEX:
                    cnt = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
                    v = v - (m * v).sum(axis=1, keepdims=True) / cnt
                gy = m * v + gz[zs]
                gz[zs] = gy
                gx = gy.copy()
    return gx, grhs
