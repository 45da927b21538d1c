"""Plain nested-loop references, written without the library's index tables."""

import math

import numpy as np


def rigid_neighbors(shape, t, y, x, span, size):
    """Rigid-cube window around (t, y, x), raster order; None where outside."""
    T, H, W = shape
    h, ht = size // 2, span // 2
    out = []
    for dt in range(-ht, ht + 1):
        for dy in range(-h, h + 1):
            for dx in range(-h, h + 1):
                tt, yy, xx = t + dt, y + dy, x + dx
                ok = 0 <= tt < T and 0 <= yy < H and 0 <= xx < W
                out.append((tt, yy, xx) if ok else None)
    return out


def dist(img, a, b, w1, w2):
    col = 0.0
    if w1:
        for c in range(3):
            diff = float(img[a][c]) - float(img[b][c])
            col += diff * diff
    pos = sum((i - j) ** 2 for i, j in zip(a, b))
    return w1 * col + w2 * pos


def sync_step(p, img, contexts, w1, w2, m, t_m, n, t_n, lin_a=1.0, lin_b=0.0, eps=1e-12):
    """One mean-field update from Q = max(p, eps), rigid temporal neighbors."""
    T, H, W, L = p.shape
    K = contexts.shape[0]
    q = np.maximum(p, eps)
    shape = (T, H, W)
    D = np.zeros_like(q)
    for t in range(T):
        for y in range(H):
            for x in range(W):
                for z in rigid_neighbors(shape, t, y, x, t_m, m):
                    if z is None:
                        continue
                    d = dist(img, (t, y, x), z, w1, w2)
                    for v in range(L):
                        D[t, y, x, v] += d * q[z + (v,)]
    out = np.zeros_like(q)
    for t in range(T):
        for y in range(H):
            for x in range(W):
                nbrs = rigid_neighbors(shape, t, y, x, t_n, n)
                logits = []
                for u in range(L):
                    best = math.inf
                    for k in range(K):
                        acc = 0.0
                        for tap, j in enumerate(nbrs):
                            if j is None:
                                continue
                            for v in range(L):
                                mu = contexts[k, u, tap, v]
                                acc += mu * (lin_a * q[j + (v,)] * D[j + (v,)] + lin_b)
                        best = min(best, acc)
                    logits.append(math.log(q[t, y, x, u]) - best)
                top = max(logits)
                e = [math.exp(v - top) for v in logits]
                s = sum(e)
                out[t, y, x] = [v / s for v in e]
    return out


def reduced_update(p, img, mu, w1, w2, m, eps=1e-12):
    """Single-frame, single-component update with the context window shrunk to
    the voxel itself: q_i^u ~ p_i^u exp(-sum_v mu(u, v) p_i^v sum_z d(i, z) p_z^v).
    """
    _, H, W, L = p.shape
    p = np.maximum(p, eps)
    out = np.zeros_like(p)
    h = m // 2
    for y in range(H):
        for x in range(W):
            s = np.zeros(L)
            for yy in range(max(0, y - h), min(H, y + h + 1)):
                for xx in range(max(0, x - h), min(W, x + h + 1)):
                    d = dist(img, (0, y, x), (0, yy, xx), w1, w2)
                    s += d * p[0, yy, xx]
            pen = mu @ (p[0, y, x] * s)
            a = p[0, y, x] * np.exp(-(pen - pen.min()))
            out[0, y, x] = a / a.sum()
    return out


def boundary_f1_bruteforce(pred_mask, gt_mask, tol):
    """Boundary F1 by an all-pairs Chebyshev distance scan."""
    def boundary(mask):
        H, W = mask.shape
        pts = []
        for y in range(H):
            for x in range(W):
                if not mask[y, x]:
                    continue
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < H and 0 <= xx < W and not mask[yy, xx]:
                        pts.append((y, x))
                        break
        return pts

    bp, bg = boundary(pred_mask), boundary(gt_mask)
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0

    def hits(a, b):
        return sum(any(max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= tol for q in b) for p in a)

    prec = hits(bp, bg) / len(bp)
    rec = hits(bg, bp) / len(bg)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
