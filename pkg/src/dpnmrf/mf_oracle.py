"""Explicit mean-field inference, written voxel by voxel.

This is the reference the convolutional pipeline is checked against, so it
deliberately avoids the gather tables used there: neighborhoods are walked
per voxel from trajectory anchors and zero-padded window blocks, and color
distances are computed directly rather than through the lookup table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .energy import PairwiseConfig, edge_potentials, free_energy, unary_from_prob, DEFAULT_EPS
from .tensor_core import (
    TemporalLinks,
    VolumeShape,
    anchor_of,
    as_volume,
    check_prob,
)

SCHEDULES = ("synchronous", "sequential")


@dataclass
class MFTrace:
    iterations: List[Tuple[int, float, float]] = field(default_factory=list)

    def record(self, it: int, fe: float, change: float):
        if not np.isfinite(fe):
            raise FloatingPointError(f"free energy became non-finite at iteration {it}")
        if self.iterations and it <= self.iterations[-1][0]:
            raise ValueError("iteration indices must increase")
        self.iterations.append((it, float(fe), float(change)))

    @property
    def free_energies(self) -> np.ndarray:
        return np.array([fe for _, fe, _ in self.iterations])

    def to_csv(self) -> str:
        lines = ["iter,free_energy,max_change"]
        lines += [f"{i},{fe!r},{ch!r}" for i, fe, ch in self.iterations]
        return "\n".join(lines) + "\n"


def _block(frame: np.ndarray, cy: int, cx: int, h: int):
    """Zero-padded ``(2h+1, 2h+1, ...)`` block of ``frame`` centered at (cy, cx)."""
    H, W = frame.shape[:2]
    side = 2 * h + 1
    out = np.zeros((side, side) + frame.shape[2:], dtype=np.float64)
    mask = np.zeros((side, side), dtype=bool)
    y0, y1 = max(cy - h, 0), min(cy + h + 1, H)
    x0, x1 = max(cx - h, 0), min(cx + h + 1, W)
    if y0 < y1 and x0 < x1:
        out[y0 - cy + h:y1 - cy + h, x0 - cx + h:x1 - cx + h] = frame[y0:y1, x0:x1]
        mask[y0 - cy + h:y1 - cy + h, x0 - cx + h:x1 - cx + h] = True
    return out, mask


def _triple_sums(context, img, cfg: PairwiseConfig, links, shape: VolumeShape):
    """``D[j, v] = sum_z d(j, z) context[z, v]`` by walking each voxel's window."""
    T, H, W = shape.dims
    L = context.shape[-1]
    h, ht = cfg.m // 2, cfg.t_m // 2
    D = np.zeros((T, H, W, L))
    off = np.arange(-h, h + 1)
    for t in range(T):
        for y in range(H):
            for x in range(W):
                acc = np.zeros(L)
                for dt in range(-ht, ht + 1):
                    a = anchor_of(links, shape, (t, y, x), dt)
                    if a is None:
                        continue
                    ta, ay, ax = a
                    cblock, mask = _block(context[ta], ay, ax, h)
                    pos = ((ta - t) ** 2
                           + (ay + off[:, None] - y) ** 2
                           + (ax + off[None, :] - x) ** 2).astype(np.float64)
                    dist = cfg.w2 * pos
                    if cfg.w1 != 0:
                        iblock, _ = _block(img[ta].astype(np.float64), ay, ax, h)
                        diff = iblock - img[t, y, x].astype(np.float64)
                        dist = dist + cfg.w1 * np.sum(diff * diff, axis=-1)
                    acc += np.einsum("ab,abv->v", dist * mask, cblock)
                D[t, y, x] = acc
    return D


def _context_messages(Q, D, cfg: PairwiseConfig, links, shape: VolumeShape):
    """Per-component messages ``sum_j sum_v q_j^v psi_k[i, j, u, v]`` with
    ``psi`` built on context ``Q`` itself; returns ``(T, H, W, K, L)``."""
    T, H, W = shape.dims
    L = Q.shape[-1]
    K = cfg.K
    h, ht = cfg.n // 2, cfg.t_n // 2
    side = cfg.n
    mu = cfg.contexts.reshape(K, L, cfg.t_n, side, side, L)
    weighted = cfg.lin_a * Q * D  # q_j^v * lin_a * D_j^v
    out = np.zeros((T, H, W, K, L))
    for t in range(T):
        for y in range(H):
            for x in range(W):
                acc = np.zeros((K, L))
                for dt in range(-ht, ht + 1):
                    a = anchor_of(links, shape, (t, y, x), dt)
                    if a is None:
                        continue
                    ta, ay, ax = a
                    wblock, mask = _block(weighted[ta], ay, ax, h)
                    qblock, _ = _block(Q[ta], ay, ax, h)
                    mk = mu[:, :, dt + ht]  # (K, L_u, side, side, L_v)
                    acc += np.einsum("kuabv,abv->ku", mk, wblock)
                    # lin_b: sum_v q_j^v * lin_b * sum_v' mu  (q_j normalized)
                    qsum = qblock.sum(axis=-1) * mask
                    acc += cfg.lin_b * np.einsum("kuabv,ab->ku", mk, qsum)
                out[t, y, x] = acc
    return out


def _sync_step(Q, unary, img, cfg, links):
    shape = VolumeShape.of(Q)
    D = _triple_sums(Q, img, cfg, links, shape)
    msgs = _context_messages(Q, D, cfg, links, shape)
    penalty = msgs.min(axis=3)
    logits = -(unary + penalty)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


class _CoordinateDescent:
    """Exact per-voxel minimizer of the free energy with fixed potentials."""

    def __init__(self, unary, img, cfg, links, context, lut=None):
        L = unary.shape[-1]
        self.L = L
        self.unary = unary.reshape(-1, L)
        psi, nbr = edge_potentials(context, img, cfg, links, lut)
        self.psi = psi  # (N, taps, L, L)
        center = cfg.context_offsets.index((0, 0, 0))
        N, taps = psi.shape[:2]
        self.self_cost = np.einsum("nuu->nu", psi[:, center])
        out_ok = nbr.valid.T.copy()
        out_ok[:, center] = False
        self.out_taps = [np.nonzero(out_ok[i])[0] for i in range(N)]
        self.out_nbr = [nbr.index[self.out_taps[i], i] for i in range(N)]
        src_i, src_tap = np.nonzero(out_ok)
        dst = nbr.index.T[src_i, src_tap]
        order = np.argsort(dst, kind="stable")
        src_i, src_tap, dst = src_i[order], src_tap[order], dst[order]
        bounds = np.searchsorted(dst, np.arange(N + 1))
        self.in_src = [src_i[bounds[i]:bounds[i + 1]] for i in range(N)]
        self.in_tap = [src_tap[bounds[i]:bounds[i + 1]] for i in range(N)]

    def sweep(self, Q):
        q = Q.reshape(-1, self.L).copy()
        psi = self.psi
        for i in range(q.shape[0]):
            a = self.unary[i] + self.self_cost[i]
            ot, oj = self.out_taps[i], self.out_nbr[i]
            if len(ot):
                a = a + np.einsum("tuv,tv->u", psi[i, ot], q[oj])
            si, st = self.in_src[i], self.in_tap[i]
            if len(si):
                a = a + np.einsum("tvu,tv->u", psi[si, st], q[si])
            z = -a - np.max(-a)
            e = np.exp(z)
            q[i] = e / e.sum()
        return q.reshape(Q.shape)


def mf_step(Q: np.ndarray, unary: np.ndarray, img, cfg: PairwiseConfig,
            links: Optional[TemporalLinks], schedule: str = "synchronous",
            context: Optional[np.ndarray] = None) -> np.ndarray:
    """One mean-field update of every voxel.

    ``synchronous`` evaluates the substituted closed-form update from the old
    beliefs: the triple penalty uses ``Q`` for both ``q_j`` and ``q_z`` and
    the mixture is resolved by the minimum aggregated penalty per (voxel,
    label).  This is the update the convolutional pipeline reproduces.

    ``sequential`` sweeps voxels in raster order and sets each one to the
    exact minimizer of :func:`free_energy` with the others held fixed
    (potentials built on ``context``, default ``exp(-unary)``), so the free
    energy can only go down.
    """
    Q = check_prob(np.asarray(Q, dtype=np.float64), normalized=True)
    unary = as_volume(np.asarray(unary, dtype=np.float64))
    if Q.shape != unary.shape:
        raise ValueError(f"Q {Q.shape} vs unary {unary.shape}")
    if cfg.w1 != 0 and img is None:
        raise ValueError("an image is required when w1 != 0")
    if img is not None:
        img = as_volume(np.asarray(img))
    if schedule == "synchronous":
        return _sync_step(Q, unary, img, cfg, links)
    if schedule == "sequential":
        if context is None:
            context = np.exp(-unary)
        return _CoordinateDescent(unary, img, cfg, links, context).sweep(Q)
    raise ValueError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")


def run_mf(p: np.ndarray, img, cfg: PairwiseConfig, links: Optional[TemporalLinks],
           max_iters: int = 5, tol: float = 1e-4, schedule: str = "synchronous",
           eps: float = DEFAULT_EPS):
    """Iterate :func:`mf_step` from ``Q = p`` until the largest belief change
    drops below ``tol`` or ``max_iters`` steps have run.

    The trace holds the free energy (potentials on the floored unary
    probabilities) after every step.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    p = check_prob(np.asarray(p, dtype=np.float64), normalized=True, name="p")
    unary = unary_from_prob(p, eps)
    context = np.exp(-unary)
    Q = p
    trace = MFTrace()
    solver = None
    if schedule == "sequential":
        solver = _CoordinateDescent(unary, img, cfg, links, context)
    elif schedule != "synchronous":
        raise ValueError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")
    for it in range(1, max_iters + 1):
        new = solver.sweep(Q) if solver else mf_step(Q, unary, img, cfg, links, schedule)
        change = float(np.max(np.abs(new - Q)))
        Q = new
        trace.record(it, free_energy(Q, unary, img, cfg, links, context=context), change)
        if change < tol:
            break
    return Q, trace
