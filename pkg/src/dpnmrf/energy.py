"""MRF energy with the triple-penalty / label-context pairwise term.

The pairwise potential between voxel ``i`` (label ``u``) and a neighbor ``j``
(label ``v``) at window tap ``delta`` is, per mixture component ``k``::

    psi_k = mu_k[u, delta, v] * lin_a * D[j, v] + lin_b * sum_v' mu_k[u, delta, v']
    D[j, v] = sum_{z in N(j)} d(j, z) * c[z, v]

where ``c`` is a fixed context tensor (the unary probabilities in the model,
or the current beliefs inside the substituted mean-field update).  The
``lin_b`` part is the bias of the linear activation spread over ``v`` so that
``sum_v q_j^v psi_k`` reproduces ``sum_v mu_k * lin(q_j^v * lin_a ...)`` for a
normalized ``q_j``.  With the default ``lin = (1, 0)`` it vanishes.

The mixture indicator picks the component with the smallest penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .tensor_core import (
    IGNORE_LABEL,
    IntensityLUT,
    NeighborIndex,
    ShapeError,
    TemporalLinks,
    VolumeShape,
    as_volume,
    check_image,
    check_prob,
    color_sqdist,
    default_lut,
    neighbor_of,
    window_offsets,
)

DEFAULT_EPS = 1e-12


def _odd(v) -> bool:
    return int(v) == v and v >= 1 and int(v) % 2 == 1


@dataclass(frozen=True)
class PairwiseConfig:
    """All pairwise parameters.

    ``contexts`` has shape ``(K, L, t_n * n * n, L)``; entry ``[k, u, tap, v]``
    is the penalty of label ``v`` at window tap ``tap`` of a voxel labelled
    ``u``.  Taps are ordered as :func:`window_offsets` returns them.
    """

    contexts: np.ndarray
    w1: float = 0.0
    w2: float = 1.0
    m: int = 7
    t_m: int = 3
    n: int = 5
    t_n: int = 3
    lin_a: float = 1.0
    lin_b: float = 0.0

    def __post_init__(self):
        for name in ("m", "t_m", "n", "t_n"):
            if not _odd(getattr(self, name)):
                raise ValueError(f"{name}: must be an odd positive integer, got {getattr(self, name)}")
        ctx = np.asarray(self.contexts, dtype=np.float64)
        if ctx.ndim != 4 or ctx.shape[0] < 1:
            raise ValueError(f"contexts: expected shape (K, L, taps, L), got {ctx.shape}")
        if ctx.shape[2] != self.t_n * self.n * self.n:
            raise ValueError(
                f"contexts: tap axis {ctx.shape[2]} != t_n*n*n = {self.t_n * self.n * self.n}")
        if ctx.shape[1] != ctx.shape[3]:
            raise ValueError(f"contexts: label axes differ {ctx.shape[1]} vs {ctx.shape[3]}")
        if not np.all(np.isfinite(ctx)):
            raise ValueError("contexts: non-finite values")
        for name in ("w1", "w2", "lin_a", "lin_b"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name}: must be finite")
        object.__setattr__(self, "contexts", ctx)

    @property
    def K(self) -> int:
        return self.contexts.shape[0]

    @property
    def num_labels(self) -> int:
        return self.contexts.shape[1]

    @property
    def context_offsets(self):
        return window_offsets(self.t_n, self.n)

    @property
    def local_offsets(self):
        return window_offsets(self.t_m, self.m)

    def with_(self, **kw) -> "PairwiseConfig":
        return replace(self, **kw)


def context_bank(K: int, L: int, t_n: int, n: int, kind: str = "zero",
                 strength: float = 1.0, seed: Optional[int] = None) -> np.ndarray:
    """Build a context filter bank.

    ``zero``: no contexts.  ``smoothing``: ``-strength`` on same-label taps
    (the center tap excluded) for every component, component ``k`` scaled by
    ``1/(k+1)``.  ``random``: Gaussian entries scaled by ``strength``.
    """
    taps = t_n * n * n
    if kind == "zero":
        return np.zeros((K, L, taps, L))
    if kind == "smoothing":
        bank = np.zeros((K, L, taps, L))
        center = window_offsets(t_n, n).index((0, 0, 0))
        for k in range(K):
            for u in range(L):
                bank[k, u, :, u] = -strength / (k + 1)
                bank[k, u, center, u] = 0.0
        return bank
    if kind == "random":
        return strength * np.random.default_rng(seed).standard_normal((K, L, taps, L))
    raise ValueError(f"unknown context bank kind {kind!r}")


def zero_config(L: int, **kw) -> PairwiseConfig:
    t_n, n = kw.get("t_n", 3), kw.get("n", 5)
    return PairwiseConfig(contexts=np.zeros((1, L, t_n * n * n, L)), **kw)


def unary_from_prob(p: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Unary cost ``-ln max(p, eps)``."""
    if not 0 < eps <= 1e-3:
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return -np.log(np.maximum(p, eps))


# --- triple penalty sums ----------------------------------------------------


def distance_sums(context: np.ndarray, img: Optional[np.ndarray], cfg: PairwiseConfig,
                  links: Optional[TemporalLinks], lut: Optional[IntensityLUT] = None,
                  split: bool = False):
    """``D[j, v] = sum_{z in N(j)} d(j, z) c[z, v]`` over the local window.

    Returns a ``(T, H, W, L)`` array.  With ``split=True`` returns the color
    and position parts separately (unscaled by ``w1``/``w2``) so that
    ``D = w1 * Dc + w2 * Ds``.
    """
    context = as_volume(np.asarray(context, dtype=np.float64))
    shape = VolumeShape.of(context)
    L = context.shape[-1]
    if cfg.w1 != 0 and img is None:
        raise ValueError("an image is required when w1 != 0")
    need_color = img is not None and (split or cfg.w1 != 0)
    if need_color:
        img = check_image(img)
        if img.shape[:3] != context.shape[:3]:
            raise ShapeError(f"image {img.shape[:3]} vs tensor {context.shape[:3]}")
    idx = NeighborIndex(shape, links, cfg.t_m, cfg.m)
    c = context.reshape(-1, L)
    N = shape.size
    flat_img = img.reshape(-1, 3) if need_color else None
    lut = lut or default_lut()

    T, H, W = shape.dims
    tt, yy, xx = (a.ravel() for a in np.indices((T, H, W)))
    Dc = np.zeros((N, L))
    Ds = np.zeros((N, L))
    for k in range(len(idx)):
        ok = idx.valid[k]
        if not ok.any():
            continue
        z = idx.index[k]
        cz = c[z] * ok[:, None]
        zt, zy, zx = np.unravel_index(z, (T, H, W))
        pos = (zt - tt) ** 2 + (zy - yy) ** 2 + (zx - xx) ** 2
        Ds += pos[:, None] * cz
        if need_color:
            col = lut.table[flat_img.astype(np.intp), flat_img[z].astype(np.intp)].sum(axis=-1)
            Dc += col.astype(np.float64)[:, None] * cz
    Dc = Dc.reshape(context.shape)
    Ds = Ds.reshape(context.shape)
    if split:
        return Dc, Ds
    return cfg.w1 * Dc + cfg.w2 * Ds


def mixture_potentials(context: np.ndarray, img, cfg: PairwiseConfig,
                       links: Optional[TemporalLinks], lut=None):
    """Per-component potentials for every edge.

    Returns ``(psi, nbr)`` where ``psi`` has shape ``(K, N, taps, L, L)``
    (axes: component, voxel i, context tap, label u of i, label v of j) and
    ``nbr`` is the :class:`NeighborIndex` of the context window.  Taps whose
    neighbor does not exist carry zeros.
    """
    context = as_volume(np.asarray(context, dtype=np.float64))
    shape = VolumeShape.of(context)
    L = context.shape[-1]
    if cfg.num_labels != L:
        raise ShapeError(f"context bank has {cfg.num_labels} labels, tensor has {L}")
    D = distance_sums(context, img, cfg, links, lut).reshape(-1, L)
    nbr = NeighborIndex(shape, links, cfg.t_n, cfg.n)
    mu = cfg.contexts  # (K, L, taps, L)
    bias = cfg.lin_b * mu.sum(axis=-1)  # (K, L, taps)
    Dj = D[nbr.index.T] * nbr.valid.T[..., None]  # (N, taps, L)
    psi = cfg.lin_a * mu.transpose(0, 2, 1, 3)[:, None] * Dj[None, :, :, None, :]
    psi = psi + bias.transpose(0, 2, 1)[:, None, :, :, None]
    psi *= nbr.valid.T[None, :, :, None, None]
    return psi, nbr


def edge_potentials(context, img, cfg, links, lut=None):
    """Pairwise potential with the mixture resolved per edge by minimum penalty."""
    psi, nbr = mixture_potentials(context, img, cfg, links, lut)
    return psi.min(axis=0), nbr


def pairwise_term(i, u: int, j, v: int, context: np.ndarray, img, cfg: PairwiseConfig,
                  links: Optional[TemporalLinks], lut: Optional[IntensityLUT] = None) -> float:
    """Scalar pairwise potential between ``(i, u)`` and ``(j, v)``.

    ``j`` must lie in the context window of ``i``.
    """
    context = as_volume(np.asarray(context, dtype=np.float64))
    shape = VolumeShape.of(context)
    i, j = tuple(int(a) for a in i), tuple(int(a) for a in j)
    tap = None
    for k, off in enumerate(cfg.context_offsets):
        if neighbor_of(links, shape, i, off) == j:
            tap = k
            break
    if tap is None:
        raise ValueError(f"voxel {j} is not in the context window of {i}")
    lut = lut or default_lut()
    if cfg.w1 != 0 and img is None:
        raise ValueError("an image is required when w1 != 0")
    D = 0.0
    for off in cfg.local_offsets:
        z = neighbor_of(links, shape, j, off)
        if z is None:
            continue
        pos = sum((a - b) ** 2 for a, b in zip(j, z))
        col = float(color_sqdist(img, j, z, lut)) if cfg.w1 != 0 else 0.0
        D += (cfg.w1 * col + cfg.w2 * pos) * context[z + (v,)]
    mu = cfg.contexts[:, u, tap, :]
    vals = mu[:, v] * cfg.lin_a * D + cfg.lin_b * mu.sum(axis=-1)
    return float(vals.min())


def _check_labels(y: np.ndarray, L: int) -> np.ndarray:
    y = as_volume(np.asarray(y), ndim=3)
    if np.any(y == IGNORE_LABEL):
        raise ValueError("label map contains ignore values")
    if np.any(y < 0) or np.any(y >= L):
        raise ValueError(f"labels must lie in [0, {L})")
    return y.astype(np.intp)


def energy(y: np.ndarray, unary: np.ndarray, context: np.ndarray, img, cfg: PairwiseConfig,
           links: Optional[TemporalLinks], lut=None) -> float:
    """``E(y) = sum_i unary[i, y_i] + sum over ordered edges psi[i, j, y_i, y_j]``.

    Edges are every (voxel, context tap) pair with an existing neighbor,
    including the center tap.
    """
    unary = as_volume(np.asarray(unary, dtype=np.float64))
    L = unary.shape[-1]
    y = _check_labels(y, L)
    if y.shape != unary.shape[:3] or as_volume(context).shape != unary.shape:
        raise ShapeError("label map, unary and context shapes differ")
    psi, nbr = edge_potentials(context, img, cfg, links, lut)
    yf = y.ravel()
    total = np.take_along_axis(unary.reshape(-1, L), yf[:, None], axis=1).sum()
    yj = yf[nbr.index.T]  # (N, taps)
    N, taps = yj.shape
    vals = psi[np.arange(N)[:, None], np.arange(taps)[None, :], yf[:, None], yj]
    return float(total + vals.sum())


def entropy_term(q: np.ndarray) -> float:
    """``sum q ln q`` with ``0 ln 0 = 0``."""
    q = np.asarray(q, dtype=np.float64)
    pos = q > 0
    return float(np.sum(q[pos] * np.log(q[pos])))


def free_energy(Q: np.ndarray, unary: np.ndarray, img, cfg: PairwiseConfig,
                links: Optional[TemporalLinks], context: Optional[np.ndarray] = None,
                lut=None) -> float:
    """Variational free energy of the factorized beliefs ``Q``.

    The pairwise potentials use ``context`` (default ``exp(-unary)``, i.e. the
    floored unary probabilities).  A voxel's center-tap self edge contributes
    its expectation ``sum_u q_i^u psi_ii^uu`` since one variable cannot take
    two labels at once; for one-hot ``Q`` this equals the energy of the
    corresponding labeling.
    """
    Q = check_prob(np.asarray(Q, dtype=np.float64), normalized=True)
    unary = as_volume(np.asarray(unary, dtype=np.float64))
    if Q.shape != unary.shape:
        raise ShapeError(f"Q {Q.shape} vs unary {unary.shape}")
    if context is None:
        context = np.exp(-unary)
    L = Q.shape[-1]
    psi, nbr = edge_potentials(context, img, cfg, links, lut)
    q = Q.reshape(-1, L)
    center = cfg.context_offsets.index((0, 0, 0))

    unary_part = float(np.sum(q * unary.reshape(-1, L)))
    qj = q[nbr.index.T] * nbr.valid.T[..., None]  # (N, taps, L)
    cross = np.einsum("nu,ntuv,ntv->", q, psi, qj)
    self_pair = np.einsum("nu,nuv,nv->", q, psi[:, center], q[nbr.index[center]])
    self_lin = np.einsum("nu,nuu->", q, psi[:, center])
    return unary_part + float(cross - self_pair + self_lin) + entropy_term(q)
