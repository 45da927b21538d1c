"""The b12-b15 layer stack: one feed-forward mean-field iteration.

b12  local convolution with a per-position distance kernel shared by all labels
b13  global convolution with the label-context filters, K*L output channels
b14  block min pooling over each label's K channels
b15  softmax combination with the unary log-probabilities
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .energy import DEFAULT_EPS, PairwiseConfig, distance_sums
from .tensor_core import (
    NeighborIndex,
    ShapeError,
    TemporalLinks,
    VolumeShape,
    as_volume,
    check_prob,
)


def local_conv_3d(Q: np.ndarray, img, cfg: PairwiseConfig, links: Optional[TemporalLinks],
                  lut=None) -> np.ndarray:
    """b12: ``lin_a * q_j^v * sum_z d(j, z) q_z^v + lin_b``.

    The kernel ``d(j, .)`` depends on the position through the image but is
    the same for every label channel, so it is applied once and multiplied by
    ``q_j`` afterwards.
    """
    Q = as_volume(np.asarray(Q, dtype=np.float64))
    D = distance_sums(Q, img, cfg, links, lut)
    return cfg.lin_a * Q * D + cfg.lin_b


def global_conv_3d(o12: np.ndarray, bank: np.ndarray, context_rf: Tuple[int, int],
                   links: Optional[TemporalLinks] = None,
                   nbr: Optional[NeighborIndex] = None) -> np.ndarray:
    """b13: correlate ``o12`` with every context filter.

    ``bank`` is ``(K, L, taps, L)`` and ``context_rf = (t_n, n)``.  Output
    channel ``u * K + k`` holds mixture ``k`` of label ``u``.  Taps outside
    the volume (or off a broken trajectory) read zero.
    """
    o12 = as_volume(np.asarray(o12, dtype=np.float64))
    bank = np.asarray(bank, dtype=np.float64)
    t_n, n = context_rf
    T, H, W, L = o12.shape
    if bank.ndim != 4 or bank.shape[1] != L or bank.shape[3] != L or bank.shape[2] != t_n * n * n:
        raise ShapeError(f"filter bank shape {bank.shape} does not match L={L}, window {t_n}x{n}x{n}")
    K = bank.shape[0]
    if nbr is None:
        nbr = NeighborIndex(VolumeShape(T, H, W), links, t_n, n)
    flat = o12.reshape(-1, L)
    out = np.zeros((flat.shape[0], L, K))
    for tap in range(len(nbr)):
        ok = nbr.valid[tap]
        if not ok.any():
            continue
        g = flat[nbr.index[tap]] * ok[:, None]
        out += np.einsum("nv,kuv->nuk", g, bank[:, :, tap, :])
    return out.reshape(T, H, W, L * K)


def block_min_pool(o13: np.ndarray, K: int, return_argmin: bool = False):
    """b14: minimum over each group of ``K`` consecutive channels.

    Ties resolve to the lowest index in the group.
    """
    o13 = np.asarray(o13)
    C = o13.shape[-1]
    if K < 1 or C % K:
        raise ShapeError(f"{C} channels cannot be pooled in groups of {K}")
    grouped = o13.reshape(o13.shape[:-1] + (C // K, K))
    arg = grouped.argmin(axis=-1)
    out = np.take_along_axis(grouped, arg[..., None], axis=-1)[..., 0]
    return (out, arg) if return_argmin else out


def combine_softmax(o11: np.ndarray, o14: np.ndarray) -> np.ndarray:
    """b15: ``softmax(ln o11 - o14)`` over labels."""
    o11 = np.asarray(o11, dtype=np.float64)
    o14 = np.asarray(o14, dtype=np.float64)
    if o11.shape != o14.shape:
        raise ShapeError(f"unary {o11.shape} vs smoothness {o14.shape}")
    if np.any(o11 <= 0) or np.any(o11 > 1):
        raise ValueError("unary activations must lie in (0, 1]")
    logits = np.log(o11) - o14
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    o11: np.ndarray
    Dc: np.ndarray
    Ds: np.ndarray
    o12: np.ndarray
    o13: np.ndarray
    o14: np.ndarray
    argmin: np.ndarray
    o15: np.ndarray
    nbr: NeighborIndex


def dpn_forward(p: np.ndarray, img, cfg: PairwiseConfig, links: Optional[TemporalLinks],
                eps: float = DEFAULT_EPS, return_cache: bool = False, lut=None):
    """One pass of b12 -> b13 -> b14 -> b15 starting from unary probabilities ``p``.

    ``links=None`` uses rigid-cube temporal neighbors.
    """
    p = check_prob(np.asarray(p, dtype=np.float64), name="p")
    if np.any(p > 1):
        raise ValueError("p must lie in [0, 1]")
    if cfg.num_labels != p.shape[-1]:
        raise ShapeError(f"config has {cfg.num_labels} labels, p has {p.shape[-1]}")
    o11 = np.maximum(p, eps)
    Dc, Ds = distance_sums(o11, img, cfg, links, lut, split=True)
    o12 = cfg.lin_a * o11 * (cfg.w1 * Dc + cfg.w2 * Ds) + cfg.lin_b
    shape = VolumeShape.of(o11)
    nbr = NeighborIndex(shape, links, cfg.t_n, cfg.n)
    o13 = global_conv_3d(o12, cfg.contexts, (cfg.t_n, cfg.n), nbr=nbr)
    o14, arg = block_min_pool(o13, cfg.K, return_argmin=True)
    o15 = combine_softmax(o11, o14)
    if return_cache:
        return o15, ForwardCache(o11, Dc, Ds, o12, o13, o14, arg, o15, nbr)
    return o15


def dilate_kernel(kernel: np.ndarray, rate: int) -> np.ndarray:
    """Insert ``rate - 1`` zeros between neighboring taps of a square kernel."""
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square, got {kernel.shape}")
    s = kernel.shape[0]
    if s % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {s}")
    if rate < 1:
        raise ValueError(f"rate must be >= 1, got {rate}")
    side = (s - 1) * rate + 1
    out = np.zeros((side, side), dtype=kernel.dtype)
    out[::rate, ::rate] = kernel
    return out


def complexity_report(shape, L: int, K: int, cfg: Optional[PairwiseConfig] = None,
                      batch: int = 1, m: Optional[int] = None, n: Optional[int] = None,
                      t_m: int = 1, t_n: int = 1) -> Dict[str, int]:
    """Closed-form operation counts per layer for a mini-batch.

    ``f = L`` input maps, ``f' = K * L`` b13 output maps, ``N^2`` is the number
    of voxels and ``s^2`` the receptive-field area (times its time span).
    """
    if cfg is not None:
        m, n, t_m, t_n = cfg.m, cfg.n, cfg.t_m, cfg.t_n
    if m is None or n is None:
        raise ValueError("receptive fields m and n are required")
    dims = tuple(int(d) for d in (shape.dims if isinstance(shape, VolumeShape) else shape))
    voxels = int(np.prod(dims, dtype=object))
    f, f2 = int(L), int(K) * int(L)
    return {
        "b12": f * voxels * (m * m * t_m) * batch,
        "b13": f * f2 * voxels * (n * n * t_n) * batch,
        "b14": f * voxels * batch,
        "b15": f * voxels * batch,
    }


def leading_digits(value: int, digits: int = 2) -> str:
    """Scientific notation truncated (not rounded) to ``digits`` significant figures."""
    value = int(value)
    if value == 0:
        return "0"
    s = str(abs(value))
    exp = len(s) - 1
    mant = s[0] + ("." + s[1:digits] if digits > 1 else "")
    return f"{'-' if value < 0 else ''}{mant}e{exp}"
