"""Backprop through the b12-b15 stack and staged gradient-descent training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dpn import dpn_forward
from .energy import DEFAULT_EPS, PairwiseConfig
from .tensor_core import IGNORE_LABEL, as_volume

log = logging.getLogger(__name__)

STAGES = ("triple_penalty", "label_contexts", "joint")
SCALARS = ("w1", "w2", "lin_a", "lin_b")


@dataclass
class ParamGradients:
    d_contexts: np.ndarray
    d_w1: float = 0.0
    d_w2: float = 0.0
    d_lin_a: float = 0.0
    d_lin_b: float = 0.0

    def __add__(self, other: "ParamGradients") -> "ParamGradients":
        return ParamGradients(
            self.d_contexts + other.d_contexts,
            self.d_w1 + other.d_w1,
            self.d_w2 + other.d_w2,
            self.d_lin_a + other.d_lin_a,
            self.d_lin_b + other.d_lin_b,
        )

    def scaled(self, s: float) -> "ParamGradients":
        return ParamGradients(self.d_contexts * s, self.d_w1 * s, self.d_w2 * s,
                              self.d_lin_a * s, self.d_lin_b * s)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d_contexts))) and all(
            np.isfinite(getattr(self, f"d_{k}")) for k in SCALARS)


@dataclass(frozen=True)
class TrainConfig:
    """Fixed-step gradient descent settings.

    ``lr_scales`` multiplies the step for individual parameters (``contexts``,
    ``w1``, ``w2``, ``lin_a``, ``lin_b``); the color distance is in raw 8-bit
    units, so ``w1`` typically needs a far smaller step than the rest.
    """

    learning_rate: float = 0.05
    iterations: int = 50
    stage: str = "joint"
    seed: int = 0
    lr_scales: Optional[dict] = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate: must be >= 0, got {self.learning_rate}")
        if self.iterations < 0:
            raise ValueError(f"iterations: must be >= 0, got {self.iterations}")
        if self.stage not in STAGES:
            raise ValueError(f"stage: must be one of {STAGES}, got {self.stage!r}")
        for name, v in (self.lr_scales or {}).items():
            if name not in ("contexts",) + SCALARS:
                raise ValueError(f"lr_scales: unknown parameter {name!r}")
            if not v >= 0:
                raise ValueError(f"lr_scales.{name}: must be >= 0, got {v}")


def _valid_mask(gt: np.ndarray, L: int) -> np.ndarray:
    return (gt != IGNORE_LABEL) & (gt >= 0) & (gt < L)


def loss_pixelwise_ce(pred: np.ndarray, gt: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """Mean of ``-ln max(pred[gt], eps)`` over labelled voxels."""
    pred = as_volume(np.asarray(pred, dtype=np.float64))
    gt = as_volume(np.asarray(gt), ndim=3)
    if pred.shape[:3] != gt.shape:
        raise ValueError(f"prediction {pred.shape[:3]} vs labels {gt.shape}")
    mask = _valid_mask(gt, pred.shape[-1])
    if not mask.any():
        raise ValueError("every voxel is ignored")
    picked = np.take_along_axis(pred[mask], gt[mask].astype(np.intp)[:, None], axis=1)[:, 0]
    return float(np.mean(-np.log(np.maximum(picked, eps))))


def backward(p, img, cfg: PairwiseConfig, links, gt, eps: float = DEFAULT_EPS):
    """Loss and exact gradients of cross-entropy after one forward pass.

    b14 passes gradient only to the minimizing mixture channel (lowest index
    on ties).  The distance kernels are linear in ``w1`` and ``w2``.
    """
    pred, c = dpn_forward(p, img, cfg, links, eps=eps, return_cache=True)
    loss = loss_pixelwise_ce(pred, gt, eps)
    T, H, W, L = pred.shape
    K = cfg.K
    gt = as_volume(np.asarray(gt), ndim=3)
    mask = _valid_mask(gt, L)
    count = mask.sum()

    # d loss / d logits of the softmax, where logits = ln o11 - o14
    onehot = np.zeros_like(pred)
    idx = np.nonzero(mask)
    onehot[idx + (gt[mask].astype(np.intp),)] = 1.0
    picked = np.sum(pred * onehot, axis=-1)
    live = mask & (picked > eps)  # the eps floor has zero slope
    g_logits = (pred - onehot) * live[..., None] / count
    g14 = -g_logits

    # b14 -> b13: route to argmin channel
    g13 = np.zeros((T * H * W, L, K))
    arg = c.argmin.reshape(-1, L)
    np.put_along_axis(g13, arg[..., None], g14.reshape(-1, L)[..., None], axis=2)

    # b13 -> contexts and o12
    nbr = c.nbr
    o12 = c.o12.reshape(-1, L)
    d_ctx = np.zeros_like(cfg.contexts)
    g12 = np.zeros_like(o12)
    for tap in range(len(nbr)):
        ok = nbr.valid[tap]
        if not ok.any():
            continue
        j = nbr.index[tap]
        gathered = o12[j] * ok[:, None]
        d_ctx[:, :, tap, :] += np.einsum("nuk,nv->kuv", g13, gathered)
        contrib = np.einsum("nuk,kuv->nv", g13, cfg.contexts[:, :, tap, :]) * ok[:, None]
        np.add.at(g12, j, contrib)

    # b12: o12 = lin_a * q * (w1 Dc + w2 Ds) + lin_b
    q = c.o11.reshape(-1, L)
    Dc = c.Dc.reshape(-1, L)
    Ds = c.Ds.reshape(-1, L)
    D = cfg.w1 * Dc + cfg.w2 * Ds
    grads = ParamGradients(
        d_contexts=d_ctx,
        d_w1=float(np.sum(g12 * cfg.lin_a * q * Dc)),
        d_w2=float(np.sum(g12 * cfg.lin_a * q * Ds)),
        d_lin_a=float(np.sum(g12 * q * D)),
        d_lin_b=float(np.sum(g12)),
    )
    return loss, grads


def stage_mask(stage: str):
    """``(update_contexts, update_scalars)`` for a training stage."""
    if stage == "triple_penalty":
        return False, True
    if stage == "label_contexts":
        return True, False
    if stage == "joint":
        return True, True
    raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")


def apply_update(cfg: PairwiseConfig, grads: ParamGradients, lr: float, stage: str,
                 lr_scales: Optional[dict] = None) -> PairwiseConfig:
    do_ctx, do_scalars = stage_mask(stage)
    scales = lr_scales or {}
    kw = {}
    if do_ctx:
        kw["contexts"] = cfg.contexts - lr * scales.get("contexts", 1.0) * grads.d_contexts
    if do_scalars:
        for name in SCALARS:
            step = lr * scales.get(name, 1.0) * getattr(grads, f"d_{name}")
            kw[name] = float(getattr(cfg, name) - step)
    return replace(cfg, **kw) if kw else cfg


def dataset_gradient(dataset, cfg: PairwiseConfig, eps: float = DEFAULT_EPS):
    """Mean loss and gradient over samples ``(p, img, links, gt)`` in list order."""
    total = 0.0
    acc = None
    for p, img, links, gt in dataset:
        loss, g = backward(p, img, cfg, links, gt, eps)
        total += loss
        acc = g if acc is None else acc + g
    n = len(dataset)
    return total / n, acc.scaled(1.0 / n)


def train_incremental(dataset: Sequence, cfg0: PairwiseConfig, tc: TrainConfig,
                      eps: float = DEFAULT_EPS) -> Tuple[PairwiseConfig, List[float]]:
    """Plain gradient descent on one training stage.

    ``triple_penalty`` moves only ``w1, w2, lin_a, lin_b``; ``label_contexts``
    only the context bank; ``joint`` everything.  The returned history holds
    the loss before each update.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    cfg = cfg0
    history: List[float] = []
    for it in range(tc.iterations):
        loss, grads = dataset_gradient(dataset, cfg, eps)
        if not np.isfinite(loss) or not grads.is_finite():
            raise FloatingPointError(
                f"non-finite loss/gradient at stage {tc.stage} iteration {it}: loss={loss}, "
                f"w1={cfg.w1}, w2={cfg.w2}, lin=({cfg.lin_a}, {cfg.lin_b})")
        history.append(loss)
        log.debug("stage %s iter %d loss %.6f", tc.stage, it, loss)
        cfg = apply_update(cfg, grads, tc.learning_rate, tc.stage, tc.lr_scales)
    return cfg, history


def train_schedule(dataset: Sequence, cfg0: PairwiseConfig, learning_rate: float = 0.05,
                   iterations: int = 30, stages: Iterable[str] = STAGES, seed: int = 0,
                   lr_scales: Optional[dict] = None):
    """Run the stages in order, each starting from the previous result."""
    cfg = cfg0
    histories = {}
    for stage in stages:
        cfg, histories[stage] = train_incremental(
            dataset, cfg, TrainConfig(learning_rate, iterations, stage, seed, lr_scales))
    return cfg, histories
