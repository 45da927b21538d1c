"""Synthetic moving scenes with noisy unaries, for desk-scale experiments."""

from __future__ import annotations

from typing import NamedTuple, Tuple

import numpy as np

from .tensor_core import VolumeShape


class Scene(NamedTuple):
    image: np.ndarray   # (T, H, W, 3) uint8
    labels: np.ndarray  # (T, H, W) int64
    unary: np.ndarray   # (T, H, W, L) float64, normalized
    flow: np.ndarray    # (T-1, H, W, 2) float32


def synth_scene(seed: int, shape: Tuple[int, int, int], num_labels: int, noise: float,
                motion: Tuple[float, float] = (0.0, 0.0), shapes: int = 6) -> Scene:
    """Piecewise-constant regions translated by ``motion = (u, v)`` per frame.

    Label 0 is the background; every label has its own color and foreground
    shapes cycle through the labels, centered inside the first frame.  The unary is
    ``(1 - noise) * onehot + noise * L * r`` with ``r ~ U(0, 1)`` per channel,
    renormalized.  Integer motions keep the flow exact.
    """
    if not 2 <= num_labels <= 8:
        raise ValueError(f"num_labels must be in [2, 8], got {num_labels}")
    if not 0 <= noise < 1:
        raise ValueError(f"noise must be in [0, 1), got {noise}")
    T, H, W = VolumeShape(*shape).dims
    rng = np.random.default_rng(seed)
    u, v = float(motion[0]), float(motion[1])
    # canvas big enough that every frame is a window into it
    pad_y = int(np.ceil(abs(v) * (T - 1)))
    pad_x = int(np.ceil(abs(u) * (T - 1)))
    CH, CW = H + 2 * pad_y, W + 2 * pad_x
    canvas = np.zeros((CH, CW), dtype=np.int64)
    yy, xx = np.mgrid[0:CH, 0:CW]
    for k in range(max(shapes, num_labels - 1)):
        # cycle through the foreground labels so every label occurs
        lab = 1 + k % (num_labels - 1)
        cy, cx = pad_y + rng.uniform(0, H), pad_x + rng.uniform(0, W)
        ry, rx = rng.uniform(0.1, 0.3) * H, rng.uniform(0.1, 0.3) * W
        if rng.random() < 0.5:
            region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            region = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        canvas[region] = lab
    palette = rng.integers(0, 256, size=(num_labels, 3))

    labels = np.zeros((T, H, W), dtype=np.int64)
    for t in range(T):
        # content at (y, x) of frame t moves to (y + v, x + u) in frame t + 1
        oy = pad_y - int(round(t * v))
        ox = pad_x - int(round(t * u))
        labels[t] = canvas[oy:oy + H, ox:ox + W]
    image = palette[labels].astype(np.uint8)

    onehot = np.eye(num_labels)[labels]
    r = rng.random((T, H, W, num_labels))
    unary = (1 - noise) * onehot + noise * num_labels * r
    unary /= unary.sum(axis=-1, keepdims=True)
    flow = np.zeros((T - 1, H, W, 2), dtype=np.float32)
    flow[..., 0] = u
    flow[..., 1] = v
    return Scene(image, labels, unary, flow)
