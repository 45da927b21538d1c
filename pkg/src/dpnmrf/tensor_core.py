"""Volumes, label maps, flow-driven temporal links and the intensity lookup table.

Arrays follow a single layout throughout the package: probability-like
tensors are ``(T, H, W, C)`` float arrays, label maps are ``(T, H, W)``
integer arrays and RGB volumes are ``(T, H, W, 3)`` uint8 arrays.  A
frame count of one is the plain 2-D image case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

IGNORE_LABEL = 255
NORMALIZATION_TOL = 1e-5


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class VolumeShape:
    frames: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("frames", "height", "width"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def of(cls, array: np.ndarray) -> "VolumeShape":
        return cls(*array.shape[:3])

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    @property
    def size(self) -> int:
        return self.frames * self.height * self.width

    def contains(self, t: int, y: int, x: int) -> bool:
        return 0 <= t < self.frames and 0 <= y < self.height and 0 <= x < self.width


@dataclass(frozen=True)
class LabelSpace:
    num_labels: int
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.num_labels < 2:
            raise ValueError(f"num_labels must be >= 2, got {self.num_labels}")
        if self.names is not None and len(self.names) != self.num_labels:
            raise ValueError("names must have one entry per label")


def as_volume(array: np.ndarray, ndim: int = 4) -> np.ndarray:
    """Promote a single frame to a one-frame volume."""
    array = np.asarray(array)
    if array.ndim == ndim - 1:
        array = array[None]
    if array.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d volume, got shape {array.shape}")
    return array


def check_prob(q: np.ndarray, normalized: bool = False, name: str = "Q") -> np.ndarray:
    q = as_volume(q)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"{name} has non-finite values")
    if np.any(q < 0):
        raise ValueError(f"{name} has negative values")
    if normalized:
        err = np.max(np.abs(q.sum(axis=-1) - 1.0))
        if err > NORMALIZATION_TOL:
            raise ValueError(f"{name} is not normalized per voxel (max error {err:.3g})")
    return q


def normalize(q: np.ndarray) -> np.ndarray:
    return q / q.sum(axis=-1, keepdims=True)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_image(img: np.ndarray) -> np.ndarray:
    img = as_volume(img)
    if img.shape[-1] != 3:
        raise ShapeError(f"image must have 3 channels, got {img.shape[-1]}")
    if img.dtype != np.uint8:
        if np.any(img != np.round(img)) or img.min() < 0 or img.max() > 255:
            raise ValueError("image intensities must be integers in [0, 255]")
        img = img.astype(np.uint8)
    return img


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Map float imagery in [0, 1] onto 8-bit RGB."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# --- intensity lookup table -------------------------------------------------


@dataclass(frozen=True)
class IntensityLUT:
    table: np.ndarray

    def __getitem__(self, key):
        return self.table[key]


def build_intensity_lut() -> IntensityLUT:
    levels = np.arange(256, dtype=np.float32)
    table = (levels[:, None] - levels[None, :]) ** 2
    table.setflags(write=False)
    return IntensityLUT(table)


_DEFAULT_LUT: Optional[IntensityLUT] = None


def default_lut() -> IntensityLUT:
    global _DEFAULT_LUT
    if _DEFAULT_LUT is None:
        _DEFAULT_LUT = build_intensity_lut()
    return _DEFAULT_LUT


def color_sqdist(img: np.ndarray, a, b, lut: Optional[IntensityLUT] = None):
    """Sum over RGB of squared intensity differences, read from the LUT.

    ``a`` and ``b`` are index tuples into the leading ``(T, H, W)`` axes and may
    be arrays (fancy indexing) or scalars.
    """
    lut = lut or default_lut()
    pa = img[a].astype(np.intp)
    pb = img[b].astype(np.intp)
    return lut.table[pa, pb].astype(np.float64).sum(axis=-1)


def pixel_distance(img, i: Sequence[int], j: Sequence[int], w1: float, w2: float,
                   lut: Optional[IntensityLUT] = None) -> float:
    """Appearance plus position distance between voxels ``i`` and ``j``.

    Voxels are ``(t, y, x)`` triples.  The color part is the raw LUT sum and is
    scaled by ``w1`` outside the table.
    """
    shape = VolumeShape(*img.shape[:3])
    for v in (i, j):
        if not shape.contains(*v):
            raise IndexError(f"voxel {tuple(v)} outside volume {shape.dims}")
    ti, yi, xi = (int(c) for c in i)
    tj, yj, xj = (int(c) for c in j)
    color = float(color_sqdist(img, (ti, yi, xi), (tj, yj, xj), lut)) if w1 != 0 else 0.0
    pos = float((yi - yj) ** 2 + (xi - xj) ** 2 + (ti - tj) ** 2)
    return w1 * color + w2 * pos


# --- temporal links ----------------------------------------------------------


@dataclass(frozen=True)
class TemporalLinks:
    """Forward trajectory links ``(t, y, x) -> (t + 1, y', x')``.

    ``forward`` is an ``(T, H, W, 2)`` int array of target ``(y', x')`` with
    ``-1`` where no link exists; the last frame never links.  ``backward`` is
    the transposed map: for each voxel at ``t >= 1`` the first source at
    ``t - 1`` (raster order) whose forward link lands on it.
    """

    forward: np.ndarray
    backward: np.ndarray

    @property
    def shape(self) -> VolumeShape:
        return VolumeShape(*self.forward.shape[:3])

    def target(self, t: int, y: int, x: int) -> Optional[Tuple[int, int, int]]:
        ty, tx = self.forward[t, y, x]
        if ty < 0:
            return None
        return (t + 1, int(ty), int(tx))

    def source(self, t: int, y: int, x: int) -> Optional[Tuple[int, int, int]]:
        sy, sx = self.backward[t, y, x]
        if sy < 0:
            return None
        return (t - 1, int(sy), int(sx))

    @classmethod
    def rigid(cls, shape: VolumeShape) -> "TemporalLinks":
        T, H, W = shape.dims
        return build_temporal_links(np.zeros((max(T - 1, 0), H, W, 2), np.float32), shape)


def round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(a, dtype=np.float64) + 0.5).astype(np.int64)


def build_temporal_links(flow: np.ndarray, shape: VolumeShape) -> TemporalLinks:
    """Link each voxel to where its flow vector lands in the next frame.

    ``flow`` has shape ``(T - 1, H, W, 2)`` holding ``(u, v)`` = (dx, dy).
    Displacements round to the nearest pixel with ties toward +inf; targets
    outside the frame drop the link.
    """
    T, H, W = shape.dims
    flow = np.asarray(flow)
    if flow.shape != (T - 1, H, W, 2):
        raise ShapeError(f"flow shape {flow.shape} does not match volume {(T - 1, H, W, 2)}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow has non-finite values")

    forward = np.full((T, H, W, 2), -1, dtype=np.int64)
    backward = np.full((T, H, W, 2), -1, dtype=np.int64)
    ys, xs = np.mgrid[0:H, 0:W]
    for t in range(T - 1):
        ty = ys + round_half_up(flow[t, ..., 1])
        tx = xs + round_half_up(flow[t, ..., 0])
        ok = (ty >= 0) & (ty < H) & (tx >= 0) & (tx < W)
        forward[t, ..., 0] = np.where(ok, ty, -1)
        forward[t, ..., 1] = np.where(ok, tx, -1)

        flat_target = (ty * W + tx)[ok]
        flat_source = (ys * W + xs)[ok]
        uniq, first = np.unique(flat_target, return_index=True)
        src = flat_source[first]
        backward[t + 1].reshape(-1, 2)[uniq, 0] = src // W
        backward[t + 1].reshape(-1, 2)[uniq, 1] = src % W
    forward.setflags(write=False)
    backward.setflags(write=False)
    return TemporalLinks(forward, backward)


# --- window enumeration -----------------------------------------------------


def window_offsets(span: int, size: int):
    """Tap offsets ``(dt, dy, dx)`` of a centered ``span x size x size`` window
    in raster order; this order indexes the flattened context filters."""
    if size < 1 or size % 2 == 0 or span < 1 or span % 2 == 0:
        raise ValueError(f"window sides must be odd positive, got {span}x{size}x{size}")
    ht, hs = span // 2, size // 2
    return [(dt, dy, dx)
            for dt in range(-ht, ht + 1)
            for dy in range(-hs, hs + 1)
            for dx in range(-hs, hs + 1)]


def anchor_of(links: Optional[TemporalLinks], shape: VolumeShape, voxel, dt: int):
    """Follow the trajectory of ``voxel`` for ``dt`` frames (negative = backwards).

    ``links=None`` means the rigid cube: the same pixel in the other frame.
    Returns the ``(t, y, x)`` anchor or ``None`` if the trajectory leaves the
    volume or breaks.
    """
    t, y, x = voxel
    if not 0 <= t + dt < shape.frames:
        return None
    if links is None:
        return (t + dt, y, x)
    step = 1 if dt > 0 else -1
    cur = (t, y, x)
    for _ in range(abs(dt)):
        cur = links.target(*cur) if step > 0 else links.source(*cur)
        if cur is None:
            return None
    return cur


def neighbor_of(links, shape: VolumeShape, voxel, offset):
    """Scalar neighbor lookup: anchor along the trajectory, then spatial shift."""
    dt, dy, dx = offset
    a = anchor_of(links, shape, voxel, dt)
    if a is None:
        return None
    j = (a[0], a[1] + dy, a[2] + dx)
    return j if shape.contains(*j) else None


def anchor_maps(links: Optional[TemporalLinks], shape: VolumeShape, dt: int):
    """Vectorized anchors for every voxel: ``(ay, ax, valid)`` arrays of shape (T, H, W)."""
    T, H, W = shape.dims
    ts = np.arange(T)[:, None, None]
    ay = np.broadcast_to(np.arange(H)[None, :, None], (T, H, W)).copy()
    ax = np.broadcast_to(np.arange(W)[None, None, :], (T, H, W)).copy()
    valid = np.broadcast_to((ts + dt >= 0) & (ts + dt < T), (T, H, W)).copy()
    if links is None or dt == 0:
        return ay, ax, valid
    table = links.forward if dt > 0 else links.backward
    step = 1 if dt > 0 else -1
    cur_t = np.broadcast_to(ts, (T, H, W)).copy()
    for _ in range(abs(dt)):
        ok = valid & (cur_t >= 0) & (cur_t < T)
        safe_t = np.clip(cur_t, 0, T - 1)
        nxt = table[safe_t, np.clip(ay, 0, H - 1), np.clip(ax, 0, W - 1)]
        valid = ok & (nxt[..., 0] >= 0)
        ay = np.where(valid, nxt[..., 0], 0)
        ax = np.where(valid, nxt[..., 1], 0)
        cur_t = cur_t + step
    return ay, ax, valid


class NeighborIndex:
    """Flat gather indices for every voxel and every tap of a window.

    ``index[k]`` holds, for tap ``k``, the flat voxel index of each voxel's
    neighbor and ``valid[k]`` marks taps that exist.  Invalid entries point at
    voxel 0 and must be masked.
    """

    def __init__(self, shape: VolumeShape, links: Optional[TemporalLinks], span: int, size: int):
        T, H, W = shape.dims
        self.shape = shape
        self.offsets = window_offsets(span, size)
        n = len(self.offsets)
        self.index = np.zeros((n, shape.size), dtype=np.intp)
        self.valid = np.zeros((n, shape.size), dtype=bool)
        ts = np.broadcast_to(np.arange(T)[:, None, None], (T, H, W))
        anchors = {}
        for k, (dt, dy, dx) in enumerate(self.offsets):
            if dt not in anchors:
                anchors[dt] = anchor_maps(links, shape, dt)
            ay, ax, ok = anchors[dt]
            ny, nx = ay + dy, ax + dx
            ok = ok & (ny >= 0) & (ny < H) & (nx >= 0) & (nx < W)
            flat = ((ts + dt) * H + ny) * W + nx
            self.index[k] = np.where(ok, flat, 0).ravel()
            self.valid[k] = ok.ravel()

    def __len__(self):
        return len(self.offsets)
