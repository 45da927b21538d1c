"""Binary tensor files, PGM/PPM images, Middlebury .flo and JSON run configs.

Multi-frame label maps, images and flow fields are stored with the frames
stacked vertically, so a ``(T, H, W)`` volume is a ``T*H x W`` image.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .energy import PairwiseConfig, context_bank
from .tensor_core import IGNORE_LABEL, as_volume

FLO_MAGIC = 202021.25
MAX_PAYLOAD_BYTES = 1 << 40


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class ConfigError(ValueError):
    pass


# --- DPT tensors -------------------------------------------------------------

_DPT_HEADER = re.compile(rb"DPT 1 (\d+) (\d+) (\d+) (\d+)\n")


def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a ``(T, H, W, C)`` tensor as ``DPT 1 T H W C`` + little-endian f32."""
    tensor = as_volume(np.asarray(tensor))
    T, H, W, C = tensor.shape
    with open(path, "wb") as f:
        f.write(f"DPT 1 {T} {H} {W} {C}\n".encode("ascii"))
        f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def parse_tensor(data: bytes) -> np.ndarray:
    nl = data.find(b"\n")
    if not data.startswith(b"DPT ") or nl < 0:
        raise BadMagicError("not a DPT tensor file (expected 'DPT 1 T H W C' header)")
    m = _DPT_HEADER.fullmatch(data[:nl + 1])
    if m is None:
        raise BadMagicError(f"malformed DPT header {data[:nl]!r}")
    dims = tuple(int(g) for g in m.groups())
    if any(d < 1 for d in dims):
        raise FormatError(f"DPT dimensions must be positive, got {dims}")
    nbytes = 4
    for d in dims:
        nbytes *= d
    if any(d > 2**31 - 1 for d in dims) or nbytes > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(f"DPT dimensions {dims} exceed the supported size")
    payload = data[nl + 1:]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"DPT payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise TrailingDataError(f"DPT payload has {len(payload) - nbytes} trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())


# --- PGM / PPM ---------------------------------------------------------------


def _parse_pnm(data: bytes, magic: bytes):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise BadMagicError(f"expected binary {magic.decode()} file, found {tokens[0][:2]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PNM header field") from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    return width, height, data[pos:]


def read_pgm_label(path, frames: int = 1) -> np.ndarray:
    """Binary P5 label map; byte 255 is the ignore label.  Returns ``(T, H, W)``."""
    w, h, body = _parse_pnm(Path(path).read_bytes(), b"P5")
    if len(body) < w * h:
        raise TruncatedPayloadError(f"PGM payload has {len(body)} bytes, expected {w * h}")
    img = np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).astype(np.int64)
    return _unstack(img, frames)


def write_pgm_label(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels.reshape(-1, labels.shape[-1])
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("labels must fit in one byte")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(labels.astype(np.uint8).tobytes())


def read_ppm(path, frames: int = 1) -> np.ndarray:
    """Binary P6 RGB image; returns ``(T, H, W, 3)`` uint8."""
    w, h, body = _parse_pnm(Path(path).read_bytes(), b"P6")
    if len(body) < w * h * 3:
        raise TruncatedPayloadError(f"PPM payload has {len(body)} bytes, expected {w * h * 3}")
    img = np.frombuffer(body[:w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
    return _unstack(img, frames)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 4:
        img = img.reshape(-1, img.shape[2], 3)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def _unstack(a: np.ndarray, frames: int) -> np.ndarray:
    if frames < 1 or a.shape[0] % frames:
        raise FormatError(f"image height {a.shape[0]} is not divisible into {frames} frames")
    return a.reshape((frames, a.shape[0] // frames) + a.shape[1:])


# --- Middlebury flow ---------------------------------------------------------


def write_flo(path, flow: np.ndarray) -> None:
    """Write ``(H, W, 2)`` or stacked ``(F, H, W, 2)`` flow."""
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim == 4:
        flow = flow.reshape(-1, flow.shape[2], 2)
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(flow).tobytes())


def read_flo(path, frames: int = 1) -> np.ndarray:
    """Read a .flo file into ``(frames, H, W, 2)`` float32 ``(u, v)`` pairs."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedPayloadError("flo header is shorter than 12 bytes")
    magic = np.frombuffer(data[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagicError(f"bad .flo magic {magic!r}")
    w, h = (int(v) for v in np.frombuffer(data[4:12], dtype="<i4"))
    if w < 0 or h < 0:
        raise FormatError(f"negative .flo dimensions {w}x{h}")
    n = w * h * 2 * 4
    if len(data) - 12 < n:
        raise TruncatedPayloadError(f".flo payload has {len(data) - 12} bytes, expected {n}")
    if len(data) - 12 > n:
        raise TrailingDataError(".flo file has trailing bytes")
    flow = np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).astype(np.float32)
    if frames == 0:
        if h:
            raise FormatError("expected an empty flow file")
        return flow.reshape(0, 0, w, 2)
    return _unstack(flow, frames)


# --- run configuration -------------------------------------------------------


@dataclass
class RunConfig:
    """Flat JSON run configuration.

    Context filters come either from ``contexts`` (nested list or flat list of
    ``K*L*t_n*n*n*L`` numbers) or from ``context_preset`` + ``context_strength``.
    """

    w1: float = 0.0
    w2: float = 0.05
    m: int = 7
    t_m: int = 3
    n: int = 5
    t_n: int = 3
    K: int = 2
    lin_a: float = 1.0
    lin_b: float = 0.0
    eps: float = 1e-12
    schedule: str = "synchronous"
    iterations: int = 5
    tol: float = 1e-4
    learning_rate: float = 0.05
    lr_scale_contexts: float = 1.0
    lr_scale_w1: float = 1e-8
    lr_scale_w2: float = 1e-3
    lr_scale_lin: float = 1.0
    train_iterations: int = 30
    workers: int = 1
    seed: int = 0
    context_preset: str = "smoothing"
    context_strength: float = 0.1
    contexts: Optional[Any] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def fail(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        for name in ("m", "t_m", "n", "t_n"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1 or v % 2 == 0:
                fail(name, "must be an odd positive integer")
        for name in ("K", "iterations", "workers"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                fail(name, "must be a positive integer")
        if not isinstance(self.train_iterations, int) or self.train_iterations < 0:
            fail("train_iterations", "must be a non-negative integer")
        scales = ("lr_scale_contexts", "lr_scale_w1", "lr_scale_w2", "lr_scale_lin")
        for name in ("w1", "w2", "lin_a", "lin_b", "tol", "learning_rate", "context_strength") + scales:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                fail(name, "must be a finite number")
        if not 0 < self.eps <= 1e-3:
            fail("eps", "must lie in (0, 1e-3]")
        if self.tol < 0:
            fail("tol", "must be >= 0")
        for name in ("learning_rate",) + scales:
            if getattr(self, name) < 0:
                fail(name, "must be >= 0")
        if self.schedule not in ("synchronous", "sequential", "sync", "seq"):
            fail("schedule", "must be synchronous or sequential")
        if self.context_preset not in ("zero", "smoothing", "random"):
            fail("context_preset", "must be zero, smoothing or random")

    @property
    def lr_scales(self) -> Dict[str, float]:
        return {"contexts": self.lr_scale_contexts, "w1": self.lr_scale_w1,
                "w2": self.lr_scale_w2, "lin_a": self.lr_scale_lin, "lin_b": self.lr_scale_lin}

    def pairwise(self, num_labels: int) -> PairwiseConfig:
        taps = self.t_n * self.n * self.n
        if self.contexts is not None:
            arr = np.asarray(self.contexts, dtype=np.float64)
            want = self.K * num_labels * taps * num_labels
            if arr.size != want:
                raise ConfigError(f"contexts: expected {want} values for K={self.K}, "
                                  f"L={num_labels}, window {self.t_n}x{self.n}x{self.n}; got {arr.size}")
            bank = arr.reshape(self.K, num_labels, taps, num_labels)
        else:
            bank = context_bank(self.K, num_labels, self.t_n, self.n, self.context_preset,
                                self.context_strength, self.seed)
        try:
            return PairwiseConfig(contexts=bank, w1=float(self.w1), w2=float(self.w2),
                                  m=self.m, t_m=self.t_m, n=self.n, t_n=self.t_n,
                                  lin_a=float(self.lin_a), lin_b=float(self.lin_b))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key")
        return cls(**d)

    @classmethod
    def from_pairwise(cls, cfg: PairwiseConfig, **extra) -> "RunConfig":
        return cls(w1=cfg.w1, w2=cfg.w2, m=cfg.m, t_m=cfg.t_m, n=cfg.n, t_n=cfg.t_n, K=cfg.K,
                   lin_a=cfg.lin_a, lin_b=cfg.lin_b, contexts=cfg.contexts.tolist(), **extra)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    return RunConfig.from_dict(d)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
