"""Frame containers, render configuration and small raster helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from vlp.errors import DomainError
from vlp.geometry import COMPRESSED_RES, NATIVE_RES

MONO8 = "mono8"


@dataclass(frozen=True)
class Occlusion:
    """Hide one luminaire for ``t_start <= t < t_end`` (seconds)."""

    led_id: str
    t_start: float
    t_end: float


@dataclass(frozen=True)
class RenderConfig:
    resolution: tuple[int, int] = COMPRESSED_RES
    native_resolution: tuple[int, int] = NATIVE_RES
    t_row: float = 25e-6
    t_exp: float = 200e-6
    fps: float = 1.0
    centroid_noise_sigma: float = 0.0
    pixel_noise_sigma: float = 0.0
    band_jitter_px: float = 0.0
    seed: int = 0
    peak: float = 255.0
    occlusions: tuple[Occlusion, ...] = ()

    def __post_init__(self):
        if not (self.t_exp > 0 and self.t_row > 0):
            raise DomainError("exposure and row time must be positive")
        if self.fps <= 0:
            raise DomainError("fps must be positive")

    @classmethod
    def preset(cls, name: str = "compressed", **kw) -> "RenderConfig":
        presets = {
            "native": dict(resolution=NATIVE_RES),
            "compressed": dict(resolution=COMPRESSED_RES),
            # exposure as printed in the platform parameter table
            "table-exposure": dict(resolution=COMPRESSED_RES, t_exp=20e-6),
        }
        if name not in presets:
            raise DomainError(f"unknown render preset {name!r}")
        return cls(**{**presets[name], **kw})

    @property
    def scale(self) -> float:
        return self.native_resolution[1] / self.resolution[1]

    @property
    def is_native(self) -> bool:
        return tuple(self.resolution) == tuple(self.native_resolution)

    @property
    def row_time(self) -> float:
        """Mean readout time between consecutive working rows."""
        return self.t_row * self.scale

    def native_row(self, rows):
        """Native sensor row sampled by working row(s) under nearest-neighbour resize."""
        rows = np.asarray(rows)
        if self.is_native:
            return rows
        return np.minimum(np.floor((rows + 0.5) * self.scale), self.native_resolution[1] - 1)

    def row_start_time(self, rows, t0: float = 0.0):
        """Exposure start (s) of working row(s); fractional rows interpolate linearly."""
        rows = np.asarray(rows, dtype=float)
        if self.is_native:
            return t0 + rows * self.t_row
        return t0 + ((rows + 0.5) * self.scale - 0.5) * self.t_row

    def native(self) -> "RenderConfig":
        return RenderConfig(**{**self.__dict__, "resolution": self.native_resolution})


@dataclass
class Frame:
    timestamp: int
    pixels: np.ndarray
    encoding: str = MONO8
    seq: int = 0

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def t0(self) -> float:
        return self.timestamp * 1e-9

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.pixels, dtype=np.uint8).tobytes()


@dataclass(frozen=True)
class SearchWindow:
    cx: float
    cy: float
    w: float
    h: float

    def bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer (x0, y0, x1, y1) clipped to the frame, half-open."""
        x0 = max(0, int(math.floor(self.cx - self.w / 2 + 0.5)))
        y0 = max(0, int(math.floor(self.cy - self.h / 2 + 0.5)))
        x1 = min(width, int(math.floor(self.cx + self.w / 2 + 0.5)))
        y1 = min(height, int(math.floor(self.cy + self.h / 2 + 0.5)))
        return x0, y0, x1, y1

    def intersects(self, width: int, height: int) -> bool:
        x0, y0, x1, y1 = self.bounds(width, height)
        return x1 > x0 and y1 > y0

    def contains(self, x: float, y: float) -> bool:
        return abs(x - self.cx) <= self.w / 2 and abs(y - self.cy) <= self.h / 2

    def moved(self, cx: float, cy: float) -> "SearchWindow":
        return SearchWindow(cx, cy, self.w, self.h)


@dataclass
class Patch:
    """A raster cut-out with the frame coordinates of its top-left pixel."""

    pixels: np.ndarray
    row0: int = 0
    col0: int = 0
    meta: dict = field(default_factory=dict)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu's between-class-variance threshold over ``values``."""
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return lo
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m = np.cumsum(hist * centers)
    mu0 = m / np.maximum(w0, 1)
    mu1 = (m[-1] - m) / np.maximum(w1, 1)
    between = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(between[:-1]))
    return float(edges[k + 1])


@dataclass(frozen=True)
class DiskFit:
    cx: float
    cy: float
    r: float
    rows_used: int


def fit_disk(pixels: np.ndarray, row0: int = 0, col0: int = 0, min_rows: int = 3) -> DiskFit | None:
    """Estimate a striped disk's centre and radius from its lit row chords.

    Dark stripes remove whole rows, which biases an intensity centroid.  Each
    lit row still spans the full chord ``2*sqrt(r^2 - (v - cy)^2)``, so
    ``L^2/4 + v^2`` is linear in ``v`` with slope ``2*cy``.  Row brightness
    cancels because chord length is measured as row sum over row peak.
    """
    img = np.asarray(pixels, dtype=float)
    if img.size == 0:
        return None
    border = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]])
    bg = float(np.median(border))
    img = np.clip(img - bg, 0.0, None)
    gmax = float(img.max())
    if gmax <= 0:
        return None
    vs, ls, us = [], [], []
    for r in range(img.shape[0]):
        row = img[r]
        pk = row.max()
        if pk < 0.25 * gmax:
            continue
        c = int(np.argmax(row))
        on = row > 0.5 * pk
        a = c
        while a > 0 and on[a - 1]:
            a -= 1
        b = c
        while b < row.size - 1 and on[b + 1]:
            b += 1
        if b - a + 1 < 3:
            continue
        if a == 0 or b == row.size - 1:
            # chord clipped by the patch edge
            continue
        core = row[a + 1 : b] if b - a >= 2 else row[a : b + 1]
        level = float(np.median(core))
        if level <= 0:
            continue
        lo, hi = a - 1, b + 2
        seg = row[lo:hi]
        L = float(seg.sum()) / level
        idx = np.arange(lo, hi)
        u = float((seg * idx).sum() / seg.sum())
        vs.append(r)
        ls.append(L)
        us.append(u)
    if len(vs) < min_rows:
        return None
    v = np.asarray(vs, dtype=float)
    L = np.asarray(ls)
    if np.ptp(v) < 2:
        return None
    y = L * L / 4.0 + v * v
    A = np.column_stack([np.ones_like(v), v])
    (c0, c1), *_ = np.linalg.lstsq(A, y, rcond=None)
    cy = c1 / 2.0
    r2 = c0 + cy * cy
    if r2 <= 0:
        return None
    cx = float(np.average(us, weights=L))
    return DiskFit(cx=col0 + cx, cy=row0 + float(cy), r=float(math.sqrt(r2)), rows_used=len(vs))
