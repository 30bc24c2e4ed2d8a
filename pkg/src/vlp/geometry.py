"""Double-lamp positioning math.

Conventions used throughout the package:

* Pixel ``(u, v)`` indexes column/row with pixel centres on integers.
* Image coordinates ``(i, j)`` are physical sensor-plane offsets in cm from the
  principal point: ``i = (u - cx) * dx * a``.  Compressed frames are handled by
  scaling the pixel pitch by ``a`` and keeping the native focal length ``f0``.
* The pinhole image is inverted, so a lamp offset ``+X`` in camera axes lands at
  ``i = -f0 * X / H``.
* Camera yaw ``psi`` is the angle fed to :func:`rotation_matrix`, which maps
  camera-frame vectors to world-frame vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from vlp.errors import (
    DegenerateGeometryError,
    DegenerateLayoutError,
    DomainError,
    InsufficientAnchorsError,
    UnsupportedConfigurationError,
)

NATIVE_RES = (2048, 1536)
COMPRESSED_RES = (800, 600)
PIXEL_PITCH_CM = 3.2e-4
FOCAL_LENGTH_CM = 0.4


@dataclass(frozen=True)
class CameraIntrinsics:
    f0: float
    dx: float
    native_res: tuple[int, int]
    working_res: tuple[int, int]
    principal_point: tuple[float, float] | None = None

    def __post_init__(self):
        if not (self.f0 > 0 and self.dx > 0):
            raise DomainError("focal length and pixel pitch must be positive")
        if min(self.native_res) <= 0 or min(self.working_res) <= 0:
            raise DomainError("resolutions must be positive")

    @property
    def a(self) -> float:
        """Compression factor native/working (2048/800 = 2.56)."""
        return self.native_res[0] / self.working_res[0]

    @property
    def f1(self) -> float:
        """Equivalent focal length of the compressed image."""
        return self.f0 / self.a

    @property
    def center(self) -> tuple[float, float]:
        if self.principal_point is not None:
            return self.principal_point
        w, h = self.working_res
        return ((w - 1) / 2.0, (h - 1) / 2.0)

    @property
    def pixel_size(self) -> float:
        """Physical size (cm) of one working pixel."""
        return self.dx * self.a

    def with_center(self, cx: float, cy: float) -> "CameraIntrinsics":
        return replace(self, principal_point=(float(cx), float(cy)))

    def equivalent_focal(self) -> "CameraIntrinsics":
        """The same camera expressed as an uncompressed sensor with focal f1."""
        return CameraIntrinsics(
            f0=self.f1,
            dx=self.dx,
            native_res=self.working_res,
            working_res=self.working_res,
            principal_point=self.principal_point,
        )

    def quantization_bound(self, height: float, pixels: float = 2.0) -> float:
        """Planar error (cm) on the LED plane caused by ``pixels`` of centroid error."""
        return pixels * self.pixel_size * height / self.f0

    @classmethod
    def preset(cls, name: str = "compressed", f0: float = FOCAL_LENGTH_CM) -> "CameraIntrinsics":
        if name == "native":
            working = NATIVE_RES
        elif name == "compressed":
            working = COMPRESSED_RES
        else:
            raise DomainError(f"unknown camera preset {name!r}")
        return cls(f0=f0, dx=PIXEL_PITCH_CM, native_res=NATIVE_RES, working_res=working)


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float


@dataclass(frozen=True)
class ImagePoint:
    i: float
    j: float


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float
    z: float = 0.0


@dataclass(frozen=True)
class PoseFix:
    x_w: float
    y_w: float
    z_w: float
    H: float
    theta: float
    timestamp: int
    pair: tuple[str, str]


@dataclass(frozen=True)
class Anchor:
    """An identified lamp: id, known world position, measured pixel centroid."""

    led_id: str
    world: WorldPoint
    pixel: PixelPoint
    image: ImagePoint | None = field(default=None, compare=False)


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = math.remainder(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


def pixel_to_image(p: PixelPoint, intr: CameraIntrinsics, check_bounds: bool = True) -> ImagePoint:
    w, h = intr.working_res
    if check_bounds and not (-0.5 <= p.u < w - 0.5 and -0.5 <= p.v < h - 0.5):
        raise DomainError(f"pixel ({p.u}, {p.v}) outside {w}x{h} frame")
    cx, cy = intr.center
    s = intr.pixel_size
    return ImagePoint((p.u - cx) * s, (p.v - cy) * s)


def image_to_pixel(q: ImagePoint, intr: CameraIntrinsics) -> PixelPoint:
    cx, cy = intr.center
    s = intr.pixel_size
    return PixelPoint(cx + q.i / s, cy + q.j / s)


def estimate_height(
    L1: WorldPoint, L2: WorldPoint, p1: ImagePoint, p2: ImagePoint, intr: CameraIntrinsics
) -> float:
    if abs(L1.z - L2.z) > 1e-9:
        raise UnsupportedConfigurationError("lamps must share one LED plane")
    D = math.hypot(L1.x - L2.x, L1.y - L2.y)
    if D == 0.0:
        raise DegenerateGeometryError("lamps coincide in (x, y)")
    d = math.hypot(p1.i - p2.i, p1.j - p2.j)
    if d == 0.0:
        raise DegenerateGeometryError("image points coincide")
    return intr.f0 * D / d


def estimate_rotation(p1: ImagePoint, p2: ImagePoint) -> float:
    """Bearing of the image vector p2 -> p1."""
    di, dj = p1.i - p2.i, p1.j - p2.j
    if di == 0.0 and dj == 0.0:
        raise DegenerateGeometryError("image points coincide")
    return wrap_angle(math.atan2(dj, di))


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def to_world(x: float, y: float, z: float, phi: float) -> WorldPoint:
    xw, yw, zw = rotation_matrix(phi) @ np.array([x, y, z], dtype=float)
    return WorldPoint(float(xw), float(yw), float(zw))


def estimate_planar(
    L1: WorldPoint,
    L2: WorldPoint,
    p1: ImagePoint,
    p2: ImagePoint,
    H: float,
    intr: CameraIntrinsics,
    phi: float = 0.0,
) -> tuple[float, float]:
    """Camera (x, y) from the lamp midpoint plus the rotated image-midpoint offset.

    With ``phi = 0`` the camera axes coincide with the world axes.
    """
    if not H > 0:
        raise DomainError("height must be positive")
    # Midpoint of the two image points, not their sum: the inverse of a
    # pinhole projection of the lamp midpoint.
    k = H / (2.0 * intr.f0)
    off = to_world(k * (p1.i + p2.i), k * (p1.j + p2.j), 0.0, phi)
    return (0.5 * (L1.x + L2.x) + off.x, 0.5 * (L1.y + L2.y) + off.y)


def pair_bearing(L1: WorldPoint, L2: WorldPoint) -> float:
    """World bearing of the vector LED1 -> LED2."""
    return math.atan2(L2.y - L1.y, L2.x - L1.x)


def select_lamp_pair(lamps: Sequence[Anchor], intr: CameraIntrinsics | None = None) -> tuple[Anchor, Anchor]:
    """Pick two lamps differing in both world x and y, widest image separation first."""
    if len(lamps) < 2:
        raise InsufficientAnchorsError(f"need 2 identified lamps, got {len(lamps)}")
    best = None
    for a, b in combinations(sorted(lamps, key=lambda l: l.led_id), 2):
        if a.world.x == b.world.x or a.world.y == b.world.y:
            continue
        sep = math.hypot(a.pixel.u - b.pixel.u, a.pixel.v - b.pixel.v)
        key = (-sep, a.led_id, b.led_id)
        if best is None or key < best[0]:
            best = (key, a, b)
    if best is None:
        raise DegenerateLayoutError("no lamp pair differs in both x and y")
    return best[1], best[2]


def locate(
    pair: tuple[Anchor, Anchor],
    intr: CameraIntrinsics,
    timestamp: int = 0,
    mounting_offset: float = 0.0,
) -> PoseFix:
    a, b = pair
    p1 = pixel_to_image(a.pixel, intr, check_bounds=False)
    p2 = pixel_to_image(b.pixel, intr, check_bounds=False)
    H = estimate_height(a.world, b.world, p1, p2, intr)
    theta = estimate_rotation(p1, p2)
    # The image bearing equals yaw only when LED1->LED2 runs along world +X;
    # subtracting the pair's world bearing generalises that to any pair.
    yaw = wrap_angle(theta - pair_bearing(a.world, b.world) + mounting_offset)
    x, y = estimate_planar(a.world, b.world, p1, p2, H, intr, phi=yaw)
    return PoseFix(
        x_w=x,
        y_w=y,
        z_w=a.world.z - H,
        H=H,
        theta=yaw,
        timestamp=int(timestamp),
        pair=(a.led_id, b.led_id),
    )


def calibrate_center(
    fixes: Sequence[PoseFix], truth: tuple[float, float], intr: CameraIntrinsics
) -> CameraIntrinsics:
    """Shift the principal point so the mean static fix lands on ``truth``.

    A principal-point error of ``delta`` pixels moves every fix by
    ``-(H * pixel_size / f0) * R(yaw) @ delta`` on the floor; this inverts
    that relation per fix and averages.
    """
    if not fixes:
        raise DomainError("calibration needs at least one fix")
    shifts = []
    for fx in fixes:
        e = np.array([fx.x_w - truth[0], fx.y_w - truth[1], 0.0])
        back = rotation_matrix(fx.theta).T @ e
        shifts.append(-back[:2] * intr.f0 / (fx.H * intr.pixel_size))
    delta = np.mean(shifts, axis=0)
    cx, cy = intr.center
    return intr.with_center(cx - delta[0], cy - delta[1])
