"""Deterministic rolling-shutter rig: camera poses in, mono8 frames out.

The forward projection here is the exact inverse of :func:`vlp.geometry.locate`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from vlp.codec import LuminaireDatabase, default_database, synthesize_stripes
from vlp.errors import DomainError, NotVisibleError
from vlp.geometry import CameraIntrinsics, PixelPoint, WorldPoint, image_to_pixel, ImagePoint, rotation_matrix
from vlp.imaging import Frame, Occlusion, RenderConfig

SCENE_VERSION = 1


class CameraPose(NamedTuple):
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0


@dataclass
class ScenePlatform:
    luminaires: LuminaireDatabase = field(default_factory=default_database)
    extent: tuple[float, float] = (100.0, 100.0)
    led_plane_z: float = 150.0
    led_radius_cm: float = 5.0
    f0: float = 0.4
    dx: float = 3.2e-4
    principal_point: tuple[float, float] | None = None  # native pixels

    def __post_init__(self):
        for rec in self.luminaires:
            if abs(rec.position.z - self.led_plane_z) > 1e-9:
                raise DomainError(f"{rec.id} is not on the LED plane")

    def intrinsics(self, render: RenderConfig) -> CameraIntrinsics:
        """True camera intrinsics for the working resolution of ``render``."""
        pp = None
        if self.principal_point is not None:
            a = render.native_resolution[0] / render.resolution[0]
            pp = ((self.principal_point[0] + 0.5) / a - 0.5, (self.principal_point[1] + 0.5) / a - 0.5)
        return CameraIntrinsics(self.f0, self.dx, render.native_resolution, render.resolution, pp)

    def contains(self, x: float, y: float) -> bool:
        return abs(x) <= self.extent[0] / 2 and abs(y) <= self.extent[1] / 2


def project(p: WorldPoint, pose: CameraPose, intr: CameraIntrinsics) -> PixelPoint:
    """Pinhole projection for an upward-looking camera."""
    H = p.z - pose.z
    if H <= 0:
        raise NotVisibleError("point is not above the camera")
    # world -> camera is the transpose of the camera -> world rotation
    c = rotation_matrix(pose.yaw).T @ np.array([p.x - pose.x, p.y - pose.y, 0.0])
    q = ImagePoint(-intr.f0 * c[0] / H, -intr.f0 * c[1] / H)
    return image_to_pixel(q, intr)


def disk_radius_px(scene: ScenePlatform, pose: CameraPose, intr: CameraIntrinsics) -> float:
    H = scene.led_plane_z - pose.z
    return scene.led_radius_cm * intr.f0 / H / intr.pixel_size


def _occluded(render: RenderConfig, led_id: str, t: float) -> bool:
    return any(o.led_id == led_id and o.t_start <= t < o.t_end for o in render.occlusions)


def render_frame(
    scene: ScenePlatform,
    pose: CameraPose,
    t: float | int,
    render: RenderConfig,
    seq: int = 0,
) -> Frame:
    """Render one frame at time ``t`` (seconds, or integer nanoseconds).

    The rig is always rendered at native resolution; compressed presets are a
    nearest-neighbour resize of that raster.
    """
    ts = int(t) if isinstance(t, (int, np.integer)) else int(round(t * 1e9))
    t_s = ts * 1e-9
    nat = render.native()
    intr = scene.intrinsics(nat)
    W, H = nat.resolution
    rng = np.random.default_rng([render.seed, ts & 0xFFFFFFFF, ts >> 32])
    canvas = np.zeros((H, W), dtype=float)
    r_px = disk_radius_px(scene, pose, intr)
    jitter = render.centroid_noise_sigma * render.scale
    for rec in scene.luminaires:
        pix = project(rec.position, pose, intr)
        du, dv = (rng.normal(0.0, jitter, 2) if jitter > 0 else (0.0, 0.0))
        if _occluded(render, rec.id, t_s):
            continue
        cx, cy = pix.u + du, pix.v + dv
        if cx + r_px < -0.5 or cy + r_px < -0.5 or cx - r_px > W - 0.5 or cy - r_px > H - 0.5:
            continue
        patch = synthesize_stripes(rec.profile, nat, (cx, cy, r_px), t_s, rng=rng)
        if patch.pixels.size == 0:
            continue
        h, w = patch.pixels.shape
        view = canvas[patch.row0 : patch.row0 + h, patch.col0 : patch.col0 + w]
        np.maximum(view, patch.pixels, out=view)
    if render.pixel_noise_sigma > 0:
        canvas += rng.normal(0.0, render.pixel_noise_sigma, canvas.shape)
    img = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    if not render.is_native:
        img = resize_nearest(img, render.resolution)
    return Frame(timestamp=ts, pixels=img, seq=seq)


def resize_nearest(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    H, W = img.shape
    rows = np.minimum(np.floor((np.arange(h) + 0.5) * (H / h)).astype(int), H - 1)
    cols = np.minimum(np.floor((np.arange(w) + 0.5) * (W / w)).astype(int), W - 1)
    return img[rows][:, cols]


def visible_lamps(scene: ScenePlatform, pose: CameraPose, intr: CameraIntrinsics, margin: float = 0.0):
    """Ids of lamps whose whole disk (plus ``margin`` px) lies inside the frame."""
    W, H = intr.working_res
    r = disk_radius_px(scene, pose, intr) + margin
    out = []
    for rec in scene.luminaires:
        p = project(rec.position, pose, intr)
        if r - 0.5 <= p.u <= W - 0.5 - r and r - 0.5 <= p.v <= H - 0.5 - r:
            out.append(rec.id)
    return out


@dataclass
class Trajectory:
    waypoints: list[tuple[float, float, float, float]]  # (x, y, yaw, t)
    speed: float = 0.4
    z: float = 0.0

    def __post_init__(self):
        if not self.waypoints:
            raise DomainError("trajectory needs at least one waypoint")
        ts = [w[3] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("waypoint timestamps must increase strictly")

    @classmethod
    def from_path(cls, points: Sequence[tuple[float, float]], speed: float = 0.4, yaw: float = 0.0,
                  z: float = 0.0) -> "Trajectory":
        """Constant-speed polyline; points too close to advance time are merged."""
        wps = [(float(points[0][0]), float(points[0][1]), yaw, 0.0)]
        for x, y in points[1:]:
            px, py, _, pt = wps[-1]
            t = pt + math.hypot(x - px, y - py) / speed
            if t <= pt:
                continue
            wps.append((float(x), float(y), yaw, t))
        return cls(wps, speed, z)

    @classmethod
    def stationary(cls, x: float, y: float, yaw: float = 0.0, duration: float = 0.0, z: float = 0.0):
        wps = [(x, y, yaw, 0.0)]
        if duration > 0:
            wps.append((x, y, yaw, duration))
        return cls(wps, 0.0, z)

    @property
    def duration(self) -> float:
        return self.waypoints[-1][3] - self.waypoints[0][3]

    def reversed(self) -> "Trajectory":
        T0, T1 = self.waypoints[0][3], self.waypoints[-1][3]
        wps = [(x, y, yaw, T0 + T1 - t) for x, y, yaw, t in reversed(self.waypoints)]
        return Trajectory(wps, self.speed, self.z)

    def pose_at(self, t: float) -> CameraPose:
        wps = self.waypoints
        if t <= wps[0][3]:
            x, y, yaw, _ = wps[0]
            return CameraPose(x, y, self.z, yaw)
        for (x0, y0, a0, t0), (x1, y1, a1, t1) in zip(wps, wps[1:]):
            if t <= t1:
                s = (t - t0) / (t1 - t0)
                dyaw = math.remainder(a1 - a0, 2 * math.pi)
                return CameraPose(x0 + s * (x1 - x0), y0 + s * (y1 - y0), self.z, a0 + s * dyaw)
        x, y, yaw, _ = wps[-1]
        return CameraPose(x, y, self.z, yaw)

    def sample_times(self, fps: float) -> list[int]:
        """Frame timestamps (ns) at ``fps`` covering the whole trajectory."""
        n = int(math.floor(self.duration * fps + 1e-9)) + 1
        t0 = self.waypoints[0][3]
        return [int(round((t0 + k / fps) * 1e9)) for k in range(n)]


def run_trajectory(scene: ScenePlatform, traj: Trajectory, render: RenderConfig
                   ) -> Iterator[tuple[Frame, CameraPose]]:
    for k, ts in enumerate(traj.sample_times(render.fps)):
        pose = traj.pose_at(ts * 1e-9)
        yield render_frame(scene, pose, ts, render, seq=k), pose


def render_poses(scene: ScenePlatform, poses: Sequence[CameraPose], render: RenderConfig
                 ) -> Iterator[tuple[Frame, CameraPose]]:
    """Render an arbitrary pose list at consecutive frame times."""
    for k, pose in enumerate(poses):
        ts = int(round(k / render.fps * 1e9))
        yield render_frame(scene, pose, ts, render, seq=k), pose


# -- config files -------------------------------------------------------------

def scene_to_dict(scene: ScenePlatform) -> dict:
    return {
        "version": SCENE_VERSION,
        "extent": list(scene.extent),
        "led_plane_z": scene.led_plane_z,
        "led_radius_cm": scene.led_radius_cm,
        "f0_cm": scene.f0,
        "dx_cm": scene.dx,
        "principal_point": list(scene.principal_point) if scene.principal_point else None,
        "luminaires": json.loads(scene.luminaires.to_json()),
    }


def scene_from_dict(doc: dict) -> ScenePlatform:
    if doc.get("version") != SCENE_VERSION:
        raise DomainError(f"unsupported scene version {doc.get('version')!r}")
    lum = doc.get("luminaires")
    db = LuminaireDatabase.from_json(json.dumps(lum)) if lum else default_database(doc.get("led_plane_z", 150.0))
    pp = doc.get("principal_point")
    return ScenePlatform(
        luminaires=db,
        extent=tuple(doc.get("extent", (100.0, 100.0))),
        led_plane_z=float(doc.get("led_plane_z", 150.0)),
        led_radius_cm=float(doc.get("led_radius_cm", 5.0)),
        f0=float(doc.get("f0_cm", 0.4)),
        dx=float(doc.get("dx_cm", 3.2e-4)),
        principal_point=tuple(pp) if pp else None,
    )


def render_to_dict(render: RenderConfig) -> dict:
    d = asdict(render)
    d["occlusions"] = [asdict(o) for o in render.occlusions]
    return d


def render_from_dict(doc: dict) -> RenderConfig:
    doc = dict(doc)
    occ = tuple(Occlusion(**o) for o in doc.pop("occlusions", []))
    for key in ("resolution", "native_resolution"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return RenderConfig(**doc, occlusions=occ)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {"version": SCENE_VERSION, "waypoints": [list(w) for w in traj.waypoints],
            "speed": traj.speed, "z": traj.z}


def trajectory_from_dict(doc: dict) -> Trajectory:
    if "path" in doc:
        return Trajectory.from_path([tuple(p) for p in doc["path"]], doc.get("speed", 0.4),
                                    doc.get("yaw", 0.0), doc.get("z", 0.0))
    return Trajectory([tuple(w) for w in doc["waypoints"]], doc.get("speed", 0.4), doc.get("z", 0.0))


def dump_frames(frames, out_dir) -> Path:
    """Write each frame as a camera/image wire message plus an ``index.json`` manifest."""
    from vlp.mesh.wire import ImageBody, TopicMessage, encode

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for frame in frames:
        msg = TopicMessage("camera/image", frame.seq, frame.timestamp, ImageBody.from_frame(frame))
        name = f"frame_{frame.seq:06d}.bin"
        (out / name).write_bytes(encode(msg))
        index.append({"file": name, "seq": frame.seq, "timestamp_ns": frame.timestamp,
                      "width": frame.width, "height": frame.height, "encoding": frame.encoding})
    manifest = out / "index.json"
    manifest.write_text(json.dumps({"version": SCENE_VERSION, "frames": index}, indent=2))
    return manifest
