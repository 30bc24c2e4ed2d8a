"""Experiment specs and the runner that drives simulator + pipeline and writes reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from vlp.errors import DomainError
from vlp.geometry import CameraIntrinsics, PoseFix, calibrate_center
from vlp.harness.stats import (ErrorSample, ErrorStats, dispersion_radius, distance_to_segment, dominant_axis,
                               error_distribution)
from vlp.imaging import RenderConfig
from vlp.mesh.nodes import LatencyReport, Sample
from vlp.mesh.pipeline import TOPOLOGIES, PipelineResult, run_pipeline
from vlp.simulator import CameraPose, ScenePlatform, Trajectory

MODES = ("static", "grid", "dynamic")
SPEC_VERSION = 1

# Paths of the six moving-robot runs; C and D are the directly-connected runs.
DYNAMIC_PRESETS: dict[str, dict] = {
    "A": dict(path=[(-35.0, 0.0), (35.0, -0.5)], preset="compressed", topology="split"),
    "B": dict(path=[(0.0, -35.0), (-1.0, 35.0)], preset="compressed", topology="split"),
    "C": dict(path=[(-35.0, 0.0), (35.0, -0.5)], preset="compressed", topology="local"),
    "D": dict(path=[(0.0, -35.0), (-1.0, 35.0)], preset="native", topology="local"),
    "E": dict(path=[(35.0, 0.0), (-35.0, -1.0)], preset="native", topology="split"),
    "F": dict(path=[(0.0, 35.0), (-1.0, -35.0)], preset="native", topology="split"),
}


def grid_points(extent: float = 100.0, n: int = 6) -> list[tuple[float, float]]:
    """Cell centres of an ``n`` x ``n`` grid over the platform (36 points by default)."""
    step = extent / n
    c = [-extent / 2 + step * (k + 0.5) for k in range(n)]
    return [(x, y) for y in c for x in c]


@dataclass
class ExperimentSpec:
    name: str
    mode: str
    path: list[tuple[float, float]] | None = None
    points: list[tuple[float, float]] | None = None
    preset: str = "compressed"
    topology: str = "local"
    repetitions: int = 12
    seed: int = 0
    fps: float = 1.0
    speed: float = 0.4
    centroid_noise_px: float = 0.0
    principal_point_offset_px: tuple[float, float] = (0.0, 0.0)
    yaw_spread_deg: float = 360.0
    max_frames: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.topology not in TOPOLOGIES:
            raise DomainError(f"topology must be one of {TOPOLOGIES}")
        if self.repetitions < 1:
            raise DomainError("repetitions must be >= 1")
        RenderConfig.preset(self.preset)
        if self.mode == "dynamic" and not self.path:
            raise DomainError("dynamic mode needs a path")
        if self.path is not None:
            self.path = [tuple(map(float, p)) for p in self.path]
        if self.points is not None:
            self.points = [tuple(map(float, p)) for p in self.points]
        self.principal_point_offset_px = tuple(map(float, self.principal_point_offset_px))

    @classmethod
    def preset_named(cls, name: str, **kw) -> "ExperimentSpec":
        key = name.upper()
        if key in DYNAMIC_PRESETS:
            return cls(**{"name": key, "mode": "dynamic", **DYNAMIC_PRESETS[key], **kw})
        if name == "static":
            return cls(**{"name": "static", "mode": "static", "repetitions": 30, "centroid_noise_px": 0.5,
                          "principal_point_offset_px": (6.0, -4.0), **kw})
        if name == "grid":
            return cls(**{"name": "grid", "mode": "grid", "points": grid_points(), "repetitions": 12,
                          "centroid_noise_px": 0.5, "yaw_spread_deg": 0.0, **kw})
        raise DomainError(f"unknown experiment preset {name!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = SPEC_VERSION
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        doc = dict(doc)
        version = doc.pop("version", SPEC_VERSION)
        if version != SPEC_VERSION:
            raise DomainError(f"unsupported spec version {version!r}")
        if "experiment" in doc:
            base = doc.pop("experiment")
            return cls.preset_named(base, **doc)
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def render(self) -> RenderConfig:
        return RenderConfig.preset(self.preset, fps=self.fps, centroid_noise_sigma=self.centroid_noise_px,
                                   seed=self.seed)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    stats: ErrorStats | None
    latency: LatencyReport
    pipeline: list[PipelineResult]
    truth: dict[int, CameraPose]
    extra: dict = field(default_factory=dict)
    files: dict[str, Path] = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return any(p.degraded for p in self.pipeline) or self.stats is None


# -- motion plans --------------------------------------------------------------

def _frame_times(n: int, fps: float, start: int = 0) -> list[int]:
    return [int(round((start + k) / fps * 1e9)) for k in range(n)]


def plan(spec: ExperimentSpec) -> tuple[list[list[Sample]], Trajectory | None]:
    """Segments of (timestamp, pose) for ``spec`` plus the trajectory in dynamic mode."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    if spec.mode == "dynamic":
        traj = Trajectory.from_path(spec.path, spec.speed)
        times = traj.sample_times(spec.fps)
        if spec.max_frames:
            times = times[: spec.max_frames]
        return [[(ts, traj.pose_at(ts * 1e-9)) for ts in times]], traj
    if spec.mode == "static":
        # one-frame placements of the robot at the origin with a fresh heading each time
        spread = math.radians(spec.yaw_spread_deg)
        yaws = rng.uniform(-spread / 2, spread / 2, spec.repetitions) if spread > 0 else np.zeros(spec.repetitions)
        ts = _frame_times(spec.repetitions, spec.fps)
        p = (spec.points or [(0.0, 0.0)])[0]
        return [[(ts[k], CameraPose(p[0], p[1], 0.0, float(yaws[k])))] for k in range(spec.repetitions)], None
    points = spec.points or grid_points()
    segs, k = [], 0
    spread = math.radians(spec.yaw_spread_deg)
    for x, y in points:
        yaw = float(rng.uniform(-spread / 2, spread / 2)) if spread > 0 else 0.0
        ts = _frame_times(spec.repetitions, spec.fps, k)
        segs.append([(t, CameraPose(x, y, 0.0, yaw)) for t in ts])
        k += spec.repetitions
    if spec.max_frames:
        segs = _truncate(segs, spec.max_frames)
    return segs, None


def _truncate(segs, n):
    out = []
    for s in segs:
        if n <= 0:
            break
        out.append(s[:n])
        n -= len(out[-1])
    return out


# -- running -------------------------------------------------------------------

def _scene(spec: ExperimentSpec) -> ScenePlatform:
    """The physical rig; a principal-point offset is a property of the real camera."""
    base = ScenePlatform()
    dx, dy = spec.principal_point_offset_px
    if dx == 0 and dy == 0:
        return base
    nat = RenderConfig().native_resolution
    cx, cy = (nat[0] - 1) / 2, (nat[1] - 1) / 2
    # offset given in working pixels; the scene stores native pixels
    a = nat[0] / spec.render().resolution[0]
    return replace(base, principal_point=(cx + dx * a, cy + dy * a))


def _samples(fixes, truth_by_seq, latency: LatencyReport):
    totals = {}
    for seq, stage, ns in latency.rows:
        if stage == "total":
            totals[seq] = ns * 1e-9
    out = []
    for f in fixes:
        pose = truth_by_seq[f.source_frame_seq]
        err = math.hypot(f.x_w - pose.x, f.y_w - pose.y)
        out.append(ErrorSample((pose.x, pose.y), (f.x_w, f.y_w), err, totals.get(f.source_frame_seq, float("nan"))))
    return out


def _truth_by_seq(segments) -> dict[int, CameraPose]:
    """Map image-topic seq to pose; reset messages between segments also take a seq."""
    out, seq = {}, 0
    for k, seg in enumerate(segments):
        if k > 0:
            seq += 1
        for _, pose in seg:
            out[seq] = pose
            seq += 1
    return out


def _fixes_to_posefix(fixes, led_plane_z: float) -> list[PoseFix]:
    return [PoseFix(f.x_w, f.y_w, f.z_w, led_plane_z - f.z_w, f.theta, 0, f.pair) for f in fixes]


SAMPLE_COLUMNS = ["frame_seq", "t_s", "truth_x", "truth_y", "est_x", "est_y", "est_z", "theta_deg",
                  "error_cm", "path_error_cm", "pair"]


def write_samples(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SAMPLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def read_samples(path) -> list[ErrorSample]:
    with open(path, newline="") as fh:
        return [ErrorSample((float(r["truth_x"]), float(r["truth_y"])), (float(r["est_x"]), float(r["est_y"])),
                            float(r["error_cm"])) for r in csv.DictReader(fh)]


def _rows(fixes, truth, segments, traj: Trajectory | None):
    ts_by_seq = {}
    seq = 0
    for k, seg in enumerate(segments):
        if k > 0:
            seq += 1
        for ts, _ in seg:
            ts_by_seq[seq] = ts
            seq += 1
    rows = []
    for f in fixes:
        pose = truth[f.source_frame_seq]
        path_err = (distance_to_segment((f.x_w, f.y_w), traj.waypoints[0][:2], traj.waypoints[-1][:2])
                    if traj is not None else math.hypot(f.x_w - pose.x, f.y_w - pose.y))
        rows.append({
            "frame_seq": f.source_frame_seq,
            "t_s": ts_by_seq[f.source_frame_seq] * 1e-9,
            "truth_x": pose.x, "truth_y": pose.y,
            "est_x": f.x_w, "est_y": f.y_w, "est_z": f.z_w,
            "theta_deg": math.degrees(f.theta),
            "error_cm": math.hypot(f.x_w - pose.x, f.y_w - pose.y),
            "path_error_cm": path_err,
            "pair": "+".join(f.pair),
        })
    return rows


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Drive the simulator through the pipeline per ``spec`` and summarise the fixes.

    Static mode runs three passes over the same frames: one to calibrate the
    principal point, then uncorrected and corrected evaluation passes whose
    dispersion radii are reported side by side.
    """
    render = spec.render()
    scene = _scene(spec)
    segments, traj = plan(spec)
    truth = _truth_by_seq(segments)
    nominal = CameraIntrinsics(scene.f0, scene.dx, render.native_resolution, render.resolution)
    runs = [run_pipeline(spec.topology, scene, segments, render, intr=nominal)]
    result = runs[0]
    extra: dict = {}
    if spec.mode == "static" and len(result.fixes) >= 2:
        truth_xy = (segments[0][0][1].x, segments[0][0][1].y)
        corrected = calibrate_center(_fixes_to_posefix(result.fixes, scene.led_plane_z), truth_xy, nominal)
        runs.append(run_pipeline(spec.topology, scene, segments, render, intr=corrected))
        unc = [(f.x_w, f.y_w) for f in result.fixes]
        cor = [(f.x_w, f.y_w) for f in runs[1].fixes]
        extra = {
            "principal_point_nominal": nominal.center,
            "principal_point_calibrated": corrected.center,
            "dispersion_uncorrected_cm": dispersion_radius(unc),
            "dispersion_corrected_cm": dispersion_radius(cor) if len(cor) >= 2 else float("nan"),
            "center_offset_uncorrected_cm": float(np.hypot(*(np.mean(unc, axis=0) - truth_xy))),
            "center_offset_corrected_cm": float(np.hypot(*(np.mean(cor, axis=0) - truth_xy))) if cor else float("nan"),
        }
        result = runs[1]
    axis = dominant_axis(*spec.path) if spec.mode == "dynamic" else None
    samples = _samples(result.fixes, truth, result.latency)
    stats = error_distribution(samples, axis) if samples else None
    frames = len(truth)
    extra["frames"] = frames
    extra["fixes"] = len(result.fixes)
    extra["coverage"] = len(result.fixes) / frames if frames else 0.0
    res = ExperimentResult(spec, stats, result.latency, runs, truth, extra)
    if out_dir is not None:
        _write_reports(res, Path(out_dir), segments, traj)
    return res


def _write_reports(res: ExperimentResult, out: Path, segments, traj) -> None:
    out.mkdir(parents=True, exist_ok=True)
    final = res.pipeline[-1]
    files = {
        "samples": out / "samples.csv",
        "latency": out / "latency.csv",
        "report": out / "report.txt",
        "spec": out / "spec.json",
    }
    write_samples(files["samples"], _rows(final.fixes, res.truth, segments, traj))
    if len(res.pipeline) > 1:
        files["samples_uncorrected"] = out / "samples_uncorrected.csv"
        write_samples(files["samples_uncorrected"], _rows(res.pipeline[0].fixes, res.truth, segments, traj))
    final.latency.to_csv(files["latency"])
    files["spec"].write_text(json.dumps(res.spec.to_dict(), indent=2) + "\n")
    if res.stats is not None:
        files["pmf"] = out / "pmf.csv"
        edges, mass = res.stats.pmf
        with open(files["pmf"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left_cm", "mass"])
            w.writerows((f"{e:.1f}", f"{m:.6f}") for e, m in zip(edges, mass))
        files["cdf"] = out / "cdf.csv"
        vals, prob = res.stats.cdf
        with open(files["cdf"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["error_cm", "cdf"])
            w.writerows((f"{v:.6f}", f"{p:.6f}") for v, p in zip(vals, prob))
    files["report"].write_text(report_text(res))
    res.files = files


def report_text(res: ExperimentResult) -> str:
    spec = res.spec
    lines = [f"experiment {spec.name}: mode={spec.mode} preset={spec.preset} topology={spec.topology} "
             f"seed={spec.seed}", ""]
    lines.append(res.stats.summary() if res.stats else "no fixes")
    lines.append("")
    for k, v in res.extra.items():
        if isinstance(v, float):
            lines.append(f"{k:<32}{v:.4f}")
        elif isinstance(v, tuple):
            lines.append(f"{k:<32}({v[0]:.3f}, {v[1]:.3f})")
        else:
            lines.append(f"{k:<32}{v}")
    lines += ["", "latency breakdown", res.latency.breakdown()]
    for p in res.pipeline:
        s = p.stats
        lines.append(f"[{p.topology}] frames={s.frames} with_pair={s.frames_with_pair} fixes={s.fixes} "
                     f"id_calls={s.id_calls} dropped={s.dropped}")
        lines += [f"  error: {e}" for e in p.errors]
    return "\n".join(lines) + "\n"
