"""Wire the four nodes together in one process (``local``) or across two (``split``)."""

from __future__ import annotations

import logging
import json
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

from vlp.errors import DomainError, TransportError
from vlp.geometry import CameraIntrinsics
from vlp.imaging import RenderConfig
from vlp.mesh.bus import Bus, InProcessBus, TcpBus, TcpHub
from vlp.mesh.nodes import (DONE_TOPIC, LOCATION_TOPIC, CameraNode, IdRecognitionNode, LatencyReport,
                            LocatorNode, Sample, TrackerNode, TrackerStats)
from vlp.mesh.wire import PositionBody
from vlp.simulator import ScenePlatform, Trajectory, render_to_dict, scene_to_dict
from vlp.tracker import TrackerConfig

log = logging.getLogger(__name__)

TOPOLOGIES = ("local", "split")


@dataclass
class PipelineResult:
    topology: str
    fixes: list[PositionBody]
    latency: LatencyReport
    stats: TrackerStats
    frames_published: int
    errors: list[str] = field(default_factory=list)

    @property
    def degraded(self) -> bool:
        return bool(self.errors)


def trajectory_segments(traj: Trajectory, fps: float) -> list[list[Sample]]:
    return [[(ts, traj.pose_at(ts * 1e-9)) for ts in traj.sample_times(fps)]]


def _plain(segments: Sequence[Sequence[Sample]]) -> list[list[tuple]]:
    return [[(int(ts), *map(float, pose)) for ts, pose in seg] for seg in segments]


def _start_back_end(bus_for, scene, render, intr, tracker_cfg, latency):
    IdRecognitionNode(bus_for("id"), scene.luminaires, render)
    LocatorNode(bus_for("locator"), scene.luminaires, intr)
    tracker = TrackerNode(bus_for("tracker"), tracker_cfg, latency=latency)
    thread = threading.Thread(target=tracker.run, name="tracker-node", daemon=True)
    thread.start()
    return tracker, thread


def run_pipeline(
    topology: str,
    scene: ScenePlatform,
    motion: Trajectory | Sequence[Sequence[Sample]],
    render: RenderConfig,
    intr: CameraIntrinsics | None = None,
    tracker_cfg: TrackerConfig = TrackerConfig(),
    lockstep: bool = True,
    address: str | None = None,
    timeout: float = 600.0,
) -> PipelineResult:
    """Run camera -> tracker -> ID/locator services -> ``location`` and collect the fixes.

    ``motion`` is a trajectory or a list of segments of ``(timestamp_ns, pose)``;
    tracker state is reset between segments.  ``intr`` is the calibration the
    locator uses and defaults to the scene's true intrinsics.
    """
    if topology not in TOPOLOGIES:
        raise DomainError(f"unknown topology {topology!r}")
    segments = trajectory_segments(motion, render.fps) if isinstance(motion, Trajectory) else motion
    intr = intr or scene.intrinsics(render)
    latency = LatencyReport()
    errors: list[str] = []
    buses: list[Bus] = []
    hub = None
    try:
        if topology == "local":
            shared = InProcessBus()
            buses.append(shared)
            bus_for = lambda _name: shared  # noqa: E731
        else:
            hub = TcpHub(address)

            def bus_for(_name):
                b = TcpBus(hub.address)
                buses.append(b)
                return b

        collector = bus_for("collector")
        fixes_sub = collector.subscribe(LOCATION_TOPIC, depth=1 << 20)
        done_sub = collector.subscribe(DONE_TOPIC, depth=4)
        tracker, tracker_thread = _start_back_end(bus_for, scene, render, intr, tracker_cfg, latency)

        published = 0
        if topology == "local":
            cam = CameraNode(bus_for("camera"), scene, render, lockstep)
            cam_thread = threading.Thread(target=cam.run, args=(segments,), name="camera-node", daemon=True)
            cam_thread.start()
            cam_thread.join(timeout)
            if cam_thread.is_alive():
                errors.append("camera node did not finish in time")
            published = cam.published
        else:
            job = json.dumps({"scene": scene_to_dict(scene), "render": render_to_dict(render),
                              "segments": _plain(segments), "lockstep": lockstep})
            try:
                proc = subprocess.run([sys.executable, "-m", "vlp.mesh.camera_proc", hub.address],
                                      input=job, text=True, capture_output=True, timeout=timeout)
                if proc.returncode != 0:
                    tail = proc.stderr.strip().splitlines()[-1:] or [""]
                    errors.append(f"camera process exited with code {proc.returncode}: {tail[0]}")
            except subprocess.TimeoutExpired:
                errors.append("camera process did not finish in time")
        done = done_sub.get(timeout=5.0)
        if done is not None:
            published = done.payload.seq
        elif not errors:
            errors.append("camera never reported completion")

        # drain anything still in flight, then stop the tracker
        deadline = time.monotonic() + 5.0
        fixes: list[PositionBody] = []
        while time.monotonic() < deadline:
            fixes.extend(m.payload for m in fixes_sub.drain())
            if len(fixes) >= tracker.stats.fixes and len(tracker.images) == 0:
                break
            time.sleep(0.01)
        tracker.stop()
        tracker_thread.join(5.0)
        fixes.extend(m.payload for m in fixes_sub.drain())
        if tracker.error is not None:
            errors.append(f"tracker: {tracker.error!r}")
        if len(fixes) < tracker.stats.fixes:
            errors.append(f"{tracker.stats.fixes - len(fixes)} fixes lost in transit")
        fixes.sort(key=lambda f: f.source_frame_seq)
        return PipelineResult(topology, fixes, latency, tracker.stats, published, errors)
    except TransportError as e:
        raise TransportError(f"{topology} pipeline aborted: {e}") from e
    finally:
        for b in buses:
            b.close()
        if hub is not None:
            hub.close()
