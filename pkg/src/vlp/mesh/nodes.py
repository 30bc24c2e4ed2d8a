"""The four pipeline nodes: camera source, tracker, ID recognition and locator."""

from __future__ import annotations

import csv
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from vlp.codec import LuminaireDatabase, recognize
from vlp.errors import ServiceTimeoutError, TransportError, VLPError
from vlp.geometry import Anchor, CameraIntrinsics, PixelPoint, locate, select_lamp_pair
from vlp.imaging import Frame, Patch, RenderConfig, SearchWindow
from vlp.mesh.bus import Bus, now_ns
from vlp.mesh.wire import (AckBody, ControlBody, ErrorBody, IdRecognitionRequest, IdRecognitionResponse,
                           ImageBody, LampObservation, LedInfoRequest, LedInfoResponse, PositionBody,
                           TimingBody)
from vlp.simulator import CameraPose, ScenePlatform, render_frame, resize_nearest
from vlp.tracker import Status, TrackedLamp, TrackerConfig, new_lamp, track_frame

log = logging.getLogger(__name__)

IMAGE_TOPIC = "camera/image"
TIMING_TOPIC = "camera/timing"
DONE_TOPIC = "camera/done"
ACK_TOPIC = "pipeline/ack"
LOCATION_TOPIC = "location"
ID_SERVICE = "get_image"
LED_INFO_SERVICE = "LED_info_srv"
RESET = "reset"

STAGES = ("capture_publish", "transport", "track", "id", "solve", "total")


# -- latency ------------------------------------------------------------------

@dataclass
class LatencyReport:
    rows: list[tuple[int, str, int]] = field(default_factory=list)

    def add(self, fix_seq: int, stage: str, ns: int) -> None:
        self.rows.append((int(fix_seq), stage, int(ns)))

    def stage(self, name: str) -> np.ndarray:
        return np.array([ns for _, s, ns in self.rows if s == name], dtype=float)

    def mean_s(self, name: str) -> float:
        v = self.stage(name)
        return float(v.mean() * 1e-9) if v.size else float("nan")

    def summary(self) -> dict[str, float]:
        return {s: self.mean_s(s) for s in STAGES}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fix_seq", "stage", "ns"])
            w.writerows(self.rows)

    @classmethod
    def from_csv(cls, path) -> "LatencyReport":
        with open(path, newline="") as fh:
            r = csv.DictReader(fh)
            return cls([(int(row["fix_seq"]), row["stage"], int(row["ns"])) for row in r])

    def breakdown(self) -> str:
        lines = [f"{'stage':<16}{'mean ms':>10}{'n':>6}"]
        for s in STAGES:
            v = self.stage(s)
            mean = v.mean() * 1e-6 if v.size else float("nan")
            lines.append(f"{s:<16}{mean:>10.3f}{v.size:>6d}")
        return "\n".join(lines)


# -- node 1: camera -----------------------------------------------------------

Sample = tuple[int, CameraPose]


class CameraNode:
    """Renders native frames, resizes to the working resolution and publishes them.

    With ``lockstep`` the node waits for the tracker's acknowledgement of each
    frame before capturing the next one, which keeps runs reproducible.
    Segments are separated by a reset message that clears tracker state.
    """

    def __init__(self, bus: Bus, scene: ScenePlatform, render: RenderConfig, lockstep: bool = True,
                 ack_timeout: float = 30.0):
        self.bus = bus
        self.scene = scene
        self.render = render
        self.lockstep = lockstep
        self.ack_timeout = ack_timeout
        self.pub = bus.advertise(IMAGE_TOPIC)
        self.timing = bus.advertise(TIMING_TOPIC)
        self.done = bus.advertise(DONE_TOPIC)
        self.acks = bus.subscribe(ACK_TOPIC, depth=64) if lockstep else None
        self.published = 0
        self.missed_acks = 0

    def _wait_ack(self, seq: int) -> None:
        if self.acks is None:
            return
        while True:
            msg = self.acks.get(timeout=self.ack_timeout)
            if msg is None:
                self.missed_acks += 1
                log.warning("no ack for image seq %d", seq)
                return
            if isinstance(msg.payload, AckBody) and msg.payload.seq >= seq:
                return

    def run(self, segments: Sequence[Sequence[Sample]]) -> int:
        native = self.render.native()
        last_ts = 0
        for k, segment in enumerate(segments):
            if k > 0:
                m = self.pub.publish(ControlBody(RESET), timestamp_ns=last_ts)
                self._wait_ack(m.seq)
            for ts, pose in segment:
                frame = render_frame(self.scene, pose, ts, native)
                capture = now_ns()
                img = frame.pixels if self.render.is_native else resize_nearest(frame.pixels, self.render.resolution)
                body = ImageBody.from_array(img)
                # serialisation and delivery count as transport
                published = now_ns()
                m = self.pub.publish(body, timestamp_ns=ts)
                self.timing.publish(TimingBody(m.seq, capture, published))
                self.published += 1
                last_ts = ts
                self._wait_ack(m.seq)
        self.done.publish(AckBody(self.published))
        return self.published


# -- node 3: ID recognition ---------------------------------------------------

class IdRecognitionNode:
    def __init__(self, bus: Bus, db: LuminaireDatabase, render: RenderConfig):
        self.db = db
        self.render = render
        self.calls = 0
        bus.advertise_service(ID_SERVICE, self.handle)

    def handle(self, req) -> IdRecognitionResponse | ErrorBody:
        self.calls += 1
        if not isinstance(req, IdRecognitionRequest):
            return ErrorBody(ErrorBody.MALFORMED, "IdRecognitionRequest expected")
        patch = Patch(req.roi.to_array(), req.row0, req.col0)
        try:
            led = recognize(patch, self.db, self.render, req.frame_timestamp_ns * 1e-9)
        except VLPError as e:
            return ErrorBody(ErrorBody.HANDLER_FAILED, str(e))
        return IdRecognitionResponse(led or "")


# -- node 4: locator ----------------------------------------------------------

class LocatorNode:
    def __init__(self, bus: Bus, db: LuminaireDatabase, intr: CameraIntrinsics, mounting_offset: float = 0.0):
        self.db = db
        self.intr = intr
        self.mounting_offset = mounting_offset
        self.pub = bus.advertise(LOCATION_TOPIC)
        self.rejected = 0
        bus.advertise_service(LED_INFO_SERVICE, self.handle)

    def handle(self, req) -> LedInfoResponse | ErrorBody:
        if not isinstance(req, LedInfoRequest):
            return ErrorBody(ErrorBody.MALFORMED, "LedInfoRequest expected")
        anchors = []
        for lamp in req.lamps:
            try:
                rec = self.db.get(lamp.led_id)
            except KeyError:
                continue
            anchors.append(Anchor(lamp.led_id, rec.position, PixelPoint(lamp.img_x, lamp.img_y)))
        try:
            fix = locate(select_lamp_pair(anchors), self.intr, req.frame_timestamp_ns, self.mounting_offset)
        except VLPError as e:
            log.debug("frame %d not solvable: %s", req.frame_seq, e)
            self.rejected += 1
            return LedInfoResponse(0)
        body = PositionBody(fix.x_w, fix.y_w, fix.z_w, fix.theta, fix.pair, now_ns(), req.frame_seq)
        self.pub.publish(body, timestamp_ns=req.frame_timestamp_ns)
        return LedInfoResponse(1)


# -- node 2: tracker ----------------------------------------------------------

@dataclass
class TrackerStats:
    frames: int = 0
    frames_with_pair: int = 0
    fixes: int = 0
    id_calls: int = 0
    id_failures: int = 0
    dropped: int = 0


class TrackerNode:
    """Camshift/Kalman tracking of lamp windows; asks for IDs and for fixes."""

    def __init__(self, bus: Bus, cfg: TrackerConfig = TrackerConfig(), id_retry_frames: int = 5,
                 id_margin: float = 1.3, service_timeout: float = 10.0, latency: LatencyReport | None = None):
        self.bus = bus
        self.cfg = cfg
        self.id_retry_frames = id_retry_frames
        self.id_margin = id_margin
        self.service_timeout = service_timeout
        self.images = bus.subscribe(IMAGE_TOPIC, depth=1)
        self.timings = bus.subscribe(TIMING_TOPIC, depth=256)
        self.acks = bus.advertise(ACK_TOPIC)
        self.latency = latency if latency is not None else LatencyReport()
        self.stats = TrackerStats()
        self.lamps: list[TrackedLamp] = []
        self._timing_cache: dict[int, TimingBody] = {}
        self._stop = threading.Event()
        self.error: BaseException | None = None
        self.last_seq = -1

    def stop(self) -> None:
        self._stop.set()

    def run(self) -> None:
        try:
            while not self._stop.is_set():
                msg = self.images.get(timeout=0.05)
                if msg is None:
                    continue
                recv = now_ns()
                if msg.seq < self.last_seq:
                    raise TransportError(f"image seq went backwards: {msg.seq} < {self.last_seq}")
                self.last_seq = msg.seq
                if isinstance(msg.payload, ControlBody) and msg.payload.name == RESET:
                    self.lamps = []
                elif isinstance(msg.payload, ImageBody):
                    frame = Frame(msg.timestamp_ns, msg.payload.to_array(), seq=msg.seq)
                    self.process(frame, recv)
                self.stats.dropped = self.images.dropped
                self.acks.publish(AckBody(msg.seq))
        except BaseException as e:  # surfaced by the pipeline runner
            self.error = e
            log.exception("tracker node failed")

    # --

    def _timing(self, seq: int) -> TimingBody | None:
        while seq not in self._timing_cache:
            m = self.timings.get(timeout=1.0)
            if m is None:
                return None
            if isinstance(m.payload, TimingBody):
                self._timing_cache[m.payload.frame_seq] = m.payload
        return self._timing_cache.pop(seq)

    def _request_id(self, frame: Frame, win: SearchWindow) -> str | None:
        side_w = win.w * self.id_margin + 4
        side_h = win.h * self.id_margin + 4
        x0, y0, x1, y1 = SearchWindow(win.cx, win.cy, side_w, side_h).bounds(frame.width, frame.height)
        if x1 - x0 < 3 or y1 - y0 < 3:
            return None
        req = IdRecognitionRequest(y0, x0, frame.timestamp, ImageBody.from_array(frame.pixels[y0:y1, x0:x1]))
        self.stats.id_calls += 1
        try:
            resp = self.bus.call_service(ID_SERVICE, req, self.service_timeout)
        except (TransportError, ServiceTimeoutError) as e:
            self.stats.id_failures += 1
            log.debug("id request failed: %s", e)
            return None
        return resp.led_id or None if isinstance(resp, IdRecognitionResponse) else None

    def process(self, frame: Frame, recv_ns: int) -> None:
        self.stats.frames += 1
        t0 = now_ns()
        lamps, fresh = track_frame(self.lamps, frame, self.cfg)
        t_track = now_ns() - t0

        t1 = now_ns()
        held = {l.id for l in lamps if l.id is not None and l.status is Status.TRACKING}
        for k, lamp in enumerate(lamps):
            if lamp.id is not None or lamp.status is not Status.TRACKING:
                continue
            if lamp.id_backoff > 0:
                lamps[k] = replace(lamp, id_backoff=lamp.id_backoff - 1)
                continue
            led = self._request_id(frame, lamp.window)
            if led is not None and led not in held:
                lamps[k] = replace(lamp, id=led)
                held.add(led)
            else:
                lamps[k] = replace(lamp, id_backoff=self.id_retry_frames)
        for roi in fresh:
            led = self._request_id(frame, roi)
            if led in held:
                led = None
            lamp = new_lamp(frame, roi, self.cfg, led)
            if led is None:
                lamp = replace(lamp, id_backoff=self.id_retry_frames)
            else:
                held.add(led)
            lamps.append(lamp)
        self.lamps = lamps
        t_id = now_ns() - t1

        obs = [LampObservation(l.id, *l.center) for l in lamps
               if l.id is not None and l.status is Status.TRACKING]
        if len(obs) < 2:
            return
        self.stats.frames_with_pair += 1
        obs.sort(key=lambda o: o.led_id)
        req = LedInfoRequest(frame.seq, frame.timestamp, frame.width, frame.height, tuple(obs))
        t2 = now_ns()
        try:
            resp = self.bus.call_service(LED_INFO_SERVICE, req, self.service_timeout)
        except (TransportError, ServiceTimeoutError) as e:
            log.warning("locator call failed: %s", e)
            return
        done = now_ns()
        if not (isinstance(resp, LedInfoResponse) and resp.ack):
            return
        self.stats.fixes += 1
        timing = self._timing(frame.seq)
        seq = frame.seq
        if timing is not None:
            self.latency.add(seq, "capture_publish", timing.publish_ns - timing.capture_ns)
            self.latency.add(seq, "transport", recv_ns - timing.publish_ns)
        self.latency.add(seq, "track", t_track)
        self.latency.add(seq, "id", t_id)
        self.latency.add(seq, "solve", done - t2)
        if timing is not None:
            self.latency.add(seq, "total", done - timing.capture_ns)

