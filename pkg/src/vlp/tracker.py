"""Camshift-Kalman LED-ROI tracking with Bhattacharyya-scaled measurement noise."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from vlp.errors import NoMassError, StateCorruptionError
from vlp.imaging import Frame, SearchWindow, fit_disk

N_BINS = 32
MIN_WINDOW = 4.0


@dataclass(frozen=True)
class TrackerConfig:
    bc_threshold: float = 0.6
    eps: float = 1.0
    max_iter: int = 10
    expansion_factor: float = 1.5
    expansion_cap: int = 4
    process_noise: float = 0.05
    measurement_noise: float = 0.25
    bc_floor: float = 1e-3
    max_lost_frames: int = 30
    # threshold for "lit" pixels as a fraction of the frame maximum
    lit_fraction: float = 0.25


@dataclass(frozen=True)
class TargetModel:
    histogram: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.histogram, dtype=float)
        if (h < 0).any() or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError("histogram must be non-negative and sum to 1")
        object.__setattr__(self, "histogram", h)

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, floor: float = 0.0, bins: int = N_BINS) -> "TargetModel":
        """Intensity histogram of the pixels brighter than ``floor``."""
        h = intensity_histogram(pixels, floor, bins)
        if h.sum() == 0:
            raise NoMassError("no lit pixels for a target model")
        return cls(h / h.sum())


def intensity_histogram(pixels: np.ndarray, floor: float = 0.0, bins: int = N_BINS) -> np.ndarray:
    v = np.asarray(pixels).ravel()
    v = v[v > floor]
    idx = (v.astype(np.int64) * bins) // 256
    return np.bincount(idx, minlength=bins).astype(float)


@dataclass
class KalmanState:
    state: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R0: np.ndarray

    @classmethod
    def initial(cls, x: float, y: float, q: float = 0.05, r: float = 0.25, p0: float = 4.0) -> "KalmanState":
        return cls(
            state=np.array([x, y, 0.0, 0.0]),
            P=np.diag([p0, p0, 1.0, 1.0]),
            Q=q * np.diag([0.25, 0.25, 1.0, 1.0]),
            R0=r * np.eye(2),
        )

    @property
    def position(self) -> tuple[float, float]:
        return float(self.state[0]), float(self.state[1])


F = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
H_OBS = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0]])


class Status(enum.Enum):
    TRACKING = "tracking"
    OCCLUDED = "occluded"
    LOST = "lost"


@dataclass
class TrackedLamp:
    window: SearchWindow
    model: TargetModel
    kalman: KalmanState
    id: str | None = None
    status: Status = Status.TRACKING
    last_bc: float = 1.0
    lost_frames: int = 0
    centroid: tuple[float, float] | None = None
    # frames to wait before asking for this lamp's id again
    id_backoff: int = 0

    @property
    def center(self) -> tuple[float, float]:
        return self.kalman.position


def bhattacharyya(h1: TargetModel | np.ndarray, h2: TargetModel | np.ndarray) -> float:
    a = h1.histogram if isinstance(h1, TargetModel) else np.asarray(h1, float)
    b = h2.histogram if isinstance(h2, TargetModel) else np.asarray(h2, float)
    return float(min(1.0, max(0.0, np.sqrt(a * b).sum())))


def backproject(pixels: np.ndarray, model: TargetModel) -> np.ndarray:
    """Per-pixel weight: model bin of the pixel's intensity, scaled so the top bin is 1."""
    h = model.histogram
    top = h.max()
    lut = np.repeat(h / top if top > 0 else h, 256 // len(h))
    return lut[np.asarray(pixels, dtype=np.uint8)]


def _window_moments(prob: np.ndarray, win: SearchWindow):
    H, W = prob.shape
    x0, y0, x1, y1 = win.bounds(W, H)
    if x1 <= x0 or y1 <= y0:
        return 0.0, win.cx, win.cy
    sub = prob[y0:y1, x0:x1]
    m00 = float(sub.sum())
    if m00 <= 0:
        return 0.0, win.cx, win.cy
    ys = np.arange(y0, y1)
    xs = np.arange(x0, x1)
    cx = float(sub.sum(axis=0) @ xs) / m00
    cy = float(sub.sum(axis=1) @ ys) / m00
    return m00, cx, cy


@dataclass(frozen=True)
class MeanShiftResult:
    window: SearchWindow
    iterations: int
    converged: bool
    m00: float


def meanshift_iterate(prob: np.ndarray, w0: SearchWindow, eps: float = 1.0, max_iter: int = 10,
                      camshift: bool = True) -> MeanShiftResult:
    """Move the window to its weighted centroid until the shift drops below ``eps``.

    With ``camshift`` the converged window is resized to ``2*sqrt(M00)``.
    """
    if eps <= 0 or max_iter < 1:
        raise ValueError("eps must be positive and max_iter at least 1")
    win = w0
    m00 = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        m00, cx, cy = _window_moments(prob, win)
        if m00 <= 0:
            raise NoMassError("search window holds no back-projection weight")
        shift = math.hypot(cx - win.cx, cy - win.cy)
        win = win.moved(cx, cy)
        if shift < eps:
            converged = True
            break
    if camshift:
        H, W = prob.shape
        side = min(max(2.0 * math.sqrt(m00), MIN_WINDOW), float(min(W, H)))
        win = SearchWindow(win.cx, win.cy, side, side)
    return MeanShiftResult(win, it, converged, m00)


def noise_gain(bc: float, floor: float = 1e-3) -> float:
    """Measurement-noise multiplier: 1 at full similarity, growing as 1/bc^2."""
    return 1.0 / max(bc * bc, floor)


def _check_psd(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)) or not np.allclose(P, P.T, rtol=1e-9, atol=1e-9):
        raise StateCorruptionError("covariance is not symmetric")
    if np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -1e-9 * max(1.0, float(np.abs(P).max())):
        raise StateCorruptionError("covariance is not positive semi-definite")


def kalman_predict(ks: KalmanState) -> KalmanState:
    _check_psd(ks.P)
    P = F @ ks.P @ F.T + ks.Q
    return replace(ks, state=F @ ks.state, P=0.5 * (P + P.T))


def kalman_step(ks: KalmanState, measurement: tuple[float, float] | None, bc: float,
                floor: float = 1e-3) -> KalmanState:
    """Constant-velocity predict, then correct with noise ``R0 * noise_gain(bc)``."""
    if not 0.0 <= bc <= 1.0:
        raise ValueError("bc must lie in [0, 1]")
    pred = kalman_predict(ks)
    if measurement is None:
        return pred
    R = ks.R0 * noise_gain(bc, floor)
    S = H_OBS @ pred.P @ H_OBS.T + R
    K = np.linalg.solve(S, H_OBS @ pred.P).T
    innov = np.asarray(measurement, dtype=float) - H_OBS @ pred.state
    x = pred.state + K @ innov
    # Joseph form keeps P symmetric PSD
    I_KH = np.eye(4) - K @ H_OBS
    P = I_KH @ pred.P @ I_KH.T + K @ R @ K.T
    return replace(pred, state=x, P=0.5 * (P + P.T))


# -- detection ----------------------------------------------------------------

def lit_mask(pixels: np.ndarray, fraction: float = 0.25) -> np.ndarray:
    top = int(pixels.max())
    if top == 0:
        return np.zeros(pixels.shape, dtype=bool)
    return pixels > max(fraction * top, 8)


def detect_rois(frame: Frame | np.ndarray, gap_rows: int | None = None, min_area: int = 12,
                lit_fraction: float = 0.25) -> list[SearchWindow]:
    """Find lamp blobs: threshold, label, merge stripe bands, filter by shape.

    Dark stripes split one lamp into stacked bands; bands whose column spans
    overlap and whose vertical gap is at most ``gap_rows`` are merged.
    """
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    H, W = pixels.shape
    mask = lit_mask(pixels, lit_fraction)
    if not mask.any():
        return []
    if gap_rows is None:
        gap_rows = max(3, int(round(H / 1536 * 48)))
    labels, n = ndimage.label(mask)
    boxes = [[sl[0].start, sl[0].stop, sl[1].start, sl[1].stop] for sl in ndimage.find_objects(labels)]
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    parent = list(range(n))

    def root(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    order = sorted(range(n), key=lambda k: boxes[k][0])
    for ia, a in enumerate(order):
        ya0, ya1, xa0, xa1 = boxes[a]
        for b in order[ia + 1 :]:
            yb0, yb1, xb0, xb1 = boxes[b]
            if yb0 - ya1 > gap_rows:
                break
            if xb0 < xa1 and xa0 < xb1:
                parent[root(b)] = root(a)
    groups: dict[int, list[int]] = {}
    for k in range(n):
        groups.setdefault(root(k), []).append(k)

    out = []
    for members in groups.values():
        y0 = min(boxes[k][0] for k in members)
        y1 = max(boxes[k][1] for k in members)
        x0 = min(boxes[k][2] for k in members)
        x1 = max(boxes[k][3] for k in members)
        if y0 == 0 or x0 == 0 or y1 == H or x1 == W:
            continue
        h, w = y1 - y0, x1 - x0
        area = int(sum(areas[k] for k in members))
        if area < min_area:
            continue
        # A disk's column span is its full width; stripes only remove rows.
        if not (0.35 <= h / w <= 1.3):
            continue
        pad = 2
        sub = np.where(np.isin(labels[y0:y1, x0:x1], [k + 1 for k in members]), pixels[y0:y1, x0:x1], 0)
        fit = fit_disk(np.pad(sub, pad), y0 - pad, x0 - pad)
        if fit is not None and x0 - 1 <= fit.cx <= x1 and abs(fit.r - w / 2) < 0.25 * w + 2:
            cx, cy, side = fit.cx, fit.cy, 2 * fit.r + 4
        else:
            cx, cy, side = (x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2, max(h, w) + 4
        out.append(SearchWindow(cx, cy, max(side, MIN_WINDOW), max(side, MIN_WINDOW)))
    out.sort(key=lambda s: (s.cy, s.cx))
    return out


def measure_centroid(pixels: np.ndarray, win: SearchWindow) -> tuple[float, float] | None:
    """Disk centre inside ``win`` from the lit-row chord fit."""
    H, W = pixels.shape
    grown = SearchWindow(win.cx, win.cy, win.w + 4, win.h + 4)
    x0, y0, x1, y1 = grown.bounds(W, H)
    if x1 - x0 < 3 or y1 - y0 < 3:
        return None
    fit = fit_disk(pixels[y0:y1, x0:x1], y0, x0)
    if fit is None or not grown.contains(fit.cx, fit.cy):
        return None
    return fit.cx, fit.cy


# -- tracking -----------------------------------------------------------------

def window_histogram(pixels: np.ndarray, win: SearchWindow, floor: float) -> np.ndarray:
    H, W = pixels.shape
    x0, y0, x1, y1 = win.bounds(W, H)
    h = intensity_histogram(pixels[y0:y1, x0:x1], floor)
    s = h.sum()
    return h / s if s > 0 else h


def new_lamp(frame: Frame | np.ndarray, win: SearchWindow, cfg: TrackerConfig = TrackerConfig(),
             led_id: str | None = None) -> TrackedLamp:
    pixels = frame.pixels if isinstance(frame, Frame) else frame
    floor = _floor(pixels, cfg)
    x0, y0, x1, y1 = win.bounds(pixels.shape[1], pixels.shape[0])
    model = TargetModel.from_pixels(pixels[y0:y1, x0:x1], floor)
    c = measure_centroid(pixels, win) or (win.cx, win.cy)
    ks = KalmanState.initial(*c, q=cfg.process_noise, r=cfg.measurement_noise)
    return TrackedLamp(win.moved(*c), model, ks, led_id, Status.TRACKING, 1.0, 0, c)


def _floor(pixels: np.ndarray, cfg: TrackerConfig) -> float:
    return max(cfg.lit_fraction * float(pixels.max()), 8.0)


def _bc_at(pixels, lamp, win, floor) -> float:
    h = window_histogram(pixels, win, floor)
    return bhattacharyya(lamp.model.histogram, h) if h.sum() > 0 else 0.0


def recover(frame: Frame | np.ndarray, lamp: TrackedLamp, cfg: TrackerConfig = TrackerConfig()) -> TrackedLamp:
    """Search the eight neighbouring placements, then grow the window, until bc clears the threshold."""
    pixels = frame.pixels if isinstance(frame, Frame) else frame
    H, W = pixels.shape
    floor = _floor(pixels, cfg)
    cx, cy = lamp.kalman.position
    base = lamp.window.moved(cx, cy)
    offsets = [(0, 0)] + [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]
    win = base
    for level in range(cfg.expansion_cap + 1):
        cands = [SearchWindow(win.cx + dx * win.w, win.cy + dy * win.h, win.w, win.h) for dx, dy in offsets]
        cands = [c for c in cands if c.intersects(W, H)]
        scored = [(_bc_at(pixels, lamp, c, floor), k, c) for k, c in enumerate(cands)]
        bc, _, best = max(scored, key=lambda s: (s[0], -s[1]))
        if bc >= cfg.bc_threshold:
            return _reacquire(pixels, lamp, best, bc, cfg)
        side_w = min(win.w * cfg.expansion_factor, float(W))
        side_h = min(win.h * cfg.expansion_factor, float(H))
        win = SearchWindow(win.cx, win.cy, side_w, side_h)
    return replace(lamp, status=Status.LOST, last_bc=0.0, lost_frames=lamp.lost_frames + 1)


def _reacquire(pixels, lamp, win, bc, cfg) -> TrackedLamp:
    prob, (ox, oy) = _local_backprojection(pixels, lamp.model, win, cfg)
    try:
        ms = meanshift_iterate(prob, win.moved(win.cx - ox, win.cy - oy), cfg.eps, cfg.max_iter)
        win = ms.window.moved(ms.window.cx + ox, ms.window.cy + oy)
    except NoMassError:
        pass
    c = measure_centroid(pixels, win) or (win.cx, win.cy)
    ks = KalmanState.initial(*c, q=cfg.process_noise, r=cfg.measurement_noise)
    # a recovered window may hold a different lamp: identity must be re-checked
    return replace(lamp, window=win.moved(*c), kalman=ks, status=Status.TRACKING, last_bc=bc,
                   lost_frames=0, id=None, centroid=c)


def _local_backprojection(pixels, model, win, cfg):
    """Back-projection of the neighbourhood mean-shift can reach from ``win``."""
    H, W = pixels.shape
    reach = cfg.max_iter * max(win.w, win.h) / 2 + max(win.w, win.h)
    reach = min(reach, 3 * max(win.w, win.h))
    x0 = max(0, int(win.cx - reach))
    y0 = max(0, int(win.cy - reach))
    x1 = min(W, int(win.cx + reach) + 1)
    y1 = min(H, int(win.cy + reach) + 1)
    return backproject(pixels[y0:y1, x0:x1], model), (x0, y0)


def _track_one(pixels, lamp: TrackedLamp, cfg: TrackerConfig) -> TrackedLamp:
    H, W = pixels.shape
    floor = _floor(pixels, cfg)
    pred = kalman_predict(lamp.kalman)
    start = lamp.window.moved(*pred.position)
    if not start.intersects(W, H):
        return replace(lamp, kalman=pred, status=Status.OCCLUDED, last_bc=0.0)
    prob, (ox, oy) = _local_backprojection(pixels, lamp.model, start, cfg)
    try:
        ms = meanshift_iterate(prob, start.moved(start.cx - ox, start.cy - oy), cfg.eps, cfg.max_iter)
        ms = replace(ms, window=ms.window.moved(ms.window.cx + ox, ms.window.cy + oy))
    except NoMassError:
        ms = None
    bc = _bc_at(pixels, lamp, ms.window, floor) if ms else 0.0
    if ms is None or bc < cfg.bc_threshold:
        return replace(lamp, kalman=pred, window=start, status=Status.OCCLUDED, last_bc=bc)
    meas = measure_centroid(pixels, ms.window) or (ms.window.cx, ms.window.cy)
    ks = kalman_step(lamp.kalman, meas, bc, cfg.bc_floor)
    win = SearchWindow(*ks.position, ms.window.w, ms.window.h)
    return replace(lamp, window=win, kalman=ks, status=Status.TRACKING, last_bc=bc, lost_frames=0,
                   centroid=meas)


def track_frame(state: list[TrackedLamp], frame: Frame | np.ndarray, cfg: TrackerConfig = TrackerConfig()
                ) -> tuple[list[TrackedLamp], list[SearchWindow]]:
    """Advance every lamp one frame; return the updated lamps and uncovered new blobs."""
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    out = []
    for lamp in state:
        if lamp.status is Status.TRACKING:
            lamp = _track_one(pixels, lamp, cfg)
            if lamp.status is not Status.TRACKING:
                lamp = recover(pixels, lamp, cfg)
        else:
            lamp = replace(lamp, kalman=kalman_predict(lamp.kalman))
            lamp = recover(pixels, lamp, cfg)
            if lamp.status is not Status.TRACKING and lamp.lost_frames > cfg.max_lost_frames:
                continue
        out.append(lamp)
    out = _dedupe(out)
    live = [l for l in out if l.status is Status.TRACKING]
    fresh = [roi for roi in detect_rois(pixels, lit_fraction=cfg.lit_fraction)
             if not any(l.window.contains(roi.cx, roi.cy) for l in live)]
    return out, fresh


def _dedupe(lamps: list[TrackedLamp]) -> list[TrackedLamp]:
    """Drop tracking windows that collapsed onto a blob already held by another lamp."""
    kept: list[tuple[int, TrackedLamp]] = []
    order = sorted(range(len(lamps)), key=lambda k: (lamps[k].status is not Status.TRACKING,
                                                     lamps[k].id is None, k))
    for k in order:
        lamp = lamps[k]
        if lamp.status is Status.TRACKING and any(
            o.status is Status.TRACKING
            and math.hypot(o.center[0] - lamp.center[0], o.center[1] - lamp.center[1])
            < 0.5 * min(o.window.w, lamp.window.w)
            for _, o in kept
        ):
            continue
        kept.append((k, lamp))
    kept.sort(key=lambda kl: kl[0])
    return [lamp for _, lamp in kept]
