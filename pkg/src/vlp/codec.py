"""LED-ID stripe codes: waveform model, stripe synthesis, feature extraction, matching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from vlp.errors import (
    AmbiguousIdError,
    DatabaseCollisionError,
    DomainError,
    NoSignalError,
    UnresolvableStripeError,
)
from vlp.geometry import WorldPoint
from vlp.imaging import Frame, Patch, RenderConfig, SearchWindow, fit_disk, otsu_threshold

DB_VERSION = 1
# Row-profile contrast below this fraction of the peak counts as an unmodulated lamp.
MIN_CONTRAST = 0.15
_PHASE_GRID = 4096


@dataclass(frozen=True)
class ModulationProfile:
    frequency: float
    duty_cycle: float
    phase_coefficient: float = 0.0
    manchester: bool = False

    def __post_init__(self):
        if not self.frequency > 0:
            raise DomainError("frequency must be positive")
        if not 0 < self.duty_cycle <= 1:
            raise DomainError("duty cycle must lie in (0, 1]")
        if not 0 <= self.phase_coefficient < 1:
            raise DomainError("phase coefficient must lie in [0, 1)")

    @property
    def pulse_frequency(self) -> float:
        """Repetition rate of the bright pulses (Manchester doubles it)."""
        return self.frequency * (2 if self.manchester else 1)

    @property
    def period(self) -> float:
        return 1.0 / self.pulse_frequency

    def on_time(self, t) -> np.ndarray:
        """Cumulative LED on-time from 0 to ``t`` (vectorised, seconds)."""
        t = np.asarray(t, dtype=float)
        P = self.period
        d = self.duty_cycle
        if d >= 1.0:
            return t.copy()
        start = self.phase_coefficient * P
        n = np.floor((t - start) / P)
        rem = t - start - n * P
        # defined up to an additive constant; only differences are used
        return n * d * P + np.clip(rem, 0.0, d * P)

    def integrate(self, t_start, t_exp: float) -> np.ndarray:
        """Fraction of ``[t_start, t_start + t_exp]`` during which the LED is on."""
        t_start = np.asarray(t_start, dtype=float)
        return (self.on_time(t_start + t_exp) - self.on_time(t_start)) / t_exp


@dataclass(frozen=True)
class StripeFeatures:
    stripe_count: int
    roi_area: float
    bright_ratio: float
    phase_coefficient: float
    period_rows: float | None = None
    roi_height: float | None = None
    band_centre_time: float | None = None

    def __post_init__(self):
        if self.stripe_count < 0 or self.roi_area < 0:
            raise DomainError("counts and areas are non-negative")
        if not 0.0 <= self.bright_ratio <= 1.0:
            raise DomainError("bright ratio must lie in [0, 1]")


@dataclass(frozen=True)
class LuminaireRecord:
    id: str
    position: WorldPoint
    profile: ModulationProfile
    half_power_angle: float = 60.0


@dataclass(frozen=True)
class Tolerances:
    stripe_count: int = 1
    bright_ratio: float = 0.1
    phase: float = 0.15
    area_ratio: float = 0.30
    period_ratio: float = 0.25


@dataclass
class LuminaireDatabase:
    records: list[LuminaireRecord]
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatabaseCollisionError("duplicate luminaire ids")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, led_id: str) -> LuminaireRecord:
        for r in self.records:
            if r.id == led_id:
                return r
        raise KeyError(led_id)

    def check_collisions(self, render: RenderConfig, roi_height: float) -> None:
        """Raise if two records' expected features fall within tolerance of each other."""
        expected = []
        for rec in self.records:
            try:
                expected.append((rec, expected_features(rec.profile, render, roi_height)))
            except UnresolvableStripeError:
                continue
        for k, (ra, fa) in enumerate(expected):
            for rb, fb in expected[k + 1 :]:
                if _within(fa, fb, ra.profile, rb.profile, self.tolerances):
                    raise DatabaseCollisionError(f"{ra.id} and {rb.id} are indistinguishable")

    def to_json(self) -> str:
        rows = [
            {
                "id": r.id,
                "x_cm": r.position.x,
                "y_cm": r.position.y,
                "z_cm": r.position.z,
                "freq_hz": r.profile.frequency,
                "duty": r.profile.duty_cycle,
                "phase": r.profile.phase_coefficient,
                "manchester": r.profile.manchester,
                "half_power_deg": r.half_power_angle,
            }
            for r in self.records
        ]
        return json.dumps({"version": DB_VERSION, "records": rows}, indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str, tolerances: Tolerances | None = None) -> "LuminaireDatabase":
        doc = json.loads(text)
        if isinstance(doc, list):
            raise DomainError("database file lacks a version field")
        if doc.get("version") != DB_VERSION:
            raise DomainError(f"unsupported database version {doc.get('version')!r}")
        recs = [
            LuminaireRecord(
                id=str(row["id"]),
                position=WorldPoint(float(row["x_cm"]), float(row["y_cm"]), float(row["z_cm"])),
                profile=ModulationProfile(
                    frequency=float(row["freq_hz"]),
                    duty_cycle=float(row["duty"]),
                    phase_coefficient=float(row.get("phase", 0.0)),
                    manchester=bool(row.get("manchester", False)),
                ),
                half_power_angle=float(row.get("half_power_deg", 60.0)),
            )
            for row in doc["records"]
        ]
        return cls(recs, tolerances or Tolerances())

    @classmethod
    def load(cls, path, render: RenderConfig | None = None, roi_height: float | None = None):
        db = cls.from_json(Path(path).read_text())
        if render is not None:
            db.check_collisions(render, roi_height or reference_roi_height(render))
        return db


# Layout coordinates read as millimetres so that the lamps sit inside the
# 100 x 100 cm platform.
DEFAULT_LAYOUT = {
    "LED1": (-46.5, 49.5),
    "LED2": (-46.0, -42.0),
    "LED3": (46.0, 49.0),
    "LED4": (48.0, -42.5),
}
DEFAULT_PROFILES = {
    "LED1": (1000.0, 0.5),
    "LED2": (2000.0, 0.33),
    "LED3": (4000.0, 0.5),
    "LED4": (8000.0, 0.33),
}


def default_database(z: float = 150.0) -> LuminaireDatabase:
    recs = []
    for led_id, (x, y) in DEFAULT_LAYOUT.items():
        f, d = DEFAULT_PROFILES[led_id]
        recs.append(LuminaireRecord(led_id, WorldPoint(x, y, z), ModulationProfile(f, d)))
    return LuminaireDatabase(recs)


def reference_roi_height(render: RenderConfig, led_radius_cm: float = 5.0, H: float = 150.0,
                         f0: float = 0.4, dx: float = 3.2e-4) -> float:
    """Disk diameter in working pixels for a lamp straight overhead."""
    return 2.0 * led_radius_cm * f0 / H / (dx * render.scale)


def _row_model(profile: ModulationProfile, render: RenderConfig):
    """Bright mask over one pulse period, threshold, band-centre phase, mean/peak ratio.

    The phase is where the fundamental of the exposure-integrated waveform
    peaks, as a fraction of the period from absolute time zero.
    """
    P = profile.period
    tau = np.arange(_PHASE_GRID) * (P / _PHASE_GRID)
    level = profile.integrate(tau, render.t_exp)
    lo, hi = float(level.min()), float(level.max())
    if hi <= 0 or hi - lo < MIN_CONTRAST * hi:
        return level, None, None, 1.0
    thr = otsu_threshold(level)
    ratio = float(level.mean() / hi)
    c1 = np.sum(level * np.exp(-2j * np.pi * np.arange(_PHASE_GRID) / _PHASE_GRID))
    # for level = cos(w tau - phi) the first Fourier coefficient has angle -phi
    phase = (-math.atan2(c1.imag, c1.real) / (2 * np.pi)) % 1.0
    return level > thr, thr, phase, ratio


def expected_features(profile: ModulationProfile, render: RenderConfig, roi_height: float) -> StripeFeatures:
    """Analytic stripe signature of ``profile`` for a lamp disk of diameter ``roi_height`` rows."""
    f = profile.pulse_frequency
    cycles_per_row = f * render.row_time
    if cycles_per_row >= 1.0:
        raise UnresolvableStripeError(
            f"{profile.frequency} Hz needs {1 / cycles_per_row:.2f} rows per period"
        )
    area_full = math.pi / 4.0 * roi_height**2
    bright, thr, phase, ratio = _row_model(profile, render)
    if thr is None:
        return StripeFeatures(1, area_full, 1.0, 0.0, None, roi_height)
    count = max(1, int(math.floor(roi_height * cycles_per_row)))
    return StripeFeatures(
        stripe_count=count,
        roi_area=area_full * float(np.mean(bright)),
        bright_ratio=ratio,
        phase_coefficient=float(phase),
        period_rows=1.0 / cycles_per_row,
        roi_height=roi_height,
    )


def synthesize_stripes(
    profile: ModulationProfile,
    render: RenderConfig,
    disk: tuple[float, float, float],
    t0: float = 0.0,
    rng: np.random.Generator | None = None,
    supersample: int = 4,
) -> Patch:
    """Render one lamp disk ``(cx, cy, r)`` on the working raster of ``render``.

    Each row integrates the waveform over its exposure window; the disk edge is
    anti-aliased by ``supersample`` x ``supersample`` coverage sampling.
    """
    cx, cy, r = disk
    W, Hh = render.resolution
    if r <= 0:
        return Patch(np.zeros((0, 0), np.uint8), 0, 0)
    c0 = max(0, int(math.floor(cx - r - 1)))
    c1 = min(W, int(math.ceil(cx + r + 2)))
    r0 = max(0, int(math.floor(cy - r - 1)))
    r1 = min(Hh, int(math.ceil(cy + r + 2)))
    if c1 <= c0 or r1 <= r0:
        return Patch(np.zeros((0, 0), np.uint8), r0, c0)
    n = supersample
    offs = (np.arange(n) + 0.5) / n - 0.5
    us = (np.arange(c0, c1)[:, None] + offs[None, :]).ravel()
    vs = (np.arange(r0, r1)[:, None] + offs[None, :]).ravel()
    inside = ((vs[:, None] - cy) ** 2 + (us[None, :] - cx) ** 2) <= r * r
    cover = inside.reshape(r1 - r0, n, c1 - c0, n).mean(axis=(1, 3))

    rows = np.arange(r0, r1)
    # the waveform is periodic, so fold t0 into one period: this keeps large
    # absolute times precise and makes whole-period shifts exact
    starts = _row_times(render, rows, math.fmod(t0, profile.period))
    if render.band_jitter_px > 0:
        rng = rng or np.random.default_rng(render.seed)
        starts = starts + rng.normal(0.0, render.band_jitter_px, size=starts.shape) * render.row_time
    level = profile.integrate(starts, render.t_exp)
    img = render.peak * cover * level[:, None]
    return Patch(img, r0, c0)


def _row_times(render: RenderConfig, rows: np.ndarray, t0: float) -> np.ndarray:
    if render.is_native:
        return t0 + rows.astype(float) * render.t_row
    return t0 + render.native_row(rows).astype(float) * render.t_row


def _region_rows(fit, patch_shape, row0, col0):
    """Rows and column spans that lie well inside the fitted disk."""
    h, w = patch_shape
    out = []
    for r in range(h):
        dv = row0 + r - fit.cy
        half2 = (fit.r - 1.0) ** 2 - dv * dv
        if half2 <= 0:
            continue
        half = math.sqrt(half2)
        a = int(math.ceil(fit.cx - 0.6 * half - col0))
        b = int(math.floor(fit.cx + 0.6 * half - col0))
        a, b = max(a, 0), min(b, w - 1)
        if b >= a:
            out.append((r, a, b))
    return out


def extract_features(
    frame: Frame | np.ndarray,
    roi: SearchWindow,
    render: RenderConfig,
    threshold_policy: str = "otsu",
    t0: float | None = None,
) -> StripeFeatures:
    """Measure the stripe signature inside ``roi``."""
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    if t0 is None:
        t0 = frame.t0 if isinstance(frame, Frame) else 0.0
    H, W = pixels.shape
    x0, y0, x1, y1 = roi.bounds(W, H)
    if (roi.cx - roi.w / 2 < -0.5 or roi.cy - roi.h / 2 < -0.5 or roi.cx + roi.w / 2 > W + 0.5
            or roi.cy + roi.h / 2 > H + 0.5 or x1 <= x0 or y1 <= y0):
        raise DomainError("ROI outside the frame")
    return features_from_patch(Patch(pixels[y0:y1, x0:x1], y0, x0), render, t0, threshold_policy)


def features_from_patch(patch: Patch, render: RenderConfig, t0: float = 0.0,
                        threshold_policy: str = "otsu") -> StripeFeatures:
    sub = np.asarray(patch.pixels, dtype=float)
    if sub.size == 0 or sub.max() <= 0:
        raise NoSignalError("ROI is dark")
    if threshold_policy not in ("otsu", "half"):
        raise DomainError(f"unknown threshold policy {threshold_policy!r}")
    lit = sub > 0.5 * sub.max()
    full_cover = lit[0].any() and lit[-1].any() and lit[:, 0].any() and lit[:, -1].any()
    fit = None if full_cover else fit_disk(sub, 0, 0)
    if fit is not None:
        spans = _region_rows(fit, sub.shape, 0, 0)
        height = 2.0 * fit.r
        mask = _disk_mask(fit, sub.shape)
    else:
        spans = [(r, 0, sub.shape[1] - 1) for r in range(sub.shape[0])]
        height = float(sub.shape[0])
        mask = np.ones(sub.shape, dtype=bool)
    if not spans:
        raise NoSignalError("no usable rows in ROI")
    rows = np.array([s[0] for s in spans])
    profile = np.array([sub[r, a : b + 1].mean() for r, a, b in spans])

    pmax, pmin = float(profile.max()), float(profile.min())
    if pmax <= 0:
        raise NoSignalError("ROI is dark")
    if pmax - pmin < MIN_CONTRAST * pmax:
        area = float(((sub > 0.5 * pmax) & mask).sum())
        return StripeFeatures(1, area, 1.0, 0.0, None, height)

    thr = otsu_threshold(profile) if threshold_policy == "otsu" else 0.5 * (pmax + pmin)
    # Mean over peak of the row profile: equals the duty cycle for sharp
    # stripes and stays unbiased under exposure blur and coarse row sampling.
    ratio = float(np.clip(profile.mean() / pmax, 0.0, 1.0))
    area = float(((sub > thr) & mask).sum())

    times = _row_times(render, rows + patch.row0, t0)
    fitted = _fit_fundamental(times, profile, render)
    if fitted is None:
        return StripeFeatures(1, area, ratio, 0.0, None, height)
    freq, centre, level = fitted
    if len(profile) * freq * render.row_time < 1.0:
        # less than one period in view: the window mean is biased by where the
        # bands fall, while the fitted offset is the mean over a whole period
        ratio = float(np.clip(level / pmax, 0.0, 1.0))
    period = 1.0 / (freq * render.row_time)
    # Bright bands whose centre falls inside the lamp's row extent; this is
    # floor(height / period) or one more, for any stripe alignment.
    top = fit.cy - fit.r if fit is not None else -0.5
    first = _time_to_row(render, centre, t0) - patch.row0
    k_lo = math.ceil((top - first) / period)
    k_hi = math.floor((top + height - first) / period)
    return StripeFeatures(
        stripe_count=max(1, k_hi - k_lo + 1),
        roi_area=area,
        bright_ratio=ratio,
        phase_coefficient=(centre * freq) % 1.0,
        period_rows=period,
        roi_height=height,
        band_centre_time=centre,
    )


def _fit_fundamental(times: np.ndarray, y: np.ndarray, render: RenderConfig,
                     oversample: int = 8) -> tuple[float, float, float] | None:
    """Least-squares sinusoid (plus offset) through the row profile.

    Returns the best frequency (Hz), the absolute time of the bright-band
    centre nearest the middle of the profile and the fitted offset (the mean
    level over one period), or ``None`` when no frequency
    explains the profile.  Fitting against row times rather than row indices
    keeps the uneven row spacing of a resized frame exact.
    """
    t_mid = 0.5 * (times[0] + times[-1])
    t = times - t_mid
    span = float(t[-1] - t[0])
    if span <= 0 or len(t) < 4:
        return None
    y_mean = float(y.mean())
    y = y - y_mean
    f_lo = 0.5 / span
    # Resized frames sample native rows unevenly, which breaks the mirror
    # symmetry about the mean-row Nyquist rate; search up to one cycle per row.
    f_hi = (0.5 if render.is_native else 1.0) / render.row_time
    step = 1.0 / (oversample * span)
    grid = np.arange(f_lo, f_hi + step, step)

    def power(f):
        f = np.atleast_1d(f)
        w = 2 * np.pi * f[:, None] * t[None, :]
        c, s = np.cos(w), np.sin(w)
        n = float(len(t))
        sc, ss = c.sum(1), s.sum(1)
        XtX = np.empty((len(f), 3, 3))
        XtX[:, 0, 0] = n
        XtX[:, 0, 1] = XtX[:, 1, 0] = sc
        XtX[:, 0, 2] = XtX[:, 2, 0] = ss
        XtX[:, 1, 1] = (c * c).sum(1)
        XtX[:, 2, 2] = n - XtX[:, 1, 1]
        XtX[:, 1, 2] = XtX[:, 2, 1] = (c * s).sum(1)
        # y is centred, so the offset column contributes nothing to X'y
        Xty = np.stack([np.zeros(len(f)), c @ y, s @ y], axis=1)
        beta = np.linalg.solve(XtX + 1e-12 * np.eye(3), Xty[..., None])[..., 0]
        return (beta * Xty).sum(1), beta

    pw, _ = power(grid)
    k = int(np.argmax(pw))
    res = minimize_scalar(lambda f: -power(f)[0][0], method="bounded",
                          bounds=(grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]))
    f_best = float(res.x)
    _, beta = power(f_best)
    c, a, b = beta[0]
    if math.hypot(a, b) <= 0:
        return None
    # a cos(wt) + b sin(wt) peaks at wt = atan2(b, a)
    return f_best, t_mid + math.atan2(b, a) / (2 * np.pi * f_best), y_mean + c


def _time_to_row(render: RenderConfig, t: float, t0: float) -> float:
    """Inverse of ``RenderConfig.row_start_time``."""
    native = (t - t0) / render.t_row
    if render.is_native:
        return native
    return (native + 0.5) / render.scale - 0.5


def _disk_mask(fit, shape):
    v, u = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (u - fit.cx) ** 2 + (v - fit.cy) ** 2 <= fit.r**2


def _circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def _measured_phase(f: StripeFeatures, profile: ModulationProfile) -> float:
    """Band-centre phase of ``f`` folded with the candidate profile's period."""
    if f.band_centre_time is not None:
        return (f.band_centre_time / profile.period) % 1.0
    return f.phase_coefficient


def _within(measured: StripeFeatures, expected: StripeFeatures, prof_m: ModulationProfile | None,
            prof_e: ModulationProfile, tol: Tolerances) -> bool:
    if abs(measured.stripe_count - expected.stripe_count) > tol.stripe_count:
        return False
    if abs(measured.bright_ratio - expected.bright_ratio) > tol.bright_ratio:
        return False
    if expected.roi_area > 0 and abs(measured.roi_area / expected.roi_area - 1.0) > tol.area_ratio:
        return False
    if (measured.period_rows is None) != (expected.period_rows is None):
        # one side striped, the other a steady lamp
        return False
    if measured.period_rows and expected.period_rows:
        if abs(measured.period_rows / expected.period_rows - 1.0) > tol.period_ratio:
            return False
        if _circular_distance(_measured_phase(measured, prof_e), expected.phase_coefficient) > tol.phase:
            return False
    return True


def match_id(f: StripeFeatures, db: LuminaireDatabase, render: RenderConfig | None = None) -> str | None:
    """Return the unique matching luminaire id, or ``None`` when nothing matches."""
    render = render or RenderConfig()
    height = f.roi_height or reference_roi_height(render)
    hits = []
    for rec in db.records:
        try:
            exp = expected_features(rec.profile, render, height)
        except UnresolvableStripeError:
            continue
        if _within(f, exp, None, rec.profile, db.tolerances):
            hits.append(rec.id)
    if not hits:
        return None
    if len(hits) > 1:
        raise AmbiguousIdError(f"features match {hits}")
    return hits[0]


def recognize(patch: Patch, db: LuminaireDatabase, render: RenderConfig, t0: float) -> str | None:
    """Extract-then-match convenience used by the ID service; dark patches give ``None``."""
    try:
        return match_id(features_from_patch(patch, render, t0), db, render)
    except NoSignalError:
        return None
