"""Coarse-to-fine acquisition and feedback tracking of one moving point target."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import Radar, scan_detection_map
from .io import write_csv
from .scene import Point3, Scatterer, Scene, xyz
from .wavefield import SynthesisOptions


class TrackerError(ValueError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    plane_z: float = 3.3
    coarse_spacing: float = 0.3
    fine_window: float = 0.6
    fine_spacing: float = 0.05
    track_window: float = 0.5
    reacquire_threshold: float = 6.0  # dB
    frame_interval: float = 0.8
    fov_center: tuple[float, float] = (0.0, 0.0)
    fov_width: float = 1.8
    gate: float = 0.5  # fraction of the peak magnitude
    floor_percentile: float = 90.0

    def __post_init__(self) -> None:
        if not 0 < self.fine_spacing < self.coarse_spacing:
            raise TrackerError("fine_spacing must be positive and below coarse_spacing")
        if not (self.fine_window > 0 and self.track_window > 0 and self.fov_width > 0):
            raise TrackerError("windows must be positive")
        if not self.frame_interval > 0:
            raise TrackerError("frame_interval must be positive")
        if not 0 < self.gate <= 1:
            raise TrackerError("gate must lie in (0, 1]")
        for span in (self.coarse_spacing, self.fine_window, self.track_window, self.fov_width):
            q = span / self.fine_spacing
            if abs(q - round(q)) > 1e-9:
                raise TrackerError("spacings and windows must be multiples of fine_spacing")


@dataclass(frozen=True)
class TrackState:
    estimate: Point3 | None
    status: str = "searching"  # or "locked"
    last_peak_to_background: float = -math.inf
    history: tuple = ()  # (frame index, estimate) pairs, append-only

    def advance(self, frame: int, estimate, status: str, ptb: float) -> "TrackState":
        est = Point3.of(estimate) if estimate is not None else None
        hist = self.history + ((frame, est),) if est is not None else self.history
        return TrackState(est, status, ptb, hist)


# -- trajectories ------------------------------------------------------------------

# pen paths in a 0.7 x 1 box, drawn without lifting
LETTER_PATHS = {
    "P": ((0, 0), (0, 1), (0.7, 1), (0.7, 0.5), (0, 0.5)),
    "K": ((0, 1), (0, 0), (0, 0.5), (0.7, 1), (0, 0.5), (0.7, 0)),
    "U": ((0, 1), (0, 0), (0.7, 0), (0.7, 1)),
    "E": ((0.7, 1), (0, 1), (0, 0.5), (0.5, 0.5), (0, 0.5), (0, 0), (0.7, 0)),
    "R": ((0, 0), (0, 1), (0.7, 1), (0.7, 0.5), (0, 0.5), (0.7, 0)),
    "S": ((0.7, 1), (0, 1), (0, 0.5), (0.7, 0.5), (0.7, 0), (0, 0)),
}


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple  # ((t, (x, y, z)), ...)
    letter: str = "custom"
    speed: float = 0.0

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise TrackerError("trajectory needs at least one waypoint")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise TrackerError("waypoint timestamps must increase")

    @property
    def duration(self) -> float:
        return self.waypoints[-1][0] - self.waypoints[0][0]

    def position_at(self, t: float) -> np.ndarray:
        ts = np.array([w[0] for w in self.waypoints])
        P = np.array([xyz(w[1]) for w in self.waypoints])
        return np.array([np.interp(t, ts, P[:, i]) for i in range(3)])

    def frame_times(self, interval: float) -> np.ndarray:
        n = int(math.floor(self.duration / interval + 1e-9)) + 1
        return self.waypoints[0][0] + interval * np.arange(n)


def polyline_trajectory(points: Sequence, speed: float, letter: str = "custom", t0: float = 0.0) -> Trajectory:
    P = [xyz(p) for p in points]
    if not speed > 0:
        raise TrackerError("speed must be positive")
    t = t0
    wps = [(t, tuple(P[0]))]
    for a, b in zip(P, P[1:]):
        d = float(np.linalg.norm(b - a))
        if d == 0:
            continue
        t += d / speed
        wps.append((t, tuple(b)))
    return Trajectory(tuple(wps), letter, speed)


def letter_trajectory(letter: str, speed: float = 0.2, z: float = 3.3, size: float = 1.0,
                      center: tuple[float, float] = (0.0, 0.0)) -> Trajectory:
    """Constant-speed flight along a letter drawn in a ``size`` box centred on ``center``."""
    if letter not in LETTER_PATHS:
        raise TrackerError(f"no template for letter {letter!r}")
    pts = [(center[0] + size * (u - 0.35), center[1] + size * (v - 0.5), z) for u, v in LETTER_PATHS[letter]]
    return polyline_trajectory(pts, speed, letter)


# -- scanning ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Background:
    """Static-scene detection values on the fine lattice around the field of view."""

    cfg: TrackerConfig
    origin: np.ndarray  # lattice node (0, 0) in x, y
    n: int
    values: np.ndarray  # (n, n), indexed [iy, ix]

    def index(self, xy: np.ndarray) -> np.ndarray:
        return np.rint((np.asarray(xy) - self.origin) / self.cfg.fine_spacing).astype(int)

    def lookup(self, pts: np.ndarray) -> np.ndarray:
        ij = self.index(pts[:, :2])
        if np.any(ij < 0) or np.any(ij >= self.n):
            raise TrackerError("scan window leaves the background lattice")
        return self.values[ij[:, 1], ij[:, 0]]


def _lattice(cfg: TrackerConfig) -> tuple[np.ndarray, int]:
    half = cfg.fov_width / 2 + max(cfg.fine_window, cfg.track_window) / 2
    k = int(round(half / cfg.fine_spacing))
    origin = np.asarray(cfg.fov_center, float) - k * cfg.fine_spacing
    return origin, 2 * k + 1


def window_points(cfg: TrackerConfig, center, width: float, spacing: float) -> np.ndarray:
    """Square window on the fine lattice, centre snapped to a node and kept inside the field of view."""
    c = np.asarray(xyz(center)[:2], float)
    lo = np.asarray(cfg.fov_center) - cfg.fov_width / 2
    hi = np.asarray(cfg.fov_center) + cfg.fov_width / 2
    c = np.clip(c, lo, hi)
    origin, _ = _lattice(cfg)
    c = origin + np.rint((c - origin) / cfg.fine_spacing) * cfg.fine_spacing
    k = int(round(width / 2 / spacing))
    offs = spacing * np.arange(-k, k + 1)
    X, Y = np.meshgrid(c[0] + offs, c[1] + offs)
    return np.stack([X.ravel(), Y.ravel(), np.full(X.size, cfg.plane_z)], axis=1)


def acquire_background(scene: Scene, cfg: TrackerConfig, codes, opts: SynthesisOptions, seed: int,
                       radar: Radar = Radar(), workers: int = 1) -> Background:
    origin, n = _lattice(cfg)
    offs = cfg.fine_spacing * np.arange(n)
    X, Y = np.meshgrid(origin[0] + offs, origin[1] + offs)
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, cfg.plane_z)], axis=1)
    m = scan_detection_map(scene.without_targets(), codes, pts, opts, seed, radar, workers)
    return Background(cfg, origin, n, m.values.reshape(n, n))


@dataclass(frozen=True, eq=False)
class Residual:
    points: np.ndarray
    values: np.ndarray

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.values) ** 2


def residual_scan(scene: Scene, pts: np.ndarray, background: Background, codes, opts, seed, radar, workers) -> Residual:
    m = scan_detection_map(scene, codes, pts, opts, seed, radar, workers)
    return Residual(pts, m.values - background.lookup(pts))


def gated_centroid(points: np.ndarray, values: np.ndarray, gate: float = 0.5) -> np.ndarray:
    """Energy centroid over cells at or above ``gate`` times the peak magnitude."""
    mag = np.abs(values)
    peak = mag.max()
    if peak == 0:
        return points[int(np.argmax(mag))].copy()
    keep = mag >= gate * peak
    w = mag[keep] ** 2
    if w.sum() == 0:
        return points[int(np.argmax(mag))].copy()
    return (points[keep] * w[:, None]).sum(axis=0) / w.sum()


def _ptb_db(peak_power: float, floor: float) -> float:
    if floor <= 0:
        return math.inf if peak_power > 0 else -math.inf
    if peak_power <= 0:
        return -math.inf
    return 10 * math.log10(peak_power / floor)


@dataclass(frozen=True)
class Candidate:
    center: np.ndarray | None
    floor: float
    peak_to_background: float
    cells: int


def coarse_scan(scene: Scene, background: Background, cfg: TrackerConfig, codes, opts: SynthesisOptions,
                seed: int, radar: Radar = Radar(), workers: int = 1, resolution: float | None = None) -> Candidate:
    """Brightest residual cell on the coarse grid, or no candidate when nothing clears the floor.

    The floor is a high percentile of residual power outside a guard of two
    resolution cells around the brightest cell.
    """
    pts = window_points(cfg, (*cfg.fov_center, cfg.plane_z), cfg.fov_width, cfg.coarse_spacing)
    res = residual_scan(scene, pts, background, codes, opts, seed, radar, workers)
    p = res.power
    i = int(np.argmax(p))
    if resolution is None:
        resolution = radar.aperture.resolution(cfg.plane_z, scene.constants)
    far = np.linalg.norm(pts[:, :2] - pts[i, :2], axis=1) > 2 * resolution
    floor = float(np.percentile(p[far], cfg.floor_percentile)) if far.any() else 0.0
    ptb = _ptb_db(float(p[i]), floor)
    center = pts[i].copy() if p[i] > 0 and ptb >= cfg.reacquire_threshold else None
    return Candidate(center, floor, ptb, len(pts))


def fine_scan(scene: Scene, center, background: Background, cfg: TrackerConfig, codes, opts: SynthesisOptions,
              seed: int, radar: Radar = Radar(), workers: int = 1, width: float | None = None) -> tuple[np.ndarray, Residual]:
    pts = window_points(cfg, center, cfg.fine_window if width is None else width, cfg.fine_spacing)
    res = residual_scan(scene, pts, background, codes, opts, seed, radar, workers)
    return gated_centroid(pts, res.values, cfg.gate), res


def track_step(scene: Scene, state: TrackState, frame: int, background: Background, floor: float,
               cfg: TrackerConfig, codes, opts: SynthesisOptions, seed: int, radar: Radar = Radar(),
               workers: int = 1) -> tuple[TrackState, int]:
    """One feedback frame around the previous estimate; returns the new state and cells scanned."""
    if state.status != "locked" or state.estimate is None:
        raise TrackerError("track_step needs a locked state")
    est, res = fine_scan(scene, state.estimate, background, cfg, codes, opts, seed, radar, workers, cfg.track_window)
    ptb = _ptb_db(float(res.power.max()), floor)
    if ptb < cfg.reacquire_threshold:
        return state.advance(frame, None, "searching", ptb), len(res.points)
    return state.advance(frame, est, "locked", ptb), len(res.points)


# -- full runs ---------------------------------------------------------------------


@dataclass(frozen=True)
class FrameRecord:
    index: int
    t: float
    truth: tuple
    estimate: tuple | None
    error: float
    status: str
    peak_to_background: float
    cells: int
    scan_time: float  # cells x coding period


@dataclass(frozen=True, eq=False)
class TrackResult:
    frames: tuple[FrameRecord, ...]
    lost_runs: tuple[tuple[int, int], ...]  # (first frame, length) of runs longer than 3 frames
    background_cells: int

    @property
    def errors(self) -> np.ndarray:
        return np.array([f.error for f in self.frames])

    @property
    def acquired_at(self) -> int | None:
        """First locked frame, or None if the target was never acquired."""
        return next((f.index for f in self.frames if f.status == "locked"), None)

    @property
    def lock_lost(self) -> bool:
        """True if any frame after the first lock is not locked."""
        k = self.acquired_at
        if k is None:
            return True
        return any(f.status != "locked" for f in self.frames[k:])

    def to_csv(self, path: str | Path) -> Path:
        rows = []
        for f in self.frames:
            est = f.estimate if f.estimate is not None else (math.nan,) * 3
            rows.append((f.index, f.t, *f.truth, *est, f.error, f.status, f.peak_to_background, f.cells, f.scan_time))
        return write_csv(path, ["frame", "t", "x", "y", "z", "est_x", "est_y", "est_z", "error", "status",
                                "ptb_db", "cells", "scan_time"], rows)


def run_track(trajectory: Trajectory, scene: Scene, cfg: TrackerConfig, codes, opts: SynthesisOptions, seed: int,
              radar: Radar = Radar(), workers: int = 1, reflectivity: complex = 1.0) -> TrackResult:
    """Background once, then acquisition and feedback tracking frame by frame.

    ``scene`` is the static template (sources, receivers, clutter); the moving
    target is added per frame at its interpolated position.  The ambient
    illumination repeats between acquisitions (one seed); receiver noise is
    drawn afresh for the background and for every frame.
    """
    T_L = codes[0].coding_duration
    bg = acquire_background(scene, cfg, codes, replace(opts, noise_realization=0), seed, radar, workers)
    state = TrackState(None)
    floor = 0.0
    frames = []
    for k, t in enumerate(trajectory.frame_times(cfg.frame_interval)):
        truth = trajectory.position_at(t)
        sc = scene.with_scatterers([Scatterer(tuple(truth), reflectivity, "target")])
        fo = replace(opts, noise_realization=k + 1)
        if state.status == "locked":
            state, cells = track_step(sc, state, k, bg, floor, cfg, codes, fo, seed, radar, workers)
        else:
            cand = coarse_scan(sc, bg, cfg, codes, fo, seed, radar, workers)
            cells = cand.cells
            if cand.center is None:
                state = state.advance(k, None, "searching", cand.peak_to_background)
            else:
                floor = cand.floor
                est, res = fine_scan(sc, cand.center, bg, cfg, codes, fo, seed, radar, workers)
                cells += len(res.points)
                state = state.advance(k, est, "locked", cand.peak_to_background)
        est = tuple(state.estimate) if state.status == "locked" else None
        err = float(np.linalg.norm(np.asarray(est[:2]) - truth[:2])) if est is not None else math.nan
        frames.append(FrameRecord(k, float(t), tuple(truth), est, err, state.status,
                                  state.last_peak_to_background, cells, cells * T_L))
    lost = []
    run = 0
    for f in frames + [None]:
        if f is not None and f.status != "locked":
            run += 1
            continue
        if run > 3:
            lost.append((frames.index(f) - run if f is not None else len(frames) - run, run))
        run = 0
    return TrackResult(tuple(frames), tuple(lost), bg.n * bg.n)


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    median: float
    p95: float
    per_frame: tuple

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, ["frame", "error"], enumerate(self.per_frame))


def trajectory_error(est: Sequence, truth: Sequence) -> ErrorSummary:
    """Per-frame distance in the tracking plane; frames without an estimate are skipped in the statistics."""
    if len(est) != len(truth):
        raise TrackerError("estimate and truth differ in frame count")
    if not len(est):
        raise TrackerError("no frames")
    errs = []
    for e, t in zip(est, truth):
        errs.append(math.nan if e is None else float(np.linalg.norm(xyz(e)[:2] - xyz(t)[:2])))
    a = np.array(errs)
    ok = a[~np.isnan(a)]
    if not ok.size:
        return ErrorSummary(math.nan, math.nan, math.nan, tuple(errs))
    return ErrorSummary(float(ok.mean()), float(np.median(ok)), float(np.percentile(ok, 95)), tuple(errs))
