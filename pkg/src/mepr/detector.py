"""Code projection, normalised cross-correlation, detection maps and SIR.

Two routes produce detection values:

* :func:`detection_value_at` synthesises both receiver signals for one focus
  point, projects the reference and correlates with an FFT;
* :func:`scan_detection_map` precomputes every path signal once and, for each
  focus point, only re-weights them with the per-point metasurface gains.

Both use the same waveform and noise realisation for every point of a map, so a
one-point map equals :func:`detection_value_at` to rounding.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from . import _kernels
from .coding import CodeError, TemporalCode
from .io import to_gray, write_csv, write_pgm
from .metasurface import (Aperture, ProgramError, STCProgram, _atom_weights, atom_positions, code_columns,
                          design_focus_mode, focus_weights, on_aperture, path_phasors, project_columns,
                          superpose_and_project)
from .scene import Point3, Scene, SceneConstants, delay_between, xyz
from .wavefield import (ComplexSignal, SynthesisOptions, check_window, envelope_at, fixed_component,
                        metasurface_paths, source_waveforms, synthesize_received)

SIR_CAP_DB = 200.0
CHUNK = 64


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class Radar:
    """Metasurface and processing settings shared by every detection."""

    aperture: Aperture = field(default_factory=Aperture)
    strategy: str = "superpose"
    designated_source: int = 0
    peak_window: int = 2
    rotation_trials: int = 16


@dataclass(frozen=True, eq=False)
class CorrelationProfile:
    lags: np.ndarray  # seconds
    values: np.ndarray
    normalization: float

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def peak(self) -> tuple[float, complex]:
        i = int(np.argmax(self.magnitude))
        return float(self.lags[i]), complex(self.values[i])

    def search(self, lag: float, window: int) -> tuple[int, complex]:
        """Index and value of the largest |R| within +-window samples of ``lag``."""
        step = self.lags[1] - self.lags[0] if self.lags.size > 1 else 1.0
        centre = int(round((lag - self.lags[0]) / step))
        lo, hi = max(0, centre - window), min(self.lags.size, centre + window + 1)
        if lo >= hi:
            raise DetectorError("expected lag falls outside the correlation profile")
        i = lo + int(np.argmax(self.magnitude[lo:hi]))
        return i, complex(self.values[i])


@dataclass(frozen=True, eq=False)
class DetectionMap:
    grid: np.ndarray  # (P, 3)
    values: np.ndarray  # (P,) complex
    meta: dict = field(default_factory=dict)
    shape: tuple[int, int] | None = None  # (rows, cols) when the grid is a raster

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float).reshape(-1, 3)
        v = np.asarray(self.values, dtype=complex).ravel()
        if g.shape[0] != v.size:
            raise DetectorError("one value per grid point required")
        if self.shape is not None and self.shape[0] * self.shape[1] != v.size:
            raise DetectorError("raster shape does not match the grid")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def normalized(self) -> np.ndarray:
        m = self.magnitude
        peak = m.max()
        return m / peak if peak > 0 else m

    def image(self) -> np.ndarray:
        shape = self.shape or (1, len(self))
        return self.normalized().reshape(shape)

    def same_grid(self, other: "DetectionMap") -> bool:
        return self.grid.shape == other.grid.shape and np.allclose(self.grid, other.grid, rtol=0, atol=1e-12)

    def argmax_point(self) -> np.ndarray:
        return self.grid[int(np.argmax(self.magnitude))]

    def to_csv(self, path: str | Path) -> Path:
        rows = ((x, y, z, v.real, v.imag) for (x, y, z), v in zip(self.grid, self.values))
        return write_csv(path, ["x", "y", "z", "re", "im"], rows)

    def to_pgm(self, path: str | Path) -> Path:
        shape = self.shape or (1, len(self))
        return write_pgm(path, to_gray(self.values).reshape(shape))


def scene_digest(scene: Scene) -> str:
    return hashlib.sha256(repr(scene).encode()).hexdigest()[:16]


# -- signal processing ------------------------------------------------------------


def project_reference(y1: ComplexSignal, c1: TemporalCode, c2: TemporalCode, tau_ref: float) -> ComplexSignal:
    """``y1 * conj(c1(t - tau_ref)) * c2(t - tau_ref)`` with cyclically extended codes."""
    if not c1.same_timing(c2):
        raise CodeError("codes differ in length or segment duration")
    t = y1.times - tau_ref
    return ComplexSignal(y1.samples * np.conj(c1(t)) * c2(t), y1.sample_rate, y1.t0)


def cross_correlate(yt1: ComplexSignal, y2: ComplexSignal, method: str = "fft") -> CorrelationProfile:
    """``R(lag) = sum_t yt1[t] conj(y2[t + lag]) / sum_t |yt1[t]|^2`` at every integer lag.

    Both records are zero outside their extent.  ``method="direct"`` evaluates
    the sum lag by lag and serves as the oracle for the FFT route.
    """
    if not math.isclose(yt1.sample_rate, y2.sample_rate, rel_tol=1e-12):
        raise DetectorError("sample rates differ")
    a, b = yt1.samples, y2.samples
    den = float(np.vdot(a, a).real)
    if den == 0.0:
        raise DetectorError("empty reference")
    lag_idx = np.arange(-(a.size - 1), b.size)
    if method == "fft":
        r = np.conj(sps.correlate(b, a, mode="full", method="fft"))
    elif method == "direct":
        r = np.empty(lag_idx.size, dtype=complex)
        for i, l in enumerate(lag_idx):
            lo, hi = max(0, -l), min(a.size, b.size - l)
            r[i] = np.vdot(b[lo + l:hi + l], a[lo:hi]) if hi > lo else 0j
    else:
        raise DetectorError(f"unknown correlation method {method!r}")
    lags = lag_idx / yt1.sample_rate + (y2.t0 - yt1.t0)
    return CorrelationProfile(lags, r / den, den)


def reference_delay(scene: Scene) -> float:
    return float(delay_between(scene.metasurface_origin, scene.receiver("reference").position, scene.constants))


def expected_lag(scene: Scene, focus) -> np.ndarray | float:
    """``tau_(m->focus) + tau_(focus->r2) - tau_(m->r1)`` for one or many focus points."""
    c = scene.constants
    r2 = scene.receiver("surveillance").position
    f = xyz(focus)
    return delay_between(scene.metasurface_origin, f, c) + delay_between(f, r2, c) - reference_delay(scene)


# -- programs -------------------------------------------------------------------


def _check_radar(scene: Scene, radar: Radar) -> None:
    scene.check_detection_ready()
    if not 0 <= radar.designated_source < len(scene.sources):
        raise DetectorError("designated source index out of range")
    if not np.allclose(radar.aperture.origin.array(), scene.metasurface_origin.array()):
        raise DetectorError("aperture origin differs from the scene's metasurface origin")


def build_program(scene: Scene, codes: tuple[TemporalCode, TemporalCode], focus, radar: Radar = Radar()) -> STCProgram:
    """Dual-mode program: (mode 1 -> reference receiver, c1), (mode 2 -> focus, c2)."""
    _check_radar(scene, radar)
    c = scene.constants
    ap = radar.aperture
    src = scene.sources[radar.designated_source].position
    m1 = design_focus_mode(ap, src, scene.receiver("reference").position, c)
    m2 = design_focus_mode(ap, src, focus, c)
    return superpose_and_project([(m1, codes[0]), (m2, codes[1])], ap.constraint, radar.strategy,
                                 ap.cols, radar.rotation_trials)


@dataclass(frozen=True, eq=False)
class Probe:
    value: complex
    lag: float
    profile: CorrelationProfile
    y1: ComplexSignal
    y2: ComplexSignal
    program: STCProgram


def probe(scene: Scene, codes: tuple[TemporalCode, TemporalCode], focus, opts: SynthesisOptions,
          seed: int, radar: Radar = Radar()) -> Probe:
    """Full reference route for one focus point, keeping the intermediate signals."""
    prog = build_program(scene, codes, focus, radar)
    ap = radar.aperture
    y1 = synthesize_received(scene, prog, scene.receiver("reference"), opts, seed, ap)
    y2 = synthesize_received(scene, prog, scene.receiver("surveillance"), opts, seed, ap)
    yt = project_reference(y1, codes[0], codes[1], reference_delay(scene))
    prof = cross_correlate(yt, y2)
    # snap the expected lag to the sample grid the same way the scan engine does
    lag0 = round(float(expected_lag(scene, focus)) * opts.sample_rate) / opts.sample_rate
    i, v = prof.search(lag0, radar.peak_window)
    return Probe(v, float(prof.lags[i]), prof, y1, y2, prog)


def detection_value_at(scene: Scene, codes: tuple[TemporalCode, TemporalCode], focus, opts: SynthesisOptions,
                       seed: int, radar: Radar = Radar()) -> complex:
    return probe(scene, codes, focus, opts, seed, radar).value


# -- scan engine ----------------------------------------------------------------


class _Signals:
    """Seed-dependent part of one acquisition: fixed components, path signals and path keys."""

    def __init__(self, scene: Scene, codes, opts: SynthesisOptions, seed: int, col: np.ndarray):
        c1, c2 = codes
        fs = opts.sample_rate
        L = check_window(scene, c1.coding_duration, opts)
        t = np.arange(L) / fs
        wf = source_waveforms(scene, opts, seed, L)
        r1, r2 = scene.receiver("reference"), scene.receiver("surveillance")
        tau_ref = reference_delay(scene)
        proj = np.conj(c1(t - tau_ref)) * c2(t - tau_ref)
        p1 = metasurface_paths(scene, r1, opts, wf, L)
        p2 = metasurface_paths(scene, r2, opts, wf, L)
        self.F1 = proj * fixed_component(scene, r1, opts, seed, wf, L)
        self.F2 = fixed_component(scene, r2, opts, seed, wf, L)
        self.E1 = np.array([proj * p.leg * p.envelope for p in p1], dtype=complex).reshape(len(p1), L)
        self.E2 = np.array([p.leg * p.envelope for p in p2], dtype=complex).reshape(len(p2), L)
        self.S1 = np.array([col[c1.segment_index(t - p.code_delay)] for p in p1], dtype=np.int64).reshape(len(p1), L)
        self.S2 = np.array([col[c1.segment_index(t - p.code_delay)] for p in p2], dtype=np.int64).reshape(len(p2), L)
        self.keys1 = [(tuple(scene.sources[p.source].position), p.obs) for p in p1]
        self.keys2 = [(tuple(scene.sources[p.source].position), p.obs) for p in p2]


def _geometry_key(scene: Scene, radar: Radar) -> tuple:
    return (scene.constants, scene.metasurface_origin, scene.sources[radar.designated_source].position,
            scene.receiver("reference").position, scene.receiver("surveillance").position)


class _ScanModel:
    """Acquisitions that share codes, radar and receiver geometry, scanned over the same points.

    The metasurface program and the per-channel gains depend only on the
    geometry, so they are computed once per chunk of points for the union of
    the distinct (source, observation point) channels of all acquisitions.
    """

    def __init__(self, acquisitions: Sequence[tuple[Scene, SynthesisOptions, int]], codes, radar: Radar):
        c1, c2 = codes
        if not c1.same_timing(c2):
            raise CodeError("codes differ in length or segment duration")
        if not acquisitions:
            raise DetectorError("no acquisitions to scan")
        scene = acquisitions[0][0]
        for sc, _, _ in acquisitions:
            _check_radar(sc, radar)
            if _geometry_key(sc, radar) != _geometry_key(scene, radar):
                raise DetectorError("batched acquisitions must share the designated source and receivers")
        self.scene, self.radar = scene, radar
        self.sample_rate = acquisitions[0][1].sample_rate
        if any(o.sample_rate != self.sample_rate for _, o, _ in acquisitions):
            raise DetectorError("batched acquisitions must share the sample rate")
        self.V, self.counts, col = code_columns(codes)
        self.signals = [_Signals(sc, codes, o, sd, col) for sc, o, sd in acquisitions]
        union: dict = {}
        for sig in self.signals:
            for k in sig.keys1 + sig.keys2:
                union.setdefault(k, len(union))
        self.idx = [(np.array([union[k] for k in sig.keys1], dtype=np.int64),
                     np.array([union[k] for k in sig.keys2], dtype=np.int64)) for sig in self.signals]
        ap = radar.aperture
        self.atoms = atom_positions(ap)
        c = scene.constants
        self.H = np.array([path_phasors(self.atoms, src, obs, c) for src, obs in union], dtype=complex)
        self.H = self.H.reshape(len(union), self.atoms.shape[0])
        self.src = scene.sources[radar.designated_source].position
        self.u1 = focus_weights(self.atoms, self.src, scene.receiver("reference").position, c)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Detection values (A, P) for every acquisition at ``points``."""
        pts = np.atleast_2d(points)
        ap = self.radar.aperture
        if np.any(on_aperture(ap, pts)):
            raise ProgramError("source and focus must lie off the aperture surface")
        f2 = focus_weights(self.atoms, self.src, pts, self.scene.constants)
        F = np.stack([np.broadcast_to(self.u1, f2.shape), f2], axis=1)
        U = _atom_weights(F, self.radar.strategy, ap.cols)
        Q, _, _ = project_columns(U, self.V, self.counts, ap.constraint, self.radar.rotation_trials)
        G = np.einsum("un,pnj->puj", self.H, Q)
        lag0 = np.rint(expected_lag(self.scene, pts) * self.sample_rate).astype(np.int64)
        out = np.empty((len(self.signals), pts.shape[0]), dtype=complex)
        for a, (sig, (i1, i2)) in enumerate(zip(self.signals, self.idx)):
            vals, _, energy = _kernels.scan_points(sig.F1, sig.F2, sig.E1, sig.S1, sig.E2, sig.S2,
                                                   np.ascontiguousarray(G[:, i1]), np.ascontiguousarray(G[:, i2]),
                                                   lag0, self.radar.peak_window)
            if np.any(energy == 0.0):
                raise DetectorError("empty reference")
            out[a] = vals
        return out


_WORKER_MODEL: _ScanModel | None = None


def _init_worker(model: _ScanModel) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _eval_chunk(points: np.ndarray) -> np.ndarray:
    return _WORKER_MODEL.evaluate(points)


def _grid_array(grid) -> np.ndarray:
    pts = np.asarray([tuple(xyz(p)) for p in grid] if not isinstance(grid, np.ndarray) else grid, dtype=float)
    pts = pts.reshape(-1, 3)
    if pts.shape[0] == 0:
        raise DetectorError("empty scan grid")
    return pts


def _meta(scene: Scene, codes, seed: int) -> dict:
    return {
        "T_L": codes[0].coding_duration,
        "M": codes[0].length,
        "family": codes[0].family,
        "seed": int(seed),
        "scene": scene_digest(scene),
    }


def scan_detection_maps(acquisitions: Sequence[tuple[Scene, SynthesisOptions, int]],
                        codes: tuple[TemporalCode, TemporalCode], grid, radar: Radar = Radar(), workers: int = 1,
                        shape: tuple[int, int] | None = None) -> list[DetectionMap]:
    """One detection map per (scene, options, seed) acquisition over a shared grid.

    The scenes may differ in scatterers, extra sources and noise, but must
    share the designated source and both receivers.  Points are evaluated in
    fixed chunks, so the result does not depend on the number of workers.
    """
    pts = _grid_array(grid)
    if any(o.fidelity == "exact" for _, o, _ in acquisitions):
        maps = []
        for sc, o, sd in acquisitions:
            vals = [detection_value_at(sc, codes, p, o, sd, radar) for p in pts]
            maps.append(DetectionMap(pts, np.array(vals), _meta(sc, codes, sd), shape))
        return maps
    model = _ScanModel(acquisitions, codes, radar)
    chunks = [pts[i:i + CHUNK] for i in range(0, pts.shape[0], CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model,)) as ex:
            parts = list(ex.map(_eval_chunk, chunks))
    else:
        parts = [model.evaluate(c) for c in chunks]
    vals = np.concatenate(parts, axis=1)
    return [DetectionMap(pts, vals[a], _meta(sc, codes, sd), shape) for a, (sc, _, sd) in enumerate(acquisitions)]


def scan_detection_map(scene: Scene, codes: tuple[TemporalCode, TemporalCode], grid, opts: SynthesisOptions,
                       seed: int, radar: Radar = Radar(), workers: int = 1,
                       shape: tuple[int, int] | None = None) -> DetectionMap:
    """Detection value for every grid point, in grid order."""
    return scan_detection_maps([(scene, opts, seed)], codes, grid, radar, workers, shape)[0]


# -- metrics --------------------------------------------------------------------


def default_guard(truths: Sequence, aperture: Aperture = Aperture(), constants: SceneConstants = SceneConstants()) -> float:
    """``2 (lambda / D) R`` with R the mean range of the truths from the aperture."""
    R = float(np.mean([np.linalg.norm(xyz(t) - aperture.origin.array()) for t in truths]))
    return 2.0 * aperture.resolution(R, constants)


def sir(dmap: DetectionMap, truths: Sequence, guard_radius: float | None = None,
        aperture: Aperture = Aperture(), constants: SceneConstants = SceneConstants()) -> float:
    """Mean power at the cells nearest each truth over mean power outside every guard disc, in dB."""
    if not truths:
        raise DetectorError("SIR needs at least one truth point")
    if guard_radius is None:
        guard_radius = default_guard(truths, aperture, constants)
    if not guard_radius > 0:
        raise DetectorError("guard radius must be positive")
    T = np.array([xyz(t) for t in truths]).reshape(-1, 3)
    d = np.linalg.norm(dmap.grid[:, None, :] - T[None, :, :], axis=-1)
    power = dmap.magnitude ** 2
    peak = power[np.argmin(d, axis=0)].mean()
    outside = np.all(d > guard_radius, axis=1)
    if not outside.any():
        raise DetectorError("no grid cells outside the guard discs")
    rest = power[outside].mean()
    if rest == 0.0:
        return SIR_CAP_DB if peak > 0 else 0.0
    if peak == 0.0:
        return -SIR_CAP_DB
    return float(np.clip(10.0 * math.log10(peak / rest), -SIR_CAP_DB, SIR_CAP_DB))


def line_points(center, direction, half_span: float, cell: float) -> np.ndarray:
    """Points ``center + k cell u`` for |k cell| <= half_span, u the unit direction."""
    u = np.asarray(direction, dtype=float)
    if not np.linalg.norm(u) > 0 or not cell > 0:
        raise DetectorError("line needs a nonzero direction and a positive cell")
    u = u / np.linalg.norm(u)
    n = int(math.floor(half_span / cell + 1e-9))
    return xyz(center) + np.outer(cell * np.arange(-n, n + 1), u)


@dataclass(frozen=True)
class PairResolution:
    resolved: bool
    peaks: tuple  # grid indices of the two local maxima, or () when unresolved
    values: tuple  # their magnitudes


def local_maxima(mag: np.ndarray) -> np.ndarray:
    """Interior indices of a 1-D profile not below either neighbour."""
    m = np.asarray(mag, dtype=float)
    if m.size < 3:
        return np.array([], dtype=int)
    inner = (m[1:-1] >= m[:-2]) & (m[1:-1] >= m[2:])
    return np.flatnonzero(inner) + 1


def resolve_pair(dmap: DetectionMap, a, b, tolerance: float) -> PairResolution:
    """Resolved when the local maxima of |map| nearest to each truth are distinct and within ``tolerance``.

    ``dmap`` must be a line scan in grid order (see ``line_points``).  Ties in
    distance go to the brighter maximum, so coincident truths share one peak.
    """
    mag = dmap.magnitude
    lm = local_maxima(mag)
    if lm.size < 2:
        return PairResolution(False, (), ())
    tol = tolerance * (1 + 1e-9)
    picks = []
    for truth in (a, b):
        d = np.linalg.norm(dmap.grid[lm] - xyz(truth), axis=1)
        k = min(range(lm.size), key=lambda i: (round(d[i] / tol, 9), -mag[lm[i]]))
        if d[k] > tol:
            return PairResolution(False, (), ())
        picks.append(int(lm[k]))
    if picks[0] == picks[1]:
        return PairResolution(False, (), ())
    return PairResolution(True, tuple(picks), tuple(float(mag[i]) for i in picks))


@dataclass(frozen=True)
class CrossTermReport:
    """The signal energy and the three cross terms the detector relies on being small."""

    signal_energy: float
    surveillance_term: float  # |int c2 n2* s|
    reference_term: float  # |int c1* n1 s*|
    mixed_term: float  # |int c1* c2 n1 n2*|

    @property
    def ratios(self) -> tuple[float, float, float]:
        def r(x):
            return math.inf if x == 0 else self.signal_energy / x

        return r(self.surveillance_term), r(self.reference_term), r(self.mixed_term)

    @property
    def dominant_ratio(self) -> float:
        """Signal energy over the largest cross term."""
        return min(self.ratios)


def validate_cross_terms(scene: Scene, codes: tuple[TemporalCode, TemporalCode], opts: SynthesisOptions,
                         seed: int, radar: Radar = Radar()) -> CrossTermReport:
    """Measure the cross terms from physically synthesised n1 and n2.

    n1, n2 are the unmodulated components (direct paths, direct scatter,
    noise).  Codes enter as unit-magnitude states aligned with the reference
    path (c1) and with the first target's path (c2, or the reference path when
    the scene has no target); s is the designated source's envelope aligned
    the same way.
    """
    _check_radar(scene, radar)
    c = scene.constants
    c1, c2 = codes
    fs = opts.sample_rate
    L = check_window(scene, c1.coding_duration, opts)
    t = np.arange(L) / fs
    wf = source_waveforms(scene, opts, seed, L)
    r1, r2 = scene.receiver("reference"), scene.receiver("surveillance")
    n1 = fixed_component(scene, r1, opts, seed, wf, L)
    n2 = fixed_component(scene, r2, opts, seed, wf, L)
    src = scene.sources[radar.designated_source]
    s_wave = wf[radar.designated_source]
    tau_sm = float(delay_between(src.position, scene.metasurface_origin, c))
    tau_1 = reference_delay(scene)
    if scene.targets:
        u = scene.targets[0].position
        tau_2 = float(delay_between(scene.metasurface_origin, u, c) + delay_between(u, r2.position, c))
    else:
        tau_2 = tau_1
    s1 = envelope_at(s_wave, t - tau_sm - tau_1)
    s2 = envelope_at(s_wave, t - tau_sm - tau_2)
    b1 = c1.states[c1.segment_index(t - tau_1)]
    b2_ref = c2.states[c2.segment_index(t - tau_1)]
    b2 = c2.states[c2.segment_index(t - tau_2)]
    dt = 1.0 / fs
    return CrossTermReport(
        signal_energy=float(np.sum(np.abs(s1) ** 2) * dt),
        surveillance_term=float(abs(np.sum(b2 * np.conj(n2) * s2)) * dt),
        reference_term=float(abs(np.sum(np.conj(b1) * n1 * np.conj(s1))) * dt),
        mixed_term=float(abs(np.sum(np.conj(b1) * b2_ref * n1 * np.conj(n2))) * dt),
    )
