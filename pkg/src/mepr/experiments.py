"""Experiments driven by a ScenarioConfig: SIR sweep, two-target resolution, imaging, tracking, probe.

Each run writes CSV and PGM files into an output directory, then a
manifest.json listing the config, seeds and output digests.  Monte Carlo
seeds come from ``derive_seed(master, experiment, index)`` and are shared
across code families and coding lengths (common random numbers).
"""
from __future__ import annotations

import hashlib
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ScenarioConfig, _complex, config_digest
from .detector import DetectionMap, line_points, probe, resolve_pair, scan_detection_maps, sir
from .imaging import (format_frame_time, glyph_cells, image_contrast, image_series, interference_study, peak_cells,
                      rasterize_letter)
from .io import write_csv, write_json_atomic
from .scene import Scatterer, xyz
from .tracker import letter_trajectory, run_track, trajectory_error


def derive_seed(master: int, experiment: str, index: int) -> int:
    """Child seed from (master, experiment, index), independent of execution order."""
    h = hashlib.blake2b(f"{int(master)}:{experiment}:{int(index)}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    experiment: str
    config: ScenarioConfig
    outdir: Path
    argv: list = field(default_factory=lambda: list(sys.argv))
    started: float = field(default_factory=time.time)
    outputs: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, *paths: Path) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def write(self) -> Path:
        payload = {
            "experiment": self.experiment,
            "config_digest": config_digest(self.config),
            "code_version": code_version(),
            "master_seed": self.config.seed,
            "seeds": self.seeds,
            "argv": self.argv,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(self.started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "config": self.config.model_dump(mode="json"),
            "notes": self.notes,
            "outputs": [{"path": str(p.relative_to(self.outdir)), "sha256": _sha256(p)} for p in self.outputs],
        }
        return write_json_atomic(self.outdir / "manifest.json", payload)


def _require(cfg: ScenarioConfig, block: str):
    b = getattr(cfg, block)
    if b is None:
        raise ValueError(f"scenario {cfg.name!r} has no {block!r} block")
    return b


def _seeds(cfg: ScenarioConfig, name: str, n: int) -> list[int]:
    return [derive_seed(cfg.seed, name, k) for k in range(n)]


def _scan_family(cfg, scene, family: str, M: int, seeds: Sequence[int], grid, opts, radar, workers,
                 shape=None) -> list[DetectionMap]:
    """Maps for every seed; binary codes depend on the seed, so those scans run one by one."""
    if family == "binary":
        return [scan_detection_maps([(scene, opts, s)], cfg.build_codes(family, M, s), grid, radar, workers, shape)[0]
                for s in seeds]
    return scan_detection_maps([(scene, opts, s) for s in seeds], cfg.build_codes(family, M), grid, radar,
                               workers, shape)


def square_grid(center, width: float, spacing: float) -> tuple[np.ndarray, tuple[int, int]]:
    """Square grid in the plane z = center.z; rows from the top (largest y)."""
    c = xyz(center)
    n = int(round(width / spacing)) + 1
    offs = spacing * np.arange(n) - width / 2
    X, Y = np.meshgrid(c[0] + offs, c[1] - offs)
    return np.stack([X.ravel(), Y.ravel(), np.full(X.size, c[2])], axis=1), (n, n)


# -- sweep over coding length --------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    rows: tuple  # (family, M, T_L, seed_index, seed, sir_db)
    maps: dict  # (family, M) -> map of the first seed

    def medians(self) -> dict:
        out: dict = {}
        for fam, M, *_ in self.rows:
            out.setdefault((fam, M), [])
        for fam, M, _, _, _, v in self.rows:
            out[(fam, M)].append(v)
        return {k: float(np.median(v)) for k, v in out.items()}

    def curve(self, family: str) -> tuple[list[int], list[float]]:
        med = self.medians()
        Ms = sorted(M for f, M in med if f == family)
        return Ms, [med[(family, M)] for M in Ms]


def sweep_tl(cfg: ScenarioConfig, workers: int | None = None) -> SweepResult:
    sw = _require(cfg, "sweep")
    scene, radar, opts = cfg.build_scene(), cfg.build_radar(), cfg.build_options()
    truths = [t.position for t in scene.targets]
    if not truths:
        raise ValueError("the SIR sweep needs at least one target in the scene")
    grid, shape = square_grid(sw.grid.center, sw.grid.width, sw.grid.spacing)
    seeds = _seeds(cfg, "sweep-tl", sw.seeds)
    rows, maps = [], {}
    for fam in sw.families:
        for M in sw.lengths:
            ms = _scan_family(cfg, scene, fam, M, seeds, grid, opts, radar, workers or cfg.workers, shape)
            T_L = M * cfg.codes.segment
            for k, (s, m) in enumerate(zip(seeds, ms)):
                rows.append((fam, M, T_L, k, s, sir(m, truths, sw.guard_radius, radar.aperture, scene.constants)))
            maps[(fam, M)] = ms[0]
    return SweepResult(tuple(rows), maps)


def run_sweep_tl(cfg: ScenarioConfig, outdir: str | Path, workers: int | None = None) -> SweepResult:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("sweep-tl", cfg, out)
    res = sweep_tl(cfg, workers)
    man.seeds["sweep-tl"] = _seeds(cfg, "sweep-tl", cfg.sweep.seeds)
    man.add(write_csv(out / "sir.csv", ["family", "M", "T_L", "seed_index", "seed", "sir_db"], res.rows))
    med = res.medians()
    man.add(write_csv(out / "sir_median.csv", ["family", "M", "T_L", "median_sir_db"],
                      [(f, M, M * cfg.codes.segment, v) for (f, M), v in med.items()]))
    for (fam, M), m in res.maps.items():
        man.add(m.to_csv(out / f"map_{fam}_M{M}.csv"), m.to_pgm(out / f"map_{fam}_M{M}.pgm"))
    from . import plotting

    man.add(plotting.sir_curves(res, out / "sir_vs_tl.png"))
    man.add(plotting.map_panel(res.maps, out / "maps.png"))
    man.write()
    return res


# -- two-target resolution -------------------------------------------------------------


@dataclass(frozen=True)
class TwoTargetResult:
    rows: tuple  # (sep_units, sep_m, M, T_L, seed_index, seed, resolved, peak_a, peak_b)
    profiles: dict  # (sep_units, M) -> (offsets, |map|) for the first seed
    resolution: float

    def counts(self) -> dict:
        out: dict = {}
        for u, _, M, _, _, _, ok, *_ in self.rows:
            out[(u, M)] = out.get((u, M), 0) + int(ok)
        return out


def two_target(cfg: ScenarioConfig, workers: int | None = None) -> TwoTargetResult:
    tt = _require(cfg, "two_target")
    base, radar, opts = cfg.build_scene(), cfg.build_radar(), cfg.build_options()
    center = xyz(tt.center)
    axis = np.asarray(tt.axis, float) / np.linalg.norm(tt.axis)
    R = float(np.linalg.norm(center - radar.aperture.origin.array()))
    res = radar.aperture.resolution(R, base.constants)
    cell = tt.cell * res
    seeds = _seeds(cfg, "two-target", tt.seeds)
    alpha = _complex(tt.reflectivity)
    rows, profiles = [], {}
    for u in tt.separations:
        sep = u * res
        a, b = center - axis * sep / 2, center + axis * sep / 2
        pts = line_points(center, axis, sep / 2 + tt.half_span * res, cell)
        scene = base.without_targets().with_scatterers([Scatterer(tuple(a), alpha), Scatterer(tuple(b), alpha)])
        for M in tt.lengths:
            ms = _scan_family(cfg, scene, tt.family, M, seeds, pts, opts, radar, workers or cfg.workers)
            for k, (s, m) in enumerate(zip(seeds, ms)):
                r = resolve_pair(m, a, b, cell)
                va, vb = r.values if r.resolved else (math.nan, math.nan)
                rows.append((u, sep, M, M * cfg.codes.segment, k, s, int(r.resolved), va, vb))
            offs = (pts - center) @ axis
            profiles[(u, M)] = (offs, ms[0].magnitude)
    return TwoTargetResult(tuple(rows), profiles, res)


def run_two_target(cfg: ScenarioConfig, outdir: str | Path, workers: int | None = None) -> TwoTargetResult:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("two-target", cfg, out)
    res = two_target(cfg, workers)
    man.seeds["two-target"] = _seeds(cfg, "two-target", cfg.two_target.seeds)
    man.add(write_csv(out / "resolution.csv", ["separation_res", "separation_m", "M", "T_L", "seed_index", "seed",
                                               "resolved", "peak_a", "peak_b"], res.rows))
    n = cfg.two_target.seeds
    man.add(write_csv(out / "resolution_summary.csv", ["separation_res", "separation_m", "M", "resolved", "seeds"],
                      [(u, u * res.resolution, M, c, n) for (u, M), c in res.counts().items()]))
    for (u, M), (offs, mag) in res.profiles.items():
        man.add(write_csv(out / f"profile_sep{u:g}_M{M}.csv", ["offset", "magnitude"], zip(offs, mag)))
    from . import plotting

    man.add(plotting.resolution_grid(res, n, out / "resolution.png"))
    man.add(plotting.pair_profiles(res, out / "profiles.png"))
    man.notes["resolution_m"] = res.resolution
    man.write()
    return res


# -- imaging ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImagingResult:
    rows: tuple  # (M, T_L, seed_index, seed, contrast, frame_time)
    images: dict  # M -> image of the first seed
    cells: np.ndarray  # glyph cells
    study: object | None  # InterferenceStudy
    frame_time: float  # at the longest coding length

    def medians(self) -> dict:
        out: dict = {}
        for M, _, _, _, c, _ in self.rows:
            out.setdefault(M, []).append(c)
        return {M: float(np.median(v)) for M, v in out.items()}


def brightest_cell(image: DetectionMap) -> int:
    return int(np.argmax(image.magnitude))


def imaging(cfg: ScenarioConfig, workers: int | None = None, interference: bool = True) -> ImagingResult:
    im = _require(cfg, "imaging")
    base, radar, opts = cfg.build_scene(), cfg.build_radar(), cfg.build_options()
    plane = cfg.build_plane()
    letter = rasterize_letter(cfg.build_letter())
    scene = base.without_targets().with_scatterers(letter)
    cells = glyph_cells(plane, letter)
    seeds = _seeds(cfg, "image", im.seeds)
    w = workers or cfg.workers
    rows, images = [], {}
    for M in im.lengths:
        T_L = M * cfg.codes.segment
        imgs = image_series(scene, plane, cfg.build_codes(im.family, M, seeds[0]), opts, seeds, radar, w) \
            if im.family != "binary" else \
            [image_series(scene, plane, cfg.build_codes(im.family, M, s), opts, [s], radar, w)[0] for s in seeds]
        for k, (s, img) in enumerate(zip(seeds, imgs)):
            rows.append((M, T_L, k, s, image_contrast(img, cells), plane.acquisition_time(T_L)))
        images[M] = imgs[0]
    study = None
    if interference and im.interferer is not None:
        M = im.interference_length
        study = interference_study(scene, plane, cfg.build_codes(im.family, M, seeds[0]), opts, seeds[0],
                                   im.interferer.build(), radar, w)
    T_max = max(im.lengths) * cfg.codes.segment
    return ImagingResult(tuple(rows), images, cells, study, plane.acquisition_time(T_max))


def run_imaging(cfg: ScenarioConfig, outdir: str | Path, workers: int | None = None) -> ImagingResult:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("image", cfg, out)
    res = imaging(cfg, workers)
    man.seeds["image"] = _seeds(cfg, "image", cfg.imaging.seeds)
    man.add(write_csv(out / "contrast.csv", ["M", "T_L", "seed_index", "seed", "contrast", "frame_time"], res.rows))
    man.add(write_csv(out / "contrast_median.csv", ["M", "T_L", "median_contrast"],
                      [(M, M * cfg.codes.segment, v) for M, v in res.medians().items()]))
    for M, img in res.images.items():
        man.add(img.to_csv(out / f"image_M{M}.csv"), img.to_pgm(out / f"image_M{M}.pgm"))
    st = res.study
    if st is not None:
        k = len(res.cells)
        a, b = brightest_cell(st.clean), brightest_cell(st.interfered)
        overlap = len(set(peak_cells(st.clean, k)) & set(peak_cells(st.interfered, k)))
        man.add(st.clean.to_pgm(out / "interference_clean.pgm"), st.interfered.to_pgm(out / "interference_on.pgm"),
                st.clean.to_csv(out / "interference_clean.csv"), st.interfered.to_csv(out / "interference_on.csv"))
        man.add(write_csv(out / "interference.csv",
                          ["condition", "brightest_cell", "contrast", "top_k_overlap", "k"],
                          [("clean", a, image_contrast(st.clean, res.cells), k, k),
                           ("interfered", b, image_contrast(st.interfered, res.cells), overlap, k)]))
        man.add(*st.write_traces(out / "traces"))
    from . import plotting

    man.add(plotting.image_panel(res.images, out / "images.png"))
    man.add(plotting.contrast_curve(res.medians(), out / "contrast_vs_tl.png"))
    if st is not None:
        man.add(plotting.interference_pair(st, out / "interference.png"))
    man.notes["frame_time"] = format_frame_time(res.frame_time)
    man.write()
    return res


# -- tracking --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackingResult:
    runs: dict  # (letter, condition) -> TrackResult

    def summary_rows(self) -> list:
        rows = []
        for (letter, cond), r in self.runs.items():
            est = [f.estimate for f in r.frames]
            s = trajectory_error(est, [f.truth for f in r.frames])
            rows.append((letter, cond, len(r.frames), s.mean, s.median, s.p95, int(r.lock_lost),
                         -1 if r.acquired_at is None else r.acquired_at, len(r.lost_runs)))
        return rows


def tracking(cfg: ScenarioConfig, workers: int | None = None, letters: Sequence[str] | None = None) -> TrackingResult:
    tk = _require(cfg, "tracking")
    base, radar, opts = cfg.build_scene(), cfg.build_radar(), cfg.build_options()
    tcfg = cfg.build_tracker()
    codes = cfg.build_codes()
    scene = base.without_targets()
    w = workers or cfg.workers
    runs = {}
    for i, L in enumerate(letters or tk.letters):
        seed = derive_seed(cfg.seed, "track", i)
        traj = letter_trajectory(L, tk.speed, tcfg.plane_z, tk.size, tk.center)
        alpha = _complex(tk.reflectivity)
        runs[(L, "clean")] = run_track(traj, scene, tcfg, codes, opts, seed, radar, w, alpha)
        if tk.interferer is not None:
            noisy = scene.replace(sources=scene.sources + (tk.interferer.build(),))
            runs[(L, "interfered")] = run_track(traj, noisy, tcfg, codes, opts, seed, radar, w, alpha)
    return TrackingResult(runs)


def run_tracking(cfg: ScenarioConfig, outdir: str | Path, workers: int | None = None) -> TrackingResult:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("track", cfg, out)
    res = tracking(cfg, workers)
    man.seeds["track"] = [derive_seed(cfg.seed, "track", i) for i in range(len(cfg.tracking.letters))]
    for (L, cond), r in res.runs.items():
        man.add(r.to_csv(out / f"track_{L}_{cond}.csv"))
    man.add(write_csv(out / "track_summary.csv", ["letter", "condition", "frames", "mean_error", "median_error",
                                                  "p95_error", "lock_lost", "acquired_at", "lost_runs"],
                      res.summary_rows()))
    from . import plotting

    man.add(plotting.track_panel(res, out / "tracks.png"))
    man.write()
    return res


# -- single-point probe ----------------------------------------------------------------


def run_probe(cfg: ScenarioConfig, point, outdir: str | Path) -> complex:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("probe", cfg, out)
    seed = derive_seed(cfg.seed, "probe", 0)
    man.seeds["probe"] = [seed]
    scene, radar, opts = cfg.build_scene(), cfg.build_radar(), cfg.build_options()
    pr = probe(scene, cfg.build_codes(seed=seed), point, opts, seed, radar)
    t = pr.y1.times
    man.add(write_csv(out / "probe_traces.csv", ["t", "y1_re", "y1_im", "y2_re", "y2_im"],
                      zip(t, pr.y1.samples.real, pr.y1.samples.imag, pr.y2.samples.real, pr.y2.samples.imag)))
    prof = pr.profile
    man.add(write_csv(out / "probe_correlation.csv", ["lag", "re", "im", "abs"],
                      zip(prof.lags, prof.values.real, prof.values.imag, prof.magnitude)))
    man.add(write_csv(out / "probe_value.csv", ["x", "y", "z", "re", "im", "abs"],
                      [(*xyz(point), pr.value.real, pr.value.imag, abs(pr.value))]))
    from . import plotting

    man.add(plotting.correlation_profile(pr, out / "probe_correlation.png"))
    man.write()
    return pr.value


def validate(cfg: ScenarioConfig) -> list[str]:
    """Build every library object the config describes; returns summary lines."""
    scene, radar = cfg.build_scene(), cfg.build_radar()
    scene.check_detection_ready()
    codes = cfg.build_codes()
    ap = radar.aperture
    lines = [
        f"name: {cfg.name}",
        f"digest: {config_digest(cfg)}",
        f"sources: {len(scene.sources)}, scatterers: {len(scene.scatterers)}, receivers: {len(scene.receivers)}",
        f"aperture: {ap.rows}x{ap.cols} ({ap.n_atoms} atoms, D = {ap.size:.3f} m, {ap.constraint.phase_set})",
        f"codes: {cfg.codes.family}, M = {codes[0].length}, T_L = {codes[0].coding_duration * 1e6:g} us",
    ]
    for block in ("sweep", "two_target", "imaging", "tracking"):
        if getattr(cfg, block) is not None:
            lines.append(f"experiment block: {block}")
    if cfg.imaging is not None:
        plane = cfg.build_plane()
        T = max(cfg.imaging.lengths) * cfg.codes.segment
        lines.append(f"imaging frame time: {format_frame_time(plane.acquisition_time(T))}")
    if cfg.tracking is not None:
        cfg.build_tracker()
    return lines
