"""Raster imaging of a target plane with static-background subtraction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import DetectionMap, Probe, Radar, probe, scan_detection_map, scan_detection_maps
from .io import write_csv
from .scene import Point3, Scatterer, Scene, Source, xyz
from .wavefield import SynthesisOptions


class ImagingError(ValueError):
    pass


@dataclass(frozen=True)
class ImagePlaneSpec:
    """A square-celled raster in the plane z = center.z; rows run from the top (largest y)."""

    center: Point3 = Point3(0.0, 0.0, 1.0)
    width: float = 1.2
    height: float = 1.2
    resolution: float = 0.02

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", Point3.of(self.center))
        if not (self.width > 0 and self.height > 0 and self.resolution > 0):
            raise ImagingError("plane dimensions must be positive")
        for span in (self.width, self.height):
            q = span / self.resolution
            if abs(q - round(q)) > 1e-9:
                raise ImagingError("width and height must be integral multiples of the resolution")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(round(self.height / self.resolution)) + 1, int(round(self.width / self.resolution)) + 1)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        c = self.center
        xs = c.x - self.width / 2 + self.resolution * np.arange(nx)
        ys = c.y + self.height / 2 - self.resolution * np.arange(ny)
        return xs, ys

    def points(self) -> np.ndarray:
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel(), np.full(X.size, self.center.z)], axis=1)

    def cell_of(self, point) -> int:
        """Index of the grid cell nearest to ``point`` (clamped to the plane)."""
        p = xyz(point)
        xs, ys = self.axes()
        col = int(np.argmin(np.abs(xs - p[0])))
        row = int(np.argmin(np.abs(ys - p[1])))
        return row * xs.size + col

    def acquisition_time(self, coding_duration: float) -> float:
        """Simulated frame time: one coding period per grid cell."""
        ny, nx = self.shape
        return ny * nx * coding_duration


def format_frame_time(seconds: float) -> str:
    return f"{seconds:.3f} s"


# -- letter targets ----------------------------------------------------------------

# strokes in a unit box centred on the glyph, +y up
STROKES = {
    "H": (((-0.5, 0.5), (-0.5, -0.5)), ((0.5, 0.5), (0.5, -0.5)), ((-0.5, 0.0), (0.5, 0.0))),
    "T": (((-0.5, 0.5), (0.5, 0.5)), ((0.0, 0.5), (0.0, -0.5))),
    "V": (((-0.5, 0.5), (0.0, -0.5)), ((0.0, -0.5), (0.5, 0.5))),
}


@dataclass(frozen=True)
class TargetShape:
    letter: str = "V"
    spacing: float = 0.05
    reflectivity: complex = 1.0
    center: Point3 = Point3(0.0, 0.0, 1.0)
    size: float = 0.4
    points: tuple = ()  # used when letter == "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", Point3.of(self.center))
        if self.letter != "custom" and self.letter not in STROKES:
            raise ImagingError(f"unknown letter {self.letter!r}")
        if not self.spacing > 0 or not self.size > 0:
            raise ImagingError("spacing and size must be positive")


def _stroke_points(a, b, spacing: float) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(round(np.linalg.norm(b - a) / spacing)))
    return a + np.outer(np.arange(n + 1) / n, b - a)


def rasterize_letter(shape: TargetShape) -> list[Scatterer]:
    """Point scatterers along the glyph strokes; shared stroke ends appear once."""
    c = shape.center
    if shape.letter == "custom":
        if not shape.points:
            raise ImagingError("custom target needs at least one point")
        pts = [xyz(p) for p in shape.points]
    else:
        pts = []
        seen = set()
        for a, b in STROKES[shape.letter]:
            for u, v in _stroke_points(a, b, shape.spacing / shape.size):
                key = (round(u, 9), round(v, 9))
                if key in seen:
                    continue
                seen.add(key)
                pts.append(np.array([c.x + shape.size * u, c.y + shape.size * v, c.z]))
    return [Scatterer(tuple(p), shape.reflectivity, "target") for p in pts]


def glyph_cells(plane: ImagePlaneSpec, targets: Sequence[Scatterer]) -> np.ndarray:
    return np.unique([plane.cell_of(t.position) for t in targets])


# -- acquisition -------------------------------------------------------------------


def _scan(scene, plane, codes, opts, seed, radar, workers) -> DetectionMap:
    return scan_detection_map(scene, codes, plane.points(), opts, seed, radar, workers, plane.shape)


def acquire_background(scene: Scene, plane: ImagePlaneSpec, codes, opts: SynthesisOptions, seed: int,
                       radar: Radar = Radar(), workers: int = 1) -> DetectionMap:
    """Detection map of the static scene (clutter only)."""
    if scene.targets:
        raise ImagingError("background scene must not contain targets")
    return _scan(scene, plane, codes, opts, seed, radar, workers)


def reconstruct_image(scene: Scene, background: DetectionMap, plane: ImagePlaneSpec, codes,
                      opts: SynthesisOptions, seed: int, radar: Radar = Radar(), workers: int = 1) -> DetectionMap:
    """Complex residual ``map(scene) - background``; ``.normalized()`` gives the [0, 1] image."""
    fg = _scan(scene, plane, codes, opts, seed, radar, workers)
    if not fg.same_grid(background):
        raise ImagingError("background was acquired on a different grid")
    meta = dict(fg.meta, background_seed=background.meta.get("seed"))
    return DetectionMap(fg.grid, fg.values - background.values, meta, plane.shape)


def background_options(opts: SynthesisOptions) -> SynthesisOptions:
    """Same ambient illumination, fresh receiver noise."""
    return replace(opts, noise_realization=opts.noise_realization + 1)


def image_series(scene: Scene, plane: ImagePlaneSpec, codes, opts: SynthesisOptions, seeds: Sequence[int],
                 radar: Radar = Radar(), workers: int = 1) -> list[DetectionMap]:
    """Background-subtracted images for several seeds from one batched scan.

    Each background repeats the scene's ambient illumination (same seed) with a
    fresh receiver-noise realisation, as a static scene re-measured would.
    """
    bg_scene = scene.without_targets()
    bg_opts = background_options(opts)
    acq = [(bg_scene, bg_opts, s) for s in seeds] + [(scene, opts, s) for s in seeds]
    maps = scan_detection_maps(acq, codes, plane.points(), radar, workers, plane.shape)
    n = len(seeds)
    out = []
    for bg, fg in zip(maps[:n], maps[n:]):
        meta = dict(fg.meta, background_seed=bg.meta["seed"])
        out.append(DetectionMap(fg.grid, fg.values - bg.values, meta, plane.shape))
    return out


def image_contrast(image: DetectionMap, cells: np.ndarray) -> float:
    """Mean normalised magnitude on the glyph cells over the mean elsewhere."""
    mag = image.normalized()
    on = np.zeros(mag.size, dtype=bool)
    on[np.asarray(cells, dtype=int)] = True
    off = mag[~on].mean()
    if off == 0.0:
        return math.inf if mag[on].mean() > 0 else 0.0
    return float(mag[on].mean() / off)


def peak_cells(image: DetectionMap, k: int) -> np.ndarray:
    """Indices of the k brightest cells, sorted by index."""
    mag = image.magnitude
    # stable ordering so ties resolve by index
    order = np.argsort(-mag, kind="stable")
    return np.sort(order[:k])


# -- interference study -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InterferenceStudy:
    clean: DetectionMap
    interfered: DetectionMap
    probe_points: tuple
    probes_clean: tuple[Probe, ...] = field(default=())
    probes_interfered: tuple[Probe, ...] = field(default=())

    def write_traces(self, outdir: str | Path) -> list[Path]:
        """Receiver traces and correlation profiles at the probe points."""
        out = Path(outdir)
        files = []
        for tag, probes in (("clean", self.probes_clean), ("interfered", self.probes_interfered)):
            for i, pr in enumerate(probes):
                t = pr.y1.times
                files.append(write_csv(out / f"trace_{tag}_{i}.csv", ["t", "y1_re", "y1_im", "y2_re", "y2_im"],
                                       zip(t, pr.y1.samples.real, pr.y1.samples.imag,
                                           pr.y2.samples.real, pr.y2.samples.imag)))
                prof = pr.profile
                files.append(write_csv(out / f"corr_{tag}_{i}.csv", ["lag", "re", "im", "abs"],
                                       zip(prof.lags, prof.values.real, prof.values.imag, prof.magnitude)))
        return files


def glyph_vertices(targets: Sequence[Scatterer], count: int = 4) -> tuple:
    """Extreme glyph points: top-left, top-right, bottom-left, bottom-right."""
    P = np.array([t.position.array() for t in targets])
    picks = []
    for sx, sy in ((-1, 1), (1, 1), (-1, -1), (1, -1)):
        i = int(np.argmax(sx * P[:, 0] + sy * P[:, 1]))
        picks.append(tuple(P[i]))
    return tuple(picks[:count])


def interference_study(scene: Scene, plane: ImagePlaneSpec, codes, opts: SynthesisOptions, seed: int,
                       interferer: Source, radar: Radar = Radar(), workers: int = 1,
                       traces: bool = True) -> InterferenceStudy:
    """Images with and without an extra ambient source, which is present in its background too."""
    noisy = scene.replace(sources=scene.sources + (interferer,))
    images = [image_series(sc, plane, codes, opts, [seed], radar, workers)[0] for sc in (scene, noisy)]
    pts = glyph_vertices(scene.targets) if traces and scene.targets else ()
    probes = [tuple(probe(sc, codes, p, opts, seed, radar) for p in pts) for sc in (scene, noisy)]
    return InterferenceStudy(images[0], images[1], pts, probes[0], probes[1])
