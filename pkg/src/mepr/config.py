"""Scenario files: a YAML schema validated with pydantic, plus the bundled presets.

Every block rejects unknown keys.  Validation errors name the key path and the
line of the offending entry in the source file.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .coding import DEFAULT_SEGMENT, TemporalCode, code_pair
from .detector import Radar
from .imaging import ImagePlaneSpec, TargetShape
from .metasurface import Aperture, ConstraintSet
from .scene import SPEED_OF_LIGHT, Receiver, Scatterer, Scene, SceneConstants, Source
from .tracker import LETTER_PATHS, TrackerConfig
from .wavefield import SynthesisOptions

PRESETS = ("fig2_scene", "fig3_imaging", "fig4_tracking")

Vec3 = tuple[float, float, float]
# real, or [re, im]
Cplx = Union[float, tuple[float, float]]


class ConfigError(ValueError):
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _complex(v: Cplx) -> complex:
    return complex(v[0], v[1]) if isinstance(v, tuple) else complex(v)


# -- scene ---------------------------------------------------------------------------


class ConstantsBlock(_Block):
    carrier_frequency: float = Field(5.48e9, gt=0)
    wave_speed: float = Field(SPEED_OF_LIGHT, gt=0)
    gain_law: Literal["free_space", "inverse"] = "free_space"


class SourceBlock(_Block):
    position: Vec3
    waveform_seed: int = 0
    power: float = Field(1.0, ge=0)
    bandwidth: float = Field(20e6, gt=0)

    def build(self) -> Source:
        return Source(self.position, self.waveform_seed, self.power, self.bandwidth)


class ScattererBlock(_Block):
    position: Vec3
    reflectivity: Cplx = 1.0
    kind: Literal["target", "clutter"] = "target"

    def build(self) -> Scatterer:
        return Scatterer(self.position, _complex(self.reflectivity), self.kind)


class ReceiverBlock(_Block):
    position: Vec3
    role: Literal["reference", "surveillance"]
    noise_power: float = Field(0.0, ge=0)
    metasurface_rejection: float = Field(1.0, ge=0, le=1)


class SceneBlock(_Block):
    constants: ConstantsBlock = ConstantsBlock()
    metasurface_origin: Vec3 = (0.0, 0.0, 0.0)
    sources: list[SourceBlock] = Field(min_length=1)
    scatterers: list[ScattererBlock] = []
    receivers: list[ReceiverBlock] = Field(min_length=2, max_length=2)

    @field_validator("receivers")
    @classmethod
    def _roles(cls, v):
        roles = [r.role for r in v]
        if sorted(roles) != ["reference", "surveillance"]:
            raise ValueError(f"need one reference and one surveillance receiver, got roles {roles}")
        return v


class ApertureBlock(_Block):
    rows: int = Field(24, ge=1)
    cols: int = Field(32, ge=1)
    pitch_x: float = Field(0.586 / 24, gt=0)
    pitch_y: float = Field(0.781 / 32, gt=0)
    constraint: Literal["continuous", "one-bit", "free"] = "continuous"
    # default: [0, 1], or [1, 1] for one-bit
    amplitude_range: Optional[tuple[float, float]] = None


class RadarBlock(_Block):
    aperture: ApertureBlock = ApertureBlock()
    strategy: Literal["superpose", "interleave"] = "superpose"
    designated_source: int = Field(0, ge=0)
    peak_window: int = Field(2, ge=0)
    rotation_trials: int = Field(16, ge=1)


class CodesBlock(_Block):
    family: Literal["binary", "chirp", "harmonic"] = "chirp"
    M: int = Field(100, ge=1)
    segment: float = Field(DEFAULT_SEGMENT, gt=0)


class SynthesisBlock(_Block):
    include_direct_path: bool = True
    include_target_direct_scatter: bool = True
    include_noise: bool = True
    fidelity: Literal["collapsed", "exact"] = "collapsed"
    sample_rate: float = Field(50e6, gt=0)
    guard_time: float = Field(0.4e-6, ge=0)


# -- experiment blocks ---------------------------------------------------------------

Lengths = list[int]
DEFAULT_LENGTHS = [1, 5, 10, 20, 50, 100]


class GridBlock(_Block):
    """Square scan grid in the plane z = center[2]."""

    center: Vec3 = (0.0, 0.0, 1.0)
    width: float = Field(0.8, gt=0)
    spacing: float = Field(0.04, gt=0)


class SweepBlock(_Block):
    families: list[Literal["binary", "chirp", "harmonic"]] = ["chirp", "binary"]
    lengths: Lengths = DEFAULT_LENGTHS
    seeds: int = Field(20, ge=1)
    grid: GridBlock = GridBlock()
    guard_radius: Optional[float] = Field(None, gt=0)


class TwoTargetBlock(_Block):
    # separations in units of (lambda / D) R at the pair's range
    separations: list[float] = [0.0, 0.5, 1.0, 2.0, 4.0]
    lengths: Lengths = DEFAULT_LENGTHS
    seeds: int = Field(20, ge=1)
    family: Literal["binary", "chirp", "harmonic"] = "chirp"
    center: Vec3 = (0.0, 0.0, 1.0)
    axis: Vec3 = (0.0, 1.0, 0.0)
    reflectivity: Cplx = 100.0
    cell: float = Field(0.25, gt=0)  # scan step, in resolution units
    half_span: float = Field(3.0, gt=0)  # beyond the outer target, in resolution units


class PlaneBlock(_Block):
    center: Vec3 = (0.0, 0.0, 1.0)
    width: float = Field(1.2, gt=0)
    height: float = Field(1.2, gt=0)
    resolution: float = Field(0.02, gt=0)


class LetterBlock(_Block):
    letter: Literal["H", "T", "V"] = "V"
    spacing: float = Field(0.05, gt=0)
    size: float = Field(0.4, gt=0)
    reflectivity: Cplx = 1.0
    center: Vec3 = (0.0, 0.0, 1.0)


class InterfererBlock(_Block):
    position: Vec3 = (0.5, 0.3, 1.0)
    power: float = Field(1.0, ge=0)
    waveform_seed: int = 7
    bandwidth: float = Field(20e6, gt=0)

    def build(self) -> Source:
        return Source(self.position, self.waveform_seed, self.power, self.bandwidth)


class ImagingBlock(_Block):
    plane: PlaneBlock = PlaneBlock()
    target: LetterBlock = LetterBlock()
    family: Literal["binary", "chirp", "harmonic"] = "chirp"
    lengths: Lengths = DEFAULT_LENGTHS
    seeds: int = Field(10, ge=1)
    interferer: Optional[InterfererBlock] = InterfererBlock()
    interference_length: int = Field(100, ge=1)


class TrackerBlock(_Block):
    plane_z: float = 3.3
    coarse_spacing: float = 0.3
    fine_window: float = 0.6
    fine_spacing: float = 0.05
    track_window: float = 0.5
    reacquire_threshold: float = 6.0
    frame_interval: float = 0.8
    fov_center: tuple[float, float] = (0.0, 0.0)
    fov_width: float = 1.8
    gate: float = 0.5
    floor_percentile: float = Field(90.0, gt=0, le=100)


class TrackingBlock(_Block):
    tracker: TrackerBlock = TrackerBlock()
    letters: list[str] = ["P", "K", "U", "E", "R", "S"]
    speed: float = Field(0.2, gt=0)
    size: float = Field(1.0, gt=0)
    center: tuple[float, float] = (0.0, 0.0)
    reflectivity: Cplx = 100.0
    interferer: Optional[InterfererBlock] = InterfererBlock()

    @field_validator("letters")
    @classmethod
    def _known(cls, v):
        bad = [s for s in v if s not in LETTER_PATHS]
        if bad:
            raise ValueError(f"no trajectory template for {bad}; known: {sorted(LETTER_PATHS)}")
        return v


class ScenarioConfig(_Block):
    name: str = "scenario"
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    scene: SceneBlock
    radar: RadarBlock = RadarBlock()
    codes: CodesBlock = CodesBlock()
    synthesis: SynthesisBlock = SynthesisBlock()
    sweep: Optional[SweepBlock] = None
    two_target: Optional[TwoTargetBlock] = None
    imaging: Optional[ImagingBlock] = None
    tracking: Optional[TrackingBlock] = None

    @model_validator(mode="after")
    def _designated(self):
        if self.radar.designated_source >= len(self.scene.sources):
            raise ValueError(f"radar.designated_source {self.radar.designated_source} "
                             f"but only {len(self.scene.sources)} sources")
        return self

    # -- builders into the library types --

    def build_scene(self) -> Scene:
        s = self.scene
        c = s.constants
        rx = tuple(Receiver(r.position, r.role, r.noise_power, r.metasurface_rejection) for r in s.receivers)
        return Scene(SceneConstants(c.carrier_frequency, c.wave_speed, c.gain_law), s.metasurface_origin,
                     tuple(src.build() for src in s.sources), tuple(t.build() for t in s.scatterers), rx)

    def build_radar(self) -> Radar:
        a = self.radar.aperture
        rng = a.amplitude_range or ((1.0, 1.0) if a.constraint == "one-bit" else (0.0, 1.0))
        ap = Aperture(a.rows, a.cols, a.pitch_y, a.pitch_x, self.scene.metasurface_origin,
                      ConstraintSet(rng, a.constraint))
        r = self.radar
        return Radar(ap, r.strategy, r.designated_source, r.peak_window, r.rotation_trials)

    def build_codes(self, family: str | None = None, M: int | None = None,
                    seed: int = 0) -> tuple[TemporalCode, TemporalCode]:
        return code_pair(family or self.codes.family, M or self.codes.M, self.codes.segment, seed)

    def build_options(self, **changes) -> SynthesisOptions:
        return SynthesisOptions(**{**self.synthesis.model_dump(), **changes})

    def build_tracker(self) -> TrackerConfig:
        if self.tracking is None:
            raise ConfigError("scenario has no tracking block")
        return TrackerConfig(**self.tracking.tracker.model_dump())

    def build_plane(self) -> ImagePlaneSpec:
        if self.imaging is None:
            raise ConfigError("scenario has no imaging block")
        p = self.imaging.plane
        return ImagePlaneSpec(p.center, p.width, p.height, p.resolution)

    def build_letter(self) -> TargetShape:
        t = self.imaging.target
        return TargetShape(t.letter, t.spacing, _complex(t.reflectivity), t.center, t.size)


# -- loading -------------------------------------------------------------------------


def _line_index(text: str) -> dict[tuple, int]:
    """1-based line of every key path in a YAML document."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


def _locate(lines: dict[tuple, int], loc: tuple) -> int | None:
    # pydantic inserts union branch names into loc; drop anything not in the document
    path = ()
    found = lines.get(())
    for part in loc:
        if path + (part,) in lines:
            path = path + (part,)
            found = lines[path]
    return found


def _format_errors(err: ValidationError, lines: dict[tuple, int], source: str) -> str:
    out = []
    seen = set()
    for e in err.errors():
        loc = tuple(e["loc"])
        key = ".".join(str(p) for p in loc) or "<root>"
        line = _locate(lines, loc)
        msg = f"{source}:{line}: {key}: {e['msg']}" if line else f"{source}: {key}: {e['msg']}"
        if msg not in seen:
            seen.add(msg)
            out.append(msg)
    return "\n".join(out)


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
        lines = _line_index(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, lines, source)) from None


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    return Path(str(resources.files("mepr") / "presets" / f"{name}.yaml"))


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load a scenario file, or a bundled preset by name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = preset_path(str(path))
    if not p.exists():
        raise ConfigError(f"{path}: no such file or preset")
    return parse_scenario(p.read_text(), str(path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dump_scenario(cfg))
    return p


def config_digest(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
