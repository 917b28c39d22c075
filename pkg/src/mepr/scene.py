"""Scene geometry, physical constants and the shared scene description."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


class SceneError(ValueError):
    """Raised for invalid scene geometry or configuration."""


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise SceneError(f"non-finite point {(self.x, self.y, self.z)}")

    def __iter__(self) -> Iterator[float]:
        yield self.x
        yield self.y
        yield self.z

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def of(cls, p) -> "Point3":
        if isinstance(p, Point3):
            return p
        x, y, z = (float(v) for v in p)
        return cls(x, y, z)


def xyz(p) -> np.ndarray:
    """Coerce a Point3, tuple or (..., 3) array to a float ndarray."""
    if isinstance(p, Point3):
        return p.array()
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class SceneConstants:
    carrier_frequency: float = 5.48e9
    wave_speed: float = SPEED_OF_LIGHT
    # "free_space": lambda / (4 pi d) per leg; "inverse": 1 / d
    gain_law: str = "free_space"

    def __post_init__(self) -> None:
        if self.carrier_frequency <= 0 or self.wave_speed <= 0:
            raise SceneError("carrier frequency and wave speed must be positive")
        if self.gain_law not in ("free_space", "inverse"):
            raise SceneError(f"unknown gain law {self.gain_law!r}")

    @property
    def wavelength(self) -> float:
        return self.wave_speed / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength


def distance(a, b) -> np.ndarray | float:
    d = np.linalg.norm(xyz(a) - xyz(b), axis=-1)
    return float(d) if np.ndim(d) == 0 else d


def delay_between(a, b, c: SceneConstants) -> np.ndarray | float:
    """Propagation delay |a - b| / wave_speed in seconds; broadcasts over arrays."""
    return distance(a, b) / c.wave_speed


def propagation_gain(a, b, c: SceneConstants) -> np.ndarray | float:
    """Per-leg amplitude gain.

    ``lambda / (4 pi d)`` for the free-space law, ``1 / d`` for the inverse law.
    Coincident points raise ``SceneError("degenerate path")``.
    """
    d = np.asarray(distance(a, b), dtype=float)
    if np.any(d <= 0.0):
        raise SceneError("degenerate path")
    if c.gain_law == "free_space":
        g = c.wavelength / (4.0 * math.pi * d)
    else:
        g = 1.0 / d
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class Source:
    position: Point3
    waveform_seed: int = 0
    power: float = 1.0
    bandwidth: float = 20e6

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", Point3.of(self.position))
        if self.power < 0:
            raise SceneError("source power must be >= 0")
        if self.bandwidth <= 0:
            raise SceneError("source bandwidth must be > 0")


@dataclass(frozen=True)
class Scatterer:
    position: Point3
    reflectivity: complex = 1.0
    kind: str = "target"

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", Point3.of(self.position))
        object.__setattr__(self, "reflectivity", complex(self.reflectivity))
        if self.kind not in ("target", "clutter"):
            raise SceneError(f"unknown scatterer kind {self.kind!r}")


@dataclass(frozen=True)
class Receiver:
    position: Point3
    role: str
    noise_power: float = 0.0
    metasurface_rejection: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", Point3.of(self.position))
        if self.role not in ("reference", "surveillance"):
            raise SceneError(f"unknown receiver role {self.role!r}")
        if not 0.0 <= self.metasurface_rejection <= 1.0:
            raise SceneError("metasurface_rejection must lie in [0, 1]")
        if self.role == "reference" and self.metasurface_rejection != 1.0:
            raise SceneError("reference receivers must have metasurface_rejection = 1")
        if self.noise_power < 0:
            raise SceneError("noise_power must be >= 0")


@dataclass(frozen=True)
class Scene:
    constants: SceneConstants = field(default_factory=SceneConstants)
    metasurface_origin: Point3 = Point3(0.0, 0.0, 0.0)
    sources: tuple[Source, ...] = ()
    scatterers: tuple[Scatterer, ...] = ()
    receivers: tuple[Receiver, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "metasurface_origin", Point3.of(self.metasurface_origin))
        for name in ("sources", "scatterers", "receivers"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.receivers:
            raise SceneError("scene has no receivers")
        origin = self.metasurface_origin.array()
        for rx in self.receivers:
            if rx.role == "surveillance" and np.allclose(rx.position.array(), origin):
                raise SceneError("surveillance receiver coincides with the metasurface origin")

    def receiver(self, role: str) -> Receiver:
        found = [r for r in self.receivers if r.role == role]
        if len(found) != 1:
            raise SceneError(f"detection needs exactly one {role} receiver, found {len(found)}")
        return found[0]

    def check_detection_ready(self) -> None:
        self.receiver("reference")
        self.receiver("surveillance")

    @property
    def targets(self) -> tuple[Scatterer, ...]:
        return tuple(s for s in self.scatterers if s.kind == "target")

    @property
    def clutter(self) -> tuple[Scatterer, ...]:
        return tuple(s for s in self.scatterers if s.kind == "clutter")

    def replace(self, **changes) -> "Scene":
        from dataclasses import replace

        return replace(self, **changes)

    def without_targets(self) -> "Scene":
        return self.replace(scatterers=self.clutter)

    def with_scatterers(self, extra: Sequence[Scatterer]) -> "Scene":
        return self.replace(scatterers=self.scatterers + tuple(extra))
