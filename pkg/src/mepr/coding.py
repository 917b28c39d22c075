"""Temporal codes: piecewise-constant, unit-energy tag sequences.

A code of length ``M`` holds one complex value per segment of duration ``T_c``;
``sum |values|**2 == 1``.  The physical metasurface state for a segment is the
code value scaled by ``sqrt(M)`` so that binary, chirp and harmonic codes all
map to unit-magnitude reflection states.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SEGMENT = 2.5e-6
FAMILIES = ("binary", "chirp", "harmonic")


class CodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TemporalCode:
    values: np.ndarray
    segment_duration: float = DEFAULT_SEGMENT
    family: str = "binary"
    seed: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=complex).ravel()
        if v.size < 1:
            raise CodeError("code length M must be >= 1")
        if not self.segment_duration > 0:
            raise CodeError("segment duration must be > 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.size

    @property
    def coding_duration(self) -> float:
        """T_L = M * T_c."""
        return self.length * self.segment_duration

    @property
    def states(self) -> np.ndarray:
        """Unit-magnitude physical states, ``sqrt(M) * values``."""
        return self.values * math.sqrt(self.length)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))

    def segment_index(self, t) -> np.ndarray:
        """Cyclic segment index for time(s) ``t``; segments are right-open."""
        t = np.asarray(t, dtype=float)
        # guard floor against t/T_c landing a hair below an integer boundary
        k = np.floor(t / self.segment_duration + 1e-9).astype(np.int64)
        return np.mod(k, self.length)

    def __call__(self, t) -> np.ndarray:
        """Evaluate c(t), cyclically extended."""
        return self.values[self.segment_index(t)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "real", "imag"])
            for i, v in enumerate(self.values):
                w.writerow([i, repr(float(v.real)), repr(float(v.imag))])

    def same_timing(self, other: "TemporalCode") -> bool:
        return self.length == other.length and math.isclose(
            self.segment_duration, other.segment_duration, rel_tol=1e-12
        )


def _check_length(M: int) -> int:
    M = int(M)
    if M < 1:
        raise CodeError("code length M must be >= 1")
    return M


def make_binary_code(M: int, T_c: float = DEFAULT_SEGMENT, seed: int = 0) -> TemporalCode:
    """Random +-1/sqrt(M) sequence, deterministic per seed."""
    M = _check_length(M)
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=M)
    return TemporalCode(signs / math.sqrt(M), T_c, "binary", seed)


def make_chirp_code(M: int, T_c: float = DEFAULT_SEGMENT, rate: int = 1) -> TemporalCode:
    """Discrete quadratic-phase sequence ``exp(j pi rate m^2 / M) / sqrt(M)``.

    ``rate=-1`` gives the down-chirp used as the partner of the default up-chirp.
    """
    M = _check_length(M)
    m = np.arange(M, dtype=float)
    # reduce m^2 modulo 2M before scaling to keep the phase argument small
    phase = math.pi * rate * np.mod(m * m, 2 * M) / M
    return TemporalCode(np.exp(1j * phase) / math.sqrt(M), T_c, "chirp", rate)


def make_harmonic_code(M: int, T_c: float = DEFAULT_SEGMENT, q: int = 0) -> TemporalCode:
    """Discrete harmonic ``exp(j 2 pi q m / M) / sqrt(M)``; distinct q are orthogonal."""
    M = _check_length(M)
    if not 0 <= q < M:
        raise CodeError(f"harmonic index {q} outside [0, {M})")
    m = np.arange(M, dtype=float)
    return TemporalCode(np.exp(2j * math.pi * np.mod(q * m, M) / M) / math.sqrt(M), T_c, "harmonic", q)


def code_correlation(a: TemporalCode, b: TemporalCode, lag: int = 0, cyclic: bool = True) -> complex:
    """``sum_m a[m] conj(b[m + lag])``, cyclic by default, zero-padded otherwise."""
    if not a.same_timing(b):
        raise CodeError("codes differ in length or segment duration")
    M = a.length
    if cyclic:
        return complex(np.sum(a.values * np.conj(np.roll(b.values, -lag))))
    if abs(lag) >= M:
        return 0j
    if lag >= 0:
        return complex(np.sum(a.values[: M - lag] * np.conj(b.values[lag:])))
    return complex(np.sum(a.values[-lag:] * np.conj(b.values[: M + lag])))


def code_pair(family: str, M: int, T_c: float = DEFAULT_SEGMENT, seed: int = 0) -> tuple[TemporalCode, TemporalCode]:
    """The (reference, scan) code pair used by a two-mode program.

    binary: independent seeds derived from ``seed``; chirp: the chirp and its
    cyclic shift by M // 2 segments, so that ``conj(c1) c2`` is a zero-mean
    harmonic for even M; harmonic: q = 1 and 2 (both collapse to q = 0 when
    M = 1, the conventional passive radar case; q = 2 wraps for M = 2).
    """
    if family == "binary":
        ss = np.random.SeedSequence([int(seed), 0xC0DE])
        s1, s2 = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
        return make_binary_code(M, T_c, s1), make_binary_code(M, T_c, s2)
    if family == "chirp":
        c1 = make_chirp_code(M, T_c)
        return c1, TemporalCode(np.roll(c1.values, -(M // 2)), T_c, "chirp", M // 2)
    if family == "harmonic":
        return make_harmonic_code(M, T_c, 1 % M), make_harmonic_code(M, T_c, 2 % M)
    raise CodeError(f"unknown code family {family!r}")
