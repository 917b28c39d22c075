"""Ambient waveforms and the signals seen by the reference and surveillance receivers.

Every receiver signal is a sum of

* metasurface paths, one term per (source, observation point); the aperture
  sum of per-atom channel times projected state collapses to one complex gain
  per code segment, and the envelope is delayed through the aperture centre;
* unmodulated paths (direct source -> receiver, source -> scatterer ->
  receiver) and receiver noise, collected in a single fixed component.

The metasurface paths are kept separate so the scan engine can re-weight
them per focus point without resynthesising anything.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .coding import TemporalCode
from .metasurface import Aperture, STCProgram, atom_positions, path_phasors
from .scene import Receiver, Scene, SceneConstants, Source, delay_between, propagation_gain, xyz


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ComplexSignal:
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=complex).ravel()
        if s.size < 1:
            raise SynthesisError("signal needs at least one sample")
        if not self.sample_rate > 0:
            raise SynthesisError("sample rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def energy(self) -> float:
        return float(np.vdot(self.samples, self.samples).real) / self.sample_rate

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re", "im"])
            for t, v in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])


@dataclass(frozen=True)
class SynthesisOptions:
    include_direct_path: bool = True
    include_target_direct_scatter: bool = True
    include_noise: bool = True
    fidelity: str = "collapsed"  # or "exact"
    duration: float | None = None  # None: coding period + guard_time
    sample_rate: float = 50e6
    guard_time: float = 0.4e-6
    noise_realization: int = 0  # receiver noise key; the ambient waveform depends on the seed only

    def __post_init__(self) -> None:
        if self.fidelity not in ("collapsed", "exact"):
            raise SynthesisError(f"unknown fidelity {self.fidelity!r}")
        if not self.sample_rate > 0:
            raise SynthesisError("sample rate must be positive")

    def window(self, coding_duration: float) -> int:
        """Receiver window length in samples."""
        dur = self.duration if self.duration is not None else coding_duration + self.guard_time
        if dur + 1e-15 < coding_duration:
            raise SynthesisError("duration must cover at least one coding period")
        return int(round(dur * self.sample_rate))


def synth_source_waveform(src: Source, opts: SynthesisOptions, seed: int = 0,
                          n_samples: int | None = None) -> ComplexSignal:
    """Band-limited circular Gaussian noise with mean power ``src.power``.

    The spectrum is brick-wall limited to ``|f| <= bandwidth / 2`` and the
    scale is set in expectation, so waveforms stay linear in ``sqrt(power)``.
    """
    fs = opts.sample_rate
    if src.bandwidth > fs / 2:
        raise SynthesisError("source bandwidth exceeds Nyquist (sample_rate / 2)")
    n = n_samples if n_samples is not None else int(round((opts.duration or 1e-4) * fs))
    rng = np.random.default_rng([int(seed), 1, int(src.waveform_seed)])
    white = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    if src.power == 0:
        return ComplexSignal(np.zeros(n, dtype=complex), fs)
    spec = np.fft.fft(white)
    keep = np.abs(np.fft.fftfreq(n, 1.0 / fs)) <= src.bandwidth / 2
    spec[~keep] = 0.0
    band = np.fft.ifft(spec)
    frac = keep.sum() / n
    return ComplexSignal(band * math.sqrt(src.power / frac), fs)


def envelope_at(sig: ComplexSignal, t) -> np.ndarray:
    """Linear interpolation of the envelope at times ``t``; zero outside the record."""
    s = np.concatenate([[0j], sig.samples, [0j]])
    idx = (np.asarray(t, dtype=float) - sig.t0) * sig.sample_rate
    i = np.floor(idx)
    f = idx - i
    # snap indices that are integral up to rounding noise
    near = np.abs(f - np.round(f)) < 1e-9
    i = np.where(near, np.round(idx), i)
    f = np.where(near, 0.0, f)
    i = i.astype(np.int64) + 1
    lo = np.clip(i, 0, s.size - 1)
    hi = np.clip(i + 1, 0, s.size - 1)
    out = (1.0 - f) * s[lo] + f * s[hi]
    out[(i < 0) | (i > s.size - 2)] = 0.0
    out[(i == s.size - 2) & (f > 0)] = (1.0 - f[(i == s.size - 2) & (f > 0)]) * s[-2]
    return out


def delayed(sig: ComplexSignal, tau: float, carrier_frequency: float | None = None) -> ComplexSignal:
    """``s(t - tau)`` on the same grid; with a carrier, also ``exp(-j 2 pi f0 tau)``."""
    out = envelope_at(sig, sig.times - tau)
    if carrier_frequency is not None:
        out = out * np.exp(-2j * math.pi * carrier_frequency * tau)
    return ComplexSignal(out, sig.sample_rate, sig.t0)


@dataclass(frozen=True, eq=False)
class PathTerm:
    """One metasurface path: ``leg * Gamma(seg(t - code_delay)) * envelope(t)``.

    ``Gamma(m)`` is the aperture sum of per-atom channel times projected state
    for segment m; the envelope is the source waveform delayed through the
    aperture centre.
    """

    source: int
    obs: tuple[float, float, float]
    leg: complex
    code_delay: float
    envelope: np.ndarray


@dataclass(frozen=True, eq=False)
class Components:
    """A receiver signal split into its fixed part and its metasurface paths."""

    fixed: np.ndarray
    paths: tuple[PathTerm, ...]
    sample_rate: float


def source_waveforms(scene: Scene, opts: SynthesisOptions, seed: int, n: int) -> list[ComplexSignal]:
    return [synth_source_waveform(s, opts, seed, n) for s in scene.sources]


def _max_delay(scene: Scene) -> float:
    o = scene.metasurface_origin
    c = scene.constants
    worst = 0.0
    for s in scene.sources:
        for rx in scene.receivers:
            worst = max(worst, delay_between(s.position, rx.position, c),
                        delay_between(s.position, o, c) + delay_between(o, rx.position, c))
            for u in scene.scatterers:
                d_u = delay_between(u.position, rx.position, c)
                worst = max(worst, delay_between(s.position, u.position, c) + d_u,
                            delay_between(s.position, o, c) + delay_between(o, u.position, c) + d_u)
    return worst


def check_window(scene: Scene, coding_duration: float, opts: SynthesisOptions) -> int:
    L = opts.window(coding_duration)
    if L / opts.sample_rate + 1e-15 < coding_duration + _max_delay(scene):
        raise SynthesisError("window too short")
    return L


def _receiver_index(scene: Scene, rx: Receiver) -> int:
    for i, r in enumerate(scene.receivers):
        if r == rx:
            return i
    raise SynthesisError("receiver is not part of the scene")


def fixed_component(scene: Scene, rx: Receiver, opts: SynthesisOptions, seed: int,
                    waveforms: Sequence[ComplexSignal], L: int) -> np.ndarray:
    """Unmodulated paths plus receiver noise (the n_1 / n_2 of the signal model)."""
    c = scene.constants
    fs = opts.sample_rate
    t = np.arange(L) / fs
    out = np.zeros(L, dtype=complex)
    for src, s in zip(scene.sources, waveforms):
        if opts.include_direct_path:
            tau = delay_between(src.position, rx.position, c)
            g = propagation_gain(src.position, rx.position, c)
            out += g * np.exp(-2j * math.pi * c.carrier_frequency * tau) * envelope_at(s, t - tau)
        if opts.include_target_direct_scatter:
            for u in scene.scatterers:
                tau = delay_between(src.position, u.position, c) + delay_between(u.position, rx.position, c)
                g = propagation_gain(src.position, u.position, c) * propagation_gain(u.position, rx.position, c)
                amp = u.reflectivity * g * np.exp(-2j * math.pi * c.carrier_frequency * tau)
                out += amp * envelope_at(s, t - tau)
    if opts.include_noise and rx.noise_power > 0:
        rng = np.random.default_rng([int(seed), 2, _receiver_index(scene, rx), int(opts.noise_realization)])
        out += (rng.standard_normal(L) + 1j * rng.standard_normal(L)) * math.sqrt(rx.noise_power / 2.0)
    return out


def _paths(scene: Scene, rx: Receiver):
    """(observation point, code delay after the aperture centre, leg factor, scatterer) per metasurface path."""
    c = scene.constants
    o = scene.metasurface_origin
    leg = 1.0 if rx.role == "reference" else rx.metasurface_rejection
    out = []
    if leg != 0.0:
        out.append((tuple(rx.position), delay_between(o, rx.position, c), complex(leg), None))
    for u in scene.scatterers:
        d = delay_between(u.position, rx.position, c)
        f = u.reflectivity * propagation_gain(u.position, rx.position, c) * np.exp(-2j * math.pi * c.carrier_frequency * d)
        out.append((tuple(u.position), delay_between(o, u.position, c) + d, complex(f), u))
    return out


def metasurface_paths(scene: Scene, rx: Receiver, opts: SynthesisOptions,
                      waveforms: Sequence[ComplexSignal], L: int) -> list[PathTerm]:
    c = scene.constants
    t = np.arange(L) / opts.sample_rate
    terms = []
    for si, (src, s) in enumerate(zip(scene.sources, waveforms)):
        tau_sm = delay_between(src.position, scene.metasurface_origin, c)
        for obs, tau_c, leg, _ in _paths(scene, rx):
            terms.append(PathTerm(si, obs, leg, tau_c, envelope_at(s, t - tau_c - tau_sm)))
    return terms


def path_channels(scene: Scene, aperture: Aperture, terms: Sequence[PathTerm]) -> np.ndarray:
    """Per-atom channel of every path, shape (I, N)."""
    atoms = atom_positions(aperture)
    H = np.empty((len(terms), aperture.n_atoms), dtype=complex)
    for i, term in enumerate(terms):
        H[i] = path_phasors(atoms, scene.sources[term.source].position, term.obs, scene.constants)
    return H


def received_components(scene: Scene, codes: Sequence[TemporalCode], rx: Receiver, opts: SynthesisOptions,
                        seed: int) -> Components:
    L = check_window(scene, codes[0].coding_duration, opts)
    wf = source_waveforms(scene, opts, seed, L)
    fixed = fixed_component(scene, rx, opts, seed, wf, L)
    return Components(fixed, tuple(metasurface_paths(scene, rx, opts, wf, L)), opts.sample_rate)


def collapsed_sum(terms: Sequence[PathTerm], gains: np.ndarray, code: TemporalCode, sample_rate: float) -> np.ndarray:
    """Sum of path terms given per-segment gains (I, M)."""
    L = terms[0].envelope.size
    t = np.arange(L) / sample_rate
    out = np.zeros(L, dtype=complex)
    for g, term in zip(gains, terms):
        out += term.leg * g[code.segment_index(t - term.code_delay)] * term.envelope
    return out


def _exact_metasurface(scene: Scene, program: STCProgram, aperture: Aperture, rx: Receiver,
                       opts: SynthesisOptions, waveforms: Sequence[ComplexSignal], L: int) -> np.ndarray:
    """Per-atom synthesis: every atom with its own envelope and code delay."""
    c = scene.constants
    t = np.arange(L) / opts.sample_rate
    atoms = atom_positions(aperture)
    code = program.codes[0]
    states = program.projected_states
    out = np.zeros(L, dtype=complex)
    for src, s in zip(scene.sources, waveforms):
        tau_sn = delay_between(atoms, src.position, c)
        for obs, _, leg, u in _paths(scene, rx):
            if u is None:
                tau_no = delay_between(atoms, rx.position, c)
            else:
                tau_no = delay_between(atoms, obs, c) + delay_between(obs, rx.position, c)
            h = path_phasors(atoms, src.position, obs, c)
            for lo in range(0, atoms.shape[0], 64):
                sl = slice(lo, lo + 64)
                tc = t[None, :] - tau_no[sl, None]
                seg = code.segment_index(tc)
                env = envelope_at(s, tc - tau_sn[sl, None])
                rows = np.arange(states.shape[0])[sl]
                out += leg * np.sum(h[sl, None] * states[rows[:, None], seg] * env, axis=0)
    return out


def synthesize_received(scene: Scene, program: STCProgram, rx: Receiver, opts: SynthesisOptions,
                        seed: int, aperture: Aperture) -> ComplexSignal:
    """Full receiver signal for a programmed metasurface; deterministic per seed."""
    codes = program.codes
    L = check_window(scene, codes[0].coding_duration, opts)
    wf = source_waveforms(scene, opts, seed, L)
    y = fixed_component(scene, rx, opts, seed, wf, L)
    if opts.fidelity == "exact":
        y = y + _exact_metasurface(scene, program, aperture, rx, opts, wf, L)
    else:
        terms = metasurface_paths(scene, rx, opts, wf, L)
        if terms:
            gains = path_channels(scene, aperture, terms) @ program.projected_states
            y = y + collapsed_sum(terms, gains, codes[0], opts.sample_rate)
    return ComplexSignal(y, opts.sample_rate)
