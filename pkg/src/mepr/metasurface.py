"""Programmable aperture: atom grid, focusing modes, constraint projection and mode gains.

Geometry: the aperture is planar, centred on its origin, normal to +z.  Columns
run along y (the 0.781 m side at defaults), rows along x.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .coding import TemporalCode
from .scene import Point3, SceneConstants, SceneError, delay_between, propagation_gain, xyz

PHASE_SETS = {"free": _kernels.FREE, "continuous": _kernels.CONTINUOUS, "one-bit": _kernels.ONE_BIT}
STRATEGIES = ("superpose", "interleave")
ROTATION_TRIALS = 16
_TIE_TOL = 1e-9


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    """Realizable reflection coefficients.

    ``continuous``: amplitude range x phase in [0, 180] degrees;
    ``one-bit``: phase in {0, 180} degrees; ``free``: any phase (amplitude still
    limited), useful as the unconstrained reference.
    """

    amplitude_range: tuple[float, float] = (0.0, 1.0)
    phase_set: str = "continuous"

    def __post_init__(self) -> None:
        lo, hi = (float(a) for a in self.amplitude_range)
        if not 0.0 <= lo <= hi <= 1.0:
            raise ProgramError(f"amplitude range {self.amplitude_range} not within [0, 1]")
        if self.phase_set not in PHASE_SETS:
            raise ProgramError(f"unknown phase set {self.phase_set!r}")
        object.__setattr__(self, "amplitude_range", (lo, hi))

    @property
    def mode(self) -> int:
        return PHASE_SETS[self.phase_set]

    def rotations(self, trials: int = ROTATION_TRIALS) -> np.ndarray:
        if self.phase_set == "free":
            return np.zeros(1)
        # one-bit projection is odd, so rotations by pi are equivalent
        span = math.pi if self.phase_set == "one-bit" else 2.0 * math.pi
        return span * np.arange(trials) / trials

    def project(self, z) -> np.ndarray:
        """Nearest realizable state: amplitude clipped, phase snapped into the phase set."""
        lo, hi = self.amplitude_range
        z = np.asarray(z, dtype=complex)
        return _kernels.project_matrix(np.ascontiguousarray(z).reshape(-1), lo, hi, self.mode).reshape(z.shape)

    def contains(self, z, atol: float = 1e-12) -> np.ndarray:
        return np.abs(self.project(z) - np.asarray(z)) <= atol


CONTINUOUS = ConstraintSet((0.0, 1.0), "continuous")
ONE_BIT = ConstraintSet((1.0, 1.0), "one-bit")
FREE = ConstraintSet((0.0, 1.0), "free")


@dataclass(frozen=True)
class Aperture:
    rows: int = 24
    cols: int = 32
    pitch_y: float = 0.781 / 32
    pitch_x: float = 0.586 / 24
    origin: Point3 = Point3(0.0, 0.0, 0.0)
    constraint: ConstraintSet = field(default_factory=lambda: CONTINUOUS)

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ProgramError("aperture needs at least one row and column")
        if self.pitch_x <= 0 or self.pitch_y <= 0:
            raise ProgramError("pitch must be positive")
        object.__setattr__(self, "origin", Point3.of(self.origin))

    @property
    def n_atoms(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> tuple[float, float]:
        """(size along y, size along x) in metres."""
        return self.cols * self.pitch_y, self.rows * self.pitch_x

    @property
    def size(self) -> float:
        """Largest side D, the one used for the (lambda / D) R resolution."""
        return max(self.extent)

    def resolution(self, distance: float, constants: SceneConstants) -> float:
        return constants.wavelength / self.size * distance


def atom_positions(ap: Aperture) -> np.ndarray:
    """Centred atom grid, row-major (row = x index, column = y index), shape (N, 3)."""
    r = (np.arange(ap.rows) - (ap.rows - 1) / 2.0) * ap.pitch_x
    c = (np.arange(ap.cols) - (ap.cols - 1) / 2.0) * ap.pitch_y
    xx, yy = np.meshgrid(r, c, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(ap.n_atoms)], axis=1)
    return pts + ap.origin.array()


@dataclass(frozen=True, eq=False)
class SpatialMode:
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=complex).ravel()
        if not np.all(np.isfinite(w)):
            raise ProgramError("spatial mode has non-finite weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def path_phasors(atoms: np.ndarray, source, obs, c: SceneConstants) -> np.ndarray:
    """Per-atom channel ``gain(s,n) gain(n,o) exp(-j 2 pi f0 (tau_sn + tau_no))``.

    ``obs`` may be a single point or an (M, 3) array; result has shape (..., N).
    """
    s = xyz(source)
    o = xyz(obs)
    d_sn = np.linalg.norm(atoms - s, axis=-1)
    d_no = np.linalg.norm(atoms[None, :, :] - o.reshape(-1, 1, 3), axis=-1)
    if np.any(d_sn <= 0) or np.any(d_no <= 0):
        raise SceneError("degenerate path")
    if c.gain_law == "free_space":
        g = (c.wavelength / (4 * math.pi)) ** 2 / (d_sn * d_no)
    else:
        g = 1.0 / (d_sn * d_no)
    h = g * np.exp(-1j * c.wavenumber * (d_sn + d_no))
    return h[0] if o.ndim == 1 else h


def focus_weights(atoms: np.ndarray, source, focus, c: SceneConstants) -> np.ndarray:
    """Phase-conjugate weights for one or many focus points, shape (..., N)."""
    s = xyz(source)
    f = xyz(focus)
    d_sn = np.linalg.norm(atoms - s, axis=-1)
    d_nf = np.linalg.norm(atoms[None, :, :] - f.reshape(-1, 1, 3), axis=-1)
    if np.any(d_nf <= 1e-12):
        raise ProgramError("degenerate focus")
    w = np.exp(1j * c.wavenumber * (d_sn + d_nf)) / math.sqrt(atoms.shape[0])
    return w[0] if f.ndim == 1 else w


def design_focus_mode(ap: Aperture, source, focus, c: SceneConstants) -> SpatialMode:
    """Weights that bring every atom's contribution into phase at ``focus``.

    Propagation carries ``exp(-j 2 pi f0 tau)``, so the weights carry the
    conjugate phase and a ``1 / sqrt(N)`` normalisation.
    """
    atoms = atom_positions(ap)
    if np.any(on_aperture(ap, np.array([xyz(source), xyz(focus)]))):
        raise ProgramError("source and focus must lie off the aperture surface")
    return SpatialMode(focus_weights(atoms, source, focus, c))


def on_aperture(ap: Aperture, pts: np.ndarray) -> np.ndarray:
    """Points in the aperture plane within its footprint; in-plane points beyond the edge are allowed."""
    d = np.atleast_2d(pts) - ap.origin.array()
    wy, wx = ap.extent
    return (np.abs(d[:, 2]) < 1e-12) & (np.abs(d[:, 0]) <= wx / 2) & (np.abs(d[:, 1]) <= wy / 2)


def _scale(n_atoms: int, n_modes: int) -> float:
    # a single unit-magnitude code then maps to unit-magnitude states
    return math.sqrt(n_atoms) / n_modes


def _atom_weights(weights: np.ndarray, strategy: str, cols: int) -> np.ndarray:
    """Scaled per-atom weights U (..., K, N) before projection.

    ``superpose``: every atom carries all K modes at 1/K of full scale.
    ``interleave``: atoms in column j carry mode ``j % K`` alone at full scale.
    """
    K, N = weights.shape[-2:]
    if strategy == "superpose":
        return weights * _scale(N, K)
    if strategy == "interleave":
        col = np.arange(N) % cols
        mask = (col[None, :] % K) == np.arange(K)[:, None]
        return weights * math.sqrt(N) * mask
    raise ProgramError(f"unknown placement strategy {strategy!r}")


def code_columns(codes: Sequence[TemporalCode], dedupe: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct segment columns of unit-magnitude code states.

    Returns V (K, J), counts (J,) and the column index of every segment (M,).
    Without ``dedupe`` every segment is its own column (J = M).
    """
    V = np.stack([c.states for c in codes])
    M = V.shape[1]
    if not dedupe:
        return V, np.ones(M), np.arange(M)
    key = np.round(np.concatenate([V.real, V.imag]).T, 12)
    _, first, inverse, counts = np.unique(key, axis=0, return_index=True, return_inverse=True, return_counts=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return np.ascontiguousarray(V[:, first[order]]), counts[order].astype(float), rank[inverse.ravel()]


def code_gram_pinv(V: np.ndarray, counts: np.ndarray) -> np.ndarray:
    A = (V * counts) @ V.conj().T
    return np.linalg.pinv(A, rcond=1e-10, hermitian=True)


def project_columns(U: np.ndarray, V: np.ndarray, counts: np.ndarray, cs: ConstraintSet,
                    trials: int = ROTATION_TRIALS):
    """Batched projection: U (P, K, N) -> projected columns (P, N, J), rotation (P,), retained (P,)."""
    lo, hi = cs.amplitude_range
    thetas = cs.rotations(trials)
    Q, rot, kept = _kernels.program_columns(
        np.ascontiguousarray(U, dtype=np.complex128), np.ascontiguousarray(V, dtype=np.complex128),
        np.asarray(counts, dtype=float), lo, hi, cs.mode, thetas, _TIE_TOL
    )
    return Q, thetas[rot], kept


def weights_from_columns(Q: np.ndarray, V: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Least-squares effective weights (..., K, N) of projected columns Q (..., N, J)."""
    Y = (Q * counts) @ V.conj().T
    return np.swapaxes(Y @ code_gram_pinv(V, counts), -1, -2)


def solve_weights(U: np.ndarray, codes: Sequence[TemporalCode], cs: ConstraintSet,
                  trials: int = ROTATION_TRIALS, dedupe: bool = True):
    """Batched projection: U (P, K, N) -> effective weights (P, K, N), rotation (P,), retained (P,)."""
    V, counts, _ = code_columns(codes, dedupe)
    Q, theta, kept = project_columns(U, V, counts, cs, trials)
    return weights_from_columns(Q, V, counts), theta, kept


@dataclass(frozen=True, eq=False)
class STCProgram:
    """K (mode, code) pairs plus realizable per-atom, per-segment states.

    ``weights[k]`` are the effective per-atom weights of mode k recovered from
    the projected states by least squares onto the code states; they multiply
    the unit-magnitude code states ``sqrt(M) c_k``.
    """

    modes: tuple[tuple[SpatialMode, TemporalCode], ...]
    constraint: ConstraintSet
    strategy: str
    ideal_states: np.ndarray
    projected_states: np.ndarray
    rotation: float
    weights: np.ndarray
    retained_fraction: float

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def codes(self) -> tuple[TemporalCode, ...]:
        return tuple(c for _, c in self.modes)

    @property
    def segment_duration(self) -> float:
        return self.modes[0][1].segment_duration

    @property
    def coding_duration(self) -> float:
        return self.modes[0][1].coding_duration

    def to_csv(self, path: str | Path) -> None:
        """N x M matrix of (amplitude, phase in degrees) pairs."""
        P = self.projected_states
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["atom"] + [f"amp_{m},phase_{m}" for m in range(P.shape[1])])
            for n in range(P.shape[0]):
                row = [n]
                for v in P[n]:
                    row += [f"{abs(v):.6g}", f"{math.degrees(math.atan2(v.imag, v.real)) % 360.0:.6g}"]
                w.writerow(row)


def superpose_and_project(modes: Sequence[tuple[SpatialMode, TemporalCode]], cs: ConstraintSet,
                          strategy: str = "superpose", cols: int | None = None,
                          trials: int = ROTATION_TRIALS) -> STCProgram:
    """Combine K (mode, code) pairs into realizable states.

    Ideal state ``g(n, m) = sqrt(N M) / K * sum_k f_k(n) c_k[m]``; the whole
    matrix is rotated by the global phase that keeps the most energy along the
    ideal program (``|<P, g>|^2 / (|P|^2 |g|^2)``, best of ``trials``
    rotations) and snapped to the constraint set.
    """
    modes = tuple(modes)
    if not modes:
        raise ProgramError("program needs at least one mode")
    if len(modes) > 4:
        raise ProgramError("at most 4 modes are supported")
    codes = [c for _, c in modes]
    for c in codes[1:]:
        if not c.same_timing(codes[0]):
            raise ProgramError("all codes must share length and segment duration")
    N = modes[0][0].weights.size
    if any(m.weights.size != N for m, _ in modes):
        raise ProgramError("spatial modes differ in atom count")
    F = np.stack([m.weights for m, _ in modes])
    U = _atom_weights(F, strategy, cols if cols is not None else N)
    ideal = U.T @ np.stack([c.states for c in codes])
    V, counts, col = code_columns(codes)
    Q, theta, kept = project_columns(U[None], V, counts, cs, trials)
    projected = Q[0][:, col]
    W = weights_from_columns(Q[0], V, counts)
    ideal.setflags(write=False)
    projected.setflags(write=False)
    return STCProgram(modes, cs, strategy, ideal, projected, float(theta[0]), W, float(kept[0]))


def retained_energy_fraction(p: STCProgram) -> float:
    """Coherent fraction ``|<P, g>|^2 / (|P|^2 |g|^2)`` of the projected program."""
    g = p.ideal_states * np.exp(1j * p.rotation)
    P = p.projected_states
    num = abs(np.vdot(g, P)) ** 2
    den = np.vdot(P, P).real * np.vdot(g, g).real
    return float(num / den) if den > 0 else 0.0


def reflection_coefficient(p: STCProgram, n: int, t: float, cyclic: bool = True) -> complex:
    """Projected state of atom ``n`` at time ``t`` (right-open segments)."""
    N, M = p.projected_states.shape
    if not 0 <= n < N:
        raise ProgramError(f"atom index {n} out of range")
    code = p.modes[0][1]
    if not cyclic and not 0.0 <= t < code.coding_duration:
        raise ProgramError("time outside the coding period")
    return complex(p.projected_states[n, int(code.segment_index(t))])


def mode_gain(p: STCProgram, k: int, source, obs, ap: Aperture, c: SceneConstants) -> tuple[complex, float]:
    """Collapsed gain G_k of mode k for source -> aperture -> obs, and the envelope delay.

    The delay is taken through the aperture centre (narrowband factorisation).
    """
    if not 0 <= k < p.n_modes:
        raise ProgramError(f"mode index {k} out of range")
    h = path_phasors(atom_positions(ap), source, obs, c)
    G = complex(np.sum(p.weights[k] * h))
    tau = float(delay_between(source, ap.origin, c) + delay_between(ap.origin, obs, c))
    return G, tau


def beam_gain_along(p: STCProgram, k: int, source, points, ap: Aperture, c: SceneConstants) -> np.ndarray:
    """|G_k| evaluated at many observation points."""
    h = path_phasors(atom_positions(ap), source, np.atleast_2d(xyz(points)), c)
    return np.abs(h @ p.weights[k])


def first_null_offset(offsets: np.ndarray, gains: np.ndarray) -> float:
    """Distance from the main peak to the first local minimum on either side (mean of both)."""
    i0 = int(np.argmax(gains))
    found = []
    for step in (1, -1):
        i = i0
        while 0 <= i + step < len(gains) and gains[i + step] <= gains[i]:
            i += step
        if i != i0 and 0 < i < len(gains) - 1:
            found.append(abs(offsets[i] - offsets[i0]))
    if not found:
        raise ProgramError("no null found inside the sampled range")
    return float(np.mean(found))
