import math

import numpy as np
import pytest

from mepr.coding import CodeError, code_pair, make_binary_code, make_chirp_code
from mepr.detector import (DetectionMap, DetectorError, Radar, cross_correlate, detection_value_at, expected_lag,
                           line_points, local_maxima, project_reference, resolve_pair, scan_detection_map, sir,
                           validate_cross_terms)
from mepr.metasurface import Aperture
from mepr.scene import Receiver, Scatterer, Scene, Source
from mepr.wavefield import ComplexSignal, SynthesisOptions

FS = 50e6
S1 = (-0.6, 0.0, 1.5)
R1 = Receiver((0.0, -0.3172, 0.514), "reference")
R2 = Receiver((0.5, 0.0, 0.0), "surveillance", metasurface_rejection=0.0)
QUIET = SynthesisOptions(include_direct_path=False, include_target_direct_scatter=False, include_noise=False)
SMALL = Radar(aperture=Aperture(rows=8, cols=10, pitch_x=0.586 / 8, pitch_y=0.781 / 10))


def _scene(alpha=10.0, targets=((0, 0, 1),), receivers=(R1, R2), sources=(Source(S1, 1),)):
    return Scene(sources=sources, scatterers=tuple(Scatterer(t, alpha) for t in targets), receivers=receivers)


def _noise(n, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_projection_identities():
    y = ComplexSignal(_noise(1000, 1), FS)
    c = make_chirp_code(4)
    same = project_reference(y, c, c, 1e-7)
    assert np.allclose(same.samples, y.samples / 4, rtol=1e-14)
    b = make_binary_code(8, seed=3)
    assert np.allclose(project_reference(y, b, b, 0.0).samples, y.samples / 8, rtol=1e-14)
    c1, c2 = code_pair("chirp", 16)
    t = y.times - 3e-7
    G = 0.3 - 2j
    y1 = ComplexSignal(G * c1(t) * y.samples, FS)
    assert np.allclose(project_reference(y1, c1, c2, 3e-7).samples, G / 16 * c2(t) * y.samples, rtol=1e-12)
    with pytest.raises(CodeError):
        project_reference(y, make_chirp_code(4), make_chirp_code(8), 0.0)


def test_correlation_examples():
    a = ComplexSignal(_noise(512, 2), FS)
    prof = cross_correlate(a, a)
    lag, v = prof.peak()
    assert lag == 0.0 and v == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.diff(prof.lags), 1 / FS)
    b = ComplexSignal(np.concatenate([np.zeros(7), a.samples]), FS)
    lag, v = cross_correlate(a, b).peak()
    assert lag == pytest.approx(7 / FS) and abs(v) == pytest.approx(1.0)
    with pytest.raises(DetectorError, match="empty reference"):
        cross_correlate(ComplexSignal(np.zeros(4), FS), a)


def test_fft_matches_direct_sum():
    a = ComplexSignal(_noise(4096, 3), FS)
    b = ComplexSignal(_noise(4096, 4), FS)
    f = cross_correlate(a, b).values
    d = cross_correlate(a, b, method="direct").values
    assert np.max(np.abs(f - d)) / np.max(np.abs(d)) < 1e-9


def test_nothing_returns_from_empty_scene():
    sc = _scene(targets=())
    v = detection_value_at(sc, code_pair("chirp", 10), (0, 0, 1), QUIET, 0, SMALL)
    assert abs(v) < 1e-10


def test_value_proportional_to_reflectivity():
    codes = code_pair("chirp", 100)
    v1 = detection_value_at(_scene(10.0), codes, (0, 0, 1), QUIET, 0, SMALL)
    v2 = detection_value_at(_scene(20.0), codes, (0, 0, 1), QUIET, 0, SMALL)
    assert abs(v2) / abs(v1) == pytest.approx(2.0, rel=0.01)


def test_one_point_map_equals_probe():
    sc = _scene(30.0, receivers=(Receiver(R1.position, "reference", noise_power=1e-8),
                                 Receiver(R2.position, "surveillance", noise_power=1e-8, metasurface_rejection=0.1)),
                sources=(Source(S1, 1), Source((0.2, -0.6, 1.7), 2)))
    codes = code_pair("binary", 10, seed=5)
    opts = SynthesisOptions()
    for p in ((0, 0, 1), (0.13, -0.2, 0.9)):
        m = scan_detection_map(sc, codes, [p], opts, 3, SMALL)
        v = detection_value_at(sc, codes, p, opts, 3, SMALL)
        assert abs(m.values[0] - v) <= 1e-9 * abs(v)


def test_map_symmetric_about_axis():
    # everything on the x = 0 plane, so the map is mirror-symmetric in x
    sc = Scene(sources=(Source((0, -0.6, 1.5), 1),), scatterers=(Scatterer((0, 0, 1), 10.0),),
               receivers=(Receiver((0, -0.3172, 0.514), "reference"),
                          Receiver((0, 0.5, 0), "surveillance", metasurface_rejection=0.1)))
    xs = np.linspace(-0.2, 0.2, 9)
    grid = [(x, y, 1.0) for y in xs[::2] for x in xs]
    m = scan_detection_map(sc, code_pair("chirp", 20), grid, SynthesisOptions(include_noise=False), 0, SMALL,
                           shape=(5, 9))
    mag = m.magnitude.reshape(5, 9)
    assert np.allclose(mag, mag[:, ::-1], rtol=0.01)


def test_map_deterministic_across_workers():
    sc = _scene(30.0, receivers=(Receiver(R1.position, "reference", noise_power=1e-8),
                                 Receiver(R2.position, "surveillance", noise_power=1e-8)))
    xs = np.linspace(-0.3, 0.3, 12)
    grid = [(x, y, 1.0) for y in xs for x in xs]
    codes = code_pair("chirp", 10)
    a = scan_detection_map(sc, codes, grid, SynthesisOptions(), 2, SMALL)
    b = scan_detection_map(sc, codes, grid, SynthesisOptions(), 2, SMALL, workers=2)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.meta == {"T_L": 25e-6, "M": 10, "family": "chirp", "seed": 2, "scene": a.meta["scene"]}


def test_argmax_invariant_to_source_power():
    xs = np.linspace(-0.3, 0.3, 7)
    grid = [(x, y, 1.0) for y in xs for x in xs]
    codes = code_pair("chirp", 20)
    maps = [scan_detection_map(_scene(10.0, sources=(Source(S1, 1, power=p),)), codes, grid,
                               SynthesisOptions(include_noise=False), 1, SMALL) for p in (1.0, 7.0)]
    assert np.argmax(maps[0].magnitude) == np.argmax(maps[1].magnitude)
    assert np.allclose(maps[1].magnitude, maps[0].magnitude, rtol=1e-9)


def test_sir_examples():
    xs = np.linspace(-0.5, 0.5, 11)
    grid = np.array([(x, y, 1.0) for y in xs for x in xs])
    vals = np.zeros(len(grid), dtype=complex)
    vals[60] = 1.0
    assert sir(DetectionMap(grid, vals, {}), [(0, 0, 1)]) == 200.0
    assert sir(DetectionMap(grid, np.full(len(grid), 2 - 1j), {}), [(0, 0, 1)]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DetectorError):
        sir(DetectionMap(grid, vals, {}), [(0, 0, 1)], guard_radius=2.0)
    with pytest.raises(DetectorError):
        sir(DetectionMap(grid, vals, {}), [(0, 0, 1)], guard_radius=0.0)


def test_map_serialisation(tmp_path):
    grid = np.array([(0.0, 0.0, 1.0), (0.1, 0.0, 1.0)])
    m = DetectionMap(grid, np.array([1 + 1j, 0.5]), {"M": 1}, (1, 2))
    m.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "x,y,z,re,im"
    m.to_pgm(tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes() == b"P5\n2 1\n255\n" + bytes([255, 90])
    with pytest.raises(ValueError):
        DetectionMap(grid, np.array([1.0]), {})


def test_cross_terms_vanish_without_interference():
    rep = validate_cross_terms(_scene(), code_pair("chirp", 10), QUIET, 0, SMALL)
    assert rep.surveillance_term == rep.reference_term == rep.mixed_term == 0.0
    assert rep.signal_energy > 0


def test_expected_lag_geometry():
    sc = _scene()
    c = sc.constants
    d = lambda a, b: math.dist(a, b) / c.wave_speed
    want = d((0, 0, 0), (0, 0, 1)) + d((0, 0, 1), R2.position) - d((0, 0, 0), R1.position)
    assert expected_lag(sc, (0, 0, 1)) == pytest.approx(want, rel=1e-12)


# reference scene: three sources, target at A = (0, 0, 1), probes two resolution cells away
FIG2_SOURCES = (Source(S1, 1), Source((0.2, -0.6, 1.7), 2), Source((0.6, -0.3, 1.2), 3))
RES = 0.0547067 / 0.781


def _fig2(noise=1e-6, targets=((0, 0, 1),), alpha=100.0):
    rx = (Receiver(R1.position, "reference", noise_power=noise),
          Receiver(R2.position, "surveillance", noise_power=noise, metasurface_rejection=0.1))
    return _scene(alpha, targets, rx, FIG2_SOURCES)


def test_probe_ordering_golden():
    probes = [(0, 0, 1), (2 * RES, 0, 1), (-2 * RES, 0, 1), (0, 2 * RES, 1), (0, -2 * RES, 1)]
    sc = _fig2()
    m = scan_detection_map(sc, code_pair("chirp", 100), probes, SynthesisOptions(), 5)
    # seeded reference run, seed 5
    golden = [4.025719057814019, 1.2147203280732557, 0.46267403599621537, 1.5239136170322354, 1.6606721424574784]
    assert m.magnitude == pytest.approx(golden, rel=1e-6)
    assert m.magnitude[0] > m.magnitude[1:].max()
    single = abs(detection_value_at(sc, code_pair("chirp", 100), probes[4], SynthesisOptions(), 5))
    assert single == pytest.approx(golden[4], rel=1e-9)


def test_cross_term_ratios_golden_and_trend():
    sc = _fig2()
    rep = validate_cross_terms(sc, code_pair("chirp", 100), SynthesisOptions(), 5)
    assert rep.ratios == pytest.approx((3626.7432412208527, 1334.5850178150656, 4352689.960944019), rel=1e-6)
    assert rep.dominant_ratio > 100
    med = [np.median([validate_cross_terms(sc, code_pair("chirp", M), SynthesisOptions(), s).dominant_ratio
                      for s in range(20)]) for M in (1, 10, 100)]
    # 20-seed medians 128.5, 387.9, 1270.2 in the reference run
    assert med == pytest.approx([128.49254566859253, 387.88950639174607, 1270.1784940458776], rel=1e-6)
    assert med[0] < med[1] < med[2]


def test_line_points_and_local_maxima():
    pts = line_points((0, 0, 1), (0, 2, 0), 0.1, 0.05)
    assert np.allclose(pts, [(0, y, 1) for y in (-0.1, -0.05, 0, 0.05, 0.1)])
    assert local_maxima(np.array([0, 2, 1, 1, 3, 0])).tolist() == [1, 4]
    assert local_maxima(np.array([1.0, 2.0])).size == 0
    with pytest.raises(DetectorError):
        line_points((0, 0, 1), (0, 0, 0), 0.1, 0.05)


def test_resolve_pair_rules():
    pts = line_points((0, 0, 1), (0, 1, 0), 0.3, 0.05)
    y = pts[:, 1]
    two = np.exp(-((y - 0.1) / 0.04) ** 2) + np.exp(-((y + 0.1) / 0.04) ** 2)
    r = resolve_pair(DetectionMap(pts, two, {}), (0, -0.1, 1), (0, 0.1, 1), 0.05)
    assert r.resolved and r.peaks == (4, 8)
    one = np.exp(-(y / 0.1) ** 2)
    assert not resolve_pair(DetectionMap(pts, one, {}), (0, -0.025, 1), (0, 0.025, 1), 0.05).resolved
    # peaks more than one tolerance away from truth do not count
    assert not resolve_pair(DetectionMap(pts, two, {}), (0, -0.2, 1), (0, 0.2, 1), 0.05).resolved
    # coincident truths share their nearest peak, even with a second peak inside the tolerance
    dip = np.exp(-((y - 0.05) / 0.02) ** 2) + 0.9 * np.exp(-((y + 0.05) / 0.02) ** 2)
    assert not resolve_pair(DetectionMap(pts, dip, {}), (0, 0, 1), (0, 0, 1), 0.05).resolved


def test_two_targets_resolved_at_two_cells_not_at_zero():
    cell = RES / 4
    pts = line_points((0, 0, 1), (0, 1, 0), 4 * RES, cell)
    for sep, want in ((2 * RES, True), (0.0, False)):
        a, b = (0, -sep / 2, 1), (0, sep / 2, 1)
        sc = _scene(10.0, (a, b))
        m = scan_detection_map(sc, code_pair("chirp", 100), pts, QUIET, 0)
        assert resolve_pair(m, a, b, cell).resolved is want
