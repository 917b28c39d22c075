import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mepr.coding import (CodeError, code_correlation, code_pair, make_binary_code, make_chirp_code,
                         make_harmonic_code)


def test_binary_examples():
    assert np.allclose(make_binary_code(1, seed=3).values, [1.0])
    c = make_binary_code(4, seed=11)
    assert np.allclose(np.abs(c.values), 0.5)
    assert c.energy() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(make_binary_code(50, seed=9).values, make_binary_code(50, seed=9).values)
    with pytest.raises(CodeError):
        make_binary_code(0)


def test_chirp_examples():
    c = make_chirp_code(2)
    assert np.allclose(c.values, [1 / math.sqrt(2), 1j / math.sqrt(2)])
    assert code_correlation(c, c) == pytest.approx(1.0)
    with pytest.raises(CodeError):
        make_chirp_code(0)


def test_chirp64_cyclic_autocorrelation_is_perfect():
    # brute-force lag scan: the even-length quadratic-phase sequence has zero
    # cyclic sidelobes (largest measured 2.5e-15), so the ratio is limited only by rounding
    c = make_chirp_code(64)
    side = max(abs(code_correlation(c, c, lag)) for lag in range(1, 64))
    assert abs(code_correlation(c, c, 0)) == pytest.approx(1.0)
    assert side < 1e-13
    assert 1.0 / side > 1e13


def test_chirp_binary_cross_correlation_golden():
    c = make_chirp_code(128)
    b = make_binary_code(128, seed=7)
    peak = max(abs(code_correlation(c, b, lag)) for lag in range(128))
    assert peak == pytest.approx(0.18158380565, rel=1e-9)
    assert peak < 3 / math.sqrt(128)


def test_harmonic_examples():
    assert np.allclose(make_harmonic_code(8, q=0).values, np.full(8, 1 / math.sqrt(8)))
    a, b = make_harmonic_code(8, q=1), make_harmonic_code(8, q=2)
    assert abs(code_correlation(a, b)) < 1e-15
    assert make_harmonic_code(8, q=3).values[2] == pytest.approx(np.exp(1.5j * math.pi) / math.sqrt(8))
    with pytest.raises(CodeError):
        make_harmonic_code(8, q=8)


@given(st.integers(2, 64), st.integers(0, 63), st.integers(0, 63), st.integers(-70, 70))
def test_harmonic_orthogonal_at_every_lag(M, q1, q2, lag):
    q1, q2 = q1 % M, q2 % M
    if q1 == q2:
        return
    v = code_correlation(make_harmonic_code(M, q=q1), make_harmonic_code(M, q=q2), lag)
    assert abs(v) < 1e-12


@given(st.integers(1, 300), st.integers(0, 2**32 - 1), st.sampled_from(["binary", "chirp", "harmonic"]))
def test_every_code_unit_energy(M, seed, family):
    for c in code_pair(family, M, seed=seed):
        assert abs(c.energy() - 1.0) < 1e-12
        assert abs(code_correlation(c, c) - 1.0) < 1e-12


def test_binary_cross_correlation_scales_as_inverse_sqrt():
    # E|corr| over 100 seed pairs; the median is too coarsely quantised at M = 16
    med = []
    for M in (16, 64, 256):
        vals = []
        for i in range(100):
            a = make_binary_code(M, seed=2 * i)
            b = make_binary_code(M, seed=2 * i + 1)
            vals.append(abs(code_correlation(a, b, 1)))
        med.append(np.mean(vals))
    for lo, hi in zip(med, med[1:]):
        assert 2 * 0.7 <= lo / hi <= 2 * 1.3


def test_segment_index_boundaries_and_wrap():
    c = make_binary_code(4, 2.5e-6, seed=1)
    assert c.segment_index(2.5e-6 - 1e-12) == 0
    assert c.segment_index(2.5e-6) == 1
    assert c.segment_index(4 * 2.5e-6 + 1e-9) == 0
    assert c.coding_duration == pytest.approx(1e-5)


def test_linear_correlation_variant():
    c = make_harmonic_code(4, q=1)
    assert code_correlation(c, c, 0, cyclic=False) == pytest.approx(1.0)
    assert abs(code_correlation(c, c, 1, cyclic=False)) == pytest.approx(0.75)
    assert code_correlation(c, c, 4, cyclic=False) == 0


def test_pair_rules():
    a, b = code_pair("chirp", 100)
    assert abs(code_correlation(a, b)) < 1e-12
    # conj(c1) c2 is a zero-mean harmonic for even M
    assert abs(np.sum(np.conj(a.states) * b.states)) < 1e-10
    a1, b1 = code_pair("binary", 32, seed=5)
    assert not np.array_equal(a1.values, b1.values)
    m1 = code_pair("harmonic", 1)
    assert np.allclose(m1[0].values, m1[1].values)
    with pytest.raises(CodeError):
        code_pair("gold", 8)
    with pytest.raises(CodeError):
        code_correlation(make_chirp_code(4), make_chirp_code(8))


def test_code_csv(tmp_path):
    c = make_chirp_code(3)
    c.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "index,real,imag"
    assert len(lines) == 4
