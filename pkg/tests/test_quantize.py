"""Level geometry, quantizer, and snapping contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sinreq import (
    DegenerateScaleError,
    DimensionError,
    LevelGeometry,
    ParameterError,
    QuantizerSpec,
    Scheme,
    dorefa_quantize,
    level_geometry,
    snap_to_levels,
    wrpn_quantize,
)

ALL_SPECS = [QuantizerSpec(s, k) for s in (Scheme.DOREFA, Scheme.WRPN) for k in range(2, 6)] + [
    QuantizerSpec(s, k)
    for s in (Scheme.UNIFORM_MIDTREAD, Scheme.UNIFORM_MIDRISE)
    for k in range(1, 6)
]

spec_strategy = st.sampled_from(ALL_SPECS)


def test_wrpn_k3_geometry():
    g = level_geometry(QuantizerSpec(Scheme.WRPN, 3))
    assert_allclose(g.levels, [-1, -2 / 3, -1 / 3, 0, 1 / 3, 2 / 3, 1], rtol=0, atol=1e-15)
    assert g.period == pytest.approx(1 / 3, rel=1e-15)
    assert g.delta == 0.0


def test_dorefa_k2_geometry_matches_formula_enumeration():
    # oracle: evaluate the published mapping over a fine grid and collect its
    # distinct outputs -- those are the only values the quantizer can produce
    w = np.linspace(-3.0, 3.0, 20001)
    t = np.tanh(w)
    u = t / (2.0 * np.max(np.abs(t))) + 0.5
    outputs = 2.0 * (np.round(3.0 * u) / 3.0) - 1.0
    distinct = sorted(set(np.round(outputs, 12)))
    g = level_geometry(QuantizerSpec(Scheme.DOREFA, 2))
    assert_allclose(g.levels, distinct, atol=1e-12)
    assert g.period == pytest.approx(2 / 3, rel=1e-15)
    assert g.delta == pytest.approx(1 / 3, rel=1e-15)


def test_midrise_k1_is_binary():
    g = level_geometry(QuantizerSpec(Scheme.UNIFORM_MIDRISE, 1))
    assert g.levels == (-1.0, 1.0)
    assert g.period == 2.0
    assert g.delta == 1.0


def test_midtread_k1_is_ternary():
    g = level_geometry(QuantizerSpec(Scheme.UNIFORM_MIDTREAD, 1))
    assert g.levels == (-1.0, 0.0, 1.0)
    assert g.period == 1.0
    assert g.delta == 0.0


@given(spec_strategy)
def test_minima_align_with_levels(spec):
    g = level_geometry(spec)
    for v in g.levels:
        assert math.sin(math.pi * (v + g.delta) / g.period) ** 2 < 1e-24


@given(spec_strategy)
def test_geometry_invariants(spec):
    g = level_geometry(spec)
    levels = np.asarray(g.levels)
    assert levels[0] >= -1.0 and levels[-1] <= 1.0
    assert np.all(np.diff(levels) > 0)
    assert np.all(np.abs(np.diff(levels) - g.period) < 1e-15)
    assert 0.0 <= g.delta < g.period


@given(spec_strategy)
def test_level_counts(spec):
    n = len(level_geometry(spec).levels)
    k = spec.bitwidth
    if spec.scheme is Scheme.DOREFA:
        assert n == 2**k
    elif spec.scheme is Scheme.WRPN:
        assert n == 2**k - 1
    elif spec.scheme is Scheme.UNIFORM_MIDTREAD:
        assert n % 2 == 1 and 0.0 in level_geometry(spec).levels
    else:
        assert n % 2 == 0 and 0.0 not in level_geometry(spec).levels


def test_quantizer_spec_validation():
    with pytest.raises(ParameterError):
        QuantizerSpec(Scheme.DOREFA, 1)
    with pytest.raises(ParameterError):
        QuantizerSpec(Scheme.WRPN, 1)
    with pytest.raises(ParameterError):
        QuantizerSpec(Scheme.UNIFORM_MIDTREAD, 0)


def test_level_geometry_rejects_misaligned_delta():
    with pytest.raises(ParameterError):
        LevelGeometry((-1.0, 0.0, 1.0), period=1.0, delta=0.25)


def test_dorefa_single_positive_element_maps_to_one():
    assert dorefa_quantize(np.array([0.7]), 2) == np.array([1.0])
    assert dorefa_quantize(np.array([[123.0]]), 4)[0, 0] == 1.0


def test_dorefa_exact_third_normalization():
    # second element lands at normalized u = 1/3: tanh is a third of the max
    m = math.tanh(1.0)
    w = np.array([1.0, math.atanh(-m / 3.0)])
    out = dorefa_quantize(w, 2)
    assert out[1] == pytest.approx(-1 / 3, abs=1e-12)


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_dorefa_outputs_snap_to_nearest_level(k):
    rng = np.random.default_rng(20 + k)
    w = rng.standard_normal(64) * 1.5
    out = dorefa_quantize(w, k)
    g = level_geometry(QuantizerSpec(Scheme.DOREFA, k))
    levels = np.asarray(g.levels)
    assert np.max(np.min(np.abs(out[:, None] - levels[None, :]), axis=1)) < 1e-12
    # oracle: normalize independently, then nearest grid point by linear scan
    t = np.tanh(w)
    u = t / (2.0 * np.abs(t).max()) + 0.5
    q = 2**k - 1
    grid = np.arange(q + 1) / q
    expected = 2.0 * grid[np.argmin(np.abs(u[:, None] - grid[None, :]), axis=1)] - 1.0
    assert_allclose(out, expected, atol=1e-12)


def test_dorefa_rejects_all_zero_and_empty():
    with pytest.raises(DegenerateScaleError):
        dorefa_quantize(np.zeros(5), 3)
    with pytest.raises(DimensionError):
        dorefa_quantize(np.zeros(0), 3)


def test_wrpn_examples():
    assert wrpn_quantize(np.array([0.34]), 3)[0] == pytest.approx(1 / 3, abs=1e-15)
    assert wrpn_quantize(np.array([-5.0]), 2)[0] == -1.0


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_wrpn_outputs_snap_to_nearest_level(k):
    rng = np.random.default_rng(30 + k)
    w = rng.standard_normal(64) * 1.5
    out = wrpn_quantize(w, k)
    g = level_geometry(QuantizerSpec(Scheme.WRPN, k))
    levels = np.asarray(g.levels)
    assert np.max(np.min(np.abs(out[:, None] - levels[None, :]), axis=1)) < 1e-12
    clipped = np.clip(w, -1.0, 1.0)
    expected = levels[np.argmin(np.abs(clipped[:, None] - levels[None, :]), axis=1)]
    assert_allclose(out, expected, atol=1e-12)


@given(spec_strategy, st.integers(0, 2**32 - 1))
@settings(max_examples=60)
def test_snapped_values_are_quantizer_fixed_points(spec, seed):
    g = level_geometry(spec)
    rng = np.random.default_rng(seed)
    levels = np.asarray(g.levels)
    w = rng.choice(levels, size=17)
    assert np.array_equal(snap_to_levels(w, g), w)
    if spec.scheme is Scheme.WRPN:
        assert_allclose(wrpn_quantize(w, spec.bitwidth), w, atol=1e-15)


def test_wrpn_is_idempotent():
    rng = np.random.default_rng(40)
    w = rng.standard_normal(128) * 2.0
    once = wrpn_quantize(w, 4)
    assert np.array_equal(wrpn_quantize(once, 4), once)


def test_snap_tie_goes_to_larger_level():
    g = level_geometry(QuantizerSpec(Scheme.WRPN, 3))
    assert snap_to_levels(np.array([1 / 6]), g)[0] == pytest.approx(1 / 3, rel=1e-15)
    assert snap_to_levels(np.array([-1 / 6]), g)[0] == 0.0


def test_snap_matches_linear_scan():
    g = level_geometry(QuantizerSpec(Scheme.DOREFA, 3))
    rng = np.random.default_rng(41)
    w = rng.uniform(-1.6, 1.6, 300)
    got = snap_to_levels(w, g)
    levels = np.asarray(g.levels)
    for wi, gi in zip(w, got):
        dists = np.abs(levels - wi)
        best = dists.min()
        # ties toward the larger level: last index attaining the minimum
        expected = levels[np.nonzero(dists == best)[0][-1]]
        assert gi == expected


def test_round_ties_away_from_zero():
    # 0.5 and 1.5 in units of the WRPN k=2 step sit exactly between levels
    out = wrpn_quantize(np.array([0.5, -0.5]), 2)
    assert_allclose(out, [1.0, -1.0], rtol=0, atol=0)
