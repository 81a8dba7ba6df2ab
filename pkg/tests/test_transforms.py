import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from aeroemu import refmodel
from aeroemu.transforms import (DegenerateColumnError, LogTransformConfig, NormStats,
                                ProvenanceError, fit_arrays, fit_stats, g, h, inverse_log,
                                log_encode_inputs, log_transform, standardize, unstandardize)

from .oracles.stats_single_pass import welford


def test_two_value_column():
    st_ = fit_arrays(np.array([[1.0], [3.0]]), np.array([[0.0], [2.0]]))
    assert st_.mu_x[0] == 2.0 and st_.sigma_x[0] == 1.0


def test_constant_column_named(small_ds):
    x = small_ds.x.copy()
    x[:, 4] = 0.3
    with pytest.raises(DegenerateColumnError, match="cloud_cover"):
        fit_arrays(x, small_ds.y)


def test_needs_two_rows():
    with pytest.raises(ValueError):
        fit_arrays(np.ones((1, 32)), np.ones((1, 28)))


def test_stats_against_single_pass_oracle():
    ds = refmodel.generate_dataset(100_000, 1)
    stats = fit_stats(ds)
    mu_x, sd_x = welford(ds.x.tolist())
    mu_y, sd_y = welford(ds.y.tolist())
    np.testing.assert_allclose(stats.mu_x, mu_x, rtol=1e-11)
    np.testing.assert_allclose(stats.sigma_x, sd_x, rtol=1e-9)
    # tendency means can sit near zero; compare on the standardised scale
    assert np.max(np.abs(stats.mu_y - mu_y) / stats.sigma_y) <= 1e-9
    np.testing.assert_allclose(stats.sigma_y, sd_y, rtol=1e-9)


def test_mean_maps_to_zero(small_stats):
    np.testing.assert_array_equal(standardize(small_stats.mu_x, small_stats.mu_x,
                                              small_stats.sigma_x), np.zeros(32))
    np.testing.assert_array_equal(g(np.zeros(28), small_stats), small_stats.mu_y)


def test_size_mismatch(small_stats):
    with pytest.raises(ValueError):
        standardize(np.zeros(31), small_stats.mu_x, small_stats.sigma_x)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (5, 32), elements=st.floats(-1e6, 1e6)))
def test_round_trip_inputs(v):
    stats = _STATS
    back = h(standardize(v, stats.mu_x, stats.sigma_x), stats)
    assert np.max(np.abs(back - v)) <= 1e-12 * max(np.max(np.abs(v)), np.max(np.abs(stats.mu_x)))


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (5, 28), elements=st.floats(-1e3, 1e3)))
def test_round_trip_outputs(v):
    stats = _STATS
    back = unstandardize(standardize(v, stats.mu_y, stats.sigma_y), stats.mu_y, stats.sigma_y)
    assert np.max(np.abs(back - v)) <= 1e-12 * max(np.max(np.abs(v)), np.max(np.abs(stats.mu_y)))


_STATS = fit_stats(refmodel.generate_dataset(500, 9))


def test_provenance_tag():
    bad = NormStats(_STATS.mu_x, _STATS.sigma_x, _STATS.mu_y, _STATS.sigma_y, 10, fitted_on="val")
    with pytest.raises(ProvenanceError):
        bad.require_train()
    _STATS.require_train()


def test_stats_immutable():
    with pytest.raises(ValueError):
        _STATS.mu_x[0] = 1.0


def test_stats_dict_round_trip():
    back = NormStats.from_dict(_STATS.to_dict())
    np.testing.assert_array_equal(back.sigma_y, _STATS.sigma_y)
    assert back.fitted_on == "train"


def test_log_transform_examples():
    cls, mag = log_transform(np.array([0.0, -math.exp(3), 2.5e-7]), 1e-20)
    assert cls.tolist() == [0, -1, 1]
    assert mag[0] == pytest.approx(math.log(1e-20), rel=1e-15)
    assert mag[1] == pytest.approx(3.0, rel=1e-15)
    assert mag[2] == pytest.approx(-15.201804919084164, rel=1e-14)


def test_log_transform_threshold():
    cls, _ = log_transform(np.array([1e-21, -1e-21, 1e-20]), 1e-20)
    assert cls.tolist() == [0, 0, 1]


def test_log_transform_rejects_bad_eps():
    with pytest.raises(ValueError):
        log_transform(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        LogTransformConfig(-1.0)


def test_inverse_log_examples():
    assert inverse_log(np.array([0]), np.array([123.0]))[0] == 0.0
    assert inverse_log(np.array([1]), np.array([0.0]))[0] == 1.0
    with pytest.raises(ValueError):
        inverse_log(np.array([2]), np.array([0.0]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-300, 300).filter(lambda e: abs(e) > 0), st.sampled_from([-1.0, 1.0]))
def test_log_round_trip(exponent, sign):
    y = np.array([sign * 10.0 ** (exponent / 15)])
    cls, mag = log_transform(y, 1e-20)
    back = inverse_log(cls, mag)
    if abs(y[0]) >= 1e-20:
        assert np.sign(back[0]) == sign
        assert abs(back[0] - y[0]) <= 1e-12 * abs(y[0])


def test_log_encode_inputs():
    x = refmodel.sample_states(0, np.arange(10))
    enc = log_encode_inputs(x)
    linear = [0, 1, 3, 4, 5, 6]
    np.testing.assert_array_equal(enc[:, linear], x[:, linear])
    np.testing.assert_allclose(enc[:, 7:], np.log(x[:, 7:]), rtol=1e-15)
    np.testing.assert_allclose(enc[:, 2], np.log(x[:, 2]), rtol=1e-15)
