import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adress.geometry import KB, GeometryError, PeriodicBox, instantaneous_temperature, minimum_image

BOX = PeriodicBox.cubic(10.0)


@pytest.mark.parametrize(
    "d, expected",
    [((0, 0, 0), (0, 0, 0)), ((9, 0, 0), (-1, 0, 0)), ((5, 0, 0), (-5, 0, 0)), ((-5, 0, 0), (-5, 0, 0))],
)
def test_minimum_image_examples(d, expected):
    np.testing.assert_array_equal(minimum_image(np.array(d, float), BOX), expected)


def test_minimum_image_rows_and_noncubic():
    box = PeriodicBox(4.0, 6.0, 8.0)
    d = np.array([[3.0, 3.0, 3.0], [-2.1, 7.0, -9.0]])
    np.testing.assert_allclose(minimum_image(d, box), [[-1.0, -3.0, 3.0], [1.9, 1.0, -1.0]], atol=1e-12)


coords = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(coords, coords, coords))
def test_minimum_image_properties(d):
    d = np.array(d)
    m = minimum_image(d, BOX)
    assert np.all(m >= -5.0) and np.all(m < 5.0)
    np.testing.assert_array_equal(minimum_image(m, BOX), m)
    assert np.linalg.norm(m) <= np.linalg.norm(d) + 1e-12
    # differs from d by whole box vectors
    np.testing.assert_allclose((d - m) / 10.0, np.round((d - m) / 10.0), atol=1e-9)


def test_box_rejects_nonpositive():
    with pytest.raises(GeometryError):
        PeriodicBox(1.0, 0.0, 1.0)
    with pytest.raises(GeometryError):
        PeriodicBox(1.0, 1.0, np.nan)


def test_wrap_stays_in_box():
    box = PeriodicBox(3.0, 2.0, 1.0)
    x = np.array([[-1e-17, 2.0, 7.5], [3.0, -4.0, -0.25]])
    w = box.wrap(x)
    assert np.all(w >= 0) and np.all(w < box.lengths)
    np.testing.assert_allclose(w[1], [0.0, 0.0, 0.75])


def test_temperature_zero_velocity():
    assert instantaneous_temperature(np.zeros((5, 3)), np.ones(5)) == 0.0


def test_temperature_single_site():
    v = np.array([[np.sqrt(3 * KB * 300.0), 0.0, 0.0]])
    assert instantaneous_temperature(v, [1.0]) == pytest.approx(300.0, rel=1e-14)


def test_temperature_matches_resummation():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(100, 3))
    m = rng.uniform(1, 20, 100)
    ek = sum(0.5 * m[i] * (v[i] @ v[i]) for i in range(100))
    assert instantaneous_temperature(v, m, n_constraints=7) == pytest.approx(2 * ek / ((300 - 7) * KB), rel=1e-13)


def test_temperature_invariances():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(30, 3))
    m = rng.uniform(1, 5, 30)
    t = instantaneous_temperature(v, m)
    assert instantaneous_temperature(-v, m) == pytest.approx(t, rel=1e-14)
    p = rng.permutation(30)
    assert instantaneous_temperature(v[p], m[p]) == pytest.approx(t, rel=1e-13)


def test_temperature_no_degrees_of_freedom():
    with pytest.raises(GeometryError):
        instantaneous_temperature(np.zeros((1, 3)), [1.0], n_constraints=3)
