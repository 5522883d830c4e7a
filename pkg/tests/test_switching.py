import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adress.geometry import PeriodicBox
from adress.switching import Region, SwitchingGeometry, classify_region, dlambda_dX, switching_lambda

BOX = PeriodicBox(10.0, 3.0, 3.0)
GEOM = SwitchingGeometry(5.0, 1.0, 1.5)
H, L, XM = 1.0, 1.5, 5.0


def test_lambda_boundaries():
    assert switching_lambda(XM + H, GEOM, BOX) == 1.0
    assert switching_lambda(XM - H, GEOM, BOX) == 1.0
    assert switching_lambda(XM + H + L, GEOM, BOX) == 0.0
    assert switching_lambda(XM + H + L / 2, GEOM, BOX) == pytest.approx(0.5, abs=1e-15)


def test_lambda_piecewise_interior():
    x = XM + H + 0.3 * L
    assert switching_lambda(x, GEOM, BOX) == pytest.approx(np.cos(0.15 * np.pi) ** 2, rel=1e-15)
    assert switching_lambda(XM, GEOM, BOX) == 1.0
    assert switching_lambda(0.0, GEOM, BOX) == 0.0


def test_lambda_periodic_wrap():
    # FG region centered near the edge wraps through x = 0
    geom = SwitchingGeometry(0.5, 1.0, 1.5)
    assert switching_lambda(9.8, geom, BOX) == 1.0
    assert switching_lambda(10.0 - 1.25, geom, BOX) == pytest.approx(0.5)


def test_dlambda_boundaries_and_midpoint():
    assert dlambda_dX(XM + H, GEOM, BOX) == 0.0
    assert dlambda_dX(XM + H + L, GEOM, BOX) == pytest.approx(0.0, abs=1e-15)
    x = XM + H + L / 2
    expected = -np.pi / (2 * L)
    fd = (switching_lambda(x + 1e-6, GEOM, BOX) - switching_lambda(x - 1e-6, GEOM, BOX)) / 2e-6
    assert dlambda_dX(x, GEOM, BOX) == pytest.approx(expected, rel=1e-14)
    assert fd == pytest.approx(expected, rel=1e-6)
    # left hybrid zone has the opposite sign
    assert dlambda_dX(XM - H - L / 2, GEOM, BOX) == pytest.approx(-expected, rel=1e-14)


def test_dlambda_matches_finite_difference_1000_points():
    rng = np.random.default_rng(0)
    d = rng.uniform(H, H + L, 1000)
    x = XM + rng.choice([-1, 1], 1000) * d
    h = 1e-6
    fd = (switching_lambda(x + h, GEOM, BOX) - switching_lambda(x - h, GEOM, BOX)) / (2 * h)
    an = dlambda_dX(x, GEOM, BOX)
    rel = np.abs(an - fd) / np.maximum(np.abs(an), 1e-3)
    assert rel.max() <= 1e-6


def test_classify_examples():
    assert classify_region(XM, GEOM, BOX) == Region.FG
    assert classify_region(XM + H, GEOM, BOX) == Region.FG
    assert classify_region(XM + H + L, GEOM, BOX) == Region.CG
    assert classify_region(XM + H + 0.3 * L, GEOM, BOX) == Region.HYBRID
    regions = classify_region(np.array([XM, XM + H + 0.5, 0.1]), GEOM, BOX)
    np.testing.assert_array_equal(regions, [Region.FG, Region.HYBRID, Region.CG])


def test_geometry_validation():
    with pytest.raises(ValueError):
        SwitchingGeometry(0.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        SwitchingGeometry(0.0, 1.0, 0.0)
    assert not SwitchingGeometry(5.0, 3.0, 2.5).fits(BOX)
    assert SwitchingGeometry(5.0, 2.5, 2.5).fits(BOX)


xs = st.floats(-20, 30, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(xs, st.floats(0, 5))
def test_lambda_properties(x, a):
    lam = switching_lambda(x, GEOM, BOX)
    assert 0.0 <= lam <= 1.0
    assert switching_lambda(XM + a, GEOM, BOX) == pytest.approx(switching_lambda(XM - a, GEOM, BOX), abs=1e-12)
    region = classify_region(x, GEOM, BOX)
    assert (region == Region.FG) == (lam == 1.0)
    assert (region == Region.CG) == (lam == 0.0)


def test_lambda_monotone_away_from_center():
    d = np.linspace(0, 5, 2001)
    lam = switching_lambda(XM + d, GEOM, BOX)
    assert np.all(np.diff(lam) <= 0)
    assert np.all(dlambda_dX(XM + d, GEOM, BOX) <= 0)
