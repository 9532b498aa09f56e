import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncnav.pointcloud import (InvalidInputError, PillarGridSpec, bin_index, cartesian_to_spherical,
                                 cartesian_to_spherical_array, grid_dims, project, project_cartesian,
                                 read_cloud, read_image, spherical_to_cartesian, write_cloud, write_image)

import oracles

SPEC = PillarGridSpec()
finite = st.floats(-50, 50, allow_nan=False)


def random_cloud(rng, n, r_hi=15.0):
    r = rng.uniform(0, r_hi, n)
    theta = rng.uniform(-math.pi, math.pi, n)
    phi = rng.uniform(0, math.pi, n)
    return np.stack([r, theta, phi], axis=1)


def test_axis_conversions():
    assert cartesian_to_spherical((1, 0, 0)) == pytest.approx((1, 0, math.pi / 2), abs=1e-15)
    assert cartesian_to_spherical((0, 1, 0)) == pytest.approx((1, math.pi / 2, math.pi / 2), abs=1e-15)
    assert cartesian_to_spherical((0, 0, 0)) == (0.0, 0.0, 0.0)


def test_conversion_matches_formulas():
    x, y, z = 0.3, -0.4, 1.2
    r = math.sqrt(x * x + y * y + z * z)
    assert r == pytest.approx(1.3, abs=1e-15)
    sp = cartesian_to_spherical((x, y, z))
    assert sp == pytest.approx((r, math.atan2(y, x), math.acos(z / r)), abs=1e-15)


def test_theta_pi_wraps_to_minus_pi():
    assert cartesian_to_spherical((-1.0, 0.0, 0.0)).theta == -math.pi


def test_nonfinite_rejected():
    with pytest.raises(InvalidInputError):
        cartesian_to_spherical((math.nan, 0, 0))
    with pytest.raises(InvalidInputError):
        cartesian_to_spherical_array(np.array([[0, math.inf, 0]]))


@given(finite, finite, finite)
def test_spherical_invariants_and_round_trip(x, y, z):
    sp = cartesian_to_spherical((x, y, z))
    assert sp.r >= 0 and -math.pi <= sp.theta < math.pi and 0 <= sp.phi <= math.pi
    if sp.r > 1e-6:
        back = spherical_to_cartesian(sp)
        assert np.linalg.norm(back - (x, y, z)) <= 1e-9 * sp.r


@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=30))
def test_array_conversion_matches_scalar(pts):
    arr = cartesian_to_spherical_array(np.array(pts))
    # vectorized libm calls may differ from the scalar ones in the last ulp
    for row, p in zip(arr, pts):
        sp = cartesian_to_spherical(p)
        assert row[0] == pytest.approx(sp.r, rel=1e-15, abs=1e-300)
        if sp.r > 0:
            assert row[1] == pytest.approx(sp.theta, abs=1e-14) and row[2] == pytest.approx(sp.phi, abs=1e-14)


def test_grid_dims():
    assert grid_dims(SPEC) == (18, 60)
    one = PillarGridSpec(theta_min=0.0, theta_max=0.1, d_theta=0.1, phi_min=1.0, phi_max=1.2, d_phi=0.2)
    assert grid_dims(one) == (1, 1)


@pytest.mark.parametrize("kwargs", [
    dict(theta_min=1.0, theta_max=0.0), dict(phi_min=2.0, phi_max=1.0), dict(d_theta=0.0),
    dict(d_phi=-1.0), dict(r_max=0.0), dict(theta_min=0.0, theta_max=0.1, d_theta=0.2),
])
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidInputError):
        PillarGridSpec(**kwargs)


def test_bin_index_examples():
    assert bin_index(SPEC, (1.0, SPEC.theta_min, SPEC.phi_min)) == (0, 0)
    assert bin_index(SPEC, (1.0, SPEC.theta_max, SPEC.phi_min)) is None
    assert bin_index(SPEC, (1.0, 0.0, math.pi / 2))[0] == 30
    assert bin_index(SPEC, (1.0, 2.0, math.pi / 2)) is None


def test_empty_and_single_point():
    img = project(SPEC, np.zeros((0, 3)))
    assert img.values.shape == (18, 60) and np.all(img.values == 10.0)
    theta = SPEC.theta_min + 5.5 * SPEC.d_theta
    phi = SPEC.phi_min + 3.5 * SPEC.d_phi
    img = project(SPEC, [(2.0, theta, phi)])
    expect = np.full((18, 60), 10.0)
    expect[3, 5] = 2.0
    assert np.array_equal(img.values, expect)


def test_matches_per_cell_scan_small():
    rng = np.random.default_rng(0)
    spec = PillarGridSpec(theta_min=-1.0, theta_max=1.0, d_theta=0.25, phi_min=1.0, phi_max=2.0, d_phi=0.25, r_max=8.0)
    for _ in range(10):
        sph = random_cloud(rng, 300)
        assert np.array_equal(project(spec, sph).values, oracles.project_by_scan(spec, sph))


def test_matches_oracle_default_grid():
    rng = np.random.default_rng(1)
    for n in (1, 10, 1000, 5000):
        sph = random_cloud(rng, n)
        assert np.array_equal(project(SPEC, sph).values, oracles.project_by_dict(SPEC, sph))


@given(st.integers(0, 2**32 - 1), st.integers(0, 400))
def test_clamp_permutation_monotone(seed, n):
    rng = np.random.default_rng(seed)
    sph = random_cloud(rng, n, r_hi=30.0)
    img = project(SPEC, sph).values
    assert np.all((img >= 0) & (img <= SPEC.r_max))
    assert np.array_equal(img, project(SPEC, sph[rng.permutation(n)]).values)
    extra = random_cloud(rng, 1)
    assert np.all(project(SPEC, np.vstack([sph, extra])).values <= img)


def test_over_range_clamped_not_dropped():
    theta, phi = 0.01, math.pi / 2 + 0.01
    img = project(SPEC, [(25.0, theta, phi)]).values
    assert np.all(img == SPEC.r_max)  # clamped value equals r_max
    small = PillarGridSpec(r_max=5.0)
    assert np.min(project(small, [(7.0, theta, phi)]).values) == 5.0


def test_cartesian_pipeline_matches_two_step():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-12, 12, (2000, 3))
    sph = cartesian_to_spherical_array(pts)
    assert np.array_equal(project_cartesian(SPEC, pts).values, oracles.project_by_dict(SPEC, sph))


def test_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-8, 8, (500, 3))
    write_cloud(tmp_path / "c.txt", pts)
    back = read_cloud(tmp_path / "c.txt")
    assert np.array_equal(back, pts)
    img = project_cartesian(SPEC, back)
    write_image(tmp_path / "i.img", img)
    values, r_max = read_image(tmp_path / "i.img")
    assert r_max == SPEC.r_max and np.array_equal(values, img.values)
    first = (tmp_path / "i.img").read_text().splitlines()[0]
    assert first == "18 60 10.0"


def test_bad_cloud_file(tmp_path):
    (tmp_path / "bad.txt").write_text("1 2\n")
    with pytest.raises(InvalidInputError):
        read_cloud(tmp_path / "bad.txt")
