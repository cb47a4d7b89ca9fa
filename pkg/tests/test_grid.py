import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmedrift.grid import (
    Cylinder,
    DriftField,
    Field,
    Grid,
    InvalidParameter,
    InvalidRegion,
    Region,
    extrema,
    intrinsic_cylinder,
    oscillation,
    restrict,
)


@pytest.fixture
def line():
    return Grid(1, 64, 1.0, dt=0.1)


class TestGrid:
    def test_spacing_and_centers(self, line):
        assert line.h == pytest.approx(2.0 / 64)
        c = line.centers_1d()
        assert c[0] == pytest.approx(-1 + line.h / 2)
        assert np.allclose(np.diff(c), line.h)

    def test_round_trip(self):
        g = Grid(2, 16, 0.5, dt=0.01, bc="periodic")
        assert Grid.from_json(g.to_json()) == g
        assert Grid.from_dict(json.loads(g.to_json())) == g

    @pytest.mark.parametrize("kw", [{"d": 4}, {"n_cells": 2}, {"L": 0.0}, {"dt": -1.0}, {"bc": "open"}])
    def test_rejects_bad_parameters(self, kw):
        args = {"d": 1, "n_cells": 16, "L": 1.0} | kw
        with pytest.raises(InvalidParameter):
            Grid(**args)

    def test_refined_halves_spacing(self, line):
        assert line.refined().h == pytest.approx(line.h / 2)


class TestIntrinsicCylinder:
    def test_unit_level_kills_the_intrinsic_factor(self):
        assert intrinsic_cylinder((0.0,), 0.0, 1.0, 0.5, 1.0, 2.0).depth == pytest.approx(0.25)

    @pytest.mark.parametrize("k", [1e-3, 0.7, 5.0, 1e4])
    def test_linear_diffusion_depth_ignores_k(self, k):
        assert intrinsic_cylinder((0.0,), 0.0, k, 0.5, 1.0, 1.0).depth == pytest.approx(0.25)

    def test_quadratic_case(self):
        assert intrinsic_cylinder((0.0,), 0.0, 4.0, 1.0, 1.0, 2.0).depth == pytest.approx(0.5)

    @pytest.mark.parametrize("k,rho,theta,m", [(0, 1, 1, 2), (1, 0, 1, 2), (1, 1, -1, 2), (1, 1, 1, 0.5)])
    def test_rejects_degenerate_inputs(self, k, rho, theta, m):
        with pytest.raises(InvalidParameter):
            intrinsic_cylinder((0.0,), 0.0, k, rho, theta, m)

    @given(
        k=st.floats(1e-3, 1e3),
        rho=st.floats(1e-2, 2.0),
        theta=st.floats(1e-2, 10.0),
        m=st.floats(1.0, 5.0),
    )
    def test_depth_formula(self, k, rho, theta, m):
        cyl = intrinsic_cylinder((0.0, 0.0), 1.0, k, rho, theta, m)
        assert cyl.depth == pytest.approx(theta * k ** (-(m - 1) / m) * rho**2, rel=1e-12)

    def test_realize_snaps_to_whole_levels(self, line):
        f = Field(line, np.zeros((11, 64)))
        cyl = Cylinder((0.0,), 1.0, 0.3, 1.0, 0.3 / 0.09, 1.0)  # depth 0.3
        reg = cyl.realize(f)
        assert reg.stop == 11
        assert reg.n_levels == 3
        assert np.allclose(np.abs(line.centers_1d()[reg.mask]) < 0.3, True)

    def test_realize_rejects_escaping_cylinder(self, line):
        f = Field(line, np.zeros((3, 64)))
        assert Cylinder((0.0,), 0.2, 0.3, 1.0, 1.0, 1.0).fits(f)
        deep = Cylinder((0.0,), 0.2, 0.6, 1.0, 1.0, 1.0)  # depth 0.36 needs 4 levels
        assert not deep.fits(f)
        with pytest.raises(InvalidRegion):
            deep.realize(f)
        assert not Cylinder((0.8,), 0.2, 0.3, 1.0, 0.1, 1.0).fits(f)


class TestOscillation:
    def test_constant_field(self, line):
        f = Field(line, np.full((3, 64), 2.5))
        assert oscillation(f) == 0.0

    def test_linear_function_range(self, line):
        f = Field.from_function(line, lambda x: x, tag="f")
        # cell centers stop half a cell short of each end
        assert oscillation(f) == pytest.approx(2.0 - line.h)

    def test_gaussian_sub_ball_matches_exhaustive_scan(self):
        g = Grid(2, 40, 1.0)
        f = Field.from_function(g, lambda x, y: np.exp(-((x - 0.1) ** 2 + y**2) / 0.2))
        reg = Region.ball(g, (0.3, -0.2), 0.4)
        vals = f.values[0][reg.mask]
        assert oscillation(f, reg) == vals.max() - vals.min()
        assert extrema(f, reg) == (vals.min(), vals.max())

    def test_empty_region_rejected(self, line):
        f = Field(line, np.zeros((1, 64)))
        with pytest.raises(InvalidRegion):
            oscillation(f, Region(np.zeros(64, bool), 0, 1))

    @settings(max_examples=40)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=64, max_size=64), st.floats(-1e3, 1e3))
    def test_oscillation_is_shift_invariant(self, values, shift):
        g = Grid(1, 64, 1.0)
        f = Field(g, np.array(values)[None], tag="f")
        assert oscillation(f.map(lambda v: v + shift)) == pytest.approx(oscillation(f), abs=1e-6)


class TestRestrict:
    def test_full_region_is_identity(self, line):
        f = Field.from_function(line, lambda x: np.sin(3 * x), tag="f")
        view = restrict(f, Region.full(f))
        assert np.array_equal(view.samples, f.values.reshape(1, -1))

    def test_constant_restricts_to_constant(self, line):
        f = Field(line, np.full((4, 64), 3.0))
        view = restrict(f, Region.box(line, [-0.2], [0.6], 1, 3))
        assert np.all(view.samples == 3.0)

    def test_out_of_grid_region_rejected(self, line):
        f = Field(line, np.zeros((2, 64)))
        with pytest.raises(InvalidRegion):
            restrict(f, Region(np.ones(64, bool), 0, 5))

    def test_intersection_is_contained(self, line):
        a = Region.ball(line, 0.0, 0.5, 0, 2)
        b = Region.box(line, [0.2], [0.9], 1, 3)
        c = a.intersect(b)
        assert a.contains(c) and b.contains(c)
        assert (c.start, c.stop) == (1, 2)


class TestDriftField:
    def test_constant_magnitude(self):
        g = Grid(2, 8, 1.0)
        B = DriftField.constant(g, [3.0, 4.0])
        assert np.allclose(B.magnitude, 5.0)
        assert B.is_static and not B.is_zero
        assert B.max_divergence() == 0.0

    def test_zero_field(self):
        assert DriftField.zeros(Grid(1, 8, 1.0)).is_zero
