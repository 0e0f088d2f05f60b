import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circle_explorer.model import (Circle, Dataset, FieldBounds, Measurement, SensorResponse,
                                   contains_point, log_likelihood, log_likelihood_point,
                                   log_prior, sample_prior, white_mask)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
coord = st.floats(-50, 50, allow_nan=False)


class TestContainsPoint:
    def test_center(self):
        assert contains_point(Circle(5, 5, 2), 5, 5)

    def test_boundary_is_white(self):
        assert contains_point(Circle(5, 5, 2), 7, 5)

    def test_just_outside(self):
        assert not contains_point(Circle(5, 5, 2), 7.001, 5)

    @given(coord, coord, st.floats(0.1, 20), coord, coord)
    def test_reflection_symmetry(self, x0, y0, r, x, y):
        c = Circle(x0, y0, r)
        assert contains_point(c, x, y) == contains_point(Circle(-x0, y0, r), -x, y)
        assert contains_point(c, x, y) == contains_point(Circle(x0, -y0, r), x, -y)

    @given(coord, coord, st.floats(0.1, 20), coord, coord)
    def test_matches_vectorized_mask(self, x0, y0, r, x, y):
        assert white_mask([[x0, y0, r]], [x], [y])[0, 0] == contains_point(Circle(x0, y0, r), x, y)


class TestPrior:
    def test_default_density(self):
        assert log_prior(Circle(10, 15, 5)) == pytest.approx(math.log(1 / (20 * 30 * 14)))

    def test_outside_radius(self):
        assert log_prior(Circle(10, 15, 0.5)) == -math.inf

    def test_closed_support(self):
        assert math.isfinite(log_prior(Circle(0.0, 15, 5)))
        assert math.isfinite(log_prior(Circle(20.0, 30.0, 15.0)))

    def test_center_outside_field(self):
        assert log_prior(Circle(-0.01, 15, 5)) == -math.inf

    def test_normalized_by_quadrature(self):
        # midpoint grid over a box strictly larger than the support
        xs = np.linspace(-2, 22, 49)[:-1] + 0.25
        ys = np.linspace(-2, 32, 69)[:-1] + 0.25
        rs = np.linspace(0, 16, 33)[:-1] + 0.25
        cell = 0.5 ** 3
        total = sum(math.exp(log_prior(Circle(x, y, r))) for x in xs for y in ys for r in rs)
        assert total * cell == pytest.approx(1.0, abs=1e-3)

    def test_sample_support(self):
        rng = np.random.default_rng(0)
        draws = sample_prior(FieldBounds(), 1, 15, rng, size=10_000)
        assert draws.shape == (10_000, 3)
        assert np.all((draws[:, 0] >= 0) & (draws[:, 0] <= 20))
        assert np.all((draws[:, 1] >= 0) & (draws[:, 1] <= 30))
        assert np.all((draws[:, 2] >= 1) & (draws[:, 2] <= 15))

    def test_sample_radius_mean(self):
        rng = np.random.default_rng(1)
        r = sample_prior(FieldBounds(), 1, 15, rng, size=10_000)[:, 2]
        se = (14 / math.sqrt(12)) / math.sqrt(10_000)
        assert abs(r.mean() - 8.0) <= 3 * se

    def test_sample_deterministic(self):
        a = [sample_prior(FieldBounds(), 1, 15, rng) for rng in [np.random.default_rng(5)] * 5]
        b = [sample_prior(FieldBounds(), 1, 15, rng) for rng in [np.random.default_rng(5)] * 5]
        assert a == b
        assert isinstance(a[0], Circle)


class TestLikelihood:
    s = SensorResponse(d_white=0.8, d_black=0.2, sigma=1.0)
    c = Circle(5, 5, 2)

    def test_inside_peak(self):
        m = Measurement(5, 5, 0.8, 1)
        assert log_likelihood_point(self.c, self.s, m) == pytest.approx(-HALF_LOG_2PI)

    def test_outside_peak(self):
        m = Measurement(15, 15, 0.2, 1)
        assert log_likelihood_point(self.c, self.s, m) == pytest.approx(-HALF_LOG_2PI)

    def test_one_sigma(self):
        m = Measurement(5, 5, 0.8 + 1.0, 1)
        assert log_likelihood_point(self.c, self.s, m) == pytest.approx(-HALF_LOG_2PI - 0.5)

    def test_empty_dataset(self):
        assert log_likelihood(self.c, self.s, Dataset()) == 0.0

    def test_additive(self):
        d = Dataset()
        a = d.append(5, 5, 0.7)
        b = d.append(15, 15, 0.4)
        expected = log_likelihood_point(self.c, self.s, a) + log_likelihood_point(self.c, self.s, b)
        assert log_likelihood(self.c, self.s, d) == pytest.approx(expected)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0, 20), st.floats(0, 30), st.floats(0, 1)),
                    min_size=1, max_size=12), st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        s = SensorResponse()
        d1 = Dataset()
        for r in rows:
            d1.append(*r)
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        d2 = Dataset()
        for r in shuffled:
            d2.append(*r)
        c = Circle(10, 15, 5)
        assert log_likelihood(c, s, d1) == pytest.approx(log_likelihood(c, s, d2), abs=1e-9)

    @given(st.floats(-2, 3))
    def test_maximized_at_branch_level(self, d):
        s = SensorResponse()
        inside = Measurement(5, 5, d, 1)
        outside = Measurement(15, 15, d, 1)
        assert log_likelihood_point(self.c, s, inside) <= log_likelihood_point(
            self.c, s, Measurement(5, 5, s.d_white, 1))
        assert log_likelihood_point(self.c, s, outside) <= log_likelihood_point(
            self.c, s, Measurement(15, 15, s.d_black, 1))


class TestTypes:
    def test_dataset_indices(self):
        d = Dataset()
        for i in range(4):
            d.append(i, i, 0.5)
        assert [m.index for m in d] == [1, 2, 3, 4]
        xs, ys, ds = d.arrays()
        assert xs.tolist() == [0, 1, 2, 3]

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            FieldBounds(5, 5, 0, 1)

    def test_bad_response(self):
        with pytest.raises(ValueError):
            SensorResponse(0.2, 0.8, 0.1)
        with pytest.raises(ValueError):
            SensorResponse(0.8, 0.2, 0.0)
