import numpy as np
import pytest
from scipy.special import beta as beta_fn, gamma

from fracwos.problems import by_name, example1, example2, example3
from fracwos.sampling import point_estimate


class TestExample1:
    def test_center_value_alpha_one(self, ex1):
        assert float(ex1.exact(np.zeros((1, 2)))[0]) == pytest.approx(2 / np.pi,
                                                                      rel=1e-12)

    def test_coefficient_full_form(self):
        # same coefficient written with the beta-function normalization
        for alpha in (0.4, 1.0, 1.6):
            p = example1(alpha)
            full = gamma(1 - alpha / 2) / (
                2 ** alpha * gamma(1 + alpha / 2) * (alpha / 2)
                * beta_fn(alpha / 2, 1 - alpha / 2))
            assert float(p.exact(np.zeros((1, 2)))[0]) == pytest.approx(full,
                                                                        rel=1e-12)

    def test_zero_on_boundary(self, ex1):
        bd = np.array([[1.0, 0.0], [0.0, -1.0], [np.sqrt(0.5), np.sqrt(0.5)]])
        np.testing.assert_allclose(ex1.exact(bd), 0.0, atol=1e-15)

    def test_radial_symmetry(self, ex1, rng):
        r = rng.uniform(0, 1, 50)
        ang1, ang2 = rng.uniform(0, 2 * np.pi, (2, 50))
        p1 = np.column_stack([r * np.cos(ang1), r * np.sin(ang1)])
        p2 = np.column_stack([r * np.cos(ang2), r * np.sin(ang2)])
        np.testing.assert_allclose(ex1.exact(p1), ex1.exact(p2), rtol=1e-12)

    def test_source_and_exterior(self, ex1, rng):
        pts = rng.uniform(-2, 2, (100, 2))
        np.testing.assert_array_equal(ex1.f(pts), 1.0)
        np.testing.assert_array_equal(ex1.g(pts), 0.0)


class TestExample2:
    def test_center_value(self, ex2):
        assert float(ex2.exact(np.zeros((1, 2)))[0]) == 1.0

    def test_zero_on_boundary(self, ex2):
        assert float(ex2.exact(np.array([[0.6, 0.8]]))[0]) == pytest.approx(0.0,
                                                                            abs=1e-15)

    def test_source_center_alpha_one(self, ex2):
        # 2 Gamma(5/2) Gamma(3/2) = 3 pi / 4
        assert float(ex2.f(np.zeros((1, 2)))[0]) == pytest.approx(3 * np.pi / 4,
                                                                  rel=1e-12)

    def test_solution_profile(self, ex2, rng):
        pts = rng.uniform(-0.7, 0.7, (50, 2))
        r2 = (pts ** 2).sum(axis=1)
        np.testing.assert_allclose(ex2.exact(pts), (1 - r2) ** 1.5, rtol=1e-12)


class TestExample3:
    def test_exterior_oscillation(self, ex3):
        x = np.sqrt(np.pi)
        assert float(ex3.g(np.array([[x, 0.0]]))[0]) == pytest.approx(0.0, abs=1e-12)

    def test_source_center(self, ex3):
        assert float(ex3.f(np.zeros((1, 2)))[0]) == 2.0

    def test_exterior_bounded(self, ex3, rng):
        pts = rng.uniform(-100, 100, (1000, 2))
        assert np.abs(ex3.g(pts)).max() <= 1.0

    def test_no_exact(self, ex3):
        assert ex3.exact is None


class TestRegistry:
    def test_by_name(self):
        assert by_name("example2", 0.7).name == "example2"
        with pytest.raises(ValueError):
            by_name("example9", 1.0)

    def test_fields_finite(self, rng):
        pts = rng.uniform(-3, 3, (200, 2))
        for name in ("example1", "example2", "example3"):
            p = by_name(name, 1.3)
            assert np.isfinite(p.f(pts)).all()
            assert np.isfinite(p.g(pts)).all()


class TestSamplingTiesToAnalytics:
    @pytest.mark.parametrize("make", [example1, example2])
    def test_point_estimates_match_exact(self, make, rng):
        prob = make(1.0)
        pts = prob.domain.sample_uniform(np.random.default_rng(3), 5)
        M = 40000
        for p in pts:
            est = point_estimate(p, prob, M, seed=13)
            se = np.sqrt(est.variance / M)
            exact = float(prob.exact(p[None, :])[0])
            assert abs(est.mean - exact) <= 4 * se + 1e-9
