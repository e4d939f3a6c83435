import math

import numpy as np
import pytest
from scipy import stats

from fatclip.core import RngStream, as_vector
from fatclip.noise import (
    NoiseSpec,
    empirical_alpha_moment,
    estimate_tail_index,
    sample_noise_vector,
    sample_sas,
    sas_array,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", 1.5)
    with pytest.raises(ValueError):
        NoiseSpec("cauchy", 2.0)
    with pytest.raises(ValueError):
        NoiseSpec("alpha_stable", 2.5)
    with pytest.raises(ValueError):
        NoiseSpec("alpha_stable", 0.0)
    with pytest.raises(ValueError):
        NoiseSpec("alpha_stable", 1.5, scale=0.0)
    with pytest.raises(ValueError):
        NoiseSpec("laplace")
    assert NoiseSpec.cauchy(2.1) == NoiseSpec("cauchy", 1.0, 2.1)


@pytest.mark.parametrize("alpha,sigma", [(0.0, 1.0), (2.1, 1.0), (1.0, 0.0), (1.5, -1.0)])
def test_sas_rejects_bad_params(alpha, sigma):
    with pytest.raises(ValueError):
        sample_sas(alpha, sigma, RngStream(0))


def test_gaussian_limit_variance():
    x = sas_array(2.0, 1.0, 1_000_000, RngStream(1))
    assert abs(np.var(x) - 2.0) < 0.05


def test_cauchy_half_mass_within_scale():
    x = sas_array(1.0, 1.0, 1_000_000, RngStream(2))
    assert abs(np.mean(np.abs(x) <= 1.0) - 0.5) < 0.005


def test_cauchy_scale_equivariance():
    a = sas_array(1.0, 1.0, 1000, RngStream(3))
    b = sas_array(1.0, 2.0, 1000, RngStream(3))
    assert np.array_equal(b, 2.0 * a)


def test_stream_reproducible_scalar():
    assert sample_sas(1.5, 1.0, RngStream(4, (1, 2))) == sample_sas(1.5, 1.0, RngStream(4, (1, 2)))


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
def test_symmetry(alpha):
    x = sas_array(alpha, 1.0, 1_000_000, RngStream(5, (int(alpha * 10),)))
    assert abs(np.mean(np.sign(x))) < 0.005


def test_ks_against_cauchy_cdf():
    x = sas_array(1.0, 1.0, 100_000, RngStream(6))
    assert stats.kstest(x, stats.cauchy.cdf).statistic < 0.01


@pytest.mark.parametrize("alpha", [0.7, 1.5])
def test_general_alpha_matches_scipy_levy_stable(alpha):
    # scipy's S1 parameterisation with beta=0 uses the same scale convention
    x = np.sort(sas_array(alpha, 1.0, 100_000, RngStream(7, (int(alpha * 10),))))
    grid = np.linspace(-5, 5, 21)
    emp = np.searchsorted(x, grid, side="right") / x.size
    ref = stats.levy_stable.cdf(grid, alpha, 0.0)
    assert np.max(np.abs(emp - ref)) < 0.01


def test_noise_vector_none_is_zero():
    assert sample_noise_vector(NoiseSpec(), 3, RngStream(0)).tolist() == [0, 0, 0]


def test_noise_vector_cauchy_appendix_scale():
    spec = NoiseSpec.cauchy(2.1)
    draws = np.vstack([sample_noise_vector(spec, 3, RngStream(8, (i,))) for i in range(100_000)])
    frac = np.mean(np.abs(draws) <= 2.1, axis=0)
    assert np.all(np.abs(frac - 0.5) < 0.01)


def test_noise_vector_gaussian_norm():
    v = sample_noise_vector(NoiseSpec.gaussian(1.0), 100_000, RngStream(9))
    assert abs(float(v @ v) / v.size - 2.0) < 0.05


def test_noise_vector_location_and_pareto():
    v = sample_noise_vector(NoiseSpec("gaussian", 2.0, 1e-9, location=3.0), 4, RngStream(10))
    assert np.allclose(v, 3.0, atol=1e-6)
    p = sample_noise_vector(NoiseSpec("pareto_symmetric", 1.5, 2.0), 200_000, RngStream(11))
    assert np.all(np.abs(p) >= 2.0)
    # P(|X| > 2 s) = 2**-alpha
    assert abs(np.mean(np.abs(p) > 4.0) - 2**-1.5) < 0.005
    with pytest.raises(ValueError):
        sample_noise_vector(NoiseSpec(), 0, RngStream(0))


def test_tail_index_gaussian_and_cauchy():
    g = estimate_tail_index(RngStream(12).generator().standard_normal(1_000_000))
    c = estimate_tail_index(RngStream(13).generator().standard_cauchy(1_000_000))
    assert 1.90 <= g.alpha_hat <= 2.00
    assert 0.90 <= c.alpha_hat <= 1.10
    assert g.block_count == 1000 and g.block_size == 1000 and g.n_samples == 1_000_000


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_tail_index_recovers_stable_alpha(alpha):
    est = estimate_tail_index(sas_array(alpha, 1.0, 1_000_000, RngStream(14)))
    assert abs(est.alpha_hat - alpha) < 0.1 * alpha


@pytest.mark.parametrize("c", [1e-3, -2.5, 7.0, 1e6])
def test_tail_index_scale_invariant(c):
    x = RngStream(15).generator().standard_cauchy(10_000)
    assert abs(estimate_tail_index(c * x).alpha_hat - estimate_tail_index(x).alpha_hat) <= 1e-9


def test_tail_index_errors():
    with pytest.raises(ValueError, match="zero"):
        estimate_tail_index(np.zeros(100))
    with pytest.raises(ValueError, match="insufficient"):
        estimate_tail_index(np.ones(10), block_count=5)
    with pytest.raises(ValueError):
        estimate_tail_index(np.array([1.0, np.nan, 1.0, 1.0]))


def test_tail_index_clamped_to_two():
    # near-cancelling signs keep block sums tiny, so the raw estimate exceeds 2
    x = np.tile([1.0, -1.0, 1.0, -1.0 + 1e-3], 2500)
    assert estimate_tail_index(x).alpha_hat == 2.0


@pytest.mark.parametrize(
    "samples,alpha,expected",
    [([[3, 4]], 2.0, 25.0), ([[0, 0], [0, 0]], 1.5, 0.0), ([[1, 0], [0, 1]], 1.0, 1.0)],
)
def test_alpha_moment_examples(samples, alpha, expected):
    assert empirical_alpha_moment([as_vector(s) for s in samples], alpha) == pytest.approx(expected)


def test_alpha_moment_errors():
    with pytest.raises(ValueError):
        empirical_alpha_moment([], 1.0)
    with pytest.raises(ValueError):
        empirical_alpha_moment([as_vector([1.0])], 2.5)


def test_lower_moment_is_stable():
    # tail index 1.5, moment of order 0.75 < 1.5 is finite
    vals = []
    for run in range(10):
        x = sas_array(1.5, 1.0, 10_000, RngStream(16, (run,)))
        vals.append(empirical_alpha_moment(x.reshape(-1, 1), 0.75))
    vals = np.array(vals)
    assert (vals.max() - vals.min()) / vals.mean() < 0.25
    assert math.isfinite(vals.mean())
