import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import kl_quadrature, w2sq_transport
from wvae import autodiff as ad
from wvae import divergences as dv
from wvae.autodiff import Tensor
from wvae.metrics import GaussianFit, frechet_distance_sq


def test_kl_examples():
    assert dv.kl_to_std(([0.0], [1.0])) == 0.0
    assert dv.kl_to_std(([1.0], [1.0])) == pytest.approx(0.5, abs=1e-12)
    assert dv.kl_to_std(([0.0], [0.5])) == pytest.approx(0.31815, abs=1e-5)


@pytest.mark.parametrize("mu,sigma", [([1.0], [1.0]), ([0.0], [0.5]), ([0.3, -2.0], [0.2, 1.7])])
def test_kl_matches_quadrature(mu, sigma):
    assert dv.kl_to_std((mu, sigma)) == pytest.approx(kl_quadrature(mu, sigma), abs=1e-6)


def test_w2sq_examples():
    assert dv.w2sq_to_std(([0.0, 0.0], [1.0, 1.0])) == 0.0
    assert dv.w2sq_to_std(([3.0], [2.0])) == 10.0
    assert dv.w2sq_to_std(([0.0], [0.5])) == 0.25


@pytest.mark.parametrize("mu,sigma,expected", [([3.0], [2.0], 10.0), ([0.0], [0.5], 0.25)])
def test_w2sq_matches_transport(mu, sigma, expected):
    assert w2sq_transport(mu, sigma) == pytest.approx(expected, abs=1e-2)
    assert dv.w2sq_to_std((mu, sigma)) == pytest.approx(w2sq_transport(mu, sigma), abs=1e-2)


def test_t_gap_examples():
    assert dv.t_gap(([0.0, 0.0], [1.0, 1.0])) == 0.0
    t1 = dv.t_gap(([0.0], [0.5]))
    assert t1 == pytest.approx(math.log(0.25) + 2.25 - 1, abs=1e-14)
    assert t1 == pytest.approx(-0.13629, abs=1e-5)
    t2 = dv.t_gap(([0.0, 0.0], [0.5, 0.5]))
    assert t2 == pytest.approx(-0.27259, abs=1e-5)
    assert t2 <= 0


def test_sigma_constrain_examples():
    assert dv.sigma_constrain([50.0])[0] == 1.0
    assert dv.sigma_constrain([0.0])[0] == pytest.approx(math.log(2), abs=1e-15)
    assert dv.sigma_constrain([-20.0])[0] == 1e-4


def test_diag_gaussian_validation():
    with pytest.raises(ValueError):
        dv.DiagGaussian([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        dv.DiagGaussian([0.0], [0.0])
    with pytest.raises(ValueError):
        dv.DiagGaussian([], [])
    assert dv.DiagGaussian([0.0, 1.0], [1.0, 2.0]).dim == 2


def test_batched_inputs_give_per_row_values():
    mu = np.array([[0.0, 0.0], [1.0, 0.0]])
    sigma = np.ones((2, 2))
    np.testing.assert_array_equal(dv.w2sq_to_std((mu, sigma)), [0.0, 1.0])
    np.testing.assert_array_equal(dv.kl_to_std((mu, sigma)), [0.0, 0.5])


def test_divergences_record():
    v = dv.divergences(([1.0], [1.0]))
    assert (v.kl, v.w2sq, v.t) == (0.5, 1.0, 1.0)


def test_tensor_versions_agree():
    rng = np.random.default_rng(3)
    mu, sigma = rng.standard_normal((5, 4)), rng.uniform(0.1, 1.0, (5, 4))
    np.testing.assert_allclose(dv.kl_tensor(Tensor(mu), Tensor(sigma)).values, dv.kl_to_std((mu, sigma)), rtol=1e-14)
    np.testing.assert_allclose(dv.w2sq_tensor(Tensor(mu), Tensor(sigma)).values, dv.w2sq_to_std((mu, sigma)), rtol=1e-14)
    np.testing.assert_allclose(dv.t_gap_tensor(Tensor(mu), Tensor(sigma)).values, dv.t_gap((mu, sigma)), atol=1e-13)
    raw = rng.uniform(-30, 30, (5, 4))
    np.testing.assert_array_equal(dv.sigma_constrain_tensor(Tensor(raw)).values, dv.sigma_constrain(raw))


def test_t_gradient_closed_form():
    rng = np.random.default_rng(4)
    sigma = Tensor(rng.uniform(0.05, 2.0, (1, 6)))
    mu = ad.constant(np.zeros((1, 6)))
    ad.backward(ad.sum_(dv.t_gap_tensor(mu, sigma)))
    s = sigma.values
    np.testing.assert_allclose(sigma.grad, 2 * (s - 1) ** 2 / s, rtol=1e-12)


# --- properties ------------------------------------------------------------------------------

dims = st.integers(1, 8)


def gaussians(sigma_lo=1e-3, sigma_hi=3.0, mu_zero=False):
    @st.composite
    def build(draw):
        m = draw(dims)
        sig = draw(st.lists(st.floats(sigma_lo, sigma_hi), min_size=m, max_size=m))
        if mu_zero:
            mu = [0.0] * m
        else:
            mu = draw(st.lists(st.floats(-5, 5), min_size=m, max_size=m))
        return np.array(mu), np.array(sig)

    return build()


def test_kl_nonnegative_random_draws():
    rng = np.random.default_rng(5)
    m = rng.integers(1, 9, 10**4)
    mu = rng.normal(0, 2, (10**4, 8))
    sigma = rng.uniform(1e-3, 3.0, (10**4, 8))
    mask = np.arange(8) < m[:, None]
    mu, sigma = np.where(mask, mu, 0.0), np.where(mask, sigma, 1.0)
    assert np.all(dv.kl_to_std((mu, sigma)) >= 0)
    assert dv.kl_to_std((np.zeros(3), np.ones(3))) == 0.0


@settings(max_examples=200, deadline=None)
@given(gaussians())
def test_kl_zero_only_at_prior(q):
    mu, sigma = q
    value = dv.kl_to_std(q)
    if np.any(mu != 0) or np.any(sigma != 1):
        assert value > 0
    else:
        assert value == 0


@settings(max_examples=300, deadline=None)
@given(gaussians())
def test_factor_two_identity(q):
    t = dv.t_gap(q)
    assert abs(t - 2 * (dv.w2sq_to_std(q) - dv.kl_to_std(q))) < 1e-10


@settings(max_examples=300, deadline=None)
@given(gaussians(sigma_lo=1e-4, sigma_hi=1.0, mu_zero=True))
def test_t_nonpositive_in_unit_regime(q):
    assert dv.t_gap(q) <= 0


@settings(max_examples=200, deadline=None)
@given(gaussians(sigma_lo=0.01, sigma_hi=3.0), st.integers(0, 7))
def test_t_monotone_in_each_sigma(q, i):
    mu, sigma = q
    i = i % len(sigma)
    h = 1e-6
    up, down = sigma.copy(), sigma.copy()
    up[i] += h
    down[i] -= h
    fd = (dv.t_gap((mu, up)) - dv.t_gap((mu, down))) / (2 * h)
    assert fd >= -1e-6
    assert fd == pytest.approx(2 * (sigma[i] - 1) ** 2 / sigma[i], abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(gaussians(sigma_lo=0.05, sigma_hi=3.0))
def test_w2sq_matches_frechet(q):
    mu, sigma = q
    m = len(mu)
    a = GaussianFit(mu, np.diag(sigma**2), 0)
    b = GaussianFit(np.zeros(m), np.eye(m), 0)
    assert abs(frechet_distance_sq(a, b) - dv.w2sq_to_std(q)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_sigma_constrain_range(raw):
    s = dv.sigma_constrain(raw)
    assert np.all((s >= 1e-4) & (s <= 1.0))
