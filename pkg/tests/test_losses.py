import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajembed.losses import (
    ContrastiveSpec, MECSpec, cross_entropy, distance_loss, infonce, kl_gaussian, kl_gaussian_logsigma, mec,
    pointwise_recon, reg_norm,
)
from trajembed.numerics import ShapeError, Tensor

finite = st.floats(-5, 5, allow_nan=False)


def test_pointwise_examples():
    assert pointwise_recon([3.0], [1.0], "mse").item() == 4.0
    assert pointwise_recon([3.0], [1.0], "mae").item() == 2.0
    assert pointwise_recon([2.0, 5.0], [2.0, 5.0]).item() == 0.0
    assert pointwise_recon([0.0, 2.0], [1.0, 2.0]).item() == 0.5
    with pytest.raises(ShapeError):
        pointwise_recon([1.0, 2.0], [1.0])


def test_pointwise_mask_ignores_padding():
    assert pointwise_recon([1.0, 9.0], [0.0, 0.0], mask=[1, 0]).item() == 1.0


def test_cross_entropy_examples():
    assert cross_entropy([[0.0, 0.0, 0.0]], [2]).item() == pytest.approx(np.log(3), abs=1e-15)
    assert cross_entropy([[10.0, -10.0]], [0]).item() == pytest.approx(np.log1p(np.exp(-20.0)), rel=1e-9)
    assert cross_entropy([[10.0, -10.0]], [0]).item() == pytest.approx(2.06e-9, rel=1e-2)
    assert cross_entropy([[3.7]], [0]).item() == 0.0
    with pytest.raises(IndexError):
        cross_entropy([[0.0, 0.0]], [2])


def test_distance_examples():
    assert distance_loss([[104.0, 30.0]], [[104.0, 30.0]]).item() == pytest.approx(0.0, abs=1e-6)
    assert distance_loss([[0.0, 0.0]], [[1.0, 0.0]]).item() == pytest.approx(111_195.0, abs=10.0)
    a, b = [[104.1, 30.2]], [[104.3, 30.25]]
    assert distance_loss(a, b).item() == distance_loss(b, a).item()


def test_infonce_examples():
    assert infonce(Tensor([[0.3, -1.0]]), Tensor([[2.0, 0.5]])).item() == 0.0
    z = Tensor([[1.0, 0.0], [0.0, 1.0]])
    val = infonce(z, z, ContrastiveSpec(temperature=1.0)).item()
    assert val == pytest.approx(-np.log(np.e / (np.e + 1)), abs=1e-12)
    assert val == pytest.approx(0.3133, abs=1e-4)


@pytest.mark.parametrize("b", [2, 8, 64])
def test_infonce_equal_similarities_is_log_batch(b):
    z = Tensor(np.ones((b, 3)) * 0.5)
    assert abs(infonce(z, z).item() - np.log(b)) <= 1e-9


def test_mec_examples():
    rng = np.random.default_rng(0)
    assert mec(Tensor(np.zeros((4, 3))), Tensor(rng.normal(size=(4, 3)))).item() == 0.0
    assert mec(Tensor([[1.0]]), Tensor([[1.0]]), MECSpec(1.0)).item() == pytest.approx(-np.log(2), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_mec_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.normal(size=(5, 3)) * 0.3, rng.normal(size=(5, 3)) * 0.3
    perm = rng.permutation(5)
    a = mec(Tensor(z1), Tensor(z2)).item()
    b = mec(Tensor(z1[perm]), Tensor(z2[perm])).item()
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_reg_norm_examples():
    assert reg_norm([3.0, -4.0], "l1").item() == 7.0
    assert reg_norm([3.0, -4.0], "l2").item() == pytest.approx(5.0, abs=1e-14)
    assert reg_norm(np.zeros(3), "l1").item() == 0.0
    assert reg_norm(np.zeros(3), "l2").item() == pytest.approx(0.0, abs=1e-14)
    assert reg_norm([0.0, 1.0, 0.0], "l2").item() == pytest.approx(1.0, abs=1e-14)


def test_kl_examples():
    assert kl_gaussian([0.0, 0.0], [1.0, 1.0]).item() == 0.0
    assert kl_gaussian([1.0], [1.0]).item() == 0.5
    assert kl_gaussian_logsigma([1.0], [0.0]).item() == 0.5


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    mu, sigma = rng.normal(size=3), rng.uniform(0.3, 2.0, size=3)
    eps = rng.standard_normal((1_000_000, 3))
    z = mu + sigma * eps
    log_q = -0.5 * eps ** 2 - np.log(sigma)
    log_p = -0.5 * z ** 2
    estimate = float(np.mean(np.sum(log_q - log_p, axis=1)))
    closed = kl_gaussian(mu, sigma).item()
    assert abs(closed - estimate) / closed <= 0.01


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=st.floats(0.05, 5)))
def test_kl_nonnegative(mu, sigma):
    assert kl_gaussian(mu, sigma).item() >= 0.0
    np.testing.assert_allclose(kl_gaussian_logsigma(mu, np.log(sigma)).item(), kl_gaussian(mu, sigma).item(),
                               rtol=1e-9, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       st.integers(0, 3))
def test_losses_nonnegative_and_finite(a, b, target):
    values = [
        pointwise_recon(a, b, "mse").item(), pointwise_recon(a, b, "mae").item(),
        cross_entropy(a, np.full(3, target)).item(), infonce(Tensor(a), Tensor(b)).item(),
        reg_norm(a, "l1").item(), reg_norm(a, "l2").item(),
    ]
    assert all(np.isfinite(v) and v >= 0 for v in values)
    assert np.isfinite(mec(Tensor(a * 0.1), Tensor(a * 0.1)).item())


def test_spec_validation():
    with pytest.raises(ValueError):
        ContrastiveSpec(temperature=0.0)
    with pytest.raises(ValueError):
        MECSpec(eps=-1.0)
