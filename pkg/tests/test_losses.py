import math

import numpy as np
import pytest
import torch

from cvid.core.errors import ArityError, DomainError
from cvid.core.imaging import to_tensor
from cvid.execution.trainer import TrainConfig, compute_loss
from cvid.ml.losses import (
    kl_gaussian,
    monte_carlo_kl,
    reconstruction_loss,
    sde_loss,
    total_loss,
)
from cvid.ml.networks import CVIDNet, GaussianLatent, NetworkConfig


def _latent(mu, sigma, shape=(2, 1, 3, 3)):
    return GaussianLatent(
        torch.full(shape, mu, dtype=torch.float64), torch.full(shape, sigma, dtype=torch.float64)
    )


def _closed_form(mq, sq, mp, sp):
    return math.log(sp / sq) + (sq**2 + (mq - mp) ** 2) / (2 * sp**2) - 0.5


class TestKL:
    def test_identical_distributions(self):
        assert kl_gaussian(_latent(0.4, 1.3), _latent(0.4, 1.3)).item() == 0.0

    def test_sums_pixels_and_averages_batch(self):
        # 0.5 nats per pixel, 9 pixels per sample
        assert kl_gaussian(_latent(1.0, 1.0), _latent(0.0, 1.0)).item() == pytest.approx(4.5)

    @pytest.mark.parametrize("params", [(0.0, 1.0, 1.0, 2.0), (-1.5, 0.3, 0.2, 0.9), (2.0, 3.0, -1.0, 0.5)])
    def test_matches_closed_form(self, params):
        value = kl_gaussian(_latent(params[0], params[1], (1, 1, 1, 1)), _latent(params[2], params[3], (1, 1, 1, 1)))
        assert value.item() == pytest.approx(_closed_form(*params), rel=1e-12)

    def test_matches_monte_carlo(self):
        params = (0.3, 0.8, -0.2, 1.4)
        mc = monte_carlo_kl(*params, samples=200_000, rng=np.random.default_rng(5))
        assert mc == pytest.approx(_closed_form(*params), rel=0.01, abs=1e-3)

    def test_never_negative(self, rng):
        mu = torch.tensor(rng.normal(size=(4, 1, 5, 5)))
        sigma = torch.tensor(rng.uniform(0.1, 3.0, size=(4, 1, 5, 5)))
        q = GaussianLatent(mu, sigma)
        assert kl_gaussian(q, GaussianLatent(mu.clone(), sigma.clone())).item() == 0.0
        assert kl_gaussian(q, GaussianLatent(mu * 0.5, sigma * 1.1)).item() > 0.0

    def test_gradient_survives_near_equal_sigmas(self, rng):
        sigma_p = torch.tensor(rng.uniform(0.5, 2.0, size=(2, 1, 4, 4)))
        delta = torch.tensor(rng.choice([-1.0, 1.0], size=(2, 1, 4, 4)) * rng.uniform(1e-9, 1e-8, size=(2, 1, 4, 4)))
        sigma_q = (sigma_p * (1 + delta)).requires_grad_(True)
        mu = torch.zeros_like(sigma_p)
        kl_gaussian(GaussianLatent(mu, sigma_q), GaussianLatent(mu.clone(), sigma_p)).backward()
        # d/dσq of log σp/σq + σq²/2σp², per pixel, divided by the batch of 2
        expected = (sigma_q.detach() - sigma_p) * (sigma_q.detach() + sigma_p) / (sigma_q.detach() * sigma_p**2) / 2
        assert bool((sigma_q.grad != 0).all())
        assert torch.equal(torch.sign(sigma_q.grad), torch.sign(delta))
        assert torch.allclose(sigma_q.grad, expected, rtol=1e-4, atol=0.0)

    def test_non_positive_sigma(self):
        with pytest.raises(DomainError):
            kl_gaussian(_latent(0.0, 0.0), _latent(0.0, 1.0))

    def test_shape_mismatch(self):
        with pytest.raises(ArityError):
            kl_gaussian(_latent(0.0, 1.0), _latent(0.0, 1.0, (2, 1, 3, 4)))


class TestFrobeniusLosses:
    def test_reconstruction_is_batch_mean_of_squared_norms(self):
        y = torch.zeros(2, 3, 4, 4)
        yhat = torch.ones(2, 3, 4, 4)
        yhat[1] = 0.5
        # sample 0: 48 * 1, sample 1: 48 * 0.25
        assert reconstruction_loss(y, yhat).item() == pytest.approx((48 + 12) / 2)

    def test_duplicated_batch_gives_same_loss(self, rng):
        y = torch.tensor(rng.random((2, 3, 4, 4)))
        yhat = torch.tensor(rng.random((2, 3, 4, 4)))
        doubled = reconstruction_loss(torch.cat([y, y]), torch.cat([yhat, yhat]))
        assert doubled.item() == pytest.approx(reconstruction_loss(y, yhat).item(), rel=1e-12)

    def test_sde_loss_averages_per_image_errors(self):
        d = torch.zeros(2, 1, 1, 1, dtype=torch.float64)
        dhat = torch.tensor([math.sqrt(0.3), math.sqrt(0.5)], dtype=torch.float64).reshape(2, 1, 1, 1)
        assert sde_loss(d, dhat).item() == pytest.approx(0.4, rel=1e-12)
        assert sde_loss(d, dhat.flip(0)).item() == pytest.approx(0.4, rel=1e-12)

    def test_sde_loss_zero_on_exact_estimate(self, rng):
        d = torch.tensor(rng.random((3, 3, 5, 5)))
        assert sde_loss(d, d.clone()).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ArityError):
            reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))
        with pytest.raises(ArityError):
            sde_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4))


class TestTotalLoss:
    def test_composition(self):
        breakdown = total_loss(2.0, 3.0, 5.0, beta=0.1, lam=2.0)
        assert breakdown.cvae == pytest.approx(3.2)
        assert breakdown.total == pytest.approx(13.2)

    def test_zero_lambda_is_cvae(self):
        breakdown = total_loss(2.0, 3.0, 5.0, beta=0.5, lam=0.0)
        assert breakdown.total == breakdown.cvae == 4.0

    @pytest.mark.parametrize("args", [(-1.0, 1.0, 1.0, 0.1, 1.0), (1.0, 1.0, 1.0, -0.1, 1.0), (1.0, 1.0, 1.0, 0.1, -1.0)])
    def test_negative_terms(self, args):
        with pytest.raises(DomainError):
            total_loss(*args)

    def test_nan_is_reported_not_raised(self):
        breakdown = total_loss(float("nan"), 1.0, 1.0, 0.1, 1.0)
        assert not breakdown.is_finite()

    def test_record_holds_plain_floats(self):
        breakdown = total_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0), 0.5, 1.0)
        record = breakdown.to_record()
        assert record == {"kl": 1.0, "rec": 2.0, "sde": 3.0, "cvae": 2.5, "total": 5.5}
        assert all(isinstance(v, float) for v in record.values())


def _training_batch(random_image, n=2, size=8):
    rainy = torch.cat([to_tensor(random_image(size, size), torch.float64) for _ in range(n)])
    clean = torch.cat([to_tensor(random_image(size, size), torch.float64) for _ in range(n)])
    density = torch.cat([to_tensor(random_image(size, size), torch.float64) for _ in range(n)])
    return rainy, clean, density


class TestComputeLoss:
    def test_gradients_match_finite_differences(self, random_image):
        model = CVIDNet(NetworkConfig(depth=2, filters=4, sde_layers=2), seed=0).to(torch.float64)
        gen = torch.Generator().manual_seed(17)
        with torch.no_grad():
            # Move the heads off zero so posterior and prior differ.
            for branch in model.branches.values():
                for head in (branch.encoder.head, branch.prior.head):
                    head.weight.normal_(0.0, 0.1, generator=gen)
                    head.bias.normal_(0.0, 0.1, generator=gen)
        model.train()
        rainy, clean, density = _training_batch(random_image)
        config = TrainConfig(beta=0.1, lam=1.0)

        def loss() -> torch.Tensor:
            return compute_loss(model, rainy, clean, density, config, noise_seed=4)[0].total

        model.zero_grad()
        loss().backward()
        params = list(model.parameters())
        h = 1e-5
        for _ in range(50):
            param = params[int(torch.randint(len(params), (1,), generator=gen))]
            flat = int(torch.randint(param.numel(), (1,), generator=gen))
            analytic = param.grad.view(-1)[flat].item()
            with torch.no_grad():
                original = param.view(-1)[flat].item()
                param.view(-1)[flat] = original + h
                plus = loss().item()
                param.view(-1)[flat] = original - h
                minus = loss().item()
                param.view(-1)[flat] = original
            numeric = (plus - minus) / (2 * h)
            assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-6

    def test_without_sde_term_is_zero(self, random_image):
        model = CVIDNet(NetworkConfig(depth=2, filters=4, use_sde=False)).to(torch.float64)
        breakdown, out = compute_loss(model, *_training_batch(random_image), TrainConfig(), noise_seed=0)
        assert float(breakdown.sde) == 0.0
        assert torch.all(out.dhat == 0)

    def test_fresh_model_has_zero_kl(self, tiny_model, random_image):
        breakdown, _ = compute_loss(tiny_model, *_training_batch(random_image), TrainConfig(), noise_seed=0)
        assert float(breakdown.kl) == 0.0
        assert float(breakdown.total) == pytest.approx(float(breakdown.rec) + float(breakdown.sde))
