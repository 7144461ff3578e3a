"""
Training objectives

    L_KL   closed-form KL between diagonal Gaussians, summed over pixels, mean over batch
    L_rec  (1/N) Σ_i Σ_c ‖y_ic − ŷ_ic‖²_F
    L_SDE  (1/N) Σ_i Σ_c ‖D_ic − D̂_ic‖²_F
    L_CVAE = L_rec + β·L_KL
    L_CVID = L_CVAE + λ·L_SDE
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
from scipy.special import ndtri

from ..core.errors import ArityError, DomainError
from .networks import GaussianLatent

Scalar = Union[float, torch.Tensor]


def kl_gaussian(q: GaussianLatent, p: GaussianLatent) -> torch.Tensor:
    """KL(q ‖ p) for per-pixel diagonal Gaussians of shape (N, k, H, W)."""
    if q.mu.shape != p.mu.shape:
        raise ArityError(f"q {tuple(q.mu.shape)} and p {tuple(p.mu.shape)} differ in shape")
    if bool((q.sigma <= 0).any()) or bool((p.sigma <= 0).any()):
        raise DomainError("every sigma must be strictly positive")
    # log σp/σq + σq²/2σp² − ½ == ½(expm1(t) − t) with t = log σq²/σp²; never rounds below 0.
    t = 2 * (torch.log(q.sigma) - torch.log(p.sigma))
    per_pixel = 0.5 * (torch.expm1(t) - t) + (q.mu - p.mu) ** 2 / (2 * p.sigma * p.sigma)
    batch = per_pixel.shape[0] if per_pixel.dim() > 0 else 1
    return per_pixel.sum() / batch


def _batch_frobenius(target: torch.Tensor, estimate: torch.Tensor, what: str) -> torch.Tensor:
    if target.shape != estimate.shape:
        raise ArityError(
            f"{what}: shapes {tuple(target.shape)} and {tuple(estimate.shape)} differ"
        )
    if target.dim() != 4 or target.shape[0] < 1:
        raise ArityError(f"{what}: expected a non-empty (N, C, H, W) batch")
    return ((target - estimate) ** 2).sum(dim=(1, 2, 3)).mean()


def reconstruction_loss(y_batch: torch.Tensor, yhat_batch: torch.Tensor) -> torch.Tensor:
    return _batch_frobenius(y_batch, yhat_batch, "reconstruction_loss")


def sde_loss(d_batch: torch.Tensor, dhat_batch: torch.Tensor) -> torch.Tensor:
    return _batch_frobenius(d_batch, dhat_batch, "sde_loss")


def _value(x: Scalar) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss terms of one step. Fields are tensors while training, floats once detached."""

    kl: Scalar
    rec: Scalar
    sde: Scalar
    cvae: Scalar
    total: Scalar
    beta: float
    lam: float

    def detach(self) -> "LossBreakdown":
        return LossBreakdown(
            kl=_value(self.kl),
            rec=_value(self.rec),
            sde=_value(self.sde),
            cvae=_value(self.cvae),
            total=_value(self.total),
            beta=self.beta,
            lam=self.lam,
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(_value(self.total)))

    def to_record(self) -> Dict[str, Any]:
        flat = self.detach()
        return {
            "kl": flat.kl,
            "rec": flat.rec,
            "sde": flat.sde,
            "cvae": flat.cvae,
            "total": flat.total,
        }


def total_loss(kl: Scalar, rec: Scalar, sde: Scalar, beta: float, lam: float) -> LossBreakdown:
    for name, term in (("kl", kl), ("rec", rec), ("sde", sde), ("beta", beta), ("lambda", lam)):
        # NaN passes through so the trainer can report divergence with its step.
        if _value(term) < 0:
            raise DomainError(f"{name} must be non-negative, got {_value(term)}")
    cvae = rec + beta * kl
    total = cvae + lam * sde
    return LossBreakdown(kl=kl, rec=rec, sde=sde, cvae=cvae, total=total, beta=beta, lam=lam)


def monte_carlo_kl(
    mu_q: float,
    sigma_q: float,
    mu_p: float,
    sigma_p: float,
    samples: int = 1_000_000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Stratified Monte-Carlo estimate of E_q[log q(z) − log p(z)] for scalar Gaussians."""
    rng = rng or np.random.default_rng(0)
    u = (np.arange(samples) + rng.random(samples)) / samples
    z = mu_q + sigma_q * ndtri(u)
    log_q = -np.log(sigma_q) - 0.5 * ((z - mu_q) / sigma_q) ** 2
    log_p = -np.log(sigma_p) - 0.5 * ((z - mu_p) / sigma_p) ** 2
    return float(np.mean(log_q - log_p))
