"""
Fast invariant suite behind ``cvid check``

Each check is a zero-argument callable returning (passed, detail). The
suite runs them all, times each one and never stops at the first failure.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.special import expit

from .core.errors import ConfigurationError
from .core.imaging import ImageTensor
from .core.rain import density_ground_truth
from .metrics.bright import BrightChannelConfig, bright_channel, proposition1_check
from .ml.losses import kl_gaussian, monte_carlo_kl
from .ml.networks import GaussianLatent, reparameterize
from .utils.seeding import numpy_rng

logger = logging.getLogger(__name__)

CHECK_SEED = 20240917
KL_PAIRS = 100
KL_SAMPLES = 1_000_000
KL_RTOL = 0.01
KL_ATOL = 1e-3
MOMENT_DRAWS = 100_000
MOMENT_TOL = 0.01
BRIGHT_TRIALS = 100
PROPOSITION_TRIALS = 100

CheckFn = Callable[[], Tuple[bool, str]]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _scalar_latent(mu: float, sigma: float) -> GaussianLatent:
    return GaussianLatent(
        mu=torch.full((1, 1, 1, 1), mu, dtype=torch.float64),
        sigma=torch.full((1, 1, 1, 1), sigma, dtype=torch.float64),
    )


def check_kl_oracle() -> Tuple[bool, str]:
    rng = numpy_rng(CHECK_SEED, 1)
    worst = 0.0
    for trial in range(KL_PAIRS):
        mu_q, mu_p = rng.uniform(-2.0, 2.0, size=2)
        sigma_q, sigma_p = rng.uniform(0.3, 2.0, size=2)
        closed = float(kl_gaussian(_scalar_latent(mu_q, sigma_q), _scalar_latent(mu_p, sigma_p)))
        estimate = monte_carlo_kl(
            mu_q, sigma_q, mu_p, sigma_p, samples=KL_SAMPLES, rng=numpy_rng(CHECK_SEED, 2, trial)
        )
        error = abs(closed - estimate)
        tolerance = max(KL_RTOL * abs(estimate), KL_ATOL)
        worst = max(worst, error / tolerance)
        if error > tolerance:
            return False, (
                f"pair {trial}: closed form {closed:.6f} vs Monte-Carlo {estimate:.6f}"
            )
    return True, f"{KL_PAIRS} pairs, worst error at {worst:.0%} of tolerance"


def check_reparameterization_moments() -> Tuple[bool, str]:
    mu, sigma = 0.3, 0.7
    latent = GaussianLatent(
        mu=torch.full((1, 1, 1, MOMENT_DRAWS), mu, dtype=torch.float64),
        sigma=torch.full((1, 1, 1, MOMENT_DRAWS), sigma, dtype=torch.float64),
    )
    z = reparameterize(latent, CHECK_SEED)
    mean, std = float(z.mean()), float(z.std())
    passed = abs(mean - mu) <= MOMENT_TOL and abs(std - sigma) <= MOMENT_TOL
    return passed, f"mean {mean:.4f} (μ={mu}), std {std:.4f} (σ={sigma})"


def check_density_labels() -> Tuple[bool, str]:
    residuals = np.array([0.0, 1.0, 0.5, 1.0 / 255.0, 0.25, 0.0, 0.75, 0.125, 0.0])
    clean = np.zeros((3, 3, 3))
    rainy = np.zeros((3, 3, 3))
    rainy[:, :, 0] = residuals.reshape(3, 3)
    rainy[:, :, 1] = residuals[::-1].reshape(3, 3)
    labels = density_ground_truth(ImageTensor(clean), ImageTensor(rainy))
    for c, plane in enumerate(labels):
        for (i, j), value in np.ndenumerate(plane.data[:, :, 0]):
            r = rainy[i, j, c] - clean[i, j, c]
            expected = 0.0 if r == 0.0 else float(expit(r))
            if value != expected:
                return False, f"channel {c} pixel ({i}, {j}): {value!r} != {expected!r}"
    return True, "zero residuals map to 0, positive residuals to sigmoid exactly"


def brute_force_bright_channel(data: np.ndarray, radius: int) -> np.ndarray:
    height, width, channels = data.shape
    out = np.zeros((height, width))
    for i in range(height):
        for j in range(width):
            best = 0.0
            for y in range(max(0, i - radius), min(height, i + radius + 1)):
                for x in range(max(0, j - radius), min(width, j + radius + 1)):
                    for c in range(channels):
                        best = max(best, data[y, x, c])
            out[i, j] = best
    return out


def check_bright_channel() -> Tuple[bool, str]:
    rng = numpy_rng(CHECK_SEED, 3)
    for trial in range(BRIGHT_TRIALS):
        data = rng.random((8, 8, 3))
        radius = trial % 3
        fast = bright_channel(ImageTensor(data), BrightChannelConfig(patch_radius=radius))
        if not np.array_equal(fast.data[:, :, 0], brute_force_bright_channel(data, radius)):
            return False, f"trial {trial} (radius {radius}) disagrees with the window scan"
    return True, f"{BRIGHT_TRIALS} random 8×8 images, radii 0-2, exact match"


def random_decomposition(
    rng: np.random.Generator, height: int = 16, width: int = 16
) -> Tuple[ImageTensor, ImageTensor, ImageTensor]:
    """(O, R_chan, R_gray) with R_chan <= R_gray elementwise."""
    observed = rng.random((height, width, 3))
    observed[rng.random((height, width)) < 0.2] = 1.0
    rain_gray = rng.uniform(0.0, 0.5, size=(height, width, 1)).repeat(3, axis=2)
    rain_chan = rain_gray * rng.random((height, width, 3))
    return ImageTensor(observed), ImageTensor(rain_chan), ImageTensor(rain_gray)


def check_proposition1() -> Tuple[bool, str]:
    rng = numpy_rng(CHECK_SEED, 4)
    cfg = BrightChannelConfig(patch_radius=1)
    for trial in range(PROPOSITION_TRIALS):
        result = proposition1_check(*random_decomposition(rng), cfg)
        if not result.passed:
            return False, (
                f"trial {trial}: {result.bright_channelwise} < {result.bright_gray} bright pixels"
            )
    observed, rain, _ = random_decomposition(rng)
    equal = proposition1_check(observed, rain, rain, cfg)
    if equal.bright_channelwise != equal.bright_gray:
        return False, "identical rain layers gave different bright-pixel counts"
    return True, f"{PROPOSITION_TRIALS} decompositions pass; equal layers give equal counts"


CHECKS: Dict[str, CheckFn] = {
    "kl_oracle": check_kl_oracle,
    "reparameterization_moments": check_reparameterization_moments,
    "density_labels": check_density_labels,
    "bright_channel": check_bright_channel,
    "proposition1": check_proposition1,
}


def run_checks(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    names = list(names or CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigurationError(
            f"unknown check(s) {', '.join(unknown)} (choices: {', '.join(CHECKS)})"
        )
    results = []
    for name in names:
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as exc:
            logger.exception("check %s raised", name)
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
        logger.info("%s: %s (%s)", name, "pass" if passed else "FAIL", detail)
    return results
