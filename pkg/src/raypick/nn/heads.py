"""Stochastic policy output heads.

All heads keep their distribution parameters in pre-squash space so that
KL terms between two squashed policies reduce to Gaussian KLs (the squash
bijection is shared and cancels).
"""

from __future__ import annotations

import numpy as np

from . import core
from .core import Linear, Module, Tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))


class SquashedGaussian:
    """Diagonal Gaussian pushed through y = center + scale * tanh(u)."""

    def __init__(self, mu: Tensor, std: Tensor, scale: np.ndarray, center: np.ndarray):
        self.mu = mu
        self.std = std
        self.scale = scale
        self.center = center

    def rsample(self, rng: np.random.Generator):
        """Reparameterized sample. Returns (action, log_prob), both graph tensors."""
        eps = rng.standard_normal(self.mu.shape).astype(self.mu.dtype)
        u = self.mu + self.std * eps
        return self._squash_with_logp(u, eps)

    def _squash_with_logp(self, u: Tensor, eps: np.ndarray):
        tu = core.tanh(u)
        y = Tensor(self.center) + Tensor(self.scale) * tu
        base = core.square((u - self.mu) / self.std) * (-0.5) - core.log(self.std) - 0.5 * LOG_2PI
        jac = core.log(Tensor(self.scale) * (1.0 - core.square(tu)) + 1e-6)
        logp = (base - jac).sum(axis=-1)
        return y, logp

    def mode(self) -> np.ndarray:
        return self.center + self.scale * np.tanh(self.mu.data)

    def sample_np(self, rng: np.random.Generator) -> np.ndarray:
        """Plain numpy sample for rollouts (no graph)."""
        u = self.mu.data + self.std.data * rng.standard_normal(self.mu.shape).astype(self.mu.dtype)
        return self.center + self.scale * np.tanh(u)


class SquashedGaussianHead(Module):
    """Two zero-initialized linear layers (mean, log-std) so the initial mode
    is exactly the squash center.

    `mask` marks behavior-prior-constrained dims: their mean is hard-zeroed in
    pre-squash space (mode exactly center) and their std is pinned to
    sigma_prior, during both sampling and density evaluation.
    """

    def __init__(self, n_in: int, act_dim: int, scale, center, rng: np.random.Generator,
                 sigma_prior: float = 0.05):
        self.mu_layer = Linear(n_in, act_dim, rng, zero_init=True)
        self.ls_layer = Linear(n_in, act_dim, rng, zero_init=True)
        self.scale = np.asarray(scale, dtype=core.DTYPE)
        self.center = np.asarray(center, dtype=core.DTYPE)
        self.sigma_prior = float(sigma_prior)

    def __call__(self, h: Tensor, mask: np.ndarray | None = None) -> SquashedGaussian:
        mu = self.mu_layer(h)
        log_std = core.clip(self.ls_layer(h), LOG_STD_MIN, LOG_STD_MAX)
        std = core.exp(log_std)
        if mask is not None and mask.any():
            keep = np.broadcast_to(~mask, mu.shape)
            mu = core.where(keep, mu, Tensor(np.zeros((), dtype=mu.dtype)))
            std = core.where(keep, std, Tensor(np.asarray(self.sigma_prior, dtype=std.dtype)))
        return SquashedGaussian(mu, std, self.scale, self.center)


class BetaDist:
    def __init__(self, alpha: Tensor, beta: Tensor, lo: np.ndarray, hi: np.ndarray):
        self.alpha = alpha
        self.beta = beta
        self.lo = lo
        self.hi = hi

    def sample_np(self, rng: np.random.Generator) -> np.ndarray:
        x = rng.beta(self.alpha.data, self.beta.data)
        return self.lo + (self.hi - self.lo) * x

    def mean_np(self) -> np.ndarray:
        x = self.alpha.data / (self.alpha.data + self.beta.data)
        return self.lo + (self.hi - self.lo) * x

    def to_unit(self, action: np.ndarray) -> np.ndarray:
        x = (action - self.lo) / (self.hi - self.lo)
        return np.clip(x, 1e-6, 1.0 - 1e-6)

    def log_prob(self, x_unit: np.ndarray) -> Tensor:
        """Log-density of unit-interval samples, summed over action dims."""
        x = Tensor(np.asarray(x_unit, dtype=self.alpha.dtype))
        a, b = self.alpha, self.beta
        ln_b = core.lgamma(a) + core.lgamma(b) - core.lgamma(a + b)
        lp = (a - 1.0) * core.log(x) + (b - 1.0) * core.log(1.0 - x) - ln_b
        return lp.sum(axis=-1)

    def entropy(self) -> Tensor:
        a, b = self.alpha, self.beta
        ln_b = core.lgamma(a) + core.lgamma(b) - core.lgamma(a + b)
        h = (ln_b - (a - 1.0) * core.digamma(a) - (b - 1.0) * core.digamma(b)
             + (a + b - 2.0) * core.digamma(a + b))
        return h.sum(axis=-1)


class BetaHead(Module):
    """Beta(alpha, beta) with both shape parameters >= 1 (softplus + 1), scaled
    to [lo, hi] per dim. Zero-initialized raw layer gives alpha = beta, i.e. a
    symmetric initial distribution centred on the interval midpoint.
    """

    def __init__(self, n_in: int, act_dim: int, lo, hi, rng: np.random.Generator):
        self.raw = Linear(n_in, 2 * act_dim, rng, zero_init=True)
        self.act_dim = act_dim
        self.lo = np.asarray(lo, dtype=core.DTYPE)
        self.hi = np.asarray(hi, dtype=core.DTYPE)

    def __call__(self, h: Tensor) -> BetaDist:
        raw = self.raw(h)
        alpha = core.softplus(raw[..., :self.act_dim]) + 1.0
        beta = core.softplus(raw[..., self.act_dim:]) + 1.0
        return BetaDist(alpha, beta, self.lo, self.hi)


class BernoulliHead(Module):
    def __init__(self, n_in: int, rng: np.random.Generator):
        self.layer = Linear(n_in, 1, rng, zero_init=True)

    def __call__(self, h: Tensor) -> Tensor:
        return self.layer(h)


def gaussian_kl(mu_ref: np.ndarray, sigma_ref: float, mu: Tensor, std: Tensor,
                dim_keep: np.ndarray | None = None) -> Tensor:
    """KL(N(mu_ref, sigma_ref) || N(mu, std)) per sample, summed over kept dims.

    mu_ref: (B, D) constant reference means; dim_keep: (B, D) float 0/1 weights
    (masked-out dims contribute zero). Returns a (B,) tensor.
    """
    ref = Tensor(np.asarray(mu_ref, dtype=mu.dtype))
    var = core.square(std)
    kl = core.log(std) - float(np.log(sigma_ref)) \
        + (sigma_ref ** 2 + core.square(ref - mu)) / (2.0 * var) - 0.5
    if dim_keep is not None:
        kl = kl * Tensor(np.asarray(dim_keep, dtype=mu.dtype))
    return kl.sum(axis=-1)
