"""Action distributions on the probability simplex.

Both heads work on padded ``(n, MAX_ROUTES)`` arrays with a boolean route
mask; masked-out slots carry no probability mass and add nothing to log
densities or entropies.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .errors import ContractViolation

CONC_FLOOR = 1e-6
SAMPLE_CLIP = 1e-7
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def softplus_positive(x):
    """``log(1 + exp(x))`` computed without overflow, floored at 1e-6."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(np.logaddexp(0.0, x), CONC_FLOOR)


def softplus_grad(x):
    """Derivative of ``softplus_positive``; zero where the floor is active."""
    x = np.asarray(x, dtype=np.float64)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return np.where(np.logaddexp(0.0, x) > CONC_FLOOR, sig, 0.0)


def _rows(x, mask):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.atleast_2d(np.asarray(mask, dtype=bool)), x.shape)
    return x, mask


def _squeeze(single, *arrays):
    if single:
        return tuple(a[0] for a in arrays)
    return arrays


# Dirichlet -------------------------------------------------------------------

def dirichlet_sample(c, rng, mask=None):
    """Draw simplex vectors from Dirichlet(c) via normalized gamma variates.

    Components are clipped below at 1e-7 and renormalized so the log density
    stays finite; masked-out slots are exactly zero.
    """
    single = np.ndim(c) == 1
    c, mask = _rows(c, mask)
    if np.any(~(c[mask] > 0)):
        raise ContractViolation("Dirichlet concentrations must be positive")
    g = np.zeros_like(c)
    g[mask] = rng.standard_gamma(c[mask])
    tot = g.sum(axis=1, keepdims=True)
    dead = tot[:, 0] <= 0
    if dead.any():
        # every gamma variate underflowed: put the mass on the largest concentration
        idx = np.flatnonzero(dead)
        g[idx] = 0.0
        g[idx, np.where(mask[idx], c[idx], -np.inf).argmax(axis=1)] = 1.0
        tot[idx] = 1.0
    a = g / tot
    a = np.where(mask, np.maximum(a, SAMPLE_CLIP), 0.0)
    a /= a.sum(axis=1, keepdims=True)
    return a[0] if single else a


def dirichlet_mean(c, mask=None):
    single = np.ndim(c) == 1
    c, mask = _rows(c, mask)
    cm = np.where(mask, c, 0.0)
    out = cm / cm.sum(axis=1, keepdims=True)
    return out[0] if single else out


def dirichlet_logprob_entropy(c, a, mask=None, grad=False):
    """Log density of ``a`` and entropy of Dirichlet(c), row-wise.

    With ``grad=True`` also returns d(logp)/dc and d(entropy)/dc (zero on
    masked-out slots).
    """
    single = np.ndim(c) == 1
    c, mask = _rows(c, mask)
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape != c.shape:
        raise ContractViolation(f"action shape {a.shape} does not match {c.shape}")
    if np.any(~(c[mask] > 0)):
        raise ContractViolation("Dirichlet concentrations must be positive")
    if np.any(~(a[mask] > 0)):
        raise ContractViolation("Dirichlet log density needs strictly positive "
                                "components on active routes (clip first)")
    cc = np.where(mask, c, 1.0)
    log_a = np.where(mask, np.log(np.where(mask, a, 1.0)), 0.0)
    k = mask.sum(axis=1)
    c0 = np.where(mask, cc, 0.0).sum(axis=1)
    lg = np.where(mask, gammaln(cc), 0.0).sum(axis=1)
    logp = ((cc - 1.0) * log_a).sum(axis=1) + gammaln(c0) - lg
    psi_c = np.where(mask, digamma(cc), 0.0)
    psi_0 = digamma(c0)
    ent = lg - gammaln(c0) + (c0 - k) * psi_0 - ((cc - 1.0) * psi_c).sum(axis=1)
    if not grad:
        return _squeeze(single, logp, ent)
    dlogp = np.where(mask, log_a + psi_0[:, None] - psi_c, 0.0)
    tri_0 = polygamma(1, c0)
    dent = np.where(mask, ((c0 - k) * tri_0)[:, None] - (cc - 1.0) * polygamma(1, cc), 0.0)
    return _squeeze(single, logp, ent, dlogp, dent)


# softmax over Gaussian logits ----------------------------------------------

def masked_softmax(z, mask=None):
    single = np.ndim(z) == 1
    z, mask = _rows(z, mask)
    zm = np.where(mask, z, -np.inf)
    zm = zm - zm.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(zm), 0.0)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out


def clamp_log_std(log_std):
    return np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)


def gaussian_sample(mean, log_std, rng, mask=None):
    """Sample logits ``z ~ N(mean, exp(log_std)^2)`` on active slots (zero elsewhere)."""
    single = np.ndim(mean) == 1
    mean, mask = _rows(mean, mask)
    std = np.exp(clamp_log_std(log_std))
    z = mean + std * rng.standard_normal(mean.shape)
    z = np.where(mask, z, 0.0)
    return z[0] if single else z


def gaussian_logprob_entropy(mean, log_std, z, mask=None, grad=False):
    """Diagonal Gaussian log density of logits ``z`` over active slots.

    Gradients (when requested) are with respect to ``mean`` and the
    unclamped ``log_std`` vector (zero where the clamp is active).
    """
    single = np.ndim(mean) == 1
    mean, mask = _rows(mean, mask)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    raw = np.broadcast_to(np.asarray(log_std, dtype=np.float64), mean.shape)
    ls = clamp_log_std(raw)
    inv_var = np.exp(-2.0 * ls)
    diff = z - mean
    per = -0.5 * diff * diff * inv_var - ls - _HALF_LOG_2PI
    logp = np.where(mask, per, 0.0).sum(axis=1)
    ent = np.where(mask, 0.5 + _HALF_LOG_2PI + ls, 0.0).sum(axis=1)
    if not grad:
        return _squeeze(single, logp, ent)
    live = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX) & mask
    dmean = np.where(mask, diff * inv_var, 0.0)
    dls = np.where(live, diff * diff * inv_var - 1.0, 0.0)
    dent_ls = np.where(live, 1.0, 0.0)
    return _squeeze(single, logp, ent, dmean, dls, dent_ls)


def softmax_gaussian_head(mean, log_std, rng, mask=None, deterministic=False):
    """Proportions from softmax of (sampled) logits, plus the logit-space log density.

    Returns ``(proportions, logits, logp)``; in deterministic mode the logits
    are the mean and ``logp`` is its density.
    """
    z = np.where(_rows(mean, mask)[1], np.atleast_2d(mean), 0.0)
    if np.ndim(mean) == 1:
        z = z[0]
    if not deterministic:
        z = gaussian_sample(mean, log_std, rng, mask)
    logp, _ = gaussian_logprob_entropy(mean, log_std, z, mask)
    return masked_softmax(z, mask), z, logp


# head objects used by the trainer ---------------------------------------------

class DirichletHead:
    """Network outputs are pre-softplus concentrations; the stored sample is the action."""

    kind = "dirichlet"
    extra_size = 0

    def init_extra(self, width):
        return np.zeros(0)

    def act(self, raw, extra, mask, rng, deterministic=False):
        c = softplus_positive(raw)
        if deterministic:
            a = dirichlet_mean(c, mask)
            return a, a, np.zeros(len(a))
        a = dirichlet_sample(c, rng, mask)
        logp, _ = dirichlet_logprob_entropy(c, a, mask)
        return a, a, logp

    def logprob_grads(self, raw, extra, stored, mask):
        """``(logp, entropy, dlogp/draw, dent/draw, dlogp/dextra, dent/dextra)``."""
        c = softplus_positive(raw)
        logp, ent, dlc, dec = dirichlet_logprob_entropy(c, stored, mask, grad=True)
        sg = softplus_grad(raw)
        return logp, ent, dlc * sg, dec * sg, None, None


class GaussianSoftmaxHead:
    """Network outputs are logit means; a free log-std per route slot; the stored sample is z."""

    kind = "softmax"

    def __init__(self, init_log_std=-0.5):
        self.init_log_std = float(init_log_std)

    def init_extra(self, width):
        return np.full(width, self.init_log_std)

    def act(self, raw, extra, mask, rng, deterministic=False):
        a, z, logp = softmax_gaussian_head(raw, extra, rng, mask, deterministic)
        return a, z, logp

    def logprob_grads(self, raw, extra, stored, mask):
        logp, ent, dmean, dls, dent_ls = gaussian_logprob_entropy(raw, extra, stored, mask,
                                                                  grad=True)
        return logp, ent, dmean, np.zeros_like(dmean), dls, dent_ls


def make_head(kind):
    if kind == "dirichlet":
        return DirichletHead()
    if kind == "softmax":
        return GaussianSoftmaxHead()
    raise ValueError(f"unknown head {kind!r}")
