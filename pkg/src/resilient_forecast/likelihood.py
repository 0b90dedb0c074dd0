"""Gaussian and Beta output heads.

Every function here is vectorised: ``raw`` head outputs have a trailing axis
of length 2 and any leading batch shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

#: Added after softplus so scale/shape parameters stay strictly positive.
MIN_SCALE = 1e-6
#: Beta targets are clamped into [eps, 1 - eps]; the density is improper at 0 and 1.
BETA_TARGET_EPS = 1e-4

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_LANCZOS_K = np.arange(1, 9, dtype=np.float64)


class Likelihood(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BETA = "beta"


@dataclass(frozen=True)
class DistributionParams:
    """``a``/``b`` are (mu, sigma) for Gaussian and (alpha, beta) for Beta."""

    kind: Likelihood
    a: np.ndarray
    b: np.ndarray

    def mean(self) -> np.ndarray:
        if self.kind is Likelihood.GAUSSIAN:
            return self.a
        return self.a / (self.a + self.b)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _lanczos_parts(x):
    # For x >= 0.5: returns (lgamma(x), digamma(x)) of the Lanczos form.
    z = x - 1.0
    denom = z[..., None] + _LANCZOS_K
    series = _LANCZOS_COEF[0] + (_LANCZOS_COEF[1:] / denom).sum(axis=-1)
    dseries = -(_LANCZOS_COEF[1:] / denom**2).sum(axis=-1)
    t = z + _LANCZOS_G + 0.5
    lg = _LOG_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(series)
    dg = np.log(t) + (z + 0.5) / t - 1.0 + dseries / series
    return lg, dg


def _gamma_fns(x):
    x = np.asarray(x, dtype=np.float64)
    small = x < 0.5
    xr = np.where(small, 1.0 - x, x)
    lg, dg = _lanczos_parts(xr)
    if np.any(small):
        sin_px = np.sin(np.pi * x)
        lg = np.where(small, np.log(np.pi / np.abs(sin_px)) - lg, lg)
        dg = np.where(small, dg - np.pi / np.tan(np.pi * x), dg)
    return lg, dg


def lgamma(x):
    """log|Gamma(x)| for x > 0 via the Lanczos approximation (reflection below 0.5)."""
    return _gamma_fns(x)[0]


def digamma(x):
    """Exact derivative of :func:`lgamma` (so gradients agree with the loss)."""
    return _gamma_fns(x)[1]


def lbeta(a, b):
    return lgamma(a) + lgamma(b) - lgamma(np.asarray(a) + np.asarray(b))


def link(kind: Likelihood, raw) -> DistributionParams:
    raw = np.asarray(raw, dtype=np.float64)
    kind = Likelihood(kind)
    if kind is Likelihood.GAUSSIAN:
        return DistributionParams(kind, raw[..., 0], softplus(raw[..., 1]) + MIN_SCALE)
    return DistributionParams(kind, softplus(raw[..., 0]) + MIN_SCALE, softplus(raw[..., 1]) + MIN_SCALE)


def clamp_beta_target(y):
    return np.clip(y, BETA_TARGET_EPS, 1.0 - BETA_TARGET_EPS)


def nll(params: DistributionParams, y):
    """Negative log density of ``y``; Beta targets are clamped first."""
    y = np.asarray(y, dtype=np.float64)
    if params.kind is Likelihood.GAUSSIAN:
        mu, sigma = params.a, params.b
        return np.log(sigma) + _LOG_SQRT_2PI + (y - mu) ** 2 / (2.0 * sigma**2)
    alpha, beta = params.a, params.b
    y = clamp_beta_target(y)
    return -((alpha - 1.0) * np.log(y) + (beta - 1.0) * np.log1p(-y) - lbeta(alpha, beta))


def nll_and_grad(kind: Likelihood, raw, y):
    """NLL of ``y`` under ``link(kind, raw)`` and its gradient w.r.t. ``raw``."""
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    params = link(kind, raw)
    grad = np.empty_like(raw)
    if params.kind is Likelihood.GAUSSIAN:
        mu, sigma = params.a, params.b
        resid = y - mu
        inv_var = 1.0 / sigma**2
        loss = np.log(sigma) + _LOG_SQRT_2PI + 0.5 * resid**2 * inv_var
        grad[..., 0] = -resid * inv_var
        grad[..., 1] = (1.0 / sigma - resid**2 * inv_var / sigma) * sigmoid(raw[..., 1])
        return loss, grad
    alpha, beta = params.a, params.b
    yc = clamp_beta_target(y)
    log_y, log_1my = np.log(yc), np.log1p(-yc)
    lg_a, dg_a = _gamma_fns(alpha)
    lg_b, dg_b = _gamma_fns(beta)
    lg_ab, dg_ab = _gamma_fns(alpha + beta)
    loss = -((alpha - 1.0) * log_y + (beta - 1.0) * log_1my) + lg_a + lg_b - lg_ab
    grad[..., 0] = (-log_y + dg_a - dg_ab) * sigmoid(raw[..., 0])
    grad[..., 1] = (-log_1my + dg_b - dg_ab) * sigmoid(raw[..., 1])
    return loss, grad


def gaussian_loss(raw, y):
    return nll_and_grad(Likelihood.GAUSSIAN, raw, y)


def beta_loss(raw, y):
    return nll_and_grad(Likelihood.BETA, raw, y)


LOSS_FUNCTIONS = {Likelihood.GAUSSIAN: gaussian_loss, Likelihood.BETA: beta_loss}


# --- sampling ---------------------------------------------------------------


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Box-Muller transform of uniform draws."""
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
    return z.reshape(size)


def log_gamma_variate(shape, rng: np.random.Generator) -> np.ndarray:
    """log of Gamma(shape, 1) draws, Marsaglia-Tsang with the shape < 1 boost.

    Working in log space keeps tiny shapes (whose draws underflow) usable.
    """
    shape = np.atleast_1d(np.asarray(shape, dtype=np.float64))
    boosted = shape < 1.0
    a = np.where(boosted, shape + 1.0, shape)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    pending = np.arange(a.size)
    flat_d, flat_c = d.ravel(), c.ravel()
    while pending.size:
        dd, cc = flat_d[pending], flat_c[pending]
        x = standard_normal(rng, pending.size)
        v = (1.0 + cc * x) ** 3
        u = 1.0 - rng.random(pending.size)
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
            ok &= np.log(u) < 0.5 * x**2 + dd - dd * v + dd * logv
        out.ravel()[pending[ok]] = np.log(dd[ok]) + logv[ok]
        pending = pending[~ok]
    if np.any(boosted):
        u = 1.0 - rng.random(int(boosted.sum()))
        out[boosted] += np.log(u) / shape[boosted]
    return out


def sample(params: DistributionParams, rng: np.random.Generator) -> np.ndarray:
    """One draw per parameter entry. Gaussian draws are not clipped here."""
    a = np.asarray(params.a, dtype=np.float64)
    b = np.asarray(params.b, dtype=np.float64)
    shape = np.broadcast(a, b).shape
    if params.kind is Likelihood.GAUSSIAN:
        return (a + b * standard_normal(rng, shape)).reshape(shape)
    la = log_gamma_variate(np.broadcast_to(a, shape), rng)
    lb = log_gamma_variate(np.broadcast_to(b, shape), rng)
    # g_a / (g_a + g_b) = sigmoid(log g_a - log g_b)
    return sigmoid(la - lb).reshape(shape)
