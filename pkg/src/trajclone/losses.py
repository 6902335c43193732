"""Training losses and tail-risk machinery.

Gaussian-mixture negative log-likelihood (diagonal covariances, log-sum-exp
throughout), variance-freeze scheduling, maximum-weight mode selection,
empirical conditional value-at-risk with its masked-batch gradient estimator,
and the multi-task combination with the auxiliary regression loss.

Quantile convention, fixed so tests can be exact: the empirical alpha-quantile
of N losses is the ceil(alpha*N)-th smallest value; "tail" means strictly
greater, and when nothing is strictly greater (heavy ties) the tail falls back
to the top ceil((1-alpha)*N) order statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmParams:
    """Raw mixture parameters: logits, means, log variances; shapes (K,), (K,D), (K,D)."""

    log_pi: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.log_pi, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        lv = np.asarray(self.log_var, dtype=np.float64)
        if mu.shape != lv.shape or mu.shape[0] != lp.shape[0]:
            raise ValueError("inconsistent mixture shapes")
        object.__setattr__(self, "log_pi", lp)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", lv)

    @property
    def k_modes(self) -> int:
        return self.log_pi.shape[0]

    @property
    def d_target(self) -> int:
        return self.mu.shape[1]

    @staticmethod
    def from_raw(raw: np.ndarray, k_modes: int, d_target: int) -> "GmmParams":
        raw = np.asarray(raw, dtype=np.float64)
        k, d = k_modes, d_target
        if raw.shape != (k * (1 + 2 * d),):
            raise ValueError(f"raw vector has wrong size {raw.shape}")
        return GmmParams(raw[:k], raw[k:k + k * d].reshape(k, d),
                         raw[k + k * d:].reshape(k, d))

    def to_raw(self) -> np.ndarray:
        return np.concatenate([self.log_pi, self.mu.ravel(), self.log_var.ravel()])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gmm_nll(params: GmmParams, target) -> tuple[float, GmmParams]:
    """Negative log-likelihood of one target under the mixture, with exact gradients.

    Computed entirely in the log domain:
        nll = -logsumexp_k [ log softmax(log_pi)_k
                             - 0.5 * sum_d ((y_d - mu_kd)^2 / var_kd
                                            + log var_kd + log 2pi) ]
    Returns (loss, gradient) where the gradient is GmmParams-shaped and taken
    w.r.t. (log_pi, mu, log_var).
    """
    y = np.asarray(target, dtype=np.float64)
    losses, grads = gmm_nll_batch(
        params.to_raw()[None, :], y[None, :], params.k_modes, params.d_target)
    return float(losses[0]), GmmParams.from_raw(grads[0], params.k_modes,
                                                params.d_target)


def gmm_nll_batch(raw: np.ndarray, targets: np.ndarray, k_modes: int,
                  d_target: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-sample mixture NLL.

    raw: (N, K*(1+2D)) head outputs, targets: (N, D).
    Returns (losses (N,), grad_raw (N, K*(1+2D))) with per-sample gradients,
    i.e. no batch averaging; callers decide the reduction.
    """
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n = raw.shape[0]
    k, d = k_modes, d_target
    log_pi = raw[:, :k]
    mu = raw[:, k:k + k * d].reshape(n, k, d)
    log_var = raw[:, k + k * d:].reshape(n, k, d)

    log_mix = _log_softmax(log_pi)                        # (N, K)
    diff = y[:, None, :] - mu                              # (N, K, D)
    inv_var = np.exp(-log_var)
    quad = diff * diff * inv_var
    log_comp = -0.5 * (quad + log_var + LOG_2PI).sum(axis=2)   # (N, K)
    a = log_mix + log_comp
    a_max = a.max(axis=1, keepdims=True)
    lse = a_max[:, 0] + np.log(np.exp(a - a_max).sum(axis=1))
    losses = -lse

    resp = np.exp(a - lse[:, None])                        # responsibilities, (N, K)
    pi = np.exp(log_mix)
    g_log_pi = pi - resp
    g_mu = resp[:, :, None] * (mu - y[:, None, :]) * inv_var
    g_log_var = 0.5 * resp[:, :, None] * (1.0 - quad)
    grad = np.concatenate(
        [g_log_pi, g_mu.reshape(n, k * d), g_log_var.reshape(n, k * d)], axis=1)
    return losses, grad


def sigma_freeze(grad_raw: np.ndarray, epoch: int, freeze_epochs: int,
                 k_modes: int, d_target: int) -> np.ndarray:
    """Zero the log-variance part of a mixture gradient during warmup epochs."""
    if freeze_epochs < 0:
        raise ValueError("freeze_epochs must be >= 0")
    if epoch >= freeze_epochs:
        return grad_raw
    out = np.array(grad_raw, dtype=np.float64, copy=True)
    out[..., k_modes + k_modes * d_target:] = 0.0
    return out


def select_trajectory(params: GmmParams, normalizer=None) -> np.ndarray:
    """Mean of the mixture component with the largest weight, as (K_points, 2) meters.

    Ties break to the lowest mode index. The mixture lives in normalized target
    space; pass the target normalizer to get physical units back.
    """
    idx = int(np.argmax(params.log_pi))  # softmax is monotone, argmax on logits
    mu = params.mu[idx]
    if normalizer is not None:
        mu = normalizer.invert(mu)
    return mu.reshape(-1, 2)


@dataclass(frozen=True)
class CvarConfig:
    alpha: float = 0.9
    finetune_epochs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")


def _tail_indices(losses: np.ndarray, alpha: float) -> np.ndarray:
    """Indices of the samples that make up the empirical alpha-tail."""
    losses = np.asarray(losses, dtype=np.float64)
    n = losses.size
    if n == 0:
        raise ValueError("empty loss vector")
    k = math.ceil(alpha * n)
    if k == 0:
        return np.arange(n)
    nu = np.partition(losses, k - 1)[k - 1]
    above = np.flatnonzero(losses > nu)
    if above.size:
        return above
    m = math.ceil((1.0 - alpha) * n)
    order = np.argsort(losses, kind="stable")
    return np.sort(order[n - m:])


def cvar_estimate(losses, alpha: float) -> float:
    """Empirical conditional value-at-risk: mean loss above the alpha-quantile."""
    losses = np.asarray(losses, dtype=np.float64)
    if alpha == 0.0:
        return float(np.mean(losses))
    return float(np.mean(losses[_tail_indices(losses, alpha)]))


def cvar_batch_mask(losses, alpha: float) -> np.ndarray:
    """Boolean mask onto the samples whose mean is the empirical CVaR.

    The masked-mean gradient is the conditional-expectation gradient
    estimator; batches smaller than ceil(1/(1-alpha)) cannot populate the
    tail and are rejected.
    """
    losses = np.asarray(losses, dtype=np.float64)
    min_batch = math.ceil(1.0 / (1.0 - alpha) - 1e-9)
    if losses.size < min_batch:
        raise ValueError(
            f"batch of {losses.size} too small for alpha={alpha}; "
            f"need at least {min_batch} samples"
        )
    mask = np.zeros(losses.size, dtype=bool)
    mask[_tail_indices(losses, alpha)] = True
    return mask


def cvar_percentile_curve(losses, percentiles=range(0, 100, 5)) -> list:
    """(percentile, CVaR) pairs; nondecreasing in the percentile."""
    return [(int(p), cvar_estimate(losses, p / 100.0)) for p in percentiles]


@dataclass(frozen=True)
class MultiTaskWeights:
    w_traj: float = 1.0
    w_aff: float = 0.0

    def __post_init__(self):
        if self.w_traj <= 0.0:
            raise ValueError("trajectory weight must be positive")
        if self.w_aff < 0.0:
            raise ValueError("auxiliary weight must be nonnegative")


def multitask_loss(traj_loss: float, aff_loss: float,
                   weights: MultiTaskWeights) -> float:
    return weights.w_traj * traj_loss + weights.w_aff * aff_loss


def l2_loss_batch(pred: np.ndarray, targets: np.ndarray):
    """Per-sample squared-error loss 0.5*||pred - y||^2 and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    diff = pred - y
    return 0.5 * (diff * diff).sum(axis=1), diff


def mse_loss_batch(pred: np.ndarray, targets: np.ndarray):
    """Per-sample mean squared error over dimensions, with gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    diff = pred - y
    d = pred.shape[1]
    return (diff * diff).mean(axis=1), (2.0 / d) * diff


def mc_verify_cvar_gradient(dimension: int, alpha: float, n_samples: int,
                            seed: int, theta=None, fd_step: float = 1e-4) -> dict:
    """Monte Carlo check that the masked-batch estimator is the CVaR gradient.

    Test family: L(theta; z) = 0.5*||theta - z||^2 with z standard normal.
    Compares (a) the tail-masked mean of per-sample gradients against (b)
    central finite differences of the empirical CVaR itself, holding the z
    draw fixed (common random numbers).
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, dimension))
    if theta is None:
        theta = np.full(dimension, 0.3)
    theta = np.asarray(theta, dtype=np.float64)

    def losses_at(th):
        diff = th[None, :] - z
        return 0.5 * (diff * diff).sum(axis=1)

    losses = losses_at(theta)
    mask = cvar_batch_mask(losses, alpha) if alpha > 0.0 else np.ones(n_samples, bool)
    estimator = (theta[None, :] - z)[mask].mean(axis=0)

    fd = np.empty(dimension)
    for j in range(dimension):
        e = np.zeros(dimension)
        e[j] = fd_step
        up = cvar_estimate(losses_at(theta + e), alpha)
        dn = cvar_estimate(losses_at(theta - e), alpha)
        fd[j] = (up - dn) / (2.0 * fd_step)

    scale = max(float(np.linalg.norm(fd)), 1e-12)
    rel_err = float(np.linalg.norm(estimator - fd)) / scale
    return {
        "alpha": alpha,
        "n_samples": n_samples,
        "estimator": estimator.tolist(),
        "finite_difference": fd.tolist(),
        "relative_error": rel_err,
    }
