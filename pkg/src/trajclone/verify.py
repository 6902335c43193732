"""Self-verification oracles, runnable as `traj-clone verify`.

Each check recomputes a quantity through an independent route and compares:
network gradients against central finite differences, the mixture likelihood
against a direct extended-precision density evaluation, the tail estimator
against brute-force order statistics, and the masked-gradient rule against
finite differences of the empirical CVaR itself on a quadratic-Gaussian
family with common random numbers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .network import GmmHead, LinearHead, NetSpec, backward, forward, init_params


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _finite_diff_grad(loss_fn, params, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(params.values)
    for j in range(params.values.size):
        orig = params.values[j]
        params.values[j] = orig + h
        up = loss_fn()
        params.values[j] = orig - h
        dn = loss_fn()
        params.values[j] = orig
        g[j] = (up - dn) / (2.0 * h)
    return g


def _random_small_spec(rng) -> NetSpec:
    input_dim = int(rng.integers(3, 8))
    widths = tuple(int(rng.integers(4, 10)) for _ in range(int(rng.integers(1, 3))))
    k = int(rng.integers(1, 4))
    d = int(rng.integers(1, 5))
    heads = {"gmm": GmmHead(k, d), "affordance": LinearHead(int(rng.integers(1, 4)))}
    return NetSpec(input_dim, widths, heads)


def gradient_check(n_draws: int = 20, seed: int = 0,
                   tol: float = 1e-4) -> CheckResult:
    """End-to-end analytic vs. finite-difference gradients, mixture loss included."""
    t0 = time.time()
    worst = 0.0
    for draw in range(n_draws):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 59, draw)))
        spec = _random_small_spec(rng)
        params = init_params(spec, rng)
        # nonzero biases so rectifier kinks sit away from finite-diff steps
        params.values += 0.01 * rng.standard_normal(params.values.size)
        x = rng.standard_normal(spec.input_dim)
        head = spec.heads["gmm"]
        y = rng.standard_normal(head.d_target)
        y_aff = rng.standard_normal(spec.heads["affordance"].d_target)

        def loss_fn():
            out, _ = forward(params, spec, x)
            nll, _ = L.gmm_nll_batch(out["gmm"][None, :], y[None, :],
                                     head.k_modes, head.d_target)
            mse, _ = L.mse_loss_batch(out["affordance"][None, :], y_aff[None, :])
            return float(nll[0] + 0.5 * mse[0])

        out, cache = forward(params, spec, x)
        _, g_gmm = L.gmm_nll_batch(out["gmm"][None, :], y[None, :],
                                   head.k_modes, head.d_target)
        _, g_aff = L.mse_loss_batch(out["affordance"][None, :], y_aff[None, :])
        analytic = backward(cache, {"gmm": g_gmm, "affordance": 0.5 * g_aff})
        fd = _finite_diff_grad(loss_fn, params)
        scale = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / scale)))
    passed = worst < tol
    return CheckResult("network-gradient-check", passed,
                       f"max relative error {worst:.3e} (tol {tol})",
                       time.time() - t0)


def gmm_density_oracle(n_cases: int = 100, seed: int = 1,
                       tol: float = 1e-10) -> CheckResult:
    """Mixture NLL against direct density evaluation at 50 decimal digits."""
    import mpmath as mp

    t0 = time.time()
    mp.mp.dps = 50
    worst = 0.0
    for case in range(n_cases):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 61, case)))
        k = int(rng.integers(1, 4))
        d = int(rng.integers(1, 5))
        params = L.GmmParams(rng.standard_normal(k),
                             rng.standard_normal((k, d)),
                             rng.uniform(-2.0, 2.0, (k, d)))
        y = rng.standard_normal(d)
        loss, _ = L.gmm_nll(params, y)

        logits = [mp.mpf(v) for v in params.log_pi]
        z = mp.fsum(mp.e**l for l in logits)
        density = mp.mpf(0)
        for i in range(k):
            pi = mp.e**logits[i] / z
            comp = mp.mpf(1)
            for j in range(d):
                var = mp.e**mp.mpf(params.log_var[i, j])
                diff = mp.mpf(y[j]) - mp.mpf(params.mu[i, j])
                comp *= mp.e**(-diff * diff / (2 * var)) / mp.sqrt(2 * mp.pi * var)
            density += pi * comp
        oracle = float(-mp.log(density))
        worst = max(worst, abs(loss - oracle) / max(abs(oracle), 1.0))
    passed = worst < tol
    return CheckResult("gmm-density-oracle", passed,
                       f"max relative error {worst:.3e} over {n_cases} cases "
                       f"(tol {tol})", time.time() - t0)


def brute_force_cvar(values, alpha: float) -> float:
    """Order-statistics reference written independently of the estimator."""
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    k = math.ceil(alpha * n)
    if k == 0:
        return sum(ordered) / n
    quantile = ordered[k - 1]
    tail = [v for v in ordered if v > quantile]
    if not tail:
        m = math.ceil((1.0 - alpha) * n)
        tail = ordered[n - m:]
    return sum(tail) / len(tail)


def cvar_oracle(n_vectors: int = 1000, seed: int = 2,
                tol: float = 1e-9) -> CheckResult:
    t0 = time.time()
    worst = 0.0
    mean_exact = True
    monotone = True
    for case in range(n_vectors):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 67, case)))
        n = int(rng.integers(1, 1001))
        style = case % 3
        if style == 0:
            v = rng.standard_normal(n)
        elif style == 1:
            v = rng.exponential(1.0, n)
        else:  # heavy ties
            v = rng.integers(0, max(2, n // 10), n).astype(float)
        alpha = float(rng.uniform(0.0, 0.999))
        est = L.cvar_estimate(v, alpha)
        ref = brute_force_cvar(v, alpha)
        worst = max(worst, abs(est - ref) / max(abs(ref), 1.0))
        if L.cvar_estimate(v, 0.0) != float(np.mean(v)):
            mean_exact = False
        if case < 100:
            curve = [c for _, c in L.cvar_percentile_curve(v)]
            if any(b < a - 1e-12 for a, b in zip(curve, curve[1:])):
                monotone = False
    passed = worst < tol and mean_exact and monotone
    return CheckResult(
        "cvar-order-statistics-oracle", passed,
        f"max relative error {worst:.3e}, CVaR0==mean: {mean_exact}, "
        f"curves monotone: {monotone}", time.time() - t0)


def cvar_gradient_check(alphas=(0.0, 0.5, 0.9), n_samples: int = 1_000_000,
                        seed: int = 3, tol: float = 0.01) -> CheckResult:
    t0 = time.time()
    worst = 0.0
    for i, alpha in enumerate(alphas):
        report = L.mc_verify_cvar_gradient(1, alpha, n_samples, seed + 71 * i)
        worst = max(worst, report["relative_error"])
    passed = worst < tol
    return CheckResult("cvar-gradient-theorem", passed,
                       f"max relative error {worst:.3e} over alphas {alphas} "
                       f"at n={n_samples} (tol {tol})", time.time() - t0)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        gradient_check(seed=seed),
        gmm_density_oracle(seed=seed + 1),
        cvar_oracle(seed=seed + 2),
        cvar_gradient_check(seed=seed + 3),
    ]
