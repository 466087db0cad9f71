"""Maximum-likelihood fitting for the three supported model classes.

* Gaussian linear model, solved by least squares.
* Poisson log-linear GLM, solved by iteratively reweighted least squares
  with step halving (deviance is non-increasing by construction).
* Poisson log-linear model with a random intercept per group, solved by
  quasi-Newton optimization of an adaptive Gauss-Hermite approximation to
  the marginal likelihood (nodes recentred at each group's conditional
  mode).

All fitters return an immutable :class:`~envdiag.data.FittedModel`;
``simulate_response`` / ``refit`` / ``log_likelihood`` complete the
capability contract consumed by the bootstrap engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, xlogy

from .data import (
    Dataset,
    EnvdiagError,
    FittedModel,
    ModelKind,
    RankDeficient,
)

# Variance floor keeping log-densities finite for zero-residual fits.
_VAR_FLOOR = np.finfo(float).tiny

# IRLS working weights below this level mean the fit is collapsing onto
# the boundary of the parameter space (some fitted means -> 0).
_WEIGHT_UNDERFLOW = 1e-10

_OMEGA_FLOOR = 1e-6
_OMEGA_CEIL = 1e4


class NonConvergence(EnvdiagError):
    """Iteration budget exhausted before the convergence criterion."""

    def __init__(self, msg: str, beta: Optional[np.ndarray] = None):
        super().__init__(msg)
        self.beta = beta


class Separation(EnvdiagError):
    """IRLS weights underflowed while the deviance was still decreasing.

    The maximum-likelihood estimate lies on the boundary (some fitted
    means are numerically zero).  The last iterate is attached.
    """

    def __init__(self, msg: str, beta: Optional[np.ndarray] = None):
        super().__init__(msg)
        self.beta = beta


@dataclass(frozen=True)
class FitControl:
    """Iteration limits and tolerances shared by the iterative fitters."""

    max_iter: int = 100
    tol: float = 1e-9            # relative change in the objective
    quad_points: int = 15        # adaptive Gauss-Hermite nodes (odd)

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.quad_points < 3 or self.quad_points % 2 == 0:
            raise ValueError("quad_points must be an odd integer >= 3")


_DEFAULT_CONTROL = FitControl()


# ---------------------------------------------------------------------
# log-likelihood kernels
# ---------------------------------------------------------------------


def _gaussian_loglik(y: np.ndarray, mean: np.ndarray, sigma: float) -> float:
    n = y.shape[0]
    var = max(sigma * sigma, _VAR_FLOOR)
    sse = float(np.sum((y - mean) ** 2))
    return -0.5 * (n * math.log(2.0 * math.pi * var) + sse / var)


def _poisson_loglik(y: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def _poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    return float(2.0 * np.sum(xlogy(y, y / mu) - (y - mu)))


def glmm_marginal_loglik(
    beta: np.ndarray,
    omega: float,
    X: np.ndarray,
    y: np.ndarray,
    group: np.ndarray,
    quad_points: int = 15,
) -> float:
    """Adaptive Gauss-Hermite marginal log-likelihood of the
    random-intercept Poisson model.

    Each group's contribution integrates the conditional Poisson
    likelihood against a centred normal with sd ``omega``.  The nodes are
    recentred at the group's conditional mode and rescaled by the
    curvature there.  ``omega == 0`` collapses exactly to the ordinary
    Poisson log-likelihood.
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    eta = X @ beta
    if omega == 0.0:
        return _poisson_loglik(y, eta)
    G = int(group.max()) + 1
    # Per-group sufficient statistics: the group contribution reduces to
    #   h_g(t) = A_g + S_g t - E_g e^t - t^2/(2 w^2) - log(w sqrt(2 pi))
    A = np.bincount(group, weights=y * eta - gammaln(y + 1.0), minlength=G)
    S = np.bincount(group, weights=y, minlength=G)
    E = np.bincount(group, weights=np.exp(eta), minlength=G)
    nodes, weights = np.polynomial.hermite.hermgauss(quad_points)
    return _aghq_sum(A, S, E, omega, nodes, weights)


def _group_modes(
    S: np.ndarray, E: np.ndarray, omega: float, u0: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional modes and curvatures of h_g, by damped Newton.

    h_g'(u) = S - E e^u - u/w^2 is strictly decreasing, so the root is
    unique; steps are clipped to keep e^u in range.
    """
    inv_w2 = 1.0 / (omega * omega)
    u = np.zeros_like(S) if u0 is None else u0.copy()
    for _ in range(50):
        Eu = E * np.exp(u)
        g = S - Eu - u * inv_w2
        h = -Eu - inv_w2
        step = g / h
        np.clip(step, -4.0, 4.0, out=step)
        u -= step
        if np.max(np.abs(step)) < 1e-10:
            break
    curv = E * np.exp(u) + inv_w2    # -h''(u)
    return u, curv


def _aghq_sum(
    A: np.ndarray,
    S: np.ndarray,
    E: np.ndarray,
    omega: float,
    nodes: np.ndarray,
    weights: np.ndarray,
    u0: Optional[np.ndarray] = None,
) -> float:
    u, curv = _group_modes(S, E, omega, u0)
    if u0 is not None:
        u0[:] = u  # warm start for the next objective evaluation
    sig = 1.0 / np.sqrt(curv)
    t = u[:, None] + math.sqrt(2.0) * sig[:, None] * nodes[None, :]
    with np.errstate(over="ignore"):
        h = (
            A[:, None]
            + S[:, None] * t
            - E[:, None] * np.exp(t)
            - t * t / (2.0 * omega * omega)
            - math.log(omega)
            - 0.5 * math.log(2.0 * math.pi)
        )
        logw = np.log(weights)[None, :] + nodes[None, :] ** 2 + h
        top = np.max(logw, axis=1)
        contrib = top + np.log(np.sum(np.exp(logw - top[:, None]), axis=1))
    return float(np.sum(contrib + 0.5 * math.log(2.0) + np.log(sig)))


# ---------------------------------------------------------------------
# fitters
# ---------------------------------------------------------------------


def fit_lm(d: Dataset, control: Optional[FitControl] = None) -> FittedModel:
    """Least-squares fit of the Gaussian linear model.

    ``sigma`` is the unbiased estimate ``sqrt(RSS / (n - p))`` (the value
    used for simulation and standardized residuals); the stored
    log-likelihood is the Gaussian log-likelihood of the data at
    ``(beta, sigma)``.  A zero-residual fit is returned with
    ``degenerate=True`` and ``sigma=0``.
    """
    control = control or _DEFAULT_CONTROL
    y, X = d.y, d.X
    n, p = X.shape
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        raise RankDeficient(f"X has rank {rank} < p={p}")
    eta = X @ beta
    rss = float(np.sum((y - eta) ** 2))
    scale = float(np.sum(y * y)) + 1.0
    degenerate = rss <= 1e-28 * scale or n == p
    sigma = 0.0 if degenerate else math.sqrt(rss / (n - p))
    loglik = _gaussian_loglik(y, eta, sigma)
    return FittedModel(
        kind=ModelKind.LM,
        beta=beta,
        eta=eta,
        loglik=loglik,
        dataset=d,
        sigma=sigma,
        control=control,
        degenerate=degenerate,
    )


def _irls_start(y: np.ndarray, p: int) -> np.ndarray:
    # bounded away from the boundary even when the response is all zeros
    beta = np.zeros(p)
    beta[0] = math.log(float(np.mean(y)) + 0.1)
    return beta


def fit_glm_poisson(d: Dataset, control: Optional[FitControl] = None) -> FittedModel:
    """Poisson log-linear fit by iteratively reweighted least squares.

    Convergence is declared when the relative deviance change drops below
    ``control.tol``; one extra Newton step is then taken so the returned
    estimate is accurate to machine precision rather than to the stopping
    tolerance.  Step halving keeps the deviance non-increasing.
    """
    control = control or _DEFAULT_CONTROL
    y, X = d.y, d.X
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise ValueError("Poisson response must be nonnegative integers")
    n, p = X.shape

    beta = _irls_start(y, p)
    eta = X @ beta
    mu = np.exp(eta)
    dev = _poisson_deviance(y, mu)

    converged = False
    for _ in range(control.max_iter):
        if np.max(mu) < _WEIGHT_UNDERFLOW:
            raise Separation(
                "all IRLS weights underflowed; estimate on the boundary",
                beta=beta,
            )
        z = eta + (y - mu) / mu
        w = np.sqrt(mu)
        beta_new, _, rank, _ = np.linalg.lstsq(X * w[:, None], z * w, rcond=None)
        if rank < p:
            raise RankDeficient("weighted design lost rank during IRLS")
        # step halving: retreat toward the previous iterate until the
        # deviance stops increasing
        step = beta_new - beta
        dev_new = math.inf
        for _half in range(30):
            eta_new = X @ (beta + step)
            with np.errstate(over="ignore"):
                mu_new = np.exp(eta_new)
            if np.all(np.isfinite(mu_new)):
                dev_new = _poisson_deviance(y, mu_new)
                if dev_new <= dev:
                    break
            step *= 0.5
        if not dev_new <= dev:
            # no downhill step exists: numerically at the optimum already
            converged = True
            break
        beta = beta + step
        eta = X @ beta
        mu = np.exp(eta)
        assert dev_new <= dev  # deviance is non-increasing per iteration
        dev_prev, dev = dev, dev_new
        if abs(dev_prev - dev) < control.tol * (abs(dev) + 0.1):
            converged = True
            break
    if not converged:
        raise NonConvergence(
            f"IRLS did not converge in {control.max_iter} iterations", beta=beta
        )

    # one polishing Newton step (quadratic convergence squares the error),
    # accepted only if it does not move the deviance up
    z = eta + (y - mu) / mu
    w = np.sqrt(mu)
    beta_pol, _, _, _ = np.linalg.lstsq(X * w[:, None], z * w, rcond=None)
    eta_pol = X @ beta_pol
    with np.errstate(over="ignore"):
        mu_pol = np.exp(eta_pol)
    if np.all(np.isfinite(mu_pol)) and _poisson_deviance(y, mu_pol) <= dev + 1e-9:
        beta, eta = beta_pol, eta_pol

    return FittedModel(
        kind=ModelKind.GLM_POISSON,
        beta=beta,
        eta=eta,
        loglik=_poisson_loglik(y, eta),
        dataset=d,
        control=control,
    )


def _glmm_start(d: Dataset, control: FitControl) -> np.ndarray:
    """GLM coefficients plus a moment-style guess for log omega."""
    glm = fit_glm_poisson(d, control)
    G = d.n_groups
    S = np.bincount(d.group, weights=d.y, minlength=G)
    E = np.bincount(d.group, weights=np.exp(glm.eta), minlength=G)
    u_hat = np.log((S + 0.5) / (E + 0.5))
    omega0 = float(np.std(u_hat, ddof=1)) if G > 1 else 0.5
    omega0 = min(max(omega0, 0.05), 3.0)
    return np.append(glm.beta, math.log(omega0))


def fit_glmm_poisson_ri(
    d: Dataset, control: Optional[FitControl] = None
) -> FittedModel:
    """Random-intercept Poisson fit by quasi-Newton over (beta, log omega).

    The objective is the adaptive Gauss-Hermite marginal log-likelihood
    with ``control.quad_points`` nodes.  ``omega`` is optimized on the log
    scale with a floor at 1e-6; a fit pinned at the floor is returned with
    ``boundary_omega=True`` (the model then coincides with the plain GLM
    up to the floor).
    """
    control = control or _DEFAULT_CONTROL
    if d.group is None:
        raise ValueError("random-intercept fit requires grouping labels")
    y, X, group = d.y, d.X, d.group
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise ValueError("Poisson response must be nonnegative integers")
    G = d.n_groups
    nodes, weights = np.polynomial.hermite.hermgauss(control.quad_points)
    logyfac = gammaln(y + 1.0)
    mode_cache = np.zeros(G)

    def nll(params: np.ndarray) -> float:
        beta = params[:-1]
        omega = math.exp(params[-1])
        eta = X @ beta
        if np.max(eta) > 500.0:
            return 1e12
        A = np.bincount(group, weights=y * eta - logyfac, minlength=G)
        S = np.bincount(group, weights=y, minlength=G)
        E = np.bincount(group, weights=np.exp(eta), minlength=G)
        value = _aghq_sum(A, S, E, omega, nodes, weights, u0=mode_cache)
        if not math.isfinite(value):
            return 1e12
        return -value

    x0 = _glmm_start(d, control)
    bounds = [(None, None)] * (d.p) + [(math.log(_OMEGA_FLOOR), math.log(_OMEGA_CEIL))]
    res = minimize(
        nll,
        x0,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": 2 * control.max_iter, "ftol": control.tol,
                 "gtol": 1e-7},
    )
    if not res.success and res.status == 1:  # iteration/funcall budget
        raise NonConvergence("quasi-Newton exceeded its iteration budget",
                             beta=res.x[:-1])

    beta = res.x[:-1]
    omega = math.exp(res.x[-1])
    boundary = bool(res.x[-1] <= math.log(_OMEGA_FLOOR) + 1e-8)
    eta = X @ beta
    loglik = glmm_marginal_loglik(beta, omega, X, y, group, control.quad_points)
    if not math.isfinite(loglik):
        raise NonConvergence("marginal likelihood not finite at the optimum",
                             beta=beta)
    return FittedModel(
        kind=ModelKind.GLMM_POISSON_RI,
        beta=beta,
        eta=eta,
        loglik=loglik,
        dataset=d,
        omega=omega,
        control=control,
        boundary_omega=boundary,
    )


def fit_model(d: Dataset, kind: ModelKind,
              control: Optional[FitControl] = None) -> FittedModel:
    """Dispatch to the fitter for ``kind``."""
    if kind is ModelKind.LM:
        return fit_lm(d, control)
    if kind is ModelKind.GLM_POISSON:
        return fit_glm_poisson(d, control)
    return fit_glmm_poisson_ri(d, control)


# ---------------------------------------------------------------------
# capability operations
# ---------------------------------------------------------------------


def simulate_response(m: FittedModel, stream: np.random.Generator) -> np.ndarray:
    """Draw one response vector from the fitted model.

    The random-intercept model simulates unconditionally: fresh group
    intercepts are drawn, then Poisson counts around them.  With
    ``omega == 0`` no intercepts are consumed from the stream, so the
    draw coincides with the plain GLM draw for the same stream state.
    """
    if m.kind is ModelKind.LM:
        if m.sigma == 0.0:
            return np.array(m.eta)
        return m.eta + m.sigma * stream.standard_normal(m.n)
    if m.kind is ModelKind.GLM_POISSON:
        return stream.poisson(np.exp(m.eta)).astype(float)
    group = m.dataset.group
    G = m.dataset.n_groups
    if m.omega > 0.0:
        eps = stream.normal(0.0, m.omega, size=G)
    else:
        eps = np.zeros(G)
    return stream.poisson(np.exp(m.eta + eps[group])).astype(float)


def refit(m: FittedModel, y_new: np.ndarray) -> FittedModel:
    """Fit the same model class to a new response, keeping X and group."""
    d_new = Dataset(y=np.asarray(y_new, dtype=float), X=m.dataset.X,
                    group=m.dataset.group)
    return fit_model(d_new, m.kind, m.control)


def log_likelihood(m: FittedModel, y: np.ndarray) -> float:
    """Log-likelihood of ``y`` at the fitted parameters.

    Gaussian density at ``(eta, sigma)`` for the linear model, Poisson
    mass at ``exp(eta)`` for the GLM, and the adaptive-quadrature marginal
    likelihood for the random-intercept model.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != m.eta.shape:
        raise ValueError("y is not conformable with the fitted model")
    if m.kind is ModelKind.LM:
        return _gaussian_loglik(y, m.eta, m.sigma)
    if m.kind is ModelKind.GLM_POISSON:
        return _poisson_loglik(y, m.eta)
    qp = (m.control or _DEFAULT_CONTROL).quad_points
    return glmm_marginal_loglik(m.beta, m.omega, m.dataset.X, y,
                                m.dataset.group, qp)
