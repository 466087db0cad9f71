"""Bootstrap construction of global envelopes around residual plots.

For a fitted model the pipeline is: simulate a new response from the
fitted parameters, refit, recompute residuals, reduce them to the plot's
functional, and repeat to build an ensemble for the envelope engine.
Four functionals are provided: sorted residuals against normal quantiles
(QQ), sorted residual probabilities against uniform positions (PP), and
smoothers of residuals or absolute residuals against the observed linear
predictors (residuals-vs-fits, scale-location).  Smoother functionals
keep the linear predictors fixed at their observed values; only the
residuals are resampled.

A maximized-log-likelihood goodness-of-fit test against the same
simulated null distribution is included as a baseline comparator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .data import EnvdiagError, FittedModel, ModelCapability, linear_predictors
from .envelope import (
    EnvelopeMode,
    FunctionEnsemble,
    GlobalEnvelope,
    mad_envelope,
    studentized_mad_envelope,
)
from .fitters import refit, simulate_response
from .residuals import residuals_for
from .smoother import PSplineDesign

DEFAULT_B = 199
DEFAULT_ALPHA = 0.05
DEFAULT_GRID = 64

# fraction of B whose refit failures may be patched by fresh simulations
_MAX_FAILURE_FRACTION = 0.10


class TooManyRefitFailures(EnvdiagError):
    """More than 10% of bootstrap refits failed; the model is too fragile."""


class PlotKind(enum.Enum):
    QQ = "qq"
    PP = "pp"
    RES_VS_FITS = "res_vs_fits"
    SCALE_LOCATION = "scale_location"


@dataclass(frozen=True, eq=False)
class DiagnosticResult:
    """One diagnostic plot's envelope plus everything needed to draw it."""

    kind: PlotKind
    grid: np.ndarray
    observed: np.ndarray
    envelope: GlobalEnvelope
    reject: bool
    p_value: float
    B: int
    seed: int
    points: Optional[np.ndarray] = None  # (n, 2) scatter overlay


class GofResult(NamedTuple):
    p_value: float
    reject: bool


def default_capability() -> ModelCapability:
    """The built-in model classes' simulate / refit / residuals / predict."""
    return ModelCapability(
        simulate=simulate_response,
        refit=refit,
        residuals=residuals_for,
        predict=linear_predictors,
    )


# ---------------------------------------------------------------------
# plot functionals
# ---------------------------------------------------------------------


def qq_grid(n: int) -> np.ndarray:
    """Theoretical normal quantiles Phi^-1((i - 0.5) / n); depends on n only."""
    if n < 3:
        raise ValueError("need n >= 3")
    return ndtri((np.arange(1, n + 1) - 0.5) / n)


def qq_function(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted residuals over their theoretical normal quantiles."""
    e = np.asarray(e, dtype=float)
    return qq_grid(e.size), np.sort(e)


def pp_grid(n: int) -> np.ndarray:
    """Uniform plotting positions (i - 0.5) / n."""
    if n < 3:
        raise ValueError("need n >= 3")
    return (np.arange(1, n + 1) - 0.5) / n


def pp_function(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted residual probabilities Phi(e) over uniform positions.

    Mapping to the unit interval compresses the tails, which is exactly
    why the quantile-scale plot tends to detect more; this variant exists
    for comparison studies.
    """
    e = np.asarray(e, dtype=float)
    return pp_grid(e.size), ndtr(np.sort(e))


def resfit_function(
    eta: np.ndarray, e: np.ndarray, m_grid: int = DEFAULT_GRID
) -> tuple[np.ndarray, np.ndarray]:
    """Smoother of residuals against linear predictors, on an even grid."""
    eta = np.asarray(eta, dtype=float)
    design = PSplineDesign(eta)
    grid = np.linspace(eta.min(), eta.max(), m_grid)
    return grid, design.fit(np.asarray(e, dtype=float))(grid)


def scalelocation_function(
    eta: np.ndarray, e: np.ndarray, m_grid: int = DEFAULT_GRID
) -> tuple[np.ndarray, np.ndarray]:
    """Smoother of absolute residuals against linear predictors."""
    return resfit_function(eta, np.abs(np.asarray(e, dtype=float)), m_grid)


# ---------------------------------------------------------------------
# bootstrap pipeline
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BootstrapReplicates:
    """Residual vectors and maximized log-likelihoods of B-1 refits."""

    residuals: np.ndarray    # (B-1, n)
    logliks: np.ndarray      # (B-1,)
    n_failed: int


def simulate_replicates(
    m: FittedModel,
    B: int,
    seed: int,
    capability: Optional[ModelCapability] = None,
) -> BootstrapReplicates:
    """Run the simulate -> refit -> residuals pipeline B-1 times.

    Replicate streams are derived deterministically from (seed, index),
    so results do not depend on execution order.  A failed refit (for
    example a simulated response on the likelihood boundary) is replaced
    by a fresh simulation; more than 10% of B failures aborts.
    """
    if B < 19:
        raise ValueError("need B >= 19")
    cap = capability or default_capability()
    n_needed = B - 1
    max_extra = int(_MAX_FAILURE_FRACTION * B)
    children = np.random.SeedSequence(seed).spawn(n_needed + max_extra)

    resid_rows = np.empty((n_needed, m.n))
    logliks = np.empty(n_needed)
    done = 0
    failed = 0
    for child in children:
        if done == n_needed:
            break
        stream = np.random.default_rng(child)
        y_b = cap.simulate(m, stream)
        try:
            m_b = cap.refit(m, y_b)
            e_b = cap.residuals(m_b)
        except EnvdiagError:
            failed += 1
            continue
        resid_rows[done] = e_b
        logliks[done] = m_b.loglik
        done += 1
    if done < n_needed:
        raise TooManyRefitFailures(
            f"{failed} of {n_needed + max_extra} bootstrap refits failed"
        )
    return BootstrapReplicates(residuals=resid_rows, logliks=logliks,
                               n_failed=failed)


def _functional_ensemble(
    kind: PlotKind,
    eta: np.ndarray,
    e_obs: np.ndarray,
    replicate_resids: np.ndarray,
    m_grid: int,
) -> tuple[FunctionEnsemble, Optional[np.ndarray]]:
    """Rows of the ensemble for one plot kind; observed row first."""
    n = e_obs.size
    if kind is PlotKind.QQ:
        grid = qq_grid(n)
        rows = np.sort(np.vstack([e_obs, replicate_resids]), axis=1)
        points = np.column_stack([grid, np.sort(e_obs)])
    elif kind is PlotKind.PP:
        grid = pp_grid(n)
        rows = ndtr(np.sort(np.vstack([e_obs, replicate_resids]), axis=1))
        points = np.column_stack([grid, ndtr(np.sort(e_obs))])
    else:
        design = PSplineDesign(eta)
        grid = np.linspace(eta.min(), eta.max(), m_grid)
        if kind is PlotKind.SCALE_LOCATION:
            obs = np.abs(e_obs)
            reps = np.abs(replicate_resids)
        else:
            obs = e_obs
            reps = replicate_resids
        rows = design.smooth_matrix(np.vstack([obs, reps]), grid)
        points = np.column_stack([eta, obs])
    return FunctionEnsemble(grid=grid, values=rows), points


def _envelope_for(ensemble: FunctionEnsemble, alpha: float,
                  mode: EnvelopeMode) -> GlobalEnvelope:
    if mode is EnvelopeMode.MAD:
        return mad_envelope(ensemble, alpha)
    return studentized_mad_envelope(ensemble, alpha)


def plot_envelope(
    m: FittedModel,
    kind: PlotKind,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    m_grid: int = DEFAULT_GRID,
    mode: EnvelopeMode = EnvelopeMode.STUDENTIZED_MAD,
    capability: Optional[ModelCapability] = None,
) -> DiagnosticResult:
    """Global simulation envelope around one diagnostic plot.

    Row one of the ensemble is the observed functional; the rest come
    from the parametric bootstrap.  Smoother functionals are evaluated
    against the observed linear predictors for every replicate.
    """
    cap = capability or default_capability()
    reps = simulate_replicates(m, B, seed, cap)
    return _result_for_kind(m, kind, reps, alpha, seed, m_grid, mode, cap)


def _result_for_kind(
    m: FittedModel,
    kind: PlotKind,
    reps: BootstrapReplicates,
    alpha: float,
    seed: int,
    m_grid: int,
    mode: EnvelopeMode,
    cap: ModelCapability,
) -> DiagnosticResult:
    e_obs = cap.residuals(m)
    eta = cap.predict(m)
    ensemble, points = _functional_ensemble(kind, eta, e_obs,
                                            reps.residuals, m_grid)
    env = _envelope_for(ensemble, alpha, mode)
    return DiagnosticResult(
        kind=kind,
        grid=ensemble.grid,
        observed=ensemble.values[0],
        envelope=env,
        reject=env.observed_outside,
        p_value=env.p_value,
        B=reps.residuals.shape[0] + 1,
        seed=seed,
        points=points,
    )


def loglik_gof_test(
    m: FittedModel,
    B: int = DEFAULT_B,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    capability: Optional[ModelCapability] = None,
) -> GofResult:
    """Goodness-of-fit from the maximized log-likelihood's null distribution.

    Each refit's maximized log-likelihood on its own simulated data forms
    the reference; an observed value in the low tail indicates lack of
    fit.  ``p = (1 + #{loglik_b <= loglik_obs}) / B``.
    """
    cap = capability or default_capability()
    reps = simulate_replicates(m, B, seed, cap)
    return _gof_from_logliks(m.loglik, reps.logliks, alpha)


def _gof_from_logliks(observed: float, null_logliks: np.ndarray,
                      alpha: float) -> GofResult:
    B = null_logliks.size + 1
    p = (1 + int(np.count_nonzero(null_logliks <= observed))) / B
    return GofResult(p_value=p, reject=bool(p <= alpha))


def diagnose_model(
    m: FittedModel,
    kinds: tuple[PlotKind, ...] = tuple(PlotKind),
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    m_grid: int = DEFAULT_GRID,
    mode: EnvelopeMode = EnvelopeMode.STUDENTIZED_MAD,
    capability: Optional[ModelCapability] = None,
    with_gof: bool = False,
) -> tuple[dict[PlotKind, DiagnosticResult], Optional[GofResult]]:
    """All requested diagnostics from a single set of bootstrap replicates.

    Sharing the replicate residuals across plot kinds (and the
    goodness-of-fit baseline) gives results identical to calling
    :func:`plot_envelope` per kind with the same seed, at a fraction of
    the cost.
    """
    cap = capability or default_capability()
    reps = simulate_replicates(m, B, seed, cap)
    results = {
        kind: _result_for_kind(m, kind, reps, alpha, seed, m_grid, mode, cap)
        for kind in kinds
    }
    gof = _gof_from_logliks(m.loglik, reps.logliks, alpha) if with_gof else None
    return results, gof
