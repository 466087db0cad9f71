"""Core data model and the capability contract shared by all model classes.

A fitted model of any class is reduced to four capabilities (simulate,
refit, residuals, predict).  The bootstrap engine only ever talks to a
``ModelCapability``, so new model classes can be plugged in without
touching the envelope machinery.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

if TYPE_CHECKING:
    from .fitters import FitControl


class EnvdiagError(Exception):
    """Base class for all errors raised by this package."""


class TooFewRows(EnvdiagError):
    """Dataset has fewer than three rows."""


class RankDeficient(EnvdiagError):
    """Design matrix does not have full column rank."""


class BadGrouping(EnvdiagError):
    """Group labels are not contiguous integers 0..G-1 with no empty class."""


class ModelKind(enum.Enum):
    LM = "lm"
    GLM_POISSON = "poisson"
    GLMM_POISSON_RI = "poisson-ri"


def _as_float_vector(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if out.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {out.shape}")
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response vector, design matrix and optional grouping labels.

    Parameters
    ----------
    y : array, shape (n,)
        Response values.
    X : array, shape (n, p)
        Design matrix; by convention the first column is the all-ones
        intercept (callers build it explicitly, there is no formula layer).
    group : array of int, shape (n,), optional
        Random-intercept grouping labels, contiguous integers ``0..G-1``.
    """

    y: np.ndarray
    X: np.ndarray
    group: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _as_float_vector(self.y, "y")
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be two-dimensional, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"y has {y.shape[0]} rows but X has {X.shape[0]}"
            )
        group = self.group
        if group is not None:
            group = np.asarray(group, dtype=int)
            if group.shape != y.shape:
                raise ValueError("group must have the same length as y")
        for arr in (y, X) + ((group,) if group is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "group", group)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        if self.group is None:
            return 0
        return int(self.group.max()) + 1


def validate_dataset(d: Dataset) -> Dataset:
    """Check the Dataset invariants and return ``d`` unchanged.

    Raises
    ------
    TooFewRows
        If ``n < 3``.
    RankDeficient
        If ``X`` has more columns than rows or rank below ``p``.
    BadGrouping
        If group labels are present but not contiguous ``0..G-1`` with
        every label occurring at least once.
    """
    if d.n < 3:
        raise TooFewRows(f"need at least 3 rows, got {d.n}")
    if not np.all(np.isfinite(d.y)) or not np.all(np.isfinite(d.X)):
        raise ValueError("y and X must be finite")
    if d.p > d.n:
        raise RankDeficient(f"p={d.p} columns exceed n={d.n} rows")
    rank = np.linalg.matrix_rank(d.X)
    if rank < d.p:
        raise RankDeficient(f"X has rank {rank} < p={d.p}")
    if d.group is not None:
        labels = np.unique(d.group)
        expected = np.arange(labels.size)
        if labels.size == 0 or not np.array_equal(labels, expected):
            raise BadGrouping(
                f"labels must be contiguous 0..G-1, got {labels.tolist()}"
            )
    return d


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Parameter estimates plus everything needed to simulate and refit.

    ``eta`` is always the marginal linear predictor ``X @ beta``; for the
    random-intercept model the predicted group effects are deliberately
    excluded so that linear predictors are comparable across bootstrap
    replicates.
    """

    kind: ModelKind
    beta: np.ndarray
    eta: np.ndarray
    loglik: float
    dataset: Dataset
    sigma: Optional[float] = None   # residual sd, LM only
    omega: Optional[float] = None   # random-intercept sd, GLMM only
    control: Optional["FitControl"] = None
    degenerate: bool = False        # LM fit with zero residual variance
    boundary_omega: bool = False    # GLMM omega pinned at the optimizer floor

    def __post_init__(self):
        beta = _as_float_vector(self.beta, "beta")
        eta = _as_float_vector(self.eta, "eta")
        beta.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "eta", eta)
        if not np.isfinite(self.loglik):
            raise ValueError("loglik must be finite")
        if (self.sigma is not None) != (self.kind is ModelKind.LM):
            raise ValueError("sigma is present iff kind is LM")
        if (self.omega is not None) != (self.kind is ModelKind.GLMM_POISSON_RI):
            raise ValueError("omega is present iff kind is GLMM_POISSON_RI")

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def p(self) -> int:
        return self.dataset.p


def linear_predictors(m: FittedModel) -> np.ndarray:
    """Marginal linear predictors ``X @ beta``.

    For the random-intercept model the predicted group intercepts are
    excluded, so two fits with identical ``beta`` yield identical output.
    """
    return np.array(m.dataset.X @ m.beta)


@dataclass(frozen=True)
class ModelCapability:
    """The four operations the bootstrap engine needs from a model class.

    ``simulate`` draws one response vector from the fitted model given a
    random generator; ``refit`` re-estimates on a new response, keeping
    kind, design and grouping; ``residuals`` and ``predict`` are pure
    functions of a fitted model.
    """

    simulate: Callable[[FittedModel, np.random.Generator], np.ndarray]
    refit: Callable[[FittedModel, np.ndarray], FittedModel]
    residuals: Callable[[FittedModel], np.ndarray]
    predict: Callable[[FittedModel], np.ndarray] = field(
        default_factory=lambda: linear_predictors
    )
