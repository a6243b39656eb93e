"""
Least-squares projection engine.

Every estimator and decomposition in didforge goes through ``project``:
a QR solve on an optional row subset, with fitted values produced for all
rows so that a fit on one subsample can impute for another.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Type

import numpy as np
from scipy import linalg

from src.exceptions import DegenerateDenominator, EmptySubset, RankDeficient
from src.logger import log
from src.panel import subset_rows

RANK_TOLERANCE = 1e-10
DEGENERATE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ProjectionFit:
    """Result of a least-squares projection."""

    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    gram_condition: float
    dof: int
    subset: np.ndarray

    @property
    def n_used(self) -> int:
        return int(self.subset.sum())

    def predict(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


def _as_design(design: np.ndarray, n: int) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    if design.shape[0] != n:
        raise ValueError(f"design has {design.shape[0]} rows, response has {n}")
    return design


def offending_columns(design: np.ndarray, rank_tolerance: float = RANK_TOLERANCE) -> list:
    """Columns a pivoted QR pushes past the numerical rank."""
    _, r, pivots = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return sorted(int(j) for j in pivots)
    rank = int(np.sum(diag > rank_tolerance * diag[0]))
    return sorted(int(j) for j in pivots[rank:])


def check_rank(design: np.ndarray, rank_tolerance: float = RANK_TOLERANCE,
               names: Optional[Sequence[str]] = None,
               error_cls: Type[RankDeficient] = RankDeficient) -> np.ndarray:
    """Singular values of ``design``; raises ``error_cls`` naming the offending columns when rank deficient."""
    rows, p = design.shape
    if p == 0:
        return np.zeros(0)
    singular = linalg.svd(design, compute_uv=False)
    if rows < p or singular[-1] <= rank_tolerance * singular[0]:
        bad = offending_columns(design, rank_tolerance) if rows >= p else list(range(rows, p))
        labelled = [names[j] for j in bad] if names is not None else bad
        raise error_cls(
            f"design is rank deficient on {rows} rows x {p} columns",
            columns=labelled, n_rows=int(rows),
        )
    return singular


def project(response: np.ndarray, design: np.ndarray, subset: Optional[Sequence[bool]] = None,
            rank_tolerance: float = RANK_TOLERANCE,
            names: Optional[Sequence[str]] = None,
            error_cls: Type[RankDeficient] = RankDeficient) -> ProjectionFit:
    """
    Least-squares projection of ``response`` on ``design`` over ``subset``.

    Args:
        response: length-n vector.
        design: n x p regressor matrix (include the intercept column yourself).
        subset: optional boolean row mask; the fit uses these rows only.
        rank_tolerance: singular values below this times the largest mean rank deficiency.
        names: optional column names for the error context.
        error_cls: RankDeficient subclass to raise.

    Returns:
        ProjectionFit with fitted values and residuals for ALL rows.
    """
    response = np.asarray(response, dtype=float)
    n = response.shape[0]
    design = _as_design(design, n)
    mask = subset_rows(n, subset)
    if not mask.any():
        raise EmptySubset("projection subset is empty")

    X = design[mask]
    y = response[mask]
    p = X.shape[1]
    if p == 0:
        zeros = np.zeros(n)
        return ProjectionFit(np.zeros(0), zeros, response - zeros, 1.0, int(mask.sum()), mask)

    singular = check_rank(X, rank_tolerance, names, error_cls)
    q, r = linalg.qr(X, mode="economic")
    coefficients = linalg.solve_triangular(r, q.T @ y)
    fitted = design @ coefficients
    condition = float((singular[0] / singular[-1]) ** 2)
    log.debug(f"projection: rows={X.shape[0]} cols={p} cond={condition:.3g}")
    return ProjectionFit(
        coefficients=coefficients,
        fitted=fitted,
        residuals=response - fitted,
        gram_condition=condition,
        dof=int(X.shape[0] - p),
        subset=mask,
    )


class FwlComponents(NamedTuple):
    ratio: float
    numerator: float
    denominator: float
    residual: np.ndarray
    projection: ProjectionFit


def fwl_components(target: np.ndarray, partialled: np.ndarray, response: np.ndarray,
                   subset: Optional[Sequence[bool]] = None,
                   rank_tolerance: float = RANK_TOLERANCE,
                   degenerate_tolerance: float = DEGENERATE_TOLERANCE,
                   error_cls: Type[DegenerateDenominator] = DegenerateDenominator) -> FwlComponents:
    """
    Partial ``partialled`` out of ``target`` and form E[r * response] / E[r^2].

    Means are taken over ``subset``; ``residual`` is returned for all rows.
    """
    target = np.asarray(target, dtype=float)
    response = np.asarray(response, dtype=float)
    mask = subset_rows(target.shape[0], subset)
    fit = project(target, partialled, mask, rank_tolerance=rank_tolerance)
    residual = fit.residuals
    denominator = float(np.mean(residual[mask] ** 2))
    scale = max(float(np.mean(target[mask] ** 2)), np.finfo(float).tiny)
    if denominator <= degenerate_tolerance * scale:
        raise error_cls(
            "residualized target has no variation left",
            denominator=denominator, scale=scale,
        )
    numerator = float(np.mean(residual[mask] * response[mask]))
    return FwlComponents(numerator / denominator, numerator, denominator, residual, fit)


def fwl_partial(target: np.ndarray, partialled: np.ndarray, response: np.ndarray,
                subset: Optional[Sequence[bool]] = None, **kwargs) -> float:
    """Frisch-Waugh-Lovell ratio: the coefficient on ``target`` in a joint regression with ``partialled``."""
    return fwl_components(target, partialled, response, subset, **kwargs).ratio
