"""Logistic regression by iteratively reweighted least squares, BIC, and the
bidirectional stepwise search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

MAX_ITER = 100
TOL = 1e-8
STABILIZING_RIDGE = 1e-8


class QuasiSeparationError(RuntimeError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"quasi-separation detected on feature {feature!r}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


def log_likelihood(y: np.ndarray, p: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class LogisticFit:
    feature_names: list[str]
    coef: np.ndarray  # [intercept, features...]
    se: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    ridge_used: bool

    @property
    def k(self) -> int:
        return len(self.coef)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.coef[0] + X @ self.coef[1:])


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str] | None = None,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    ridge: float = 0.0,
) -> LogisticFit:
    """Maximum-likelihood fit via IRLS with an intercept always included.

    Converges when the largest coefficient change drops below tol. Singular
    information matrices are retried with a small L2 penalty on non-intercept
    coefficients (reported via ridge_used); perfect separation raises
    QuasiSeparationError naming the offending feature.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = list(feature_names) if feature_names is not None else [
        f"x{j}" for j in range(p)
    ]
    design = np.column_stack([np.ones(n), X])
    beta = np.zeros(p + 1)
    ridge_used = ridge > 0
    penalty = np.zeros(p + 1)
    penalty[1:] = ridge

    def separation_feature() -> str:
        if p == 0:
            return "(intercept)"
        sds = X.std(axis=0)
        j = int(np.argmax(np.abs(beta[1:]) * np.where(sds > 0, sds, 1.0)))
        return names[j]

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = design @ beta
        prob = sigmoid(eta)
        w = prob * (1.0 - prob)
        grad = design.T @ (y - prob) - penalty * beta
        hess = (design * w[:, None]).T @ design + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError("non-finite step")
        except np.linalg.LinAlgError:
            if penalty[1:].max() == 0.0:
                penalty[1:] = STABILIZING_RIDGE
                ridge_used = True
                continue
            raise
        beta = beta + step
        # perfect separation: every sample pushed essentially to its label
        if p > 0:
            eta_new = design @ beta
            pos, neg = eta_new[y == 1], eta_new[y == 0]
            if len(pos) and len(neg) and pos.min() > 15.0 and neg.max() < -15.0:
                raise QuasiSeparationError(separation_feature())
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged and p > 0 and np.max(np.abs(beta[1:])) > 1e6:
        raise QuasiSeparationError(separation_feature())

    prob = sigmoid(design @ beta)
    w = prob * (1.0 - prob)
    hess = (design * w[:, None]).T @ design + np.diag(penalty)
    try:
        cov = np.linalg.inv(hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(p + 1, np.nan)
    return LogisticFit(
        feature_names=names,
        coef=beta,
        se=se,
        loglik=log_likelihood(y, prob),
        iterations=iterations,
        converged=converged,
        ridge_used=ridge_used,
    )


def bic(loglik: float, k: int, n: int) -> float:
    """Bayesian Information Criterion: k ln(n) - 2 logLik."""
    return k * float(np.log(n)) - 2.0 * loglik


@dataclass
class StepwiseResult:
    features: list[str]
    fit: object
    bic: float
    start_index: int
    warnings: list[str] = field(default_factory=list)


def stepwise_select(
    X: pd.DataFrame,
    y: np.ndarray,
    pool: Sequence[str],
    starts: Sequence[Sequence[str]] = ((),),
    fit_fn: Callable | None = None,
    max_steps: int = 200,
) -> StepwiseResult:
    """Bidirectional stepwise search minimizing BIC.

    From each start set, alternate the best single addition with the best
    single removal until neither lowers BIC; keep the best model across
    restarts (ties: smaller set, then lexical feature order). fit_fn(features)
    must return (fit_object, bic_value); the default fits a logistic model.
    fits that fail (separation, singularity) are treated as unusable
    candidates.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    pool = [f for f in pool if f in X.columns]
    warnings: list[str] = []

    if fit_fn is None:

        def fit_fn(features: list[str]) -> tuple[object, float]:
            fit = fit_logistic(X[features].to_numpy(), y, feature_names=features)
            return fit, bic(fit.loglik, fit.k, n)

    cache: dict[frozenset, tuple] = {}

    def evaluate(features: list[str]):
        key = frozenset(features)
        if key not in cache:
            try:
                cache[key] = fit_fn(sorted(features))
            except Exception:
                cache[key] = (None, np.inf)
        return cache[key]

    best: tuple | None = None  # ((bic, size, names), features, fit, start_idx)

    for start_idx, start in enumerate(starts):
        current = sorted(set(start) & set(pool))
        fit, crit = evaluate(current)
        if fit is None and current:
            current = []
            fit, crit = evaluate(current)
        if fit is None:
            continue
        for _ in range(max_steps):
            moved = False
            additions = [f for f in pool if f not in current]
            if additions:
                scored = [(evaluate(current + [f])[1], f) for f in additions]
                add_bic, add_f = min(scored)
                if add_bic < crit - 1e-10:
                    current = sorted(current + [add_f])
                    fit, crit = evaluate(current)
                    moved = True
            if current:
                scored = [
                    (evaluate([g for g in current if g != f])[1], f) for f in current
                ]
                rm_bic, rm_f = min(scored)
                if rm_bic < crit - 1e-10:
                    current = [g for g in current if g != rm_f]
                    fit, crit = evaluate(current)
                    moved = True
            if not moved:
                break
        key = (crit, len(current), tuple(current))
        if best is None or key < best[0]:
            best = (key, current, fit, start_idx)

    if best is None:
        warnings.append("all stepwise restarts failed; falling back to intercept-only")
        fit = fit_logistic(np.empty((n, 0)), y, feature_names=[])
        return StepwiseResult(
            features=[], fit=fit, bic=bic(fit.loglik, 1, n), start_index=-1,
            warnings=warnings,
        )
    return StepwiseResult(
        features=best[1], fit=best[2], bic=best[0][0], start_index=best[3],
        warnings=warnings,
    )
