"""Impulse responses, credible bands, historical decompositions and recursive GIRFs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .bvar import BvarPosterior
from .identification import StructuralDrawSet, residuals
from .timeseries import MacroDataset, QuarterIndex, format_number


def irf(lags: np.ndarray, impact: np.ndarray, H: int) -> np.ndarray:
    """Responses ``Theta[:, :, h]`` to one-standard-deviation structural shocks.

    ``lags`` is ``(p, n, n)``; ``Theta_0 = impact`` and
    ``Theta_h = sum_{j=1}^{min(h, p)} A_j Theta_{h-j}``.
    """
    lags = np.asarray(lags, dtype=float)
    impact = np.asarray(impact, dtype=float)
    if lags.ndim == 2:
        lags = lags[None]
    p, n, m = lags.shape
    if n != m or impact.shape[0] != n:
        raise ValueError(f"dimension mismatch: lags {lags.shape}, impact {impact.shape}")
    if H < 0:
        raise ValueError("horizon must be >= 0")
    out = np.zeros((n, impact.shape[1], H + 1))
    out[:, :, 0] = impact
    for h in range(1, H + 1):
        acc = np.zeros_like(impact)
        for j in range(1, min(h, p) + 1):
            acc += lags[j - 1] @ out[:, :, h - j]
        out[:, :, h] = acc
    return out


@dataclass(frozen=True, eq=False)
class IrfResult:
    """Pointwise posterior summaries, arrays shaped (variable, shock, horizon)."""

    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    coverage: float
    variables: tuple[str, ...]
    shocks: tuple[str, ...]

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.median.shape[2])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "shock", "horizon", "median", "lo", "hi"])
            for j, s in enumerate(self.shocks):
                for i, v in enumerate(self.variables):
                    for h in self.horizons:
                        w.writerow(
                            [v, s, int(h)]
                            + [format_number(a[i, j, h]) for a in (self.median, self.lower, self.upper)]
                        )


def _bands(stack: np.ndarray, coverage: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not 0.0 <= coverage < 1.0:
        raise ValueError("coverage must lie in [0, 1)")
    lo_q, hi_q = 0.5 - coverage / 2.0, 0.5 + coverage / 2.0
    lo, med, hi = np.quantile(stack, [lo_q, 0.5, hi_q], axis=0, method="linear")
    # quantiles are monotone in the level; clip guards against rounding
    return np.minimum(lo, med), med, np.maximum(hi, med)


def irf_draws(drawset: StructuralDrawSet, H: int) -> np.ndarray:
    return np.stack([irf(drawset.lag_matrices(d), drawset.impact[d], H) for d in range(len(drawset))])


def irf_bands(drawset: StructuralDrawSet, H: int = 20, coverage: float = 0.68) -> IrfResult:
    """Pointwise median and equal-tailed band across accepted draws."""
    if len(drawset) == 0:
        raise ValueError("empty draw set")
    lo, med, hi = _bands(irf_draws(drawset, H), coverage)
    return IrfResult(med, lo, hi, coverage, drawset.names, drawset.shocks)


def median_target_draw(drawset: StructuralDrawSet, H: int = 20) -> int:
    """Index of the accepted draw whose standardised IRFs are closest to the pointwise median."""
    if len(drawset) == 0:
        raise ValueError("empty draw set")
    stack = irf_draws(drawset, H)
    med = np.median(stack, axis=0)
    sd = stack.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    dist = (((stack - med) / sd) ** 2).reshape(len(drawset), -1).sum(axis=1)
    return int(np.argmin(dist))


@dataclass(frozen=True, eq=False)
class HistoricalDecomposition:
    """``contributions[i, t, j]``: part of variable ``i`` at date ``t`` due to shock ``j``.

    ``deterministic[t, i]`` is the path implied by the initial conditions and
    the intercept with all shocks switched off.
    """

    dates: tuple[QuarterIndex, ...]
    variables: tuple[str, ...]
    shocks: tuple[str, ...]
    contributions: np.ndarray
    deterministic: np.ndarray
    structural_shocks: np.ndarray
    observed: np.ndarray
    fit_end: QuarterIndex | None = None

    def table(self, variable: str) -> np.ndarray:
        """``T x (n_shocks + 1)`` matrix: shock contributions then the deterministic component."""
        i = self.variables.index(variable)
        return np.column_stack([self.contributions[i], self.deterministic[:, i]])

    def max_additivity_error(self) -> float:
        total = self.contributions.sum(axis=2).T + self.deterministic
        return float(np.max(np.abs(total - self.observed)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "date", "component", "contribution", "in_sample"])
            for i, v in enumerate(self.variables):
                for t, d in enumerate(self.dates):
                    flag = "" if self.fit_end is None else int(d <= self.fit_end)
                    for j, s in enumerate(self.shocks):
                        w.writerow([v, str(d), s, format_number(self.contributions[i, t, j]), flag])
                    w.writerow([v, str(d), "deterministic", format_number(self.deterministic[t, i]), flag])


def historical_decomposition(
    lags: np.ndarray,
    intercept: np.ndarray,
    impact: np.ndarray,
    data: MacroDataset,
    shocks: Sequence[str] | None = None,
    fit_end: QuarterIndex | None = None,
) -> HistoricalDecomposition:
    """Decompose every observation of ``data`` with frozen parameters.

    Shocks are recovered over the whole span (also past ``fit_end``); the
    first ``p`` observations serve as initial conditions and are fully
    deterministic.
    """
    lags = np.asarray(lags, dtype=float)
    p, n, _ = lags.shape
    impact = np.asarray(impact, dtype=float)
    if np.linalg.cond(impact) > 1e14:
        raise ValueError("singular impact matrix")
    if data.n != n:
        raise ValueError(f"data has {data.n} variables, model has {n}")
    coef = np.vstack([a.T for a in lags] + [np.asarray(intercept, dtype=float)[None, :]])
    eps = residuals(coef, data, p, True)
    T = data.T
    w = np.zeros((T, n))
    w[p:] = linalg.solve(impact, eps[p:].T).T

    y = data.values
    det = np.zeros((T, n))
    det[:p] = y[:p]
    contrib = np.zeros((T, n, n))  # (t, variable, shock)
    for t in range(p, T):
        acc = np.array(intercept, dtype=float)
        cacc = impact * w[t][None, :]
        for j in range(1, p + 1):
            acc = acc + lags[j - 1] @ det[t - j]
            cacc = cacc + lags[j - 1] @ contrib[t - j]
        det[t] = acc
        contrib[t] = cacc
    shock_names = tuple(shocks) if shocks is not None else tuple(f"shock{j + 1}" for j in range(n))
    return HistoricalDecomposition(
        data.dates, data.names, shock_names, np.transpose(contrib, (1, 0, 2)), det, w, y.copy(), fit_end
    )


def decompose_draw(drawset: StructuralDrawSet, d: int, data: MacroDataset) -> HistoricalDecomposition:
    data = data.select(drawset.names)
    fit_end = drawset.dates[-1] if drawset.dates else None
    return historical_decomposition(
        drawset.lag_matrices(d), drawset.intercept(d), drawset.impact[d], data, drawset.shocks, fit_end
    )


def girf_recursive(
    posterior: BvarPosterior, shock_position: int = 0, H: int = 20, coverage: float = 0.68
) -> IrfResult:
    """Responses to a one-standard-deviation innovation in variable ``shock_position`` under a Cholesky ordering."""
    if len(posterior) == 0:
        raise ValueError("empty posterior")
    if not 0 <= shock_position < posterior.n:
        raise ValueError("shock position outside the system")
    stack = []
    for d in range(len(posterior)):
        try:
            P = linalg.cholesky(posterior.sigma[d], lower=True)
        except linalg.LinAlgError:
            raise ValueError(f"Cholesky failed for draw {d}") from None
        stack.append(irf(posterior.lag_matrices(d), P[:, [shock_position]], H))
    lo, med, hi = _bands(np.stack(stack), coverage)
    return IrfResult(med, lo, hi, coverage, posterior.names, (posterior.names[shock_position],))
