"""State-dependent local projections with Newey-West inference."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .timeseries import QuarterIndex, format_number

DUMMY_ONSET = QuarterIndex(2020, 2)


class CollinearDesignError(ValueError):
    pass


def covid_dummy(dates: Sequence[QuarterIndex], rho_d: float = 0.5, onset: QuarterIndex = DUMMY_ONSET) -> np.ndarray:
    """0 before ``onset``, 1 at ``onset``, ``rho_d**k`` ``k`` quarters later."""
    if not 0.0 < rho_d < 1.0:
        raise ValueError("rho_d must lie in (0, 1)")
    k = np.array([d - onset for d in dates], dtype=float)
    return np.where(k >= 0, rho_d ** np.maximum(k, 0.0), 0.0)


def _bread(X: np.ndarray) -> np.ndarray:
    T, k = X.shape
    if T <= k:
        raise ValueError(f"need more observations ({T}) than regressors ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise ValueError("singular X'X")
    return np.linalg.inv(X.T @ X)


def newey_west(X: np.ndarray, u: np.ndarray, bandwidth: int) -> np.ndarray:
    """HAC covariance of OLS coefficients with Bartlett weights ``1 - l/(bandwidth+1)``.

    No small-sample correction; ``bandwidth=0`` gives the White (HC0)
    estimator.
    """
    if bandwidth < 0:
        raise ValueError("bandwidth must be >= 0")
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    bread = _bread(X)
    g = X * u[:, None]
    meat = g.T @ g
    for ell in range(1, min(bandwidth, X.shape[0] - 1) + 1):
        w = 1.0 - ell / (bandwidth + 1.0)
        gamma = g[ell:].T @ g[:-ell]
        meat += w * (gamma + gamma.T)
    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def robust_covariance(X: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-robust (kernel-free) covariance."""
    return newey_west(X, u, 0)


@dataclass(frozen=True)
class LpSpec:
    horizons: int = 12
    y_lags: int = 2
    shock_lags: int = 2
    bandwidth: int | None = None  # None: h + 1 at horizon h
    hac: bool = True
    rho_d: float = 0.5
    tight_labor: bool = True

    def __post_init__(self) -> None:
        if self.horizons < 0:
            raise ValueError("horizons must be >= 0")
        if self.y_lags < 1 or self.shock_lags < 1:
            raise ValueError("lag augmentation needs at least one lag of each series")
        if self.bandwidth is not None and self.bandwidth < 0:
            raise ValueError("bandwidth must be >= 0")

    def bandwidth_at(self, h: int) -> int:
        if not self.hac:
            return 0
        return h + 1 if self.bandwidth is None else self.bandwidth


@dataclass(frozen=True, eq=False)
class LpResult:
    beta_high: np.ndarray
    se_high: np.ndarray
    beta_low: np.ndarray
    se_low: np.ndarray
    t_eff: np.ndarray
    r2: np.ndarray

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(len(self.beta_high))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "beta_high", "se_high", "beta_low", "se_low", "t_eff", "r2"])
            for h in self.horizons:
                row = [self.beta_high[h], self.se_high[h], self.beta_low[h], self.se_low[h]]
                w.writerow(
                    [int(h)]
                    + [format_number(v) if np.isfinite(v) else "NA" for v in row]
                    + [int(self.t_eff[h]), format_number(self.r2[h])]
                )


def _lag(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, np.nan)
    if k < a.size:
        out[k:] = a[: a.size - k]
    return out


def _base_block(x, shock, S, spec: LpSpec) -> tuple[list[np.ndarray], list[str]]:
    cols = [np.ones_like(x), shock]
    names = ["const", "shock"]
    for k in range(1, spec.shock_lags + 1):
        cols.append(_lag(shock, k))
        names.append(f"shock_l{k}")
    for k in range(1, spec.y_lags + 1):
        cols.append(_lag(x, k))
        names.append(f"y_l{k}")
    if S is not None and spec.tight_labor:
        cols.append(shock * _lag(S, 1))
        names.append("shock_x_tight")
    return cols, names


def _window(valid: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise ValueError("regression window is empty")
    if idx[-1] - idx[0] + 1 != idx.size:
        raise ValueError("missing values inside the regression window")
    return idx


def _fit(target: np.ndarray, blocks: list[tuple[np.ndarray, list[str]]], dummy, h: int, spec: LpSpec):
    T = target.size
    lead = np.full(T, np.nan)
    lead[: T - h] = target[h:]
    cols, names = [], []
    for mat, nm in blocks:
        cols.append(mat)
        names.extend(nm)
    X = np.column_stack([c for m in cols for c in m.T])
    if dummy is not None:
        X = np.column_stack([X, dummy])
        names.append("dummy")
    valid = np.isfinite(lead) & np.all(np.isfinite(X), axis=1)
    rows = _window(valid)
    X, y = X[rows], lead[rows]
    keep = np.any(X != 0.0, axis=0)
    X = X[:, keep]
    names = [nm for nm, k in zip(names, keep) if k]
    if X.shape[0] <= X.shape[1]:
        raise ValueError(f"window too short: {X.shape[0]} rows for {X.shape[1]} regressors at h={h}")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise CollinearDesignError(
            f"collinear design at h={h}: state blocks are not separately identified "
            "(is the transition series constant?)"
        )
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    u = y - X @ beta
    cov = newey_west(X, u, spec.bandwidth_at(h))
    ssr = u @ u
    sst = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - ssr / sst if sst > 0 else np.nan
    return dict(zip(names, zip(beta, np.sqrt(np.diag(cov))))), rows.size, r2


def _as_block(cols: list[np.ndarray], names: list[str], weight: np.ndarray | None, tag: str):
    mat = np.column_stack(cols)
    if weight is not None:
        mat = mat * weight[:, None]
    return mat, [f"{tag}:{nm}" for nm in names]


def lp_state_dependent(
    x: Sequence[float],
    shock: Sequence[float],
    Z: Sequence[float],
    S: Sequence[float] | None = None,
    spec: LpSpec = LpSpec(),
    dummy: Sequence[float] | None = None,
) -> LpResult:
    """Two-state local projections of ``x_{t+h}`` on ``shock_t``.

    Every control (intercept, shock lags, own lags and the optional
    ``shock_t * S_{t-1}`` tight-labour interaction) enters once multiplied
    by ``Z_{t-1}`` and once by ``1 - Z_{t-1}``; ``dummy`` is common to both
    states. A state whose block vanishes in-sample (e.g. ``Z`` identically
    one) is dropped and its coefficients reported as NaN.
    """
    x = np.asarray(x, dtype=float)
    shock = np.asarray(shock, dtype=float)
    Z = np.asarray(Z, dtype=float)
    S_arr = None if S is None else np.asarray(S, dtype=float)
    d_arr = None if dummy is None else np.asarray(dummy, dtype=float)
    for arr in (shock, Z, S_arr, d_arr):
        if arr is not None and arr.shape != x.shape:
            raise ValueError("all series must be date-aligned and of equal length")
    zl = _lag(Z, 1)
    cols, names = _base_block(x, shock, S_arr, spec)
    blocks = [_as_block(cols, names, zl, "high"), _as_block(cols, names, 1.0 - zl, "low")]
    return _run(x, blocks, d_arr, spec, ("high:shock", "low:shock"))


def lp_linear(
    x: Sequence[float],
    shock: Sequence[float],
    S: Sequence[float] | None = None,
    spec: LpSpec = LpSpec(),
    dummy: Sequence[float] | None = None,
) -> LpResult:
    """Single-state projection with the same controls; results land in ``beta_high``."""
    x = np.asarray(x, dtype=float)
    shock = np.asarray(shock, dtype=float)
    S_arr = None if S is None else np.asarray(S, dtype=float)
    d_arr = None if dummy is None else np.asarray(dummy, dtype=float)
    cols, names = _base_block(x, shock, S_arr, spec)
    return _run(x, [_as_block(cols, names, None, "high")], d_arr, spec, ("high:shock", "low:shock"))


def _run(x, blocks, dummy, spec: LpSpec, keys: tuple[str, str]) -> LpResult:
    H = spec.horizons
    out = {k: np.full(H + 1, np.nan) for k in ("bh", "sh", "bl", "sl", "r2")}
    t_eff = np.zeros(H + 1, dtype=int)
    for h in range(H + 1):
        coefs, t_eff[h], out["r2"][h] = _fit(x, blocks, dummy, h, spec)
        if keys[0] in coefs:
            out["bh"][h], out["sh"][h] = coefs[keys[0]]
        if keys[1] in coefs:
            out["bl"][h], out["sl"][h] = coefs[keys[1]]
    return LpResult(out["bh"], out["sh"], out["bl"], out["sl"], t_eff, out["r2"])
