"""Ground-truth SVAR generator and companion-form oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .timeseries import MacroDataset, QuarterIndex, quarter_range

BENCHMARK_VARIABLES = ("rgas", "core", "exp", "unemp", "conf")
BENCHMARK_SHOCKS = ("gas", "as", "expectation", "ad", "sentiment")


def companion(lags: np.ndarray) -> np.ndarray:
    """Companion matrix of ``y_t = sum_l lags[l-1] y_{t-l}``; ``lags`` is (p, n, n)."""
    p, n, _ = lags.shape
    F = np.zeros((n * p, n * p))
    F[:n] = np.hstack(list(lags))
    F[n:, :-n] = np.eye(n * (p - 1))
    return F


def spectral_radius(lags: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion(lags)))))


@dataclass(frozen=True, eq=False)
class SvarDgp:
    lags: np.ndarray
    impact: np.ndarray
    intercept: np.ndarray | None = None
    T: int = 300
    burn_in: int = 200
    seed: int = 0
    names: tuple[str, ...] | None = None
    start: QuarterIndex = field(default=QuarterIndex(1999, 4))

    def __post_init__(self) -> None:
        lags = np.asarray(self.lags, dtype=float)
        if lags.ndim == 2:
            lags = lags[None]
        p, n, m = lags.shape
        impact = np.asarray(self.impact, dtype=float)
        if n != m or impact.shape != (n, n):
            raise ValueError("lag and impact matrices must be n x n")
        c = np.zeros(n) if self.intercept is None else np.asarray(self.intercept, dtype=float)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "impact", impact)
        object.__setattr__(self, "intercept", c)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"y{i + 1}" for i in range(n)))

    @property
    def n(self) -> int:
        return self.impact.shape[0]

    @property
    def p(self) -> int:
        return self.lags.shape[0]


def simulate(dgp: SvarDgp, shock_scales: np.ndarray | None = None) -> tuple[MacroDataset, np.ndarray]:
    """Simulate ``y_t = c + sum_j A_j y_{t-j} + L0 w_t`` with standard normal ``w_t``.

    ``shock_scales`` (length ``T``) multiplies the reduced-form innovation of
    each kept period; used to plant volatility breaks.
    """
    rho = spectral_radius(dgp.lags)
    if rho >= 1.0:
        raise ValueError(f"explosive companion matrix (spectral radius {rho:.4f})")
    if abs(np.linalg.det(dgp.impact)) < 1e-12:
        raise ValueError("impact matrix is singular")
    n, p = dgp.n, dgp.p
    total = dgp.burn_in + dgp.T
    rng = np.random.default_rng(dgp.seed)
    w = rng.standard_normal((total, n))
    scale = np.ones(total)
    if shock_scales is not None:
        scale[dgp.burn_in :] = np.asarray(shock_scales, dtype=float)
    mean = np.linalg.solve(np.eye(n) - dgp.lags.sum(axis=0), dgp.intercept)
    y = np.empty((total + p, n))
    y[:p] = mean
    for t in range(total):
        yt = dgp.intercept + dgp.impact @ w[t] * scale[t]
        for j in range(p):
            yt = yt + dgp.lags[j] @ y[p + t - 1 - j]
        y[p + t] = yt
    kept = y[p + dgp.burn_in :]
    data = MacroDataset(quarter_range(dgp.start, dgp.T), dgp.names, kept)
    return data, w[dgp.burn_in :].copy()


def paper_like_dgp(T: int = 300, seed: int = 1, burn_in: int = 200) -> SvarDgp:
    """Five-variable VAR(2) whose impact matrix satisfies the gas-shock restriction grid.

    Rows: real gas price, core inflation, firm expectations, unemployment,
    confidence. Columns: gas, aggregate supply, pure expectation, aggregate
    demand, sentiment.
    """
    impact = np.array(
        [
            [1.00, -0.45, 0.00, 0.40, 0.00],
            [0.45, 0.90, 0.00, 0.40, 0.00],
            [0.35, 0.40, 0.80, 0.40, 0.45],
            [0.45, 0.35, 0.00, -0.70, 0.35],
            [0.00, -0.45, 0.30, 0.45, 0.80],
        ]
    )
    A1 = np.array(
        [
            [0.60, 0.05, 0.00, 0.00, 0.00],
            [0.10, 0.50, 0.05, 0.00, 0.00],
            [0.05, 0.10, 0.50, 0.00, 0.05],
            [0.05, 0.00, 0.00, 0.70, -0.05],
            [-0.05, 0.00, 0.05, -0.05, 0.60],
        ]
    )
    A2 = np.diag([-0.15, 0.10, 0.05, 0.10, 0.05])
    return SvarDgp(
        np.stack([A1, A2]),
        impact,
        intercept=np.array([0.0, 1.5, 1.5, 3.0, 0.0]),
        T=T,
        burn_in=burn_in,
        seed=seed,
        names=BENCHMARK_VARIABLES,
    )


def oracle_irf(dgp_or_lags: SvarDgp | np.ndarray, H: int, impact: np.ndarray | None = None) -> np.ndarray:
    """Responses ``Theta_h = J F^h J' L0`` from companion-matrix powers; shape (n, n, H+1)."""
    if isinstance(dgp_or_lags, SvarDgp):
        lags, impact = dgp_or_lags.lags, dgp_or_lags.impact
    else:
        lags = np.asarray(dgp_or_lags, dtype=float)
    if impact is None:
        raise ValueError("impact matrix required")
    p, n, _ = lags.shape
    F = companion(lags)
    out = np.empty((n, n, H + 1))
    for h in range(H + 1):
        out[:, :, h] = np.linalg.matrix_power(F, h)[:n, :n] @ impact
    return out
