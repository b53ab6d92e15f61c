"""Survey aggregates: diffusion indexes, round-number uncertainty, state variable."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .timeseries import FirmPanel, QuarterIndex, format_number

Z95 = 1.96  # conventional rounded 97.5% normal quantile


@dataclass(frozen=True, eq=False)
class IndexSeries:
    """Per-wave index with a 95% band.

    Where fewer than two responses exist the band collapses onto ``value``
    and ``has_band`` is False.
    """

    dates: tuple[QuarterIndex, ...]
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: np.ndarray

    def __post_init__(self) -> None:
        m = len(self.dates)
        for name in ("value", "lower", "upper", "n"):
            if np.shape(getattr(self, name)) != (m,):
                raise ValueError(f"{name} must have one entry per date")
        if np.any(self.lower > self.value) or np.any(self.value > self.upper):
            raise ValueError("band must bracket the value")

    @property
    def has_band(self) -> np.ndarray:
        return np.asarray(self.n) >= 2

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "value", "lo", "hi", "n"])
            for i, d in enumerate(self.dates):
                band = self.has_band[i]
                w.writerow(
                    [
                        str(d),
                        format_number(self.value[i]),
                        format_number(self.lower[i]) if band else "",
                        format_number(self.upper[i]) if band else "",
                        int(self.n[i]),
                    ]
                )


def _by_wave(panel: FirmPanel, values: np.ndarray, present: np.ndarray):
    waves = panel.wave_dates()
    pos = {w: i for i, w in enumerate(waves)}
    groups: list[list[float]] = [[] for _ in waves]
    for w, x, ok in zip(panel.waves, values, present):
        if ok:
            groups[pos[w]].append(float(x))
    for w, g in zip(waves, groups):
        if not g:
            raise ValueError(f"empty wave {w}")
    return waves, groups


def diffusion_index(panel: FirmPanel, factor: str) -> IndexSeries:
    """Mean signed intensity per wave with a normal-approximation 95% band."""
    if factor not in panel.factors:
        raise KeyError(f"unknown factor {factor!r}; have {sorted(panel.factors)}")
    waves, groups = _by_wave(panel, panel.factors[factor], panel.factor_present[factor])
    value, half, n = [], [], []
    for g in groups:
        x = np.array(g)
        value.append(x.mean())
        n.append(x.size)
        half.append(Z95 * x.std(ddof=1) / np.sqrt(x.size) if x.size >= 2 else 0.0)
    value, half = np.array(value), np.array(half)
    return IndexSeries(waves, value, value - half, value + half, np.array(n))


@dataclass(frozen=True)
class RoundnessRule:
    """When a point forecast counts as round, and the round share of certain firms.

    The default ``p0`` assumes certain respondents report to one decimal
    place, so a fraction ``0.1 / base`` of their answers lands on the grid by
    chance.
    """

    base: float = 0.5
    tolerance: float = 1e-9
    p0: float | None = None

    def __post_init__(self) -> None:
        if not self.base > 0:
            raise ValueError("base must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.p0 is None:
            if self.base <= 0.1:
                raise ValueError("no default p0 for base <= 0.1; pass p0 explicitly")
            object.__setattr__(self, "p0", 0.1 / self.base)
        if not 0.0 <= self.p0 < 1.0:
            raise ValueError(f"p0 must lie in [0, 1), got {self.p0}")

    def is_round(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.abs(x - self.base * np.round(x / self.base)) <= self.tolerance


def uncertainty_index(panel: FirmPanel, rule: RoundnessRule | None = None) -> IndexSeries:
    """Share of likely-uncertain firms per wave from the prevalence of round forecasts.

    With round share ``f`` the index is ``(f - p0) / (1 - p0)`` clamped to
    [0, 1]; the band maps the binomial interval for ``f`` through the same
    affine function.
    """
    rule = rule or RoundnessRule()
    waves, groups = _by_wave(panel, panel.forecast, panel.forecast_present)
    scale = 1.0 - rule.p0
    value, lo, hi, n = [], [], [], []
    for g in groups:
        x = np.array(g)
        k = int(rule.is_round(x).sum())
        f = k / x.size
        # from counts: avoids rounding in f - p0
        base = rule.p0 * x.size
        v = min(max((k - base) / (x.size - base), 0.0), 1.0)
        half = Z95 * np.sqrt(f * (1.0 - f) / x.size) / scale if x.size >= 2 else 0.0
        value.append(v)
        lo.append(min(max(v - half, 0.0), v))
        hi.append(max(min(v + half, 1.0), v))
        n.append(x.size)
    return IndexSeries(waves, np.array(value), np.array(lo), np.array(hi), np.array(n))


def mean_forecast(panel: FirmPanel) -> tuple[tuple[QuarterIndex, ...], np.ndarray]:
    waves, groups = _by_wave(panel, panel.forecast, panel.forecast_present)
    return waves, np.array([np.mean(g) for g in groups])


DEFAULT_WEIGHTS = (0.4, 0.3, 0.2, 0.1)


def state_variable(
    uncertainty: IndexSeries | np.ndarray,
    mean_expectations: Sequence[float] | np.ndarray,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    *,
    divide: bool = False,
    dates: Sequence[QuarterIndex] | None = None,
) -> np.ndarray:
    """Scale the uncertainty index by average expectations, then smooth.

    Output ``t`` is ``sum_k weights[k] * scaled[t - k]`` over the current and
    three previous quarters (most recent first); the first three entries are
    NaN. ``divide=True`` divides by expectations instead of multiplying.
    """
    if isinstance(uncertainty, IndexSeries):
        if dates is not None and tuple(dates) != uncertainty.dates:
            raise ValueError("uncertainty index and expectations are on different dates")
        index = np.asarray(uncertainty.value, dtype=float)
    else:
        index = np.asarray(uncertainty, dtype=float)
    expect = np.asarray(mean_expectations, dtype=float)
    if index.shape != expect.shape or index.ndim != 1:
        raise ValueError("uncertainty index and expectations are misaligned")
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,):
        raise ValueError("need exactly 4 weights")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
        raise ValueError("weights must sum to 1")
    if divide:
        if np.any(expect <= 0):
            raise ValueError("expectations must be positive when dividing")
        scaled = index / expect
    else:
        scaled = index * expect
    out = np.full_like(scaled, np.nan)
    for t in range(3, scaled.size):
        out[t] = sum(w[k] * scaled[t - k] for k in range(4))
    return out


def transition_prob(state: Sequence[float] | np.ndarray, eta: float = 5.0) -> np.ndarray:
    """Logistic weight of the high state, centred on the median of ``state``.

    NaN entries are ignored for the median/sd and propagate to the output.
    """
    x = np.asarray(state, dtype=float)
    if not eta > 0:
        raise ValueError("eta must be positive")
    finite = x[np.isfinite(x)]
    if finite.size < 2 or np.ptp(finite) == 0:
        raise ValueError("state variable has zero dispersion")
    mu = np.median(finite)
    sigma = finite.std(ddof=1)
    return expit(eta * (x - mu) / sigma)
