"""Shared oracles and synthetic-data builders for the test suite."""

import csv
import math

import numpy as np
from scipy import integrate, special

from gasshock.bvar import BvarSpec, build_regressors, minnesota_prior
from gasshock.simulate import SvarDgp, simulate
from gasshock.timeseries import FirmPanel, MacroDataset, QuarterIndex, quarter_range

COVID_N = 10


def dataset(values, start=QuarterIndex(2000, 1)):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return MacroDataset(quarter_range(start, len(values)), tuple(f"y{i}" for i in range(values.shape[1])), values)


def var1_data(n=3, T=200, seed=0, coef=0.5, start=QuarterIndex(1975, 1), scales=None):
    rng = np.random.default_rng(seed)
    A = coef * np.eye(n) + 0.05 * rng.standard_normal((n, n))
    L = np.tril(0.3 * rng.standard_normal((n, n)), -1) + np.eye(n)
    dgp = SvarDgp(A, L, T=T, seed=seed, start=start)
    return simulate(dgp, scales)[0]


def quadrature_log_ml(y, lam, delta):
    """Integrate likelihood x prior over (a, sigma^2) for a univariate AR(1) without intercept."""
    spec = BvarSpec(lags=1, intercept=False, delta=delta, lam=lam)
    Y, X = build_regressors(dataset(y), spec)
    prior = minnesota_prior(Y, X, spec)
    psi, d, omega = prior.psi[0, 0], prior.df, prior.omega[0]
    yt, xt = Y[:, 0], X[:, 0]
    T = yt.size

    def log_joint(a, s2):
        ll = -0.5 * T * math.log(2 * math.pi * s2) - ((yt - a * xt) ** 2).sum() / (2 * s2)
        lp_a = -0.5 * math.log(2 * math.pi * s2 * omega) - (a - delta) ** 2 / (2 * s2 * omega)
        lp_s = 0.5 * d * math.log(psi / 2) - special.gammaln(d / 2) - (d / 2 + 1) * math.log(s2) - psi / (2 * s2)
        return ll + lp_a + lp_s

    # integrate over u = log(sigma^2); shift by a reference value for stability
    ref = log_joint(delta, psi / d)

    def inner(u):
        s2 = math.exp(u)
        sd = math.sqrt(s2 * omega)
        f = lambda a: math.exp(log_joint(a, s2) - ref)
        val, _ = integrate.quad(f, delta - 12 * sd, delta + 12 * sd, epsabs=0, epsrel=1e-11, limit=200,
                                points=[delta])
        return val * s2

    total, _ = integrate.quad(inner, -25, 15, epsabs=0, epsrel=1e-10, limit=400)
    return math.log(total) + ref


def prior_predictive(n, T, lam, seed, lags=2):
    """VAR with coefficients drawn from the Minnesota prior (delta = 0, unit scales)."""
    rng = np.random.default_rng(seed)
    while True:
        A = np.stack([lam / ell * rng.standard_normal((n, n)) for ell in range(1, lags + 1)])
        dgp = SvarDgp(A, np.eye(n), T=T, seed=int(rng.integers(2**31)))
        try:
            return simulate(dgp)[0]
        except ValueError:
            continue


def spike_scales(dates, onset, factor=3.0):
    s = np.ones(len(dates))
    for i, d in enumerate(dates):
        if 0 <= d - onset < 3:
            s[i] = factor
    return s


def two_regime(T, seed, b_high=2.0, b_low=-1.0, hard=False):
    rng = np.random.default_rng(seed)
    shock = rng.normal(size=T)
    state = np.sin(np.arange(T) / 7.0) + 0.3 * rng.normal(size=T)
    Z = (state > 0).astype(float) if hard else 1 / (1 + np.exp(-5 * state))
    x = np.zeros(T)
    for t in range(1, T):
        zt = Z[t - 1]
        x[t] = 0.5 * x[t - 1] + (b_high * zt + b_low * (1 - zt)) * shock[t] + rng.normal()
    return x, shock, Z


def make_panel(codes_by_wave=None, forecasts_by_wave=None):
    """One record per firm and wave; waves start at 2020Q1."""
    codes_by_wave = codes_by_wave or []
    forecasts_by_wave = forecasts_by_wave or []
    waves, firms, codes, fc = [], [], [], []
    m = max(len(codes_by_wave), len(forecasts_by_wave))
    for w in range(m):
        cw = codes_by_wave[w] if codes_by_wave else None
        fw = forecasts_by_wave[w] if forecasts_by_wave else None
        size = len(cw) if cw is not None else len(fw)
        for i in range(size):
            waves.append(QuarterIndex(2020, 1) + w)
            firms.append(f"f{i}")
            codes.append(cw[i] if cw is not None else 0)
            fc.append(fw[i] if fw is not None else 0.0)
    k = len(waves)
    return FirmPanel(
        tuple(waves), tuple(firms), {"raw": np.array(codes)}, {"raw": np.ones(k, bool)},
        np.array(fc, dtype=float), np.ones(k, bool), np.ones(k, bool),
    )


def write_panel(path, start=QuarterIndex(1999, 4), waves=124, firms=60, seed=0):
    """Synthetic firm panel: uncertainty swings slowly, round answers come from uncertain firms."""
    rng = np.random.default_rng(seed)
    dates = quarter_range(start, waves)
    share_uncertain = 0.3 + 0.25 * np.sin(np.arange(waves) / 6.0)
    expect = 2.0 + np.cumsum(rng.normal(0.0, 0.15, waves))
    labels = ["strong decrease", "medium decrease", "modest decrease", "no change",
              "modest increase", "medium increase", "strong increase"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wave", "firm", "forecast", "informed", "raw_materials", "labor"])
        for t, d in enumerate(dates):
            for f in range(firms):
                if rng.random() < share_uncertain[t]:
                    fc = 0.5 * np.round(rng.normal(expect[t], 1.0) / 0.5)
                else:
                    fc = np.round(rng.normal(expect[t], 1.0), 2)
                    if abs(fc / 0.5 - round(fc / 0.5)) < 1e-9:
                        fc += 0.01
                raw = int(np.clip(np.round(rng.normal(0.5 + np.sin(t / 5.0), 1.2)), -3, 3))
                lab = int(np.clip(np.round(rng.normal(0.8, 1.0)), -3, 3))
                w.writerow([str(d), f"f{f:03d}", repr(float(fc)), "1" if rng.random() < 0.8 else "0",
                            labels[raw + 3], str(lab)])
    return path
