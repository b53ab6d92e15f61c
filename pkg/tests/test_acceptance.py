"""The nine primary acceptance criteria, each printing one PASS/FAIL line."""

import contextlib
import json
import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from gasshock import bvar
from gasshock.bvar import BvarSpec, covid_scales, estimate_covid_profile, log_marginal_likelihood
from gasshock.identification import extract_shocks, identify, gas_shock_restrictions
from gasshock.indexes import RoundnessRule, diffusion_index, transition_prob, uncertainty_index
from gasshock.lp import LpSpec, lp_linear, lp_state_dependent, newey_west, robust_covariance
from gasshock.pipeline import PipelineConfig, run_pipeline
from gasshock.simulate import oracle_irf, paper_like_dgp, simulate, spectral_radius
from gasshock.structural import historical_decomposition, irf, decompose_draw
from gasshock.timeseries import MacroDataset, QuarterIndex, quarter_range
from helpers import (
    COVID_N,
    dataset,
    make_panel,
    prior_predictive,
    quadrature_log_ml,
    spike_scales,
    two_regime,
    var1_data,
    write_panel,
)

ROOT = Path(__file__).resolve().parents[1]


@contextlib.contextmanager
def criterion(log, number, title):
    notes = []
    line = f"criterion {number} ({title})"
    try:
        yield notes
    except BaseException:
        entry = f"[FAIL] {line}" + (": " + "; ".join(notes) if notes else "")
        log.append(entry)
        print(entry)
        raise
    entry = f"[PASS] {line}" + (": " + "; ".join(notes) if notes else "")
    log.append(entry)
    print(entry)


@pytest.fixture(scope="module")
def benchmark_sample():
    return simulate(paper_like_dgp(T=300, seed=1))


def test_criterion_1_identification_recovery(acceptance_log, benchmark_sample):
    with criterion(acceptance_log, 1, "identification recovery") as notes:
        data, w = benchmark_sample
        t0 = time.perf_counter()
        spec = BvarSpec(lags=4, delta=0.0)
        spec = BvarSpec(lags=4, delta=0.0, lam=bvar.optimize_hyperparameters(data, spec))
        post = bvar.posterior_sample(data, spec, 2000, 42)
        r = gas_shock_restrictions()
        ds = identify(post, r, 500, max_tries=1000, seed=7)
        shocks = extract_shocks(ds, data)
        elapsed = time.perf_counter() - t0
        p = spec.lags
        corr = float(np.corrcoef(shocks.values[p:, 0], w[p:, 0])[0, 1])
        worst_zero = max(float(np.max(np.abs(L[r.zero]))) for L in ds.impact)
        min_margin = min(float(np.min((r.sign * L)[r.sign != 0])) for L in ds.impact)
        notes += [f"accepted={len(ds)}", f"acceptance={ds.acceptance_rate:.3%}", f"corr={corr:.3f}",
                  f"max|zero|={worst_zero:.1e}", f"min sign margin={min_margin:.2e}", f"{elapsed:.1f}s"]
        assert len(ds) == 500
        assert worst_zero < 1e-10 and min_margin > 0
        assert all(r.satisfied(L) for L in ds.impact)
        assert corr >= 0.7
        assert elapsed < 300


def test_criterion_2_irf_oracle(acceptance_log):
    with criterion(acceptance_log, 2, "IRF equals companion-power oracle") as notes:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(50):
            n, p = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            while True:
                A = rng.normal(0, 0.6 / math.sqrt(n * p), size=(p, n, n))
                if spectral_radius(A) < 0.99:
                    break
            M = rng.normal(size=(n, n))
            L = np.linalg.cholesky(M @ M.T + 0.5 * np.eye(n)) @ np.linalg.qr(rng.normal(size=(n, n)))[0]
            worst = max(worst, float(np.max(np.abs(irf(A, L, 20) - oracle_irf(A, 20, L)))))
        notes.append(f"max abs error={worst:.1e} over 50 DGPs")
        assert worst < 1e-10


def test_criterion_3_hd_additivity(acceptance_log):
    with criterion(acceptance_log, 3, "historical decomposition additivity") as notes:
        data, _ = simulate(paper_like_dgp(T=103, seed=3))  # 1999Q4 .. 2025Q2
        assert data.dates[-1] == QuarterIndex(2025, 2)
        fit = data.window(end=QuarterIndex(2020, 1))
        post = bvar.posterior_sample(fit, BvarSpec(lags=4, delta=0.0), 500, 11)
        ds = identify(post, gas_shock_restrictions(), 100, seed=5)
        worst = max(decompose_draw(ds, d, data).max_additivity_error() for d in range(len(ds)))
        # arbitrary datasets that were not generated by the model
        rng = np.random.default_rng(8)
        for _ in range(20):
            n, p, T = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(30, 120))
            while True:
                A = rng.normal(0, 0.5 / math.sqrt(n * p), size=(p, n, n))
                if spectral_radius(A) < 0.99:
                    break
            L = np.tril(rng.normal(size=(n, n)), -1) + np.diag(rng.uniform(0.3, 2.0, n))
            y = rng.standard_t(3, size=(T, n)).cumsum(axis=0)
            d = MacroDataset(quarter_range(QuarterIndex(1999, 4), T), tuple(f"y{i}" for i in range(n)), y)
            hd = historical_decomposition(A, rng.normal(size=n), L, d, fit_end=QuarterIndex(2010, 1))
            worst = max(worst, hd.max_additivity_error())
        notes.append(f"max abs error={worst:.1e} ({len(ds)} draws to 2025Q2 + 20 random datasets)")
        assert worst < 1e-8


def test_criterion_4_marginal_likelihood(acceptance_log):
    with criterion(acceptance_log, 4, "marginal likelihood and lambda optimisation") as notes:
        y = [0.3, -0.5, 0.8, 0.1, -0.4]
        spec = BvarSpec(lags=1, intercept=False, delta=0.5, lam=0.7)
        diff = abs(log_marginal_likelihood(dataset(y), spec) - quadrature_log_ml(y, 0.7, 0.5))
        notes.append(f"|closed form - quadrature|={diff:.1e}")
        assert diff < 1e-4

        d = var1_data(n=3, T=120, seed=2)
        s = BvarSpec(lags=2, delta=0.0)
        lo, hi = 1e-3, 5.0
        lam = bvar.optimize_hyperparameters(d, s, (lo, hi))
        f = lambda x: log_marginal_likelihood(d, s, x)
        notes.append(f"lambda*={lam:.4f}")
        assert f(lam) >= f(lo) and f(lam) >= f(hi)

        wins = 0
        for rep in range(10):
            tight = bvar.optimize_hyperparameters(prior_predictive(4, 150, 0.05, 100 + rep), s)
            loose = bvar.optimize_hyperparameters(prior_predictive(4, 150, 0.5, 200 + rep), s)
            wins += tight < loose
        notes.append(f"tight<loose in {wins}/10")
        assert wins >= 9


def test_criterion_5_covid_correction(acceptance_log):
    with criterion(acceptance_log, 5, "pandemic volatility correction") as notes:
        onset = QuarterIndex(2020, 2)
        dates = quarter_range(QuarterIndex(1975, 1), 200)
        spec = BvarSpec(lags=2, delta=0.0)
        spiky = var1_data(n=COVID_N, T=200, seed=0, scales=spike_scales(dates, onset))
        prof = estimate_covid_profile(spiky, spec)
        calm = estimate_covid_profile(var1_data(n=COVID_N, T=200, seed=100), spec)
        null = (calm.s1, calm.s2, calm.s3)
        notes += [f"s1 with x9 variance={prof.s1:.2f}", "no break s=" + ",".join(f"{v:.2f}" for v in null)]
        assert 2.0 <= prof.s1 <= 4.0
        assert all(0.5 <= v <= 1.5 for v in null)
        ones = np.ones(spiky.T)
        a = bvar.posterior_sample(spiky, spec, 50, 1)
        b = bvar.posterior_sample(spiky, spec, 50, 1, scales=ones)
        assert log_marginal_likelihood(spiky, spec, scales=ones) == log_marginal_likelihood(spiky, spec)
        assert np.array_equal(a.coef, b.coef) and np.array_equal(a.sigma, b.sigma)
        assert np.all(covid_scales(prof, dates[:180]) == 1.0)


def test_criterion_6_local_projections(acceptance_log):
    with criterion(acceptance_log, 6, "state-dependent local projections") as notes:
        x, shock, Z = two_regime(400, 3)
        res = lp_state_dependent(x, shock, Z, spec=LpSpec(horizons=0))
        zh = (res.beta_high[0] - 2.0) / res.se_high[0]
        zl = (res.beta_low[0] + 1.0) / res.se_low[0]
        notes.append(f"high={res.beta_high[0]:.3f} ({zh:+.2f} SE), low={res.beta_low[0]:.3f} ({zl:+.2f} SE)")
        assert abs(zh) < 3 and abs(zl) < 3

        spec = LpSpec(horizons=8)
        a = lp_state_dependent(x, shock, np.ones_like(x), spec=spec)
        b = lp_linear(x, shock, spec=spec)
        assert np.array_equal(a.beta_high, b.beta_high)

        rng = np.random.default_rng(6)
        X = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
        u = rng.normal(size=80) * np.exp(X[:, 1])
        assert np.array_equal(newey_west(X, u, 0), robust_covariance(X, u))
        bread = np.linalg.inv(X.T @ X)
        np.testing.assert_allclose(newey_west(X, u, 0), bread @ (X.T * u**2) @ X @ bread, rtol=1e-12)


def test_criterion_7_transition(acceptance_log):
    with criterion(acceptance_log, 7, "logistic transition") as notes:
        rng = np.random.default_rng(7)
        x = rng.normal(size=101)
        mu, sd = np.median(x), x.std(ddof=1)
        worst = 0.0
        centre_ok = True
        for d in np.linspace(0, 5 * sd, 200):
            z = transition_prob(np.concatenate([x, [mu + d, mu - d, mu]]), 5.0)
            worst = max(worst, abs(z[-3] + z[-2] - 1.0))
            centre_ok &= z[-1] == 0.5
        z = transition_prob(np.array([-1.0, 0.0, 1.0]), 5.0)  # median 0, sd 1
        notes += [f"max |Z(mu+d)+Z(mu-d)-1|={worst:.1e}", f"Z(mu+sigma)={z[2]:.6f}"]
        assert centre_ok and z[1] == 0.5
        assert worst <= 1e-12
        assert abs(z[2] - 0.99331) <= 1e-5


def test_criterion_8_survey_indexes(acceptance_log):
    with criterion(acceptance_log, 8, "survey indexes") as notes:
        idx = diffusion_index(make_panel([[1, 2, 3]]), "raw")
        assert idx.value[0] == 2.0
        half = 1.96 / math.sqrt(3)
        assert abs(idx.lower[0] - (2 - half)) < 1e-15 and abs(idx.upper[0] - (2 + half)) < 1e-15
        rule = RoundnessRule(base=0.5, p0=0.2)
        panel = make_panel(forecasts_by_wave=[
            [0.5, 1.0, 2.5, -1.5, 3.0],
            [0.3, 1.2, 2.7, 1.9, 2.2],
            [1.0, 2.0, 1.5, 0.7, 1.3],
        ])
        values = uncertainty_index(panel, rule).value.tolist()
        notes.append(f"uncertainty={values}")
        assert values == [1.0, 0.0, 0.5]

        rng = np.random.default_rng(8)
        for _ in range(1000):
            waves = int(rng.integers(1, 4))
            sizes = rng.integers(1, 40, size=waves)
            codes = [rng.integers(-3, 4, size=s).tolist() for s in sizes]
            base = float(rng.choice([0.25, 0.5, 1.0]))
            fc = [np.where(rng.random(s) < rng.random(), base * rng.integers(-8, 9, size=s),
                           rng.normal(2, 2, size=s)).tolist() for s in sizes]
            di = diffusion_index(make_panel(codes), "raw")
            ui = uncertainty_index(make_panel(forecasts_by_wave=fc), RoundnessRule(base=base, p0=float(rng.uniform(0, 0.99))))
            assert np.all((di.value >= -3) & (di.value <= 3))
            assert np.all(di.lower <= di.value) and np.all(di.value <= di.upper)
            assert np.all((ui.lower >= 0) & (ui.upper <= 1))
            assert np.all(ui.lower <= ui.value) and np.all(ui.value <= ui.upper)
        notes.append("1000 random panels within bounds")


def test_criterion_9_reproducible_pipeline(acceptance_log, tmp_path):
    with criterion(acceptance_log, 9, "reproducible pipeline run") as notes:
        shutil.copy(ROOT / "configs" / "paper_like.ini", tmp_path / "paper_like.ini")
        write_panel(tmp_path / "panel.csv")
        manifests, times = [], []
        for run in ("a", "b"):
            t0 = time.perf_counter()
            status, manifest = run_pipeline(PipelineConfig.read(tmp_path / "paper_like.ini", out_dir=tmp_path / run))
            times.append(time.perf_counter() - t0)
            assert status == 0
            manifests.append(manifest.read_bytes())
        m = json.loads(manifests[0])
        outputs = [o["path"] for s in m["stages"] for o in s["outputs"]]
        written = sorted(
            str(p.relative_to(tmp_path / "a")) for p in (tmp_path / "a").rglob("*") if p.is_file()
        )
        notes += [f"{len(outputs)} files", f"runs {times[0]:.0f}s + {times[1]:.0f}s"]
        assert manifests[0] == manifests[1]
        assert sorted(outputs) == [w for w in written if w != "manifest.json"]
        assert sum(times) < 600
