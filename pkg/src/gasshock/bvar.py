"""Reduced-form Bayesian VAR with a conjugate Minnesota prior.

Regressor layout: row t of ``X`` is ``[y_{t-1}', ..., y_{t-p}', 1]`` and the
coefficient matrix is ``(n*p + intercept) x n`` so that ``Y = X @ B + E``.
Rows of ``(Y, X)`` may be divided by quarter-specific volatility scales
``s_t`` (pandemic correction); the marginal likelihood then carries the
Jacobian term ``-n * sum(log s_t)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import multigammaln

from .timeseries import MacroDataset, QuarterIndex

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
PANDEMIC_ONSET = QuarterIndex(2020, 2)


@dataclass(frozen=True)
class CovidProfile:
    """Volatility multipliers for the three quarters from ``onset`` and a geometric decay after."""

    onset: QuarterIndex = PANDEMIC_ONSET
    s1: float = 1.0
    s2: float = 1.0
    s3: float = 1.0
    rho: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"decay rho must lie in (0, 1), got {self.rho}")
        if min(self.s1, self.s2, self.s3) < 1.0:
            raise ValueError("scale parameters must be >= 1")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["onset"] = str(self.onset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CovidProfile:
        d = dict(d)
        d["onset"] = QuarterIndex.parse(d["onset"])
        return cls(**d)


def covid_scales(profile: CovidProfile, dates: Sequence[QuarterIndex]) -> np.ndarray:
    s = np.ones(len(dates))
    for i, d in enumerate(dates):
        k = d - profile.onset
        if k < 0:
            continue
        if k < 3:
            s[i] = (profile.s1, profile.s2, profile.s3)[k]
        else:
            s[i] = 1.0 + (profile.s3 - 1.0) * profile.rho ** (k - 2)
    return s


@dataclass(frozen=True)
class BvarSpec:
    """Model and prior settings.

    ``delta`` is the prior mean of each variable's own first lag (scalar or
    one per variable). ``lam`` is the overall tightness; lag ``l`` of
    variable ``j`` in equation ``i`` has prior variance
    ``lam**2 / l**2 * sigma_i**2 / sigma_j**2``.
    """

    lags: int = 4
    intercept: bool = True
    delta: float | tuple[float, ...] = 1.0
    lam: float = 0.2
    df_extra: int = 2
    intercept_variance: float = 1e6
    covid: CovidProfile | None = None

    def __post_init__(self) -> None:
        if self.lags < 1:
            raise ValueError("lag order must be >= 1")
        if not self.lam > 0:
            raise ValueError("tightness lambda must be positive")
        if self.df_extra < 2:
            raise ValueError("prior degrees of freedom must be at least n + 2")
        if not isinstance(self.delta, (int, float)):
            object.__setattr__(self, "delta", tuple(float(x) for x in self.delta))

    def deltas(self, n: int) -> np.ndarray:
        if isinstance(self.delta, tuple):
            if len(self.delta) != n:
                raise ValueError(f"need {n} prior means, got {len(self.delta)}")
            return np.array(self.delta)
        return np.full(n, float(self.delta))

    def n_coef(self, n: int) -> int:
        return n * self.lags + int(self.intercept)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["covid"] = None if self.covid is None else self.covid.as_dict()
        if isinstance(self.delta, tuple):
            d["delta"] = list(self.delta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BvarSpec:
        d = dict(d)
        if d.get("covid") is not None:
            d["covid"] = CovidProfile.from_dict(d["covid"])
        if isinstance(d.get("delta"), list):
            d["delta"] = tuple(d["delta"])
        return cls(**d)


def lagged_design(values: np.ndarray, lags: int, intercept: bool) -> tuple[np.ndarray, np.ndarray]:
    T, n = values.shape
    rows = T - lags
    X = np.empty((rows, n * lags + int(intercept)))
    for ell in range(1, lags + 1):
        X[:, (ell - 1) * n : ell * n] = values[lags - ell : T - ell]
    if intercept:
        X[:, -1] = 1.0
    return values[lags:].copy(), X


def build_regressors(data: MacroDataset, spec: BvarSpec) -> tuple[np.ndarray, np.ndarray]:
    n, p = data.n, spec.lags
    if data.T <= n * p + 1:
        raise ValueError(f"insufficient observations: T={data.T} needs > {n * p + 1}")
    if not data.present.all():
        t, j = np.argwhere(~data.present)[0]
        raise ValueError(f"missing value inside estimation window: {data.names[j]} at {data.dates[t]}")
    return lagged_design(data.values, p, spec.intercept)


@dataclass(frozen=True, eq=False)
class MinnesotaPrior:
    """Normal-inverse-Wishart prior: Sigma ~ IW(psi, df), vec(B) | Sigma ~ N(vec(mean), Sigma kron diag(omega))."""

    mean: np.ndarray
    omega: np.ndarray
    psi: np.ndarray
    df: float


def _ar_residual_variances(Y: np.ndarray, X: np.ndarray, n: int, lags: int, intercept: bool) -> np.ndarray:
    sig2 = np.empty(n)
    for i in range(n):
        cols = [(ell - 1) * n + i for ell in range(1, lags + 1)]
        if intercept:
            cols.append(X.shape[1] - 1)
        Xi = X[:, cols]
        beta, *_ = np.linalg.lstsq(Xi, Y[:, i], rcond=None)
        resid = Y[:, i] - Xi @ beta
        sig2[i] = resid @ resid / Y.shape[0]
    if np.any(sig2 <= 0):
        raise ValueError("degenerate series: zero AR residual variance")
    return sig2


def minnesota_prior(Y: np.ndarray, X: np.ndarray, spec: BvarSpec, lam: float | None = None) -> MinnesotaPrior:
    """Prior implied by ``spec`` with scales from univariate AR(p) fits on the (rescaled) rows."""
    n = Y.shape[1]
    lam = spec.lam if lam is None else lam
    if not lam > 0:
        raise ValueError("tightness lambda must be positive")
    sig2 = _ar_residual_variances(Y, X, n, spec.lags, spec.intercept)
    k = spec.n_coef(n)
    mean = np.zeros((k, n))
    mean[np.arange(n), np.arange(n)] = spec.deltas(n)
    omega = np.empty(k)
    for ell in range(1, spec.lags + 1):
        omega[(ell - 1) * n : ell * n] = lam**2 / (ell**2 * sig2)
    if spec.intercept:
        omega[-1] = spec.intercept_variance
    return MinnesotaPrior(mean, omega, np.diag(sig2), float(n + spec.df_extra))


@dataclass(frozen=True, eq=False)
class _Posterior:
    mean: np.ndarray
    prec_chol: np.ndarray  # lower R with R R' = X'X + diag(1/omega)
    scale: np.ndarray
    df: float
    log_ml: float


def _conjugate_update(Y: np.ndarray, X: np.ndarray, prior: MinnesotaPrior) -> _Posterior:
    T, n = Y.shape
    if not np.all(prior.omega > 0):
        raise ValueError("prior coefficient variances must be positive")
    try:
        linalg.cholesky(prior.psi, lower=True)
    except linalg.LinAlgError:
        raise ValueError("prior scale matrix is not positive definite") from None
    XtX = X.T @ X
    prec = XtX + np.diag(1.0 / prior.omega)
    try:
        R = linalg.cholesky(prec, lower=True)
    except linalg.LinAlgError:
        raise ValueError("X'X + inv(Omega) is not positive definite") from None
    rhs = X.T @ Y + prior.mean / prior.omega[:, None]
    mean = linalg.cho_solve((R, True), rhs)
    resid = Y - X @ mean
    dev = mean - prior.mean
    scale = prior.psi + resid.T @ resid + dev.T @ (dev / prior.omega[:, None])
    scale = 0.5 * (scale + scale.T)

    # log|Omega| + log|X'X + inv(Omega)| = log|I + Omega^1/2 X'X Omega^1/2|
    root = np.sqrt(prior.omega)
    inner = np.eye(len(root)) + root[:, None] * XtX * root[None, :]
    try:
        logdet_inner = 2.0 * np.log(np.diag(linalg.cholesky(inner, lower=True))).sum()
        logdet_scale = 2.0 * np.log(np.diag(linalg.cholesky(scale, lower=True))).sum()
    except linalg.LinAlgError:
        raise ValueError("posterior scale is not positive definite") from None
    logdet_psi = 2.0 * np.log(np.diag(linalg.cholesky(prior.psi, lower=True))).sum()
    d = prior.df
    log_ml = (
        -0.5 * n * T * math.log(math.pi)
        + multigammaln(0.5 * (T + d), n)
        - multigammaln(0.5 * d, n)
        - 0.5 * n * logdet_inner
        + 0.5 * d * logdet_psi
        - 0.5 * (T + d) * logdet_scale
    )
    return _Posterior(mean, R, scale, d + T, float(log_ml))


def _row_scales(data: MacroDataset, spec: BvarSpec, scales: np.ndarray | None) -> np.ndarray | None:
    if scales is None and spec.covid is not None:
        scales = covid_scales(spec.covid, data.dates)
    if scales is None:
        return None
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (data.T,):
        raise ValueError("need one volatility scale per date")
    if np.any(scales <= 0):
        raise ValueError("volatility scales must be positive")
    return scales[spec.lags :]


def _canonical_order(Y: np.ndarray) -> np.ndarray:
    # lexicographic column order makes the result exactly invariant to how
    # the caller ordered the variables
    return np.lexsort(Y[::-1])


def _prepare(data: MacroDataset, spec: BvarSpec, scales: np.ndarray | None, canonical: bool):
    Y, X = build_regressors(data, spec)
    n, p = data.n, spec.lags
    if np.linalg.matrix_rank(Y) < n:
        raise ValueError("collinear variables: the data matrix is rank deficient")
    deltas = spec.deltas(n)
    if canonical:
        perm = _canonical_order(Y)
        Y = Y[:, perm]
        xcols = np.concatenate([perm + ell * n for ell in range(p)])
        if spec.intercept:
            xcols = np.append(xcols, n * p)
        X = X[:, xcols]
        deltas = deltas[perm]
        spec = replace(spec, delta=tuple(deltas))
    s = _row_scales(data, spec, scales)
    jac = 0.0
    if s is not None:
        Y = Y / s[:, None]
        X = X / s[:, None]
        jac = -n * float(np.log(s).sum())
    return Y, X, spec, jac


def log_marginal_likelihood(
    data: MacroDataset,
    spec: BvarSpec,
    lam: float | None = None,
    scales: np.ndarray | None = None,
) -> float:
    """Closed-form ``log p(Y | lambda)`` under the conjugate prior.

    ``scales`` (one per date) overrides ``spec.covid``; both default to no
    rescaling.
    """
    Y, X, cspec, jac = _prepare(data, spec, scales, canonical=True)
    prior = minnesota_prior(Y, X, cspec, lam)
    return _conjugate_update(Y, X, prior).log_ml + jac


def golden_section_max(f, a: float, b: float, tol: float = 1e-4) -> tuple[float, float]:
    """Maximise a unimodal ``f`` on [a, b]; returns ``(x, f(x))``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def optimize_hyperparameters(
    data: MacroDataset,
    spec: BvarSpec,
    bounds: tuple[float, float] = (1e-3, 5.0),
    tol: float = 1e-4,
    scales: np.ndarray | None = None,
    grid: int = 24,
) -> float:
    """Empirical-Bayes tightness: argmax of the marginal likelihood over ``bounds``.

    A log-spaced grid brackets the best region, golden-section search
    refines it to ``tol``, and the endpoints are checked last so the result
    is never worse than either bound.
    """
    lo, hi = map(float, bounds)
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError(f"bounds must be positive, finite and increasing, got {bounds}")

    def f(lam: float) -> float:
        try:
            v = log_marginal_likelihood(data, spec, lam, scales)
        except ValueError:
            return -math.inf
        return v if math.isfinite(v) else -math.inf

    pts = np.geomspace(lo, hi, grid)
    vals = np.array([f(x) for x in pts])
    if not np.any(np.isfinite(vals)):
        raise ValueError("marginal likelihood is non-finite over the whole interval")
    i = int(np.argmax(vals))
    a, b = pts[max(i - 1, 0)], pts[min(i + 1, grid - 1)]
    best_x, best_f = golden_section_max(f, a, b, tol)
    for x, v in ((pts[i], vals[i]), (lo, vals[0]), (hi, vals[-1])):
        if v > best_f:
            best_x, best_f = x, v
    return float(best_x)


def estimate_covid_profile(
    data: MacroDataset,
    spec: BvarSpec,
    onset: QuarterIndex | None = None,
    base_scales: np.ndarray | None = None,
    max_scale: float = 50.0,
) -> CovidProfile:
    """Maximum-marginal-likelihood volatility profile ``(s1, s2, s3, rho)``.

    ``base_scales`` (one per date) are applied before the profile being
    estimated, so passing a previously estimated profile's scales should
    return a profile close to all ones.
    """
    onset = onset or (spec.covid.onset if spec.covid is not None else PANDEMIC_ONSET)
    if not data.dates[spec.lags] <= onset <= data.dates[-1]:
        raise ValueError(f"sample {data.dates[0]}..{data.dates[-1]} does not cover onset {onset}")
    base = np.ones(data.T) if base_scales is None else np.asarray(base_scales, dtype=float)
    plain = replace(spec, covid=None)

    def negll(theta: np.ndarray) -> float:
        prof = CovidProfile(onset, *np.maximum(theta[:3], 1.0), float(np.clip(theta[3], 1e-6, 1 - 1e-6)))
        try:
            v = log_marginal_likelihood(data, plain, None, base * covid_scales(prof, data.dates))
        except ValueError:
            return 1e300
        return -v if math.isfinite(v) else 1e300

    bounds = [(1.0, max_scale)] * 3 + [(0.01, 0.99)]
    best = None
    for start in ([1.0, 1.0, 1.0, 0.5], [3.0, 2.0, 1.5, 0.5], [8.0, 4.0, 2.0, 0.8]):
        res = optimize.minimize(negll, np.array(start), method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not best.fun < 1e300:
        raise ValueError("covid profile optimisation failed: non-finite objective")
    s1, s2, s3, rho = best.x
    return CovidProfile(onset, float(s1), float(s2), float(s3), float(rho))


# ---------------------------------------------------------------- sampling


def draw_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for draw ``index`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_inverse_wishart(scale: np.ndarray, df: float, rng: np.random.Generator) -> np.ndarray:
    """One draw from IW(scale, df) via the Bartlett decomposition."""
    n = scale.shape[0]
    if df <= n - 1:
        raise ValueError("inverse-Wishart degrees of freedom must exceed n - 1")
    U = linalg.cholesky(scale, lower=True)
    A = np.zeros((n, n))
    A[np.diag_indices(n)] = np.sqrt(rng.chisquare(df - np.arange(n)))
    A[np.tril_indices(n, -1)] = rng.standard_normal(n * (n - 1) // 2)
    # Sigma^-1 = C A A' C' with C = U^-T, so Sigma = (U A^-T)(U A^-T)'
    G = U @ linalg.solve_triangular(A, np.eye(n), lower=True).T
    S = G @ G.T
    return 0.5 * (S + S.T)


def data_hash(data: MacroDataset) -> str:
    h = hashlib.sha256()
    h.update("|".join(data.names).encode())
    h.update("|".join(map(str, data.dates)).encode())
    h.update(np.ascontiguousarray(data.values).tobytes())
    h.update(np.ascontiguousarray(data.present).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class BvarPosterior:
    """Posterior draws ``coef[d]`` (k x n) and ``sigma[d]`` (n x n)."""

    coef: np.ndarray
    sigma: np.ndarray
    spec: BvarSpec
    names: tuple[str, ...]
    dates: tuple[QuarterIndex, ...]
    data_hash: str
    seed: int
    start: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.coef.shape[0]

    @property
    def n(self) -> int:
        return len(self.names)

    def lag_matrices(self, d: int) -> np.ndarray:
        """``(p, n, n)`` array with ``A_l`` acting as ``y_t = sum_l A_l y_{t-l} + ...``."""
        return lag_matrices(self.coef[d], self.n, self.spec.lags)

    def intercept(self, d: int) -> np.ndarray:
        if not self.spec.intercept:
            return np.zeros(self.n)
        return self.coef[d][-1].copy()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        D = len(self)
        flat = np.hstack([self.coef.reshape(D, -1), self.sigma.reshape(D, -1)])
        np.save(path / "draws.npy", flat)
        meta = {
            "kind": "bvar-posterior",
            "spec": self.spec.as_dict(),
            "names": list(self.names),
            "dates": [str(d) for d in self.dates],
            "data_hash": self.data_hash,
            "seed": self.seed,
            "start": self.start,
            "n_draws": D,
            "coef_shape": list(self.coef.shape[1:]),
            "extra": self.extra,
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> BvarPosterior:
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text())
        if meta.get("kind") != "bvar-posterior":
            raise ValueError(f"{path} is not a posterior bundle")
        flat = np.load(path / "draws.npy")
        k, n = meta["coef_shape"]
        D = meta["n_draws"]
        return cls(
            flat[:, : k * n].reshape(D, k, n),
            flat[:, k * n :].reshape(D, n, n),
            BvarSpec.from_dict(meta["spec"]),
            tuple(meta["names"]),
            tuple(QuarterIndex.parse(d) for d in meta["dates"]),
            meta["data_hash"],
            meta["seed"],
            meta["start"],
            meta.get("extra", {}),
        )


def lag_matrices(coef: np.ndarray, n: int, lags: int) -> np.ndarray:
    return np.stack([coef[ell * n : (ell + 1) * n].T for ell in range(lags)])


def posterior_sample(
    data: MacroDataset,
    spec: BvarSpec,
    n_draws: int,
    seed: int,
    start: int = 0,
    scales: np.ndarray | None = None,
) -> BvarPosterior:
    """I.i.d. draws from the conjugate posterior.

    Draw ``i`` uses its own generator derived from ``(seed, i)``, so draws
    ``start .. start + n_draws - 1`` are identical whether produced in one
    call or several.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    Y, X, _, _ = _prepare(data, spec, scales, canonical=False)
    post = _conjugate_update(Y, X, minnesota_prior(Y, X, spec))
    k, n = post.mean.shape
    coef = np.empty((n_draws, k, n))
    sigma = np.empty((n_draws, n, n))
    Rt = post.prec_chol.T
    for i in range(n_draws):
        rng = draw_rng(seed, start + i)
        S = sample_inverse_wishart(post.scale, post.df, rng)
        G = linalg.cholesky(S, lower=True)
        Z = rng.standard_normal((k, n))
        coef[i] = post.mean + linalg.solve_triangular(Rt, Z, lower=False) @ G.T
        sigma[i] = S
    extra = {"log_ml": post.log_ml}
    return BvarPosterior(coef, sigma, spec, data.names, data.dates, data_hash(data), int(seed), start, extra)


def posterior_mean(data: MacroDataset, spec: BvarSpec, scales: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means of the coefficients and of Sigma."""
    Y, X, _, _ = _prepare(data, spec, scales, canonical=False)
    post = _conjugate_update(Y, X, minnesota_prior(Y, X, spec))
    n = Y.shape[1]
    return post.mean, post.scale / (post.df - n - 1)
