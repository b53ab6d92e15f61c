"""Pipeline stages with file-based hand-off, and the config-driven runner.

Each stage is a plain function taking keyword parameters and returning the
paths it wrote. ``STAGES`` describes every parameter once; the CLI builds its
subcommands from it and the runner uses it to coerce config values.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import traceback
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import bvar, identification, indexes, lp, simulate, structural
from .timeseries import MacroDataset, QuarterIndex, join, load_firm_panel, load_macro, read_schema, save_macro

log = logging.getLogger(__name__)

OUT_DIR_ENV = "GASSHOCK_OUT_DIR"
STAGE_ORDER = ("simulate", "indexes", "estimate", "identify", "irf", "hd", "girf", "lp")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------- coercion


def as_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in {"1", "true", "yes", "on"}:
        return True
    if s in {"0", "false", "no", "off", ""}:
        return False
    raise ValueError(f"not a boolean: {v!r}")


def as_list(v: Any) -> list[str]:
    if isinstance(v, (list, tuple)):
        out: list[str] = []
        for item in v:
            out.extend(as_list(item))
        return out
    return [s.strip() for s in str(v).split(",") if s.strip()]


def as_floats(v: Any) -> tuple[float, ...]:
    return tuple(float(s) for s in as_list(v))


def as_quarter(v: Any) -> QuarterIndex | None:
    if v is None or v == "":
        return None
    return v if isinstance(v, QuarterIndex) else QuarterIndex.parse(str(v))


def as_nw(v: Any) -> int | str:
    s = str(v).strip().lower()
    if s in {"auto", "off"}:
        return s
    return int(s)


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[Any], Any] = str
    default: Any = None
    help: str = ""
    flag: bool = False  # boolean switch on the command line
    repeat: bool = False  # may be given several times on the command line
    path_in: bool = False
    required: bool = False


@dataclass
class Context:
    out_dir: Path
    base_dir: Path
    seed: int

    def output(self, name: str) -> Path:
        p = Path(name)
        p = p if p.is_absolute() else self.out_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def input(self, name: str) -> Path:
        p = Path(name)
        if p.is_absolute():
            return p
        for base in (self.out_dir, self.base_dir):
            if (base / p).exists():
                return base / p
        return self.out_dir / p


def _load_many(ctx: Context, paths: list[str], schema: str | None = None) -> MacroDataset:
    sch = read_schema(ctx.input(schema)) if schema else None
    parts = [load_macro(ctx.input(p), sch if i == 0 else None) for i, p in enumerate(paths)]
    return parts[0] if len(parts) == 1 else join(parts)


def _complete_span(data: MacroDataset) -> MacroDataset:
    full = np.flatnonzero(data.present.all(axis=1))
    if full.size == 0:
        raise ValueError("no date has all selected variables present")
    return data.window(data.dates[full[0]], data.dates[full[-1]])


def _write_series(path: Path, dates, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    values = np.column_stack([columns[k] for k in names])
    save_macro(MacroDataset(tuple(dates), tuple(names), values, np.isfinite(values)), path)


# ---------------------------------------------------------------- stages


def stage_simulate(ctx: Context, preset: str, t: int, seed: int | None, out: str, shocks_out: str | None):
    if preset != "paper-like":
        raise ValueError(f"unknown preset {preset!r}")
    dgp = simulate.paper_like_dgp(T=t, seed=ctx.seed if seed is None else seed)
    data, w = simulate.simulate(dgp)
    written = [ctx.output(out)]
    save_macro(data, written[0])
    if shocks_out:
        written.append(ctx.output(shocks_out))
        save_macro(MacroDataset(data.dates, simulate.BENCHMARK_SHOCKS, w), written[-1])
    return written


def stage_indexes(
    ctx: Context,
    panel: str,
    out: str | None,
    factor: list[str],
    uncertainty: bool,
    base: float,
    p0: float | None,
    tolerance: float,
    informed_only: bool,
    schema: str | None,
    state_out: str | None,
    weights: tuple[float, ...],
    eta: float,
    divide: bool,
):
    sch = read_schema(ctx.input(schema)) if schema else None
    fp = load_firm_panel(ctx.input(panel), sch)
    if informed_only:
        fp = fp.only_informed()
    written = []
    for f in factor:
        series = indexes.diffusion_index(fp, f)
        path = ctx.output(out if (out and len(factor) == 1 and not uncertainty) else f"diffusion_{f}.csv")
        series.to_csv(path)
        written.append(path)
    if uncertainty or state_out:
        rule = indexes.RoundnessRule(base=base, tolerance=tolerance, p0=p0)
        unc = indexes.uncertainty_index(fp, rule)
        if uncertainty:
            path = ctx.output(out or "uncertainty.csv")
            unc.to_csv(path)
            written.append(path)
        if state_out:
            dates, expect = indexes.mean_forecast(fp)
            state = indexes.state_variable(unc, expect, weights, divide=divide, dates=dates)
            z = indexes.transition_prob(state, eta)
            path = ctx.output(state_out)
            _write_series(path, dates, {"uncertainty": unc.value, "expectations": expect, "state": state, "z": z})
            written.append(path)
    if not written:
        raise ValueError("nothing to compute: give --factor, --uncertainty or --state-out")
    return written


def _estimate_posterior(
    data: MacroDataset,
    lags: int,
    delta: float,
    lam: float,
    optimize_lambda: bool,
    lambda_bounds: tuple[float, ...],
    covid_correction: bool,
    covid_onset: QuarterIndex | None,
    draws: int,
    seed: int,
    intercept: bool = True,
) -> bvar.BvarPosterior:
    spec = bvar.BvarSpec(lags=lags, intercept=intercept, delta=delta, lam=lam)
    profile = None
    for _ in range(3 if (optimize_lambda and covid_correction) else 1):
        if covid_correction:
            profile = bvar.estimate_covid_profile(data, replace(spec, covid=None), covid_onset)
            spec = replace(spec, covid=profile)
        if optimize_lambda:
            spec = replace(spec, lam=bvar.optimize_hyperparameters(data, spec, tuple(lambda_bounds)))
    post = bvar.posterior_sample(data, spec, draws, seed)
    post.extra.update(lam=spec.lam, covid=None if profile is None else profile.as_dict())
    return post


def stage_estimate(
    ctx: Context,
    data: list[str],
    columns: list[str],
    schema: str | None,
    start: QuarterIndex | None,
    end: QuarterIndex | None,
    lags: int,
    delta: float,
    lam: float,
    optimize_lambda: bool,
    lambda_bounds: tuple[float, ...],
    covid_correction: bool,
    covid_onset: QuarterIndex | None,
    no_intercept: bool,
    draws: int,
    seed: int | None,
    out: str,
):
    ds = _load_many(ctx, data, schema)
    if columns:
        ds = ds.select(columns)
    ds = _complete_span(ds.window(start, end))
    post = _estimate_posterior(
        ds, lags, delta, lam, optimize_lambda, lambda_bounds, covid_correction, covid_onset,
        draws, ctx.seed if seed is None else seed, intercept=not no_intercept,
    )
    path = ctx.output(out)
    post.save(path)
    log.info("estimated %s on %s..%s (lambda=%.4g)", ds.names, ds.dates[0], ds.dates[-1], post.spec.lam)
    return [path / "draws.npy", path / "meta.json"]


def _restrictions(ctx: Context, spec: str) -> identification.RestrictionSet:
    if spec == "builtin:gas":
        return identification.gas_shock_restrictions()
    return identification.RestrictionSet.parse(ctx.input(spec).read_text())


def stage_identify(
    ctx: Context,
    posterior: str,
    restrictions: str,
    accepted: int,
    max_tries: int,
    seed: int | None,
    importance_weights: bool,
    data: list[str],
    shocks_out: str | None,
    out: str,
):
    post = bvar.BvarPosterior.load(ctx.input(posterior))
    rs = _restrictions(ctx, restrictions)
    ds = identification.identify(
        post, rs, accepted, max_tries, ctx.seed if seed is None else seed,
        importance_weights=importance_weights,
    )
    log.info("accepted %d rotations out of %d tries", ds.accepted, ds.tried)
    path = ctx.output(out)
    ds.save(path)
    written = [path / "draws.npy", path / "meta.json"]
    if shocks_out:
        if not data:
            raise ValueError("--shocks-out needs --data")
        full = _load_many(ctx, data).select(ds.names)
        written.append(ctx.output(shocks_out))
        save_macro(identification.extract_shocks(ds, full), written[-1])
    return written


def stage_irf(ctx: Context, drawset: str, horizon: int, coverage: float, out: str):
    ds = identification.StructuralDrawSet.load(ctx.input(drawset))
    path = ctx.output(out)
    structural.irf_bands(ds, horizon, coverage).to_csv(path)
    return [path]


def stage_hd(ctx: Context, drawset: str, data: list[str], draw: str, horizon: int, out: str):
    ds = identification.StructuralDrawSet.load(ctx.input(drawset))
    full = _load_many(ctx, data).select(ds.names)
    d = structural.median_target_draw(ds, horizon) if draw == "median-target" else int(draw)
    hd = structural.decompose_draw(ds, d, full)
    err = hd.max_additivity_error()
    if err > 1e-8:
        raise ValueError(f"historical decomposition does not add up (max error {err:.2e})")
    path = ctx.output(out)
    hd.to_csv(path)
    return [path]


def stage_girf(
    ctx: Context,
    posterior: str | None,
    data: list[str],
    columns: list[str],
    start: QuarterIndex | None,
    end: QuarterIndex | None,
    lags: int,
    delta: float,
    lam: float,
    optimize_lambda: bool,
    lambda_bounds: tuple[float, ...],
    covid_correction: bool,
    covid_onset: QuarterIndex | None,
    draws: int,
    seed: int | None,
    position: int,
    horizon: int,
    coverage: float,
    posterior_out: str | None,
    out: str,
):
    written = []
    if posterior:
        post = bvar.BvarPosterior.load(ctx.input(posterior))
    else:
        if not data or not columns:
            raise ValueError("give --posterior or both --data and --columns")
        ds = _complete_span(_load_many(ctx, data).select(columns).window(start, end))
        post = _estimate_posterior(
            ds, lags, delta, lam, optimize_lambda, lambda_bounds, covid_correction, covid_onset,
            draws, ctx.seed if seed is None else seed,
        )
        if posterior_out:
            p = ctx.output(posterior_out)
            post.save(p)
            written += [p / "draws.npy", p / "meta.json"]
    path = ctx.output(out)
    structural.girf_recursive(post, position, horizon, coverage).to_csv(path)
    return written + [path]


def stage_lp(
    ctx: Context,
    data: list[str],
    y: str,
    shock: str,
    z: str | None,
    z_from: str | None,
    s: str | None,
    s_from: str | None,
    eta: float,
    horizons: int,
    lags: int,
    shock_lags: int,
    nw: int | str,
    rho_d: float,
    out: str,
):
    ds = _load_many(ctx, data)
    if (z is None) == (z_from is None):
        raise ValueError("give exactly one of --z (transition series) or --z-from (state variable)")
    Z = ds.column(z) if z else indexes.transition_prob(ds.column(z_from), eta)
    S = None
    if s:
        S = ds.column(s)
    elif s_from:
        # tight labour market = low unemployment
        S = 1.0 - indexes.transition_prob(ds.column(s_from), eta)
    spec = lp.LpSpec(
        horizons=horizons,
        y_lags=lags,
        shock_lags=shock_lags,
        bandwidth=None if nw in ("auto", "off") else int(nw),
        hac=nw != "off",
        rho_d=rho_d,
        tight_labor=S is not None,
    )
    res = lp.lp_state_dependent(
        ds.column(y), ds.column(shock), Z, S, spec, lp.covid_dummy(ds.dates, rho_d)
    )
    path = ctx.output(out)
    res.to_csv(path)
    return [path]


_BOUNDS = Param("lambda_bounds", as_floats, (0.001, 5.0), "interval searched for lambda (lo,hi)")
_COVID = [
    Param("covid_correction", as_bool, False, "estimate pandemic volatility scales", flag=True),
    Param("covid_onset", as_quarter, QuarterIndex(2020, 2), "first rescaled quarter"),
]

STAGES: dict[str, tuple[Callable, list[Param], str]] = {
    "simulate": (
        stage_simulate,
        [
            Param("preset", str, "paper-like", "DGP preset"),
            Param("t", int, 300, "number of quarters"),
            Param("seed", int, None, "simulation seed (default: master seed)"),
            Param("out", str, "data.csv", "simulated data CSV"),
            Param("shocks_out", str, "shocks_true.csv", "true structural shocks CSV"),
        ],
        "simulate the benchmark SVAR",
    ),
    "indexes": (
        stage_indexes,
        [
            Param("panel", str, None, "firm-level CSV", path_in=True, required=True),
            Param("out", str, None, "output CSV (date,value,lo,hi,n)"),
            Param("factor", as_list, [], "factor for a diffusion index", repeat=True),
            Param("uncertainty", as_bool, False, "round-number uncertainty index", flag=True),
            Param("base", float, 0.5, "round-number base (percentage points)"),
            Param("p0", float, None, "round share of certain firms (default 0.1/base)"),
            Param("tolerance", float, 1e-9, "roundness tolerance"),
            Param("informed_only", as_bool, False, "keep informed firms only", flag=True),
            Param("schema", str, None, "key=value column schema file", path_in=True),
            Param("state_out", str, None, "write scaled/smoothed state and transition CSV"),
            Param("weights", as_floats, indexes.DEFAULT_WEIGHTS, "moving-average weights, newest first"),
            Param("eta", float, 5.0, "transition steepness"),
            Param("divide", as_bool, False, "divide (not multiply) by mean expectations", flag=True),
        ],
        "survey diffusion / uncertainty indexes",
    ),
    "estimate": (
        stage_estimate,
        [
            Param("data", as_list, [], "quarterly CSV(s), joined on dates", repeat=True, path_in=True, required=True),
            Param("columns", as_list, [], "variables in model order (default: all)"),
            Param("schema", str, None, "key=value column schema for the first data file", path_in=True),
            Param("start", as_quarter, None, "first quarter of the fit window"),
            Param("end", as_quarter, None, "last quarter of the fit window"),
            Param("lags", int, 4, "lag order"),
            Param("delta", float, 1.0, "prior mean of own first lag"),
            Param("lam", float, 0.2, "overall tightness (ignored with --optimize-lambda)"),
            Param("optimize_lambda", as_bool, False, "maximise the marginal likelihood over lambda", flag=True),
            _BOUNDS,
            *_COVID,
            Param("no_intercept", as_bool, False, "omit the intercept", flag=True),
            Param("draws", int, 2000, "posterior draws"),
            Param("seed", int, None, "sampling seed (default: master seed)"),
            Param("out", str, "posterior", "posterior bundle directory"),
        ],
        "Bayesian VAR posterior sampling",
    ),
    "identify": (
        stage_identify,
        [
            Param("posterior", str, "posterior", "posterior bundle", path_in=True),
            Param("restrictions", str, "builtin:gas", "restriction grid file or builtin:gas"),
            Param("accepted", int, 1000, "target accepted rotations"),
            Param("max_tries", int, 1000, "rotation attempts per reduced-form draw"),
            Param("seed", int, None, "rotation seed (default: master seed)"),
            Param("importance_weights", as_bool, False, "resample with zero-restriction importance weights", flag=True),
            Param("data", as_list, [], "full-span data for shock extraction", repeat=True, path_in=True),
            Param("shocks_out", str, None, "posterior-median structural shocks CSV"),
            Param("out", str, "drawset", "draw-set bundle directory"),
        ],
        "sign/zero-restriction identification",
    ),
    "irf": (
        stage_irf,
        [
            Param("drawset", str, "drawset", "draw-set bundle", path_in=True),
            Param("horizon", int, 20, "last horizon"),
            Param("coverage", float, 0.68, "band coverage"),
            Param("out", str, "irf.csv", "tidy IRF CSV"),
        ],
        "impulse responses with credible bands",
    ),
    "hd": (
        stage_hd,
        [
            Param("drawset", str, "drawset", "draw-set bundle", path_in=True),
            Param("data", as_list, [], "full-span data CSV(s)", repeat=True, path_in=True, required=True),
            Param("draw", str, "median-target", "accepted draw index or median-target"),
            Param("horizon", int, 20, "horizon used to pick the median-target draw"),
            Param("out", str, "hd.csv", "tidy decomposition CSV"),
        ],
        "historical decomposition with frozen parameters",
    ),
    "girf": (
        stage_girf,
        [
            Param("posterior", str, None, "estimated large-model bundle", path_in=True),
            Param("data", as_list, [], "CSV(s) for the large model", repeat=True, path_in=True),
            Param("columns", as_list, [], "variables, shock series first"),
            Param("start", as_quarter, None, "first quarter"),
            Param("end", as_quarter, None, "last quarter"),
            Param("lags", int, 2, "lag order"),
            Param("delta", float, 0.0, "prior mean of own first lag"),
            Param("lam", float, 0.2, "overall tightness"),
            Param("optimize_lambda", as_bool, False, "maximise the marginal likelihood over lambda", flag=True),
            _BOUNDS,
            *_COVID,
            Param("draws", int, 2000, "posterior draws"),
            Param("seed", int, None, "sampling seed (default: master seed)"),
            Param("position", int, 0, "position of the shocked variable in the ordering"),
            Param("horizon", int, 20, "last horizon"),
            Param("coverage", float, 0.68, "band coverage"),
            Param("posterior_out", str, None, "save the large-model posterior here"),
            Param("out", str, "girf.csv", "tidy IRF CSV"),
        ],
        "recursive generalized IRFs of the large model",
    ),
    "lp": (
        stage_lp,
        [
            Param("data", as_list, [], "CSV(s) holding all series, joined on dates", repeat=True, path_in=True, required=True),
            Param("y", str, None, "dependent variable", required=True),
            Param("shock", str, None, "shock series", required=True),
            Param("z", str, None, "high-uncertainty transition probability column"),
            Param("z_from", str, None, "state-variable column to map through the logistic"),
            Param("s", str, None, "tight-labour transition probability column"),
            Param("s_from", str, None, "unemployment column; tight = 1 - logistic"),
            Param("eta", float, 5.0, "transition steepness for --z-from/--s-from"),
            Param("horizons", int, 12, "last horizon"),
            Param("lags", int, 2, "lags of the dependent variable"),
            Param("shock_lags", int, 2, "lags of the shock"),
            Param("nw", as_nw, "auto", "Newey-West bandwidth: auto (h+1), an integer, or off"),
            Param("rho_d", float, 0.5, "pandemic dummy decay"),
            Param("out", str, "lp.csv", "output CSV"),
        ],
        "state-dependent local projections",
    ),
}


def run_stage(name: str, ctx: Context, params: dict[str, Any]) -> list[Path]:
    func, spec, _ = STAGES[name]
    kwargs = {}
    known = {p.name for p in spec}
    unknown = set(params) - known
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    for p in spec:
        if p.name in params and params[p.name] is not None:
            kwargs[p.name] = p.kind(params[p.name])
        else:
            if p.required:
                raise ValueError(f"missing required parameter {p.name!r}")
            kwargs[p.name] = p.default
    for p in spec:
        if p.path_in and kwargs[p.name]:
            for item in as_list(kwargs[p.name]):
                if item.startswith("builtin:"):
                    continue
                if not ctx.input(item).exists():
                    raise FileNotFoundError(f"input {item!r} not found")
    return func(ctx, **kwargs)


# ---------------------------------------------------------------- runner


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1)[0])


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    base_dir: Path
    stages: list[tuple[str, str, dict[str, str]]]  # (section, stage type, params)
    text: str

    @classmethod
    def read(cls, path: str | Path, out_dir: str | Path | None = None) -> PipelineConfig:
        path = Path(path)
        text = path.read_text()
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text, source=str(path))
        run = cp["run"] if cp.has_section("run") else {}
        seed = int(run.get("seed", 0))
        out = out_dir or os.environ.get(OUT_DIR_ENV) or run.get("out_dir", "out")
        out = Path(out)
        if not out.is_absolute():
            out = path.parent / out
        stages = []
        last = -1
        for section in cp.sections():
            if section == "run":
                continue
            kind = section.split(".", 1)[0]
            if kind not in STAGES:
                raise ValueError(f"unknown stage section [{section}]")
            rank = STAGE_ORDER.index(kind)
            if rank < last:
                raise ValueError(f"stage [{section}] is out of order; expected {' -> '.join(STAGE_ORDER)}")
            last = rank
            stages.append((section, kind, dict(cp[section])))
        if not stages:
            raise ValueError("config defines no stages")
        return cls(seed, out, path.parent, stages, text)


def run_pipeline(config: PipelineConfig) -> tuple[int, Path]:
    """Execute the configured stages; returns (exit status, manifest path)."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    manifest: dict[str, Any] = {
        "seed": config.seed,
        "config_sha256": hashlib.sha256(config.text.encode()).hexdigest(),
        "stages": [],
        "status": "ok",
    }
    status = 0
    for i, (section, kind, params) in enumerate(config.stages):
        seed = stage_seed(config.seed, i)
        ctx = Context(out, config.base_dir, seed)
        log.info("stage [%s]", section)
        try:
            written = run_stage(kind, ctx, params)
        except Exception as exc:  # noqa: BLE001 - reported with stage name
            log.error("stage [%s] failed: %s", section, exc)
            log.debug("%s", traceback.format_exc())
            marker.write_text(f"stage: {section}\ncause: {type(exc).__name__}: {exc}\n")
            manifest["status"] = "failed"
            manifest["failed_stage"] = section
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            status = 1
            break
        files = sorted({Path(p).resolve() for p in written})
        manifest["stages"].append(
            {
                "section": section,
                "stage": kind,
                "seed": seed,
                "outputs": [
                    {"path": os.path.relpath(f, out.resolve()), "sha256": sha256_file(f), "bytes": f.stat().st_size}
                    for f in files
                ],
            }
        )
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status, path
