"""Sign and zero restrictions on the impact matrix via orthogonal rotations.

The impact matrix of a draw is ``L = chol(Sigma) @ Q``. Shocks are processed
in decreasing order of their zero-restriction count; each column of ``Q`` is
a standard normal vector projected onto the null space of that shock's
zero rows of ``chol(Sigma)`` and the columns already chosen, then
normalised. A column may be flipped once to repair its sign constraints.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .bvar import BvarPosterior, BvarSpec, draw_rng, lag_matrices
from .timeseries import MacroDataset, QuarterIndex

log = logging.getLogger(__name__)

_SYMBOLS = {"+": 1, "-": -1, "0": 0, "*": 0}


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RestrictionSet:
    """Restrictions on an ``n x n`` impact matrix (rows: variables, columns: shocks).

    ``sign[i, j]`` is +1/-1 for a sign constraint, 0 otherwise; ``zero[i, j]``
    marks exclusion restrictions.
    """

    sign: np.ndarray
    zero: np.ndarray
    variables: tuple[str, ...] | None = None
    shocks: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        sign = np.asarray(self.sign, dtype=np.int8)
        zero = np.asarray(self.zero, dtype=bool)
        n = sign.shape[0]
        if sign.shape != (n, n) or zero.shape != (n, n):
            raise ValueError("restriction grids must be square n x n")
        if not np.all(np.isin(sign, (-1, 0, 1))):
            raise ValueError("sign entries must be -1, 0 or +1")
        if np.any(zero & (sign != 0)):
            i, j = np.argwhere(zero & (sign != 0))[0]
            raise ValueError(f"entry ({i}, {j}) carries both a zero and a sign restriction")
        counts = np.sort(zero.sum(axis=0))[::-1]
        for k, z in enumerate(counts, 1):
            if z > n - k:
                raise ValueError(
                    f"infeasible zero restrictions: sorted counts {counts.tolist()} exceed n - k"
                )
        object.__setattr__(self, "sign", sign)
        object.__setattr__(self, "zero", zero)
        for attr in ("variables", "shocks"):
            names = getattr(self, attr)
            if names is not None:
                names = tuple(names)
                if len(names) != n:
                    raise ValueError(f"need {n} {attr} names")
                object.__setattr__(self, attr, names)

    @property
    def n(self) -> int:
        return self.sign.shape[0]

    @property
    def order(self) -> np.ndarray:
        """Processing order: most zeros first, ties by column index."""
        return np.argsort(-self.zero.sum(axis=0), kind="stable")

    @classmethod
    def from_constraints(
        cls,
        n: int,
        constraints: Mapping[int, Mapping[str, Sequence]],
        variables: Sequence[str] | None = None,
        shocks: Sequence[str] | None = None,
    ) -> RestrictionSet:
        """Build from ``{shock: {"signs": [(var, +1|-1), ...], "zeros": [var, ...]}}``.

        Conflicting statements about one (variable, shock) pair are rejected.
        """
        sign = np.zeros((n, n), dtype=np.int8)
        zero = np.zeros((n, n), dtype=bool)
        for j, spec in constraints.items():
            for i, s in spec.get("signs", ()):
                s = int(np.sign(s))
                if s == 0:
                    raise ValueError(f"sign for ({i}, {j}) must be + or -")
                if zero[i, j] or (sign[i, j] and sign[i, j] != s):
                    raise ValueError(f"contradictory restrictions on ({i}, {j})")
                sign[i, j] = s
            for i in spec.get("zeros", ()):
                if sign[i, j]:
                    raise ValueError(f"contradictory restrictions on ({i}, {j})")
                zero[i, j] = True
        return cls(sign, zero, None if variables is None else tuple(variables),
                   None if shocks is None else tuple(shocks))

    @classmethod
    def parse(cls, text: str) -> RestrictionSet:
        """Parse a grid of ``+ - 0 *`` symbols.

        Optional first line ``shocks: a b c``; each grid row may be prefixed
        with a variable name followed by ``:``.
        """
        shocks = None
        variables: list[str] = []
        rows = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower().startswith("shocks:"):
                shocks = tuple(line.split(":", 1)[1].split())
                continue
            name = None
            if ":" in line:
                name, line = (s.strip() for s in line.split(":", 1))
            cells = line.replace(",", " ").split()
            bad = [c for c in cells if c not in _SYMBOLS]
            if bad:
                raise ValueError(f"unknown restriction symbols {bad}")
            rows.append(cells)
            if name is not None:
                variables.append(name)
        if not rows or any(len(r) != len(rows) for r in rows):
            raise ValueError("restriction grid must be square")
        sign = np.array([[_SYMBOLS[c] for c in r] for r in rows], dtype=np.int8)
        zero = np.array([[c == "0" for c in r] for r in rows], dtype=bool)
        return cls(sign, zero, tuple(variables) if variables else None, shocks)

    def format(self) -> str:
        lines = []
        if self.shocks:
            lines.append("shocks: " + " ".join(self.shocks))
        for i in range(self.n):
            cells = [
                "0" if self.zero[i, j] else {1: "+", -1: "-", 0: "*"}[int(self.sign[i, j])]
                for j in range(self.n)
            ]
            prefix = f"{self.variables[i]}: " if self.variables else ""
            lines.append(prefix + " ".join(cells))
        return "\n".join(lines) + "\n"

    def satisfied(self, impact: np.ndarray, zero_tol: float = 1e-10) -> bool:
        impact = np.asarray(impact)
        signs_ok = np.all(self.sign * impact > 0, where=self.sign != 0)
        zeros_ok = np.all(np.abs(impact[self.zero]) < zero_tol)
        return bool(signs_ok and zeros_ok)


def gas_shock_restrictions() -> RestrictionSet:
    """Restriction grid for the five-variable gas-price model.

    Variables (rows): real gas price, core inflation, firm inflation
    expectations, unemployment, industrial confidence. Shocks (columns):
    nominal gas price, aggregate supply, pure expectation, aggregate demand,
    inflation sentiment.
    """
    grid = """
    shocks: gas as expectation ad sentiment
    rgas:  + - 0 + 0
    core:  + + 0 + 0
    exp:   + + + + +
    unemp: + + 0 - +
    conf:  0 - * + +
    """
    return RestrictionSet.parse(grid)


# ---------------------------------------------------------------- sampler


def _null_basis(M: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal null-space basis of each stacked row block ``M`` (..., r, n) -> (..., n, n - r)."""
    r = M.shape[-2]
    if r == 0:
        return np.broadcast_to(np.eye(n), M.shape[:-2] + (n, n))
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    return np.swapaxes(Vt[..., r:, :], -1, -2)


def _rotate_batch(F: np.ndarray, restrictions: RestrictionSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the projection sampler to normals ``x`` (B, n, n); returns (Q, ok)."""
    B, n, _ = x.shape
    Q = np.zeros((B, n, n))
    ok = np.ones(B, dtype=bool)
    for k, j in enumerate(restrictions.order):
        zrows = F[restrictions.zero[:, j]]
        prev = np.swapaxes(Q[:, :, restrictions.order[:k]], 1, 2)
        M = np.concatenate([np.broadcast_to(zrows, (B,) + zrows.shape), prev], axis=1)
        if M.shape[1] >= n:
            raise IdentificationError(f"empty null space for shock {j}")
        N = _null_basis(M, n)
        q = np.einsum("bij,bj->bi", N, np.einsum("bji,bj->bi", N, x[:, k]))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        rows = restrictions.sign[:, j] != 0
        if rows.any():
            v = q @ F[rows].T
            s = restrictions.sign[rows, j]
            good = np.all(v * s > 0, axis=1)
            flip = ~good & np.all(v * s < 0, axis=1)
            q[flip] *= -1.0
            ok &= good | flip
        Q[:, :, j] = q
    return Q, ok


def draw_rotation(
    sigma: np.ndarray, restrictions: RestrictionSet, rng: np.random.Generator
) -> np.ndarray | None:
    """One rotation attempt; returns ``Q`` (canonical shock order) or None if a sign fails.

    Consumes exactly ``n * n`` standard normals from ``rng``.
    """
    F = linalg.cholesky(np.asarray(sigma, dtype=float), lower=True)
    n = restrictions.n
    x = rng.standard_normal((1, n, n))
    Q, ok = _rotate_batch(F, restrictions, x)
    return Q[0] if ok[0] else None


# ---------------------------------------------------------------- importance weights


def _rebuild(Sigma: np.ndarray, restrictions: RestrictionSet, bases: list[np.ndarray], units: list[np.ndarray]) -> np.ndarray:
    """``A0 = chol(Sigma)^-T Q`` with ``q_k = N_k u_k / |u_k|`` and ``N_k`` tracking ``bases[k]``."""
    n = restrictions.n
    F = linalg.cholesky(Sigma, lower=True)
    Q = np.zeros((n, n))
    done: list[int] = []
    for k, j in enumerate(restrictions.order):
        M = np.vstack([F[restrictions.zero[:, j]], Q[:, done].T])
        N0 = bases[k]
        if M.shape[0]:
            P = np.eye(n) - np.linalg.pinv(M) @ M
            N, R = np.linalg.qr(P @ N0)
            N = N * np.sign(np.diag(R))
        else:
            N = N0
        u = units[k]
        Q[:, j] = N @ u / np.linalg.norm(u)
        done.append(j)
    return linalg.solve_triangular(F, Q, lower=True, trans="T")


def log_importance_weight(sigma: np.ndarray, Q: np.ndarray, restrictions: RestrictionSet, eps: float = 1e-6) -> float:
    """Log weight correcting the projection sampler to the conditional NIW-uniform target.

    Equals ``(2n+1)/2 * log det(Sigma) + log J`` where ``J`` is the volume
    element of the map from (vech Sigma, unit directions of the sampler's
    normals) to the restricted manifold of ``A0``, computed by central
    differences. Constant when there are no zero restrictions.
    """
    n = restrictions.n
    Sigma = 0.5 * (sigma + sigma.T)
    F = linalg.cholesky(Sigma, lower=True)
    bases, units = [], []
    done: list[int] = []
    for j in restrictions.order:
        M = np.vstack([F[restrictions.zero[:, j]], Q[:, done].T])
        N = _null_basis(M, n) if M.shape[0] else np.eye(n)
        bases.append(np.array(N))
        units.append(N.T @ Q[:, j])
        done.append(j)
    A0 = _rebuild(Sigma, restrictions, bases, units)

    cols = []
    for a in range(n):
        for b in range(a + 1):
            E = np.zeros((n, n))
            E[a, b] = E[b, a] = 1.0
            h = eps * max(1.0, abs(Sigma[a, b]))
            plus = _rebuild(Sigma + h * E, restrictions, bases, units)
            minus = _rebuild(Sigma - h * E, restrictions, bases, units)
            cols.append((plus - minus).ravel() / (2 * h))
    for k, u in enumerate(units):
        d = u.size
        if d == 1:
            continue
        # orthonormal tangent directions of the unit sphere at u
        tangent = linalg.null_space(u[None, :])
        for t in tangent.T:
            pu = [v.copy() for v in units]
            mu = [v.copy() for v in units]
            pu[k] = u + eps * t
            mu[k] = u - eps * t
            plus = _rebuild(Sigma, restrictions, bases, pu)
            minus = _rebuild(Sigma, restrictions, bases, mu)
            cols.append((plus - minus).ravel() / (2 * eps))
    D = np.column_stack(cols)

    inv = np.linalg.inv(A0)
    normals = []
    for i, j in np.argwhere(restrictions.zero):
        # gradient of (A0^-1)[j, i] with respect to A0
        normals.append(-np.outer(inv[j, :], inv[:, i]).ravel())
    if normals:
        Nm = np.column_stack(normals)
        T = linalg.null_space(Nm.T)
    else:
        T = np.eye(n * n)
    _, logJ = np.linalg.slogdet(T.T @ D)
    _, logdet_sigma = np.linalg.slogdet(Sigma)
    return float(0.5 * (2 * n + 1) * logdet_sigma + logJ)


# ---------------------------------------------------------------- draw sets


@dataclass(frozen=True, eq=False)
class StructuralDrawSet:
    """Accepted (reduced-form draw, rotation) pairs.

    ``coef``/``sigma`` are copies of the reduced-form draws referenced by
    ``draw_index`` so the set is self-contained.
    """

    draw_index: np.ndarray
    coef: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    impact: np.ndarray
    tried: int
    accepted: int
    spec: BvarSpec
    names: tuple[str, ...]
    shocks: tuple[str, ...]
    seed: int
    restrictions: str = ""
    dates: tuple[QuarterIndex, ...] = ()
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.draw_index)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.tried if self.tried else 0.0

    def lag_matrices(self, d: int) -> np.ndarray:
        return lag_matrices(self.coef[d], self.n, self.spec.lags)

    def intercept(self, d: int) -> np.ndarray:
        if not self.spec.intercept:
            return np.zeros(self.n)
        return self.coef[d][-1].copy()

    def subset(self, idx: Sequence[int]) -> StructuralDrawSet:
        idx = np.asarray(idx, dtype=int)
        return StructuralDrawSet(
            self.draw_index[idx], self.coef[idx], self.sigma[idx], self.Q[idx], self.impact[idx],
            self.tried, self.accepted, self.spec, self.names, self.shocks, self.seed,
            self.restrictions, self.dates, dict(self.extra),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        D = len(self)
        flat = np.hstack(
            [
                self.draw_index[:, None].astype(float),
                self.coef.reshape(D, -1),
                self.sigma.reshape(D, -1),
                self.Q.reshape(D, -1),
                self.impact.reshape(D, -1),
            ]
        )
        np.save(path / "draws.npy", flat)
        meta = {
            "kind": "structural-drawset",
            "spec": self.spec.as_dict(),
            "names": list(self.names),
            "shocks": list(self.shocks),
            "dates": [str(d) for d in self.dates],
            "tried": self.tried,
            "accepted": self.accepted,
            "seed": self.seed,
            "restrictions": self.restrictions,
            "n_draws": D,
            "coef_shape": list(self.coef.shape[1:]) if D else [self.spec.n_coef(self.n), self.n],
            "extra": self.extra,
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> StructuralDrawSet:
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text())
        if meta.get("kind") != "structural-drawset":
            raise ValueError(f"{path} is not a structural draw-set bundle")
        k, n = meta["coef_shape"]
        D = meta["n_draws"]
        flat = np.load(path / "draws.npy").reshape(D, -1)
        sizes = [1, k * n, n * n, n * n, n * n]
        parts = np.split(flat, np.cumsum(sizes)[:-1], axis=1)
        return cls(
            parts[0][:, 0].astype(int),
            parts[1].reshape(D, k, n),
            parts[2].reshape(D, n, n),
            parts[3].reshape(D, n, n),
            parts[4].reshape(D, n, n),
            meta["tried"],
            meta["accepted"],
            BvarSpec.from_dict(meta["spec"]),
            tuple(meta["names"]),
            tuple(meta["shocks"]),
            meta["seed"],
            meta["restrictions"],
            tuple(QuarterIndex.parse(d) for d in meta["dates"]),
            meta.get("extra", {}),
        )


def identify(
    posterior: BvarPosterior,
    restrictions: RestrictionSet,
    target: int,
    max_tries: int = 1000,
    seed: int = 0,
    batch: int = 250,
    importance_weights: bool = False,
) -> StructuralDrawSet:
    """Search rotations for successive reduced-form draws until ``target`` are accepted.

    Each reduced-form draw gets its own generator from ``(seed, draw index)``
    and at most ``max_tries`` attempts; its first admissible rotation is
    kept. With ``importance_weights`` the accepted set is resampled (with
    replacement, same size) in proportion to :func:`log_importance_weight`.
    """
    n = posterior.n
    if restrictions.n != n:
        raise ValueError(f"restrictions are {restrictions.n}x{restrictions.n}, model has {n} variables")
    if len(posterior) == 0:
        raise ValueError("posterior has no draws")
    shocks = restrictions.shocks or tuple(f"shock{j + 1}" for j in range(n))
    keep_idx, keep_Q = [], []
    tried = 0
    if target > 0:
        for d in range(len(posterior)):
            F = linalg.cholesky(posterior.sigma[d], lower=True)
            rng = draw_rng(seed, posterior.start + d)
            remaining = max_tries
            while remaining > 0:
                b = min(batch, remaining)
                Q, ok = _rotate_batch(F, restrictions, rng.standard_normal((b, n, n)))
                if ok.any():
                    first = int(np.argmax(ok))
                    tried += first + 1
                    keep_idx.append(d)
                    keep_Q.append(Q[first])
                    break
                tried += b
                remaining -= b
            if len(keep_idx) >= target:
                break
        if not keep_idx:
            raise IdentificationError(
                f"no admissible rotation after {tried} tries over {len(posterior)} draws "
                f"(max_tries={max_tries}); check restriction feasibility"
            )
        if len(keep_idx) < target:
            log.warning("accepted %d of %d target rotations (%d tries)", len(keep_idx), target, tried)
    idx = np.array(keep_idx, dtype=int)
    Qs = np.array(keep_Q).reshape(-1, n, n)
    sig = posterior.sigma[idx]
    impact = np.array([linalg.cholesky(s, lower=True) @ q for s, q in zip(sig, Qs)]).reshape(-1, n, n)
    extra: dict = {"acceptance_rate": len(idx) / tried if tried else 0.0}
    ds = StructuralDrawSet(
        idx + posterior.start, posterior.coef[idx], sig, Qs, impact, tried, len(idx),
        posterior.spec, posterior.names, shocks, int(seed), restrictions.format(), posterior.dates, extra,
    )
    if importance_weights and len(ds):
        logw = np.array([log_importance_weight(s, q, restrictions) for s, q in zip(sig, Qs)])
        w = np.exp(logw - logw.max())
        w /= w.sum()
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2**32 - 1,)))
        pick = rng.choice(len(w), size=len(w), replace=True, p=w)
        ds = ds.subset(np.sort(pick))
        ds.extra.update(importance_ess=float(1.0 / np.sum(w**2)), log_weights=logw.tolist())
    return ds


def residuals(coef: np.ndarray, data: MacroDataset, lags: int, intercept: bool) -> np.ndarray:
    """Reduced-form residuals over the full span; rows before ``lags`` are NaN."""
    n = data.n
    if not data.present.all():
        raise ValueError("data must be complete to compute residuals")
    A = lag_matrices(coef, n, lags)
    y = data.values
    eps = np.full((data.T, n), np.nan)
    fitted = np.zeros((data.T - lags, n))
    if intercept:
        fitted += coef[-1]
    for ell in range(1, lags + 1):
        fitted += y[lags - ell : data.T - ell] @ A[ell - 1].T
    eps[lags:] = y[lags:] - fitted
    return eps


def extract_shocks(drawset: StructuralDrawSet, data: MacroDataset) -> MacroDataset:
    """Posterior-median structural shocks ``L^-1 eps_t`` over the full span of ``data``."""
    if len(drawset) == 0:
        raise ValueError("empty draw set")
    data = data.select(drawset.names)
    p = drawset.spec.lags
    out = np.empty((len(drawset), data.T, drawset.n))
    for d in range(len(drawset)):
        L = drawset.impact[d]
        if abs(np.linalg.det(L)) < 1e-300 or np.linalg.cond(L) > 1e14:
            raise ValueError(f"singular impact matrix in draw {d}")
        eps = residuals(drawset.coef[d], data, p, drawset.spec.intercept)
        out[d, p:] = np.linalg.solve(L, eps[p:].T).T
        out[d, :p] = 0.0
    med = np.median(out, axis=0)
    present = np.ones_like(med, dtype=bool)
    present[:p] = False
    return MacroDataset(data.dates, drawset.shocks, med, present)
