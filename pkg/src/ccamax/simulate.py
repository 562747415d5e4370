"""Gaussian benchmark models and the Monte Carlo rejection/coverage harness.

Three joint-normal scenarios share one covariance template: both marginal
blocks are AR(0.5) over the first 100 coordinates (identity beyond), and the
cross-covariance is built from a low-rank standardized middle factor. Model
"N" has no cross-covariance; "A1" plants a single correlated pair of sparse
directions; "A2" plants three axis-aligned components with staggered
strengths. Sampling uses a counter-based generator so that replications can
run in parallel without stream coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .data import PairedDataset, as_paired
from .errors import CcamaxError, NumericalError, ValidationError
from .greedy import full_search_moments, greedy_select_moments
from .moments import Moments, Tolerances, sym_inv_sqrt
from .stream import StreamConfig, estimate, test_null

_AR_SPAN = 100
_SAMPLING_DIM_CAP = 2000
_ACTIVE = 3

MODEL_KINDS = ("N", "A1", "A2")


@dataclass(frozen=True)
class ModelSpec:
    """One simulation scenario: model kind, dimensions, signal, sample size."""

    kind: str
    p: int
    q: int
    tau: float = 0.0
    n: int = 500

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind).upper())
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"model kind must be one of {MODEL_KINDS}")
        if self.p < 1 or self.q < 1:
            raise ValidationError("dimensions must be positive")
        if self.n < 4:
            raise ValidationError("sample size must be at least 4")
        if self.kind == "N":
            if self.tau != 0.0:
                raise ValidationError("the null model has tau = 0")
        else:
            if self.tau <= 0.0:
                raise ValidationError("alternative models need tau > 0")
            if min(self.p, self.q) < _ACTIVE:
                raise ValidationError(
                    f"alternative models need p, q >= {_ACTIVE}"
                )


def _ar_block(dim: int) -> np.ndarray:
    s = np.eye(dim)
    m = min(dim, _AR_SPAN)
    idx = np.arange(m)
    s[:m, :m] = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return s


def _directions(spec: ModelSpec, sigma_x: np.ndarray, sigma_y: np.ndarray):
    """Component strengths and unit-variance direction vectors."""
    if spec.kind == "N":
        return []
    if spec.kind == "A1":
        vx = np.zeros(spec.p)
        vx[:_ACTIVE] = 1.0
        vy = np.zeros(spec.q)
        vy[:_ACTIVE] = 1.0
        alpha = vx / math.sqrt(vx @ sigma_x @ vx)
        beta = vy / math.sqrt(vy @ sigma_y @ vy)
        return [(spec.tau, alpha, beta)]
    rhos = spec.tau * np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0)
    comps = []
    for k in range(_ACTIVE):
        alpha = np.zeros(spec.p)
        alpha[k] = 1.0
        beta = np.zeros(spec.q)
        beta[k] = 1.0
        comps.append((float(rhos[k]), alpha, beta))
    return comps


@dataclass(frozen=True)
class Population:
    """Exact covariance structure of a model plus its sampling factor."""

    spec: ModelSpec
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    sigma_xy: np.ndarray
    lambda_xy: np.ndarray
    tau_full: float
    chol: np.ndarray
    rhos: tuple[float, ...]

    def moments(self) -> Moments:
        return Moments(
            np.zeros(self.spec.p),
            np.zeros(self.spec.q),
            self.sigma_x,
            self.sigma_y,
            self.sigma_xy,
            rows=None,
        )

    def tau_max(
        self,
        s_x: int,
        s_y: int,
        enumeration_cap: int = 20_000,
        tol: Tolerances | None = None,
    ) -> float:
        """Population maximal root-Pillai value at the given sizes.

        Exhaustive over subsets when the combination count is modest, greedy
        on the exact moments otherwise (exact for these planted models).
        """
        m = self.moments()
        n_comb = math.comb(self.spec.p, s_x) * math.comb(self.spec.q, s_y)
        if n_comb <= enumeration_cap:
            _, trace_sq = full_search_moments(m, s_x, s_y, tol, cap=enumeration_cap)
        else:
            _, trace_sq, _ = greedy_select_moments(m, s_x, s_y, tol)
        return math.sqrt(trace_sq)


def build_population(spec: ModelSpec) -> Population:
    """Materialize exact covariance blocks and the joint Cholesky factor."""
    if spec.p + spec.q > _SAMPLING_DIM_CAP:
        raise ValidationError(
            f"p + q = {spec.p + spec.q} exceeds the sampling cap "
            f"{_SAMPLING_DIM_CAP}"
        )
    sigma_x = _ar_block(spec.p)
    sigma_y = _ar_block(spec.q)
    comps = _directions(spec, sigma_x, sigma_y)
    middle = np.zeros((spec.p, spec.q))
    for rho, alpha, beta in comps:
        middle += rho * np.outer(alpha, beta)
    sigma_xy = sigma_x @ middle @ sigma_y
    joint = np.block([[sigma_x, sigma_xy], [sigma_xy.T, sigma_y]])
    try:
        chol = np.linalg.cholesky(joint)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "joint covariance is not positive definite "
            f"(kind={spec.kind}, tau={spec.tau})"
        ) from None
    isx, _ = sym_inv_sqrt(sigma_x, 1e12, "population X covariance")
    isy, _ = sym_inv_sqrt(sigma_y, 1e12, "population Y covariance")
    lam = isx @ sigma_xy @ isy
    return Population(
        spec=spec,
        sigma_x=sigma_x,
        sigma_y=sigma_y,
        sigma_xy=sigma_xy,
        lambda_xy=lam,
        tau_full=float(np.linalg.norm(lam)),
        chol=chol,
        rhos=tuple(rho for rho, _, _ in comps),
    )


def sample(pop: Population, n: int, seed: int) -> PairedDataset:
    """Draw n i.i.d. mean-zero Gaussian rows with the exact joint covariance."""
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((n, pop.spec.p + pop.spec.q))
    w = z @ pop.chol.T
    return as_paired(w[:, : pop.spec.p], w[:, pop.spec.p :])


@dataclass(frozen=True)
class CellResult:
    """Aggregate of one Monte Carlo grid cell."""

    spec: ModelSpec
    s_x: int
    s_y: int
    alpha: float
    n_reps: int
    n_ok: int
    failures: int
    reject_rate: float
    coverage: float
    tau_true: float
    mean_tau_hat: float
    sd_tau_hat: float
    quantiles: dict
    raw: tuple


def _rep_seeds(seed: int, n_reps: int) -> list[tuple[int, int]]:
    children = np.random.SeedSequence(seed).spawn(n_reps)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


def _one_rep(pop, s_x, s_y, cfg, seeds, target=None):
    sample_seed, stream_seed = seeds
    data = sample(pop, pop.spec.n, sample_seed)
    rep_cfg = replace(cfg, seed=stream_seed)
    if target is not None:
        rep_cfg = replace(rep_cfg, target=target)
    report = estimate(data, s_x, s_y, rep_cfg)
    decision = test_null(report, rep_cfg.alpha)
    return {
        "status": "ok",
        "seed": sample_seed,
        "tau_hat": report.tau_hat,
        "se": report.se,
        "ci": [report.ci_lo, report.ci_hi],
        "reject": decision.reject,
        "p_value": decision.p_value,
    }


def _safe_rep(pop, s_x, s_y, cfg, seeds, target=None):
    try:
        return _one_rep(pop, s_x, s_y, cfg, seeds, target)
    except CcamaxError as exc:
        return {"status": "failed", "seed": seeds[0], "error": str(exc)}


def run_monte_carlo_cell(
    spec: ModelSpec,
    s: int,
    n_reps: int,
    cfg: StreamConfig | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> CellResult:
    """Monte Carlo rejection rate, coverage, and estimate summary for one cell.

    Each replication samples fresh data (already randomly ordered by
    construction), runs the estimator, and tests the null at ``cfg.alpha``.
    Per-replication failures are recorded, not fatal. The default config uses
    a single ordering per replication since the draws are independent.
    """
    if n_reps < 1:
        raise ValidationError("n_reps must be at least 1")
    cfg = cfg or StreamConfig(reorderings=1)
    pop = build_population(spec)
    tau_true = pop.tau_max(s, s)
    seed_pairs = _rep_seeds(seed, n_reps)
    if n_jobs == 1:
        raw = [_safe_rep(pop, s, s, cfg, sp) for sp in seed_pairs]
    else:
        raw = Parallel(n_jobs=n_jobs)(
            delayed(_safe_rep)(pop, s, s, cfg, sp) for sp in seed_pairs
        )
    ok = [r for r in raw if r["status"] == "ok"]
    failures = n_reps - len(ok)
    if not ok:
        raise NumericalError("every replication failed")
    taus = np.array([r["tau_hat"] for r in ok])
    rejects = np.array([r["reject"] for r in ok], dtype=bool)
    cover = np.array(
        [r["ci"][0] <= tau_true <= r["ci"][1] for r in ok], dtype=bool
    )
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return CellResult(
        spec=spec,
        s_x=s,
        s_y=s,
        alpha=cfg.alpha,
        n_reps=n_reps,
        n_ok=len(ok),
        failures=failures,
        reject_rate=float(rejects.mean()),
        coverage=float(cover.mean()),
        tau_true=tau_true,
        mean_tau_hat=float(taus.mean()),
        sd_tau_hat=float(taus.std(ddof=1)) if len(ok) > 1 else 0.0,
        quantiles={str(q): float(np.quantile(taus, q)) for q in qs},
        raw=tuple(raw),
    )


@dataclass(frozen=True)
class HistogramCell:
    """Empirical distribution of the estimator in one grid cell."""

    spec: ModelSpec
    target: str
    s_x: int
    s_y: int
    estimates: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    sd: float
    median: float
    failures: int


def histogram_study(
    specs,
    s: int,
    n_reps: int,
    cfg: StreamConfig | None = None,
    seed: int = 0,
    targets=("root_pillai", "pillai"),
    bins: int = 30,
    n_jobs: int = 1,
) -> list[HistogramCell]:
    """Estimator distributions over a grid of models, for both targets.

    Emits raw and binned estimates per (model, target) cell; the squared
    target is included to exhibit its negative small-sample bias.
    """
    cfg = cfg or StreamConfig(reorderings=1)
    cells = []
    root = np.random.SeedSequence(seed)
    for spec in specs:
        pop = build_population(spec)
        for target in targets:
            cell_seed = int(root.spawn(1)[0].generate_state(1)[0])
            seed_pairs = _rep_seeds(cell_seed, n_reps)
            if n_jobs == 1:
                raw = [_safe_rep(pop, s, s, cfg, sp, target) for sp in seed_pairs]
            else:
                raw = Parallel(n_jobs=n_jobs)(
                    delayed(_safe_rep)(pop, s, s, cfg, sp, target)
                    for sp in seed_pairs
                )
            est = np.array([r["tau_hat"] for r in raw if r["status"] == "ok"])
            failures = n_reps - est.size
            if est.size == 0:
                raise NumericalError("every replication failed")
            counts, edges = np.histogram(est, bins=bins)
            cells.append(
                HistogramCell(
                    spec=spec,
                    target=target,
                    s_x=s,
                    s_y=s,
                    estimates=est,
                    bin_edges=edges,
                    counts=counts,
                    mean=float(est.mean()),
                    sd=float(est.std(ddof=1)) if est.size > 1 else 0.0,
                    median=float(np.median(est)),
                    failures=failures,
                )
            )
    return cells
