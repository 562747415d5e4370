"""Stabilized one-step estimation of the maximal root-Pillai trace.

The stream walks growing row prefixes, producing one term per observation
past the burn-in: the plug-in value of the currently selected pair plus the
estimated gradient evaluated at that single next observation, studentized by
the per-prefix gradient standard deviation. Re-selecting and re-estimating
at every prefix is the expensive part, so those ingredients are refreshed
only every ``stride`` rows and held fixed in between; each term still
consumes a fresh observation, which preserves both the martingale structure
and the number of averaged terms. Weights normalize to the harmonic mean of
the per-term standard deviations; running accumulators make the pass
single-sweep with no per-term history beyond the trace log. The weighted
average is asymptotically pivotal, yielding a Wald interval and a one-sided
test of the global null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Ordering, PairedDataset, reorder
from .errors import DegenerateStreamError, ValidationError
from .greedy import full_search_moments, greedy_select_moments
from .influence import build_context_from_block, empirical_variance, gradient_rows
from .moments import (
    IndexPair,
    Moments,
    PrefixAccumulator,
    Tolerances,
    coherence_block_from_moments,
)

SELECTORS = ("greedy", "full")
TARGETS = ("root_pillai", "pillai")


@dataclass(frozen=True)
class StreamConfig:
    """Configuration of the one-step stream.

    ``ell`` is the burn-in prefix length and defaults to ceil(n/2) at run
    time. Asymptotically, any burn-in growing at least like
    (log max(n, p, q))^(1+eps) while staying a vanishing-log fraction of n
    is admissible; the half-sample default is the practical choice and can
    be overridden here (or via --ell-frac on the command line). ``stride``
    is the prefix increment between refreshes of the selection, plug-in
    value, and gradient scale; every observation past the burn-in still
    contributes one correction term. ``reorderings`` is the number of random
    row orders whose results are averaged. ``target`` selects the
    root-Pillai functional (recommended) or its square, which is retained
    only to exhibit that variant's small-sample bias.
    """

    ell: int | None = None
    stride: int = 20
    alpha: float = 0.05
    reorderings: int = 10
    seed: int = 0
    selector: str = "greedy"
    target: str = "root_pillai"
    tolerances: Tolerances = field(default_factory=Tolerances)
    full_search_cap: int = 1_000_000

    def __post_init__(self):
        if self.ell is not None and self.ell < 3:
            raise ValidationError("ell must be at least 3")
        if self.stride < 1:
            raise ValidationError("stride must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.reorderings < 1:
            raise ValidationError("reorderings must be at least 1")
        if self.selector not in SELECTORS:
            raise ValidationError(f"selector must be one of {SELECTORS}")
        if self.target not in TARGETS:
            raise ValidationError(f"target must be one of {TARGETS}")

    def resolve_ell(self, n: int) -> int:
        ell = math.ceil(n / 2) if self.ell is None else self.ell
        if not 3 <= ell < n:
            raise ValidationError(f"need 3 <= ell({ell}) < n({n})")
        return ell


@dataclass
class StreamTrace:
    """Per-term records of one stream pass plus the pooled scale.

    One record per consumed observation: ``js[t]`` is the prefix index j of
    term t (rows 1..j feed selection, plug-in value, and variance; row j+1 is
    the gradient's evaluation point), ``refresh_js[t]`` the prefix at which
    those ingredients were last recomputed.
    """

    js: np.ndarray
    refresh_js: np.ndarray
    selections: list[IndexPair]
    psi: np.ndarray
    grad_next: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    degenerate: np.ndarray
    sigma_bar: float

    @property
    def m(self) -> int:
        return self.js.shape[0]

    @property
    def n_degenerate(self) -> int:
        """Number of degenerate refreshes (not terms)."""
        mask = np.concatenate([[True], np.diff(self.refresh_js) != 0])
        return int(self.degenerate[mask].sum())


def _select(m: Moments, s_x: int, s_y: int, cfg: StreamConfig):
    if cfg.selector == "greedy":
        d, trace_sq, _ = greedy_select_moments(m, s_x, s_y, cfg.tolerances)
        return d
    d, _ = full_search_moments(m, s_x, s_y, cfg.tolerances, cfg.full_search_cap)
    return d


def run_stream(
    data: PairedDataset, s_x: int, s_y: int, cfg: StreamConfig
) -> tuple[float, float, StreamTrace]:
    """One pass of the stabilized one-step stream over already-ordered data.

    Produces one term per observation past the burn-in (n - ell terms in
    total) and returns the weighted average, its standard error (pooled scale
    over the square root of the term count), and the full trace. Selection,
    plug-in value, and gradient variance are refreshed at prefix lengths
    ``ell, ell+stride, ...`` and held fixed for the following ``stride``
    observations; the term anchored at prefix j therefore uses only rows
    1..j, plus row j+1 as the gradient's evaluation point.
    """
    tol = cfg.tolerances
    n = data.n
    ell = cfg.resolve_ell(n)
    if ell < s_x + s_y + 2:
        raise ValidationError(
            f"burn-in prefix {ell} too short for selection sizes ({s_x}, {s_y}); "
            "increase n or reduce the sizes"
        )
    acc = PrefixAccumulator(data, ell)
    js, refresh_js, sels, psis, grads, sigmas, degs = [], [], [], [], [], [], []
    deg_refreshes = 0
    n_refreshes = 0
    count = 0
    ratio_mean = 0.0
    inv_mean = 0.0
    for b in range(ell, n, cfg.stride):
        acc.extend_to(b)
        m = acc.moments()
        d = _select(m, s_x, s_y, cfg)
        block = coherence_block_from_moments(m, d, tol)
        ctx = build_context_from_block(block, data.p, data.q, tol)
        if cfg.target == "root_pillai":
            psi_b = ctx.psi
            deg = ctx.degenerate
        else:
            psi_b = ctx.trace_sq
            deg = False
        var, _ = empirical_variance(ctx, data, rows=b, tol=tol, target=cfg.target)
        sigma = math.sqrt(var)
        n_refreshes += 1
        deg_refreshes += int(deg)
        block_end = min(b + cfg.stride, n)
        k_cols = list(d.k_set)
        j_cols = list(d.j_set)
        block_grads = gradient_rows(
            ctx,
            data.x[b:block_end][:, k_cols],
            data.y[b:block_end][:, j_cols],
            cfg.target,
        )
        for offset, grad in enumerate(block_grads):
            grad = float(grad)
            js.append(b + offset)
            refresh_js.append(b)
            sels.append(d)
            psis.append(psi_b)
            grads.append(grad)
            sigmas.append(sigma)
            degs.append(deg)
            count += 1
            ratio_mean += ((psi_b + grad) / sigma - ratio_mean) / count
            inv_mean += (1.0 / sigma - inv_mean) / count
    if cfg.target == "root_pillai" and deg_refreshes == n_refreshes:
        raise DegenerateStreamError(
            "every stream update was degenerate (zero coherence); "
            "increase n or reduce the selection sizes"
        )
    sigma_bar = 1.0 / inv_mean
    tau_hat = ratio_mean / inv_mean
    sigma_arr = np.array(sigmas)
    trace = StreamTrace(
        js=np.array(js, dtype=np.int64),
        refresh_js=np.array(refresh_js, dtype=np.int64),
        selections=sels,
        psi=np.array(psis),
        grad_next=np.array(grads),
        sigma=sigma_arr,
        weights=sigma_bar / sigma_arr,
        degenerate=np.array(degs, dtype=bool),
        sigma_bar=sigma_bar,
    )
    se = sigma_bar / math.sqrt(trace.m)
    return tau_hat, se, trace


def weighted_average_from_trace(trace: StreamTrace) -> tuple[float, float]:
    """Direct (non-recursive) weighted average of the logged stream terms.

    Recomputes the pooled scale as the harmonic mean of the logged standard
    deviations and averages the weighted terms; agrees with the running-sum
    path of :func:`run_stream` to floating-point accuracy.
    """
    inv = 1.0 / trace.sigma
    sigma_bar = 1.0 / float(np.mean(inv))
    weights = sigma_bar * inv
    tau = float(np.mean(weights * (trace.psi + trace.grad_next)))
    return tau, sigma_bar


@dataclass(frozen=True)
class OrderingResult:
    """Result of one stream pass under one row ordering."""

    seed: int | None
    tau_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    n_degenerate: int


@dataclass(frozen=True)
class EstimateReport:
    """Averaged point estimate, interval, and test statistics."""

    tau_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    z_stat: float
    p_value: float
    alpha: float
    s_x: int
    s_y: int
    selected: IndexPair
    selected_x_names: tuple[str, ...]
    selected_y_names: tuple[str, ...]
    per_ordering: tuple[OrderingResult, ...]
    n_degenerate: int
    config: dict

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci": [self.ci_lo, self.ci_hi],
            "z": self.z_stat,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "s_x": self.s_x,
            "s_y": self.s_y,
            "selected": {
                "x": list(self.selected_x_names),
                "y": list(self.selected_y_names),
            },
            "orderings": [
                {
                    "seed": o.seed,
                    "tau_hat": o.tau_hat,
                    "se": o.se,
                    "ci": [o.ci_lo, o.ci_hi],
                    "n_degenerate": o.n_degenerate,
                }
                for o in self.per_ordering
            ],
            "n_degenerate": self.n_degenerate,
            "config_echo": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _default_config_echo(cfg: StreamConfig, s_x: int, s_y: int, n: int) -> dict:
    tol = cfg.tolerances
    return {
        "n": n,
        "s_x": s_x,
        "s_y": s_y,
        "ell": cfg.resolve_ell(n),
        "stride": cfg.stride,
        "alpha": cfg.alpha,
        "reorderings": cfg.reorderings,
        "seed": cfg.seed,
        "selector": cfg.selector,
        "target": cfg.target,
        "tolerances": {
            "spd_condition_cap": tol.spd_condition_cap,
            "tau_floor": tol.tau_floor,
            "sigma_floor": tol.sigma_floor,
            "ridge": tol.ridge,
        },
    }


def estimate(
    data: PairedDataset,
    s_x: int,
    s_y: int,
    cfg: StreamConfig,
    orderings: list[Ordering] | None = None,
    config_echo: dict | None = None,
) -> EstimateReport:
    """Run the stream under several random row orders and average the results.

    Point estimates and the lower/upper interval endpoints are averaged
    across orderings; the reported standard error is recovered from the
    averaged interval width, and the studentized statistic and one-sided
    p-value are formed from the averaged quantities. ``orderings`` overrides
    the seed-derived random orders (useful for tests and reproduction).
    """
    n = data.n
    z_half = float(ndtri(1.0 - cfg.alpha / 2.0))
    if orderings is None:
        children = np.random.SeedSequence(cfg.seed).spawn(cfg.reorderings)
        orderings = [
            Ordering.from_seed(n, int(c.generate_state(1)[0])) for c in children
        ]
    per = []
    for ordering in orderings:
        tau_k, se_k, trace_k = run_stream(reorder(data, ordering), s_x, s_y, cfg)
        per.append(
            OrderingResult(
                seed=ordering.seed,
                tau_hat=tau_k,
                se=se_k,
                ci_lo=tau_k - z_half * se_k,
                ci_hi=tau_k + z_half * se_k,
                n_degenerate=trace_k.n_degenerate,
            )
        )
    tau_hat = float(np.mean([o.tau_hat for o in per]))
    ci_lo = float(np.mean([o.ci_lo for o in per]))
    ci_hi = float(np.mean([o.ci_hi for o in per]))
    se = (ci_hi - ci_lo) / (2.0 * z_half)
    z_stat = tau_hat / se
    p_value = float(ndtr(-z_stat))
    full_moments = Moments.from_prefix(data)
    selected = _select(full_moments, s_x, s_y, cfg)
    return EstimateReport(
        tau_hat=tau_hat,
        se=se,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        z_stat=z_stat,
        p_value=p_value,
        alpha=cfg.alpha,
        s_x=s_x,
        s_y=s_y,
        selected=selected,
        selected_x_names=tuple(data.x_names[i] for i in selected.k_set),
        selected_y_names=tuple(data.y_names[i] for i in selected.j_set),
        per_ordering=tuple(per),
        n_degenerate=sum(o.n_degenerate for o in per),
        config=config_echo or _default_config_echo(cfg, s_x, s_y, n),
    )


@dataclass(frozen=True)
class TestDecision:
    """Outcome of the one-sided test of 'no association at the given sizes'."""

    reject: bool
    alpha: float
    z_alpha: float
    z_stat: float
    p_value: float
    ci_2alpha_lower: float

    def to_dict(self) -> dict:
        return {
            "reject": self.reject,
            "alpha": self.alpha,
            "z_alpha": self.z_alpha,
            "z_stat": self.z_stat,
            "p_value": self.p_value,
            "ci_2alpha_lower": self.ci_2alpha_lower,
        }


def test_null(report: EstimateReport, alpha: float | None = None) -> TestDecision:
    """One-sided test: reject when the (1-2*alpha) lower bound exceeds zero.

    Equivalent to comparing the studentized statistic against the upper
    alpha-quantile of the standard normal; both quantities are recorded.
    """
    alpha = report.alpha if alpha is None else float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    z_alpha = float(ndtri(1.0 - alpha))
    lower = report.tau_hat - z_alpha * report.se
    return TestDecision(
        reject=bool(lower > 0.0),
        alpha=alpha,
        z_alpha=z_alpha,
        z_stat=report.z_stat,
        p_value=report.p_value,
        ci_2alpha_lower=lower,
    )
