"""Canonical gradient of the root-Pillai functional at a plug-in distribution.

The root-Pillai value of a selection is a smooth functional of means and
covariances, so its influence function at an empirical distribution is a
quadratic/bilinear form in the centered observation. The context object
precomputes the three form matrices once per prefix so that evaluating the
gradient at an observation costs O(s_x^2 + s_y^2 + s_x*s_y).

At a numerically zero root-Pillai value the gradient's limit involves an
unidentifiable direction matrix; a unit-Frobenius surrogate built from the
sample coherence (or its leading singular pair when the coherence vanishes)
is substituted and the context is flagged degenerate. Callers must branch on
the flag; nothing here divides by zero silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairedDataset
from .errors import NumericalError, ValidationError
from .moments import (
    CoherenceBlock,
    IndexPair,
    Tolerances,
    coherence_block,
    pillai_trace,
    root_pillai,
)


@dataclass(frozen=True)
class GradientContext:
    """Coherence block plus precomputed forms for gradient evaluation.

    ``a_x`` and ``a_y`` are the symmetric PSD matrices of the two negative
    quadratic terms, ``a_cross`` the bilinear term; ``deg_bilinear`` replaces
    them when the context is degenerate. ``psi`` is exactly 0 when degenerate.
    """

    block: CoherenceBlock
    p: int
    q: int
    psi: float
    trace_sq: float
    degenerate: bool
    a_x: np.ndarray
    a_y: np.ndarray
    a_cross: np.ndarray
    deg_bilinear: np.ndarray | None

    @property
    def d(self) -> IndexPair:
        return self.block.d

    @property
    def rows(self) -> int | None:
        return self.block.rows

    @property
    def mean_x(self) -> np.ndarray:
        return self.block.mean_x

    @property
    def mean_y(self) -> np.ndarray:
        return self.block.mean_y


def build_context_from_block(
    block: CoherenceBlock, p: int, q: int, tol: Tolerances | None = None
) -> GradientContext:
    tol = tol or Tolerances()
    trace_sq = pillai_trace(block)
    psi, degenerate = root_pillai(block, tol)
    c = block.coherence
    isx = block.inv_sqrt_x
    isy = block.inv_sqrt_y
    a_x = isx @ (c @ c.T) @ isx
    a_y = isy @ (c.T @ c) @ isy
    a_x = 0.5 * (a_x + a_x.T)
    a_y = 0.5 * (a_y + a_y.T)
    a_cross = isy @ c.T @ isx
    deg_bilinear = None
    if degenerate:
        cyx = c.T
        nrm = float(np.linalg.norm(cyx))
        if nrm > 0.0:
            direction = cyx / nrm
        else:
            u, _, vt = np.linalg.svd(cyx)
            direction = np.outer(u[:, 0], vt[0])
        deg_bilinear = isy @ direction @ isx
    return GradientContext(
        block=block,
        p=p,
        q=q,
        psi=psi,
        trace_sq=trace_sq,
        degenerate=degenerate,
        a_x=a_x,
        a_y=a_y,
        a_cross=a_cross,
        deg_bilinear=deg_bilinear,
    )


def build_context(
    data: PairedDataset,
    d: IndexPair,
    rows: int | None = None,
    tol: Tolerances | None = None,
) -> GradientContext:
    """Build a gradient context for selection ``d`` on the first ``rows`` rows."""
    tol = tol or Tolerances()
    block = coherence_block(data, d, rows, tol)
    return build_context_from_block(block, data.p, data.q, tol)


def gradient_rows(
    ctx: GradientContext,
    xs: np.ndarray,
    ys: np.ndarray,
    target: str = "root_pillai",
) -> np.ndarray:
    """Gradient values for stacked selected-column rows.

    ``xs``/``ys`` carry only the selected columns, one observation per row.
    For the ``pillai`` target this is the trace gradient (no scaling); for
    ``root_pillai`` a degenerate context dispatches to the surrogate form.
    """
    xc = np.atleast_2d(xs) - ctx.mean_x
    yc = np.atleast_2d(ys) - ctx.mean_y
    if target == "root_pillai" and ctx.degenerate:
        return np.einsum("ij,jk,ik->i", yc, ctx.deg_bilinear, xc)
    qx = np.einsum("ij,jk,ik->i", xc, ctx.a_x, xc)
    qy = np.einsum("ij,jk,ik->i", yc, ctx.a_y, yc)
    cr = np.einsum("ij,jk,ik->i", yc, ctx.a_cross, xc)
    dphi = -qx - qy + 2.0 * cr
    if target == "pillai":
        return dphi
    return dphi / (2.0 * ctx.psi)


def _split_observation(ctx: GradientContext, o) -> tuple[np.ndarray, np.ndarray]:
    o = np.asarray(o, dtype=np.float64).ravel()
    if o.shape[0] != ctx.p + ctx.q:
        raise ValidationError(
            f"observation has length {o.shape[0]}, expected {ctx.p + ctx.q}"
        )
    x = o[list(ctx.d.k_set)]
    y = o[ctx.p:][list(ctx.d.j_set)]
    return x, y


def evaluate(ctx: GradientContext, o) -> float:
    """Root-Pillai gradient at one full observation row (X then Y entries)."""
    if ctx.degenerate:
        raise NumericalError(
            "gradient context is degenerate (zero coherence); "
            "use degenerate_gradient"
        )
    x, y = _split_observation(ctx, o)
    return float(gradient_rows(ctx, x, y, "root_pillai")[0])


def degenerate_gradient(ctx: GradientContext, o) -> float:
    """Surrogate gradient used when the root-Pillai value is numerically zero."""
    if not ctx.degenerate:
        raise ValidationError("context is not degenerate")
    x, y = _split_observation(ctx, o)
    return float(gradient_rows(ctx, x, y, "root_pillai")[0])


def empirical_variance(
    ctx: GradientContext,
    data: PairedDataset,
    rows: int | None = None,
    tol: Tolerances | None = None,
    target: str = "root_pillai",
) -> tuple[float, float]:
    """Variance (floored) and mean of the gradient over the prefix rows.

    Degenerate contexts are handled through the surrogate form, so this never
    raises for them; the variance floor absorbs constant-gradient edge cases.
    """
    tol = tol or Tolerances()
    rows = (ctx.rows if ctx.rows is not None else data.n) if rows is None else int(rows)
    xs = data.x[:rows][:, list(ctx.d.k_set)]
    ys = data.y[:rows][:, list(ctx.d.j_set)]
    values = gradient_rows(ctx, xs, ys, target)
    mean = float(values.mean())
    var = float(np.mean((values - mean) ** 2))
    return max(var, tol.sigma_floor), mean
