"""Sample moments, coherence blocks, and the Pillai / root-Pillai objectives.

All covariances here use divisor ``rows`` (the plug-in, empirical-distribution
form), not ``rows - 1``. The gradient's exact zero-mean property and the
incremental trace identities both depend on this convention.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .data import PairedDataset
from .errors import IllConditionedError, ValidationError

_ENV_PREFIX = "CCAMAX_"


@dataclass(frozen=True)
class Tolerances:
    """Numerical guard rails for covariance inversion and degeneracy.

    spd_condition_cap: reject a covariance block whose condition number
        exceeds this cap instead of silently regularizing.
    tau_floor: root-Pillai values at or below this are treated as zero
        (degenerate) so the gradient never divides by zero.
    sigma_floor: floor on the empirical gradient variance.
    ridge: optional diagonal inflation of covariance blocks, off by default.
    """

    spd_condition_cap: float = 1e12
    tau_floor: float = 1e-12
    sigma_floor: float = 1e-8
    ridge: float = 0.0

    def __post_init__(self):
        if self.spd_condition_cap <= 0 or self.tau_floor <= 0 or self.sigma_floor <= 0:
            raise ValidationError("tolerances must be strictly positive")
        if self.ridge < 0:
            raise ValidationError("ridge must be nonnegative")

    @classmethod
    def from_env(cls, **overrides) -> "Tolerances":
        """Build defaults, honoring CCAMAX_* environment overrides."""
        values = {}
        for name in ("spd_condition_cap", "tau_floor", "sigma_floor", "ridge"):
            env = os.environ.get(_ENV_PREFIX + name.upper())
            if env is not None:
                values[name] = float(env)
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class IndexPair:
    """A selection of column subsets: k_set indexes X, j_set indexes Y."""

    k_set: tuple[int, ...]
    j_set: tuple[int, ...]

    def __post_init__(self):
        k = tuple(int(i) for i in self.k_set)
        j = tuple(int(i) for i in self.j_set)
        for label, idx in (("k_set", k), ("j_set", j)):
            if len(idx) == 0:
                raise ValidationError(f"{label} must not be empty")
            if len(set(idx)) != len(idx):
                raise ValidationError(f"duplicate indices in {label}")
            if min(idx) < 0:
                raise ValidationError(f"negative index in {label}")
        object.__setattr__(self, "k_set", tuple(sorted(k)))
        object.__setattr__(self, "j_set", tuple(sorted(j)))

    @property
    def s_x(self) -> int:
        return len(self.k_set)

    @property
    def s_y(self) -> int:
        return len(self.j_set)

    def validate_against(self, p: int, q: int) -> None:
        if max(self.k_set) >= p:
            raise ValidationError(f"X index {max(self.k_set)} out of range for p={p}")
        if max(self.j_set) >= q:
            raise ValidationError(f"Y index {max(self.j_set)} out of range for q={q}")


class Moments:
    """Joint first and second moments of the two blocks.

    Either the empirical moments of a row prefix (``rows`` set, covariance
    divisor = rows) or exact population moments (``rows`` is None).
    """

    __slots__ = ("mean_x", "mean_y", "sxx", "syy", "sxy", "rows", "p", "q")

    def __init__(self, mean_x, mean_y, sxx, syy, sxy, rows=None):
        self.mean_x = np.asarray(mean_x, dtype=np.float64)
        self.mean_y = np.asarray(mean_y, dtype=np.float64)
        self.sxx = np.asarray(sxx, dtype=np.float64)
        self.syy = np.asarray(syy, dtype=np.float64)
        self.sxy = np.asarray(sxy, dtype=np.float64)
        self.rows = None if rows is None else int(rows)
        self.p = self.sxx.shape[0]
        self.q = self.syy.shape[0]
        if self.sxy.shape != (self.p, self.q):
            raise ValidationError("cross-covariance shape mismatch")

    @classmethod
    def from_prefix(cls, data: PairedDataset, rows: int | None = None) -> "Moments":
        rows = data.n if rows is None else int(rows)
        if not 1 <= rows <= data.n:
            raise ValidationError(f"prefix length {rows} outside 1..{data.n}")
        x = data.x[:rows]
        y = data.y[:rows]
        mean_x = x.mean(axis=0)
        mean_y = y.mean(axis=0)
        xc = x - mean_x
        yc = y - mean_y
        return cls(
            mean_x,
            mean_y,
            (xc.T @ xc) / rows,
            (yc.T @ yc) / rows,
            (xc.T @ yc) / rows,
            rows=rows,
        )

    def xx(self, k_set) -> np.ndarray:
        k = list(k_set)
        return self.sxx[np.ix_(k, k)]

    def yy(self, j_set) -> np.ndarray:
        j = list(j_set)
        return self.syy[np.ix_(j, j)]

    def xy(self, k_set, j_set) -> np.ndarray:
        return self.sxy[np.ix_(list(k_set), list(j_set))]


class PrefixAccumulator:
    """Streaming moments over a growing row prefix.

    Accumulates shifted sums (reference shift = mean of the initial prefix) so
    extending the prefix by a block of rows costs one small rank update instead
    of a full recomputation.
    """

    def __init__(self, data: PairedDataset, initial_rows: int):
        if not 1 <= initial_rows <= data.n:
            raise ValidationError("initial prefix length out of range")
        self._data = data
        z0 = np.concatenate([data.x[:initial_rows], data.y[:initial_rows]], axis=1)
        self._shift = z0.mean(axis=0)
        z0 = z0 - self._shift
        self._s1 = z0.sum(axis=0)
        self._s2 = z0.T @ z0
        self._rows = initial_rows

    @property
    def rows(self) -> int:
        return self._rows

    def extend_to(self, rows: int) -> None:
        if rows < self._rows:
            raise ValidationError("prefix can only grow")
        if rows > self._data.n:
            raise ValidationError("prefix exceeds available rows")
        if rows == self._rows:
            return
        z = np.concatenate(
            [self._data.x[self._rows:rows], self._data.y[self._rows:rows]], axis=1
        )
        z = z - self._shift
        self._s1 = self._s1 + z.sum(axis=0)
        self._s2 = self._s2 + z.T @ z
        self._rows = rows

    def moments(self) -> Moments:
        j = self._rows
        p = self._data.p
        dev = self._s1 / j
        cov = self._s2 / j - np.outer(dev, dev)
        cov = 0.5 * (cov + cov.T)
        mean = self._shift + dev
        return Moments(
            mean[:p],
            mean[p:],
            cov[:p, :p],
            cov[p:, p:],
            cov[:p, p:],
            rows=j,
        )


def sym_inv_sqrt(s: np.ndarray, cap: float, label: str, ridge: float = 0.0):
    """Symmetric inverse square root via eigendecomposition.

    Rejects (rather than regularizes) blocks whose condition number exceeds
    ``cap``; an explicit nonzero ``ridge`` is the only sanctioned inflation.
    """
    s = 0.5 * (s + s.T)
    if ridge > 0.0:
        s = s + ridge * np.eye(s.shape[0])
    w, v = np.linalg.eigh(s)
    lam_max = w[-1]
    if lam_max <= 0.0:
        raise IllConditionedError(f"{label} is singular (no positive eigenvalue)")
    if w[0] <= lam_max / cap:
        cond = lam_max / w[0] if w[0] > 0 else math.inf
        raise IllConditionedError(
            f"{label} is ill-conditioned (condition estimate {cond:.3e} "
            f"exceeds cap {cap:.3e})"
        )
    inv_sqrt = (v / np.sqrt(w)) @ v.T
    return 0.5 * (inv_sqrt + inv_sqrt.T), w


def chol_spd(s: np.ndarray, cap: float, label: str, ridge: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor with a cheap diagonal-ratio condition screen."""
    s = 0.5 * (s + s.T)
    if ridge > 0.0:
        s = s + ridge * np.eye(s.shape[0])
    try:
        ell = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise IllConditionedError(f"{label} is not positive definite") from None
    d = np.diag(ell)
    cond_est = (d.max() / d.min()) ** 2
    if cond_est > cap:
        raise IllConditionedError(
            f"{label} is ill-conditioned (condition estimate {cond_est:.3e} "
            f"exceeds cap {cap:.3e})"
        )
    return ell


@dataclass(frozen=True)
class CoherenceBlock:
    """Sample covariance blocks of a selection plus its coherence matrix.

    ``coherence`` is S_X^{-1/2} S_XY S_Y^{-1/2} on the selected columns; the
    inverse square-root factors are retained for gradient evaluation.
    """

    d: IndexPair
    rows: int | None
    mean_x: np.ndarray
    mean_y: np.ndarray
    sigma_xk: np.ndarray
    sigma_yj: np.ndarray
    sigma_xy: np.ndarray
    inv_sqrt_x: np.ndarray
    inv_sqrt_y: np.ndarray
    coherence: np.ndarray


def coherence_block(
    data: PairedDataset,
    d: IndexPair,
    rows: int | None = None,
    tol: Tolerances | None = None,
) -> CoherenceBlock:
    """Build the coherence block of selection ``d`` from the first ``rows`` rows."""
    tol = tol or Tolerances()
    rows = data.n if rows is None else int(rows)
    d.validate_against(data.p, data.q)
    if rows > data.n:
        raise ValidationError(f"prefix length {rows} exceeds n={data.n}")
    if rows < d.s_x + d.s_y + 2:
        raise ValidationError(
            f"prefix length {rows} too short for selection sizes "
            f"({d.s_x}, {d.s_y}); need at least {d.s_x + d.s_y + 2}"
        )
    k = list(d.k_set)
    j = list(d.j_set)
    xs = data.x[:rows][:, k]
    ys = data.y[:rows][:, j]
    mean_x = xs.mean(axis=0)
    mean_y = ys.mean(axis=0)
    xc = xs - mean_x
    yc = ys - mean_y
    sxx = (xc.T @ xc) / rows
    syy = (yc.T @ yc) / rows
    sxy = (xc.T @ yc) / rows
    x_label = "covariance of X" + str([data.x_names[i] for i in k])
    y_label = "covariance of Y" + str([data.y_names[i] for i in j])
    return _assemble_block(d, rows, mean_x, mean_y, sxx, syy, sxy, x_label, y_label, tol)


def coherence_block_from_moments(
    m: Moments, d: IndexPair, tol: Tolerances | None = None
) -> CoherenceBlock:
    """Build a coherence block from precomputed joint moments."""
    tol = tol or Tolerances()
    d.validate_against(m.p, m.q)
    if m.rows is not None and m.rows < d.s_x + d.s_y + 2:
        raise ValidationError(
            f"prefix length {m.rows} too short for selection sizes "
            f"({d.s_x}, {d.s_y}); need at least {d.s_x + d.s_y + 2}"
        )
    k = list(d.k_set)
    j = list(d.j_set)
    return _assemble_block(
        d,
        m.rows,
        m.mean_x[k],
        m.mean_y[j],
        m.xx(k),
        m.yy(j),
        m.xy(k, j),
        f"covariance of X columns {tuple(i + 1 for i in k)}",
        f"covariance of Y columns {tuple(i + 1 for i in j)}",
        tol,
    )


def _assemble_block(d, rows, mean_x, mean_y, sxx, syy, sxy, x_label, y_label, tol):
    inv_sqrt_x, _ = sym_inv_sqrt(sxx, tol.spd_condition_cap, x_label, tol.ridge)
    inv_sqrt_y, _ = sym_inv_sqrt(syy, tol.spd_condition_cap, y_label, tol.ridge)
    coherence = inv_sqrt_x @ sxy @ inv_sqrt_y
    return CoherenceBlock(
        d=d,
        rows=rows,
        mean_x=np.asarray(mean_x, dtype=np.float64),
        mean_y=np.asarray(mean_y, dtype=np.float64),
        sigma_xk=sxx,
        sigma_yj=syy,
        sigma_xy=sxy,
        inv_sqrt_x=inv_sqrt_x,
        inv_sqrt_y=inv_sqrt_y,
        coherence=coherence,
    )


def pillai_trace(block: CoherenceBlock) -> float:
    """Squared Frobenius norm of the coherence matrix (compensated sum)."""
    c = block.coherence
    return math.fsum((c * c).ravel().tolist())


def root_pillai(
    block: CoherenceBlock, tol: Tolerances | None = None
) -> tuple[float, bool]:
    """Root-Pillai value with a degeneracy flag for numerically zero traces."""
    tol = tol or Tolerances()
    value = math.sqrt(pillai_trace(block))
    if value <= tol.tau_floor:
        return 0.0, True
    return value, False


def pillai_value(
    m: Moments, k_set, j_set, tol: Tolerances | None = None
) -> float:
    """Pillai trace of a selection straight from joint moments.

    Cholesky-based fast path used by search loops; equals
    ``pillai_trace(coherence_block(...))`` up to floating-point roundoff.
    """
    tol = tol or Tolerances()
    k = list(k_set)
    j = list(j_set)
    lx = chol_spd(
        m.xx(k), tol.spd_condition_cap,
        f"covariance of X columns {tuple(i + 1 for i in k)}", tol.ridge,
    )
    ly = chol_spd(
        m.yy(j), tol.spd_condition_cap,
        f"covariance of Y columns {tuple(i + 1 for i in j)}", tol.ridge,
    )
    syx = m.xy(k, j).T
    g = solve_triangular(ly, syx, lower=True)
    h = solve_triangular(lx, g.T, lower=True)
    return float(np.sum(h * h))
