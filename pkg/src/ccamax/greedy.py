"""Maximization of the (root-)Pillai trace over paired index subsets.

Two routes to the maximizer: exhaustive enumeration for small problems and a
forward greedy search for large ones. The greedy search exploits an exact
decomposition of the Pillai trace: adding a column to either side increases
the trace by the standardized cross-covariance energy between that column's
regression residual (on the already-selected columns of its side) and the
other side's selection. Increments are therefore exact, never bounds.

All increment algebra runs on second moments: residual variances and
residual cross-covariances are Schur complements, evaluated through cached
Cholesky factors that grow by one row per accepted column.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .data import PairedDataset
from .errors import (
    IllConditionedError,
    InternalConsistencyError,
    SearchSpaceError,
    ValidationError,
)
from .moments import IndexPair, Moments, Tolerances, chol_spd, pillai_value

_NEG_SLACK = 1e-12


class StepRecord(NamedTuple):
    """One accepted greedy step: which column joined which side, and the gain."""

    step: int
    side: str
    index: int
    increment: float


class _KahanSum:
    """Compensated accumulator for the running trace."""

    __slots__ = ("_s", "_c")

    def __init__(self):
        self._s = 0.0
        self._c = 0.0

    def add(self, v: float) -> None:
        t = v - self._c
        s = self._s + t
        self._c = (s - self._s) - t
        self._s = s

    @property
    def value(self) -> float:
        return self._s


class CholeskyExtender:
    """Lower Cholesky factor of a covariance block, grown one column at a time."""

    def __init__(self, cap: float):
        self._l = np.zeros((0, 0))
        self._cap = cap

    @property
    def size(self) -> int:
        return self._l.shape[0]

    def extend(self, cov_vec: np.ndarray, diag: float, label: str) -> None:
        if self.size == 0:
            if diag <= 0.0:
                raise IllConditionedError(f"{label}: zero-variance column")
            self._l = np.array([[math.sqrt(diag)]])
            return
        w = solve_triangular(self._l, cov_vec, lower=True)
        d2 = float(diag - w @ w)
        if d2 <= diag / self._cap or d2 <= 0.0:
            raise IllConditionedError(
                f"{label}: residual variance vanished (collinear extension)"
            )
        n = self.size
        grown = np.zeros((n + 1, n + 1))
        grown[:n, :n] = self._l
        grown[n, :n] = w
        grown[n, n] = math.sqrt(d2)
        self._l = grown

    def solve_spd(self, b: np.ndarray) -> np.ndarray:
        """Solve S z = b for the factored block."""
        y = solve_triangular(self._l, b, lower=True)
        return solve_triangular(self._l.T, y, lower=False)


class GreedyState:
    """A partially built selection with exact incremental trace tracking.

    Holds the selected index lists, the accumulated squared-Frobenius trace,
    a step log, and the grown Cholesky factors of the two selected-side
    covariance blocks that every candidate scan reuses.
    """

    def __init__(self, moments: Moments, tol: Tolerances | None = None):
        self.moments = moments
        self.tol = tol or Tolerances()
        self.k_set: list[int] = []
        self.j_set: list[int] = []
        self.step_log: list[StepRecord] = []
        self._chol_x = CholeskyExtender(self.tol.spd_condition_cap)
        self._chol_y = CholeskyExtender(self.tol.spd_condition_cap)
        self._trace = _KahanSum()

    @classmethod
    def from_sets(cls, moments: Moments, k_set=(), j_set=(), tol=None) -> "GreedyState":
        state = cls(moments, tol)
        for k in k_set:
            state.add_x(int(k))
        for j in j_set:
            state.add_y(int(j))
        return state

    @property
    def trace_sq(self) -> float:
        return self._trace.value

    def _step_label(self, side: str, idx: int) -> str:
        return f"greedy step {len(self.step_log) + 1} (adding {side} column {idx + 1})"

    def _check_candidate(self, side: str, idx: int) -> None:
        dim = self.moments.q if side == "Y" else self.moments.p
        selected = self.j_set if side == "Y" else self.k_set
        if not 0 <= idx < dim:
            raise ValidationError(f"{side} candidate {idx} out of range")
        if idx in selected:
            raise ValidationError(f"{side} column {idx} already selected")

    def increment(self, side: str, idx: int) -> float:
        """Exact Pillai-trace increment of adding one candidate column."""
        self._check_candidate(side, idx)
        inc, _ = self._increment_one(side, idx)
        return inc

    def _increment_one(self, side: str, idx: int) -> tuple[float, bool]:
        m = self.moments
        if side == "Y":
            own, own_chol = self.j_set, self._chol_y
            other, other_chol = self.k_set, self._chol_x
            diag = float(m.syy[idx, idx])
            own_cov = m.syy[own, idx] if own else None
            cross = m.sxy[other, idx] if other else None
            own_cross = m.xy(other, own) if (own and other) else None
        else:
            own, own_chol = self.k_set, self._chol_x
            other, other_chol = self.j_set, self._chol_y
            diag = float(m.sxx[idx, idx])
            own_cov = m.sxx[own, idx] if own else None
            cross = m.sxy[idx, other] if other else None
            own_cross = m.xy(own, other).T if (own and other) else None
        if own:
            w = own_chol.solve_spd(own_cov)
            resid_var = diag - float(own_cov @ w)
            if cross is not None:
                cross = cross - own_cross @ w
        else:
            resid_var = diag
        ok = resid_var > diag / self.tol.spd_condition_cap
        if cross is None or not ok:
            return 0.0, ok
        u = other_chol.solve_spd(cross)
        inc = float(cross @ u) / resid_var
        return self._clamp(np.array([inc]))[0], ok

    def _clamp(self, inc: np.ndarray) -> np.ndarray:
        low = float(inc.min()) if inc.size else 0.0
        if low < -_NEG_SLACK:
            raise InternalConsistencyError(
                f"negative trace increment {low:.3e} below slack -1e-12"
            )
        return np.maximum(inc, 0.0)

    def scan_y(self) -> tuple[np.ndarray, np.ndarray]:
        """Increments for every Y candidate; mask of extendable candidates."""
        return self._scan("Y")

    def scan_x(self) -> tuple[np.ndarray, np.ndarray]:
        return self._scan("X")

    def _scan(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.moments
        if side == "Y":
            own, own_chol = self.j_set, self._chol_y
            other, other_chol = self.k_set, self._chol_x
            own_block = m.syy
            cross_all = m.sxy[other, :] if other else None
            own_to_other = m.xy(other, own) if (own and other) else None
        else:
            own, own_chol = self.k_set, self._chol_x
            other, other_chol = self.j_set, self._chol_y
            own_block = m.sxx
            cross_all = m.sxy[:, other].T if other else None
            own_to_other = m.xy(own, other).T if (own and other) else None
        diag = np.diag(own_block).copy()
        if own:
            b = own_block[own, :]
            w = own_chol.solve_spd(b)
            resid_var = diag - np.einsum("ij,ij->j", b, w)
            if cross_all is not None:
                cross_all = cross_all - own_to_other @ w
        else:
            resid_var = diag
        ok = resid_var > diag / self.tol.spd_condition_cap
        ok[own] = False
        inc = np.zeros(diag.shape[0])
        if cross_all is not None and ok.any():
            u = other_chol.solve_spd(cross_all)
            numer = np.einsum("ij,ij->j", cross_all, u)
            inc[ok] = self._clamp(numer[ok] / resid_var[ok])
        return inc, ok

    def add_y(self, idx: int, increment: float | None = None) -> float:
        return self._add("Y", idx, increment)

    def add_x(self, idx: int, increment: float | None = None) -> float:
        return self._add("X", idx, increment)

    def _add(self, side: str, idx: int, increment: float | None) -> float:
        self._check_candidate(side, idx)
        if increment is None:
            increment, ok = self._increment_one(side, idx)
            if not ok:
                raise IllConditionedError(
                    f"{self._step_label(side, idx)}: collinear with selected columns"
                )
        m = self.moments
        label = self._step_label(side, idx)
        if side == "Y":
            self._chol_y.extend(m.syy[self.j_set, idx], float(m.syy[idx, idx]), label)
            self.j_set.append(idx)
        else:
            self._chol_x.extend(m.sxx[self.k_set, idx], float(m.sxx[idx, idx]), label)
            self.k_set.append(idx)
        self._trace.add(increment)
        self.step_log.append(
            StepRecord(len(self.step_log) + 1, side, idx, float(increment))
        )
        return float(increment)


def residual_column(
    data: PairedDataset,
    target: int,
    given,
    side: str,
    rows: int | None = None,
    tol: Tolerances | None = None,
) -> np.ndarray:
    """Least-squares residual of one centered column on a centered given set.

    An empty given set returns the centered target itself.
    """
    tol = tol or Tolerances()
    side = side.upper()
    if side not in ("X", "Y"):
        raise ValidationError("side must be 'X' or 'Y'")
    block = data.x if side == "X" else data.y
    rows = data.n if rows is None else int(rows)
    if not 1 <= rows <= data.n:
        raise ValidationError(f"prefix length {rows} outside 1..{data.n}")
    given = [int(g) for g in given]
    target = int(target)
    for idx in [target, *given]:
        if not 0 <= idx < block.shape[1]:
            raise ValidationError(f"{side} column {idx} out of range")
    if target in given:
        raise ValidationError("target column is in the given set")
    tc = block[:rows, target]
    tc = tc - tc.mean()
    if not given:
        return tc
    g = block[:rows][:, given]
    gc = g - g.mean(axis=0)
    gram = (gc.T @ gc) / rows
    ell = chol_spd(
        gram,
        tol.spd_condition_cap,
        f"covariance of {side} columns {tuple(i + 1 for i in given)}",
        tol.ridge,
    )
    rhs = (gc.T @ tc) / rows
    beta = solve_triangular(ell.T, solve_triangular(ell, rhs, lower=True), lower=False)
    return tc - gc @ beta


def increment_y(state: GreedyState, candidate: int) -> float:
    """Trace increment of adding Y column ``candidate`` to the state."""
    return state.increment("Y", int(candidate))


def increment_x(state: GreedyState, candidate: int) -> float:
    """Trace increment of adding X column ``candidate`` to the state."""
    return state.increment("X", int(candidate))


def _validate_sizes(m: Moments, s_x: int, s_y: int) -> None:
    if not 1 <= s_x <= m.p:
        raise ValidationError(f"s_x={s_x} outside 1..{m.p}")
    if not 1 <= s_y <= m.q:
        raise ValidationError(f"s_y={s_y} outside 1..{m.q}")


def _initialize_best_pair(state: GreedyState) -> None:
    # Same operation sequence as the exhaustive path at sizes (1, 1), so the
    # seed value is bit-identical to a size-one full search.
    m = state.moments
    dx = np.diag(m.sxx)
    dy = np.diag(m.syy)
    valid = np.outer(dx > 0.0, dy > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (m.sxy / np.sqrt(dy)[None, :]) / np.sqrt(dx)[:, None]
    c2 = np.where(valid, h * h, -np.inf)
    flat = int(np.argmax(c2))
    k0, j0 = divmod(flat, m.q)
    if not np.isfinite(c2[k0, j0]):
        raise IllConditionedError("no variable pair with positive variances")
    state.add_x(k0, 0.0)
    state.add_y(j0, float(c2[k0, j0]))


def _pick(inc: np.ndarray, ok: np.ndarray) -> tuple[int, float]:
    masked = np.where(ok, inc, -np.inf)
    idx = int(np.argmax(masked))
    return idx, float(masked[idx])


def greedy_select_moments(
    m: Moments, s_x: int, s_y: int, tol: Tolerances | None = None
) -> tuple[IndexPair, float, list[StepRecord]]:
    """Forward greedy maximization of the Pillai trace at fixed subset sizes.

    Seeds with the single best correlated pair, then repeatedly adds the
    column (from whichever unsaturated side) with the larger exact increment.
    Ties go to the lowest column index, and to the X side across sides.
    """
    tol = tol or Tolerances()
    _validate_sizes(m, s_x, s_y)
    if m.rows is not None and m.rows < s_x + s_y + 2:
        raise ValidationError(
            f"prefix length {m.rows} too short for sizes ({s_x}, {s_y})"
        )
    state = GreedyState(m, tol)
    _initialize_best_pair(state)
    while len(state.k_set) < s_x or len(state.j_set) < s_y:
        want_x = len(state.k_set) < s_x
        want_y = len(state.j_set) < s_y
        best_x = best_y = (-1, -np.inf)
        if want_x:
            best_x = _pick(*state.scan_x())
        if want_y:
            best_y = _pick(*state.scan_y())
        if best_x[1] == -np.inf and best_y[1] == -np.inf:
            raise IllConditionedError(
                f"no extendable candidate at greedy step {len(state.step_log) + 1}"
            )
        if best_y[1] > best_x[1]:
            state.add_y(best_y[0], best_y[1])
        else:
            state.add_x(best_x[0], best_x[1])
    d = IndexPair(tuple(state.k_set), tuple(state.j_set))
    return d, state.trace_sq, list(state.step_log)


def greedy_select(
    data: PairedDataset,
    s_x: int,
    s_y: int,
    rows: int | None = None,
    tol: Tolerances | None = None,
) -> tuple[IndexPair, float, list[StepRecord]]:
    """Greedy search on the empirical moments of a row prefix."""
    return greedy_select_moments(Moments.from_prefix(data, rows), s_x, s_y, tol)


def full_search_moments(
    m: Moments,
    s_x: int,
    s_y: int,
    tol: Tolerances | None = None,
    cap: int = 1_000_000,
    include_smaller: bool = False,
) -> tuple[IndexPair, float]:
    """Exhaustive maximization of the Pillai trace by subset enumeration.

    ``include_smaller`` also enumerates all strictly smaller subset sizes,
    which is useful for certifying that they never beat the full sizes.
    """
    tol = tol or Tolerances()
    _validate_sizes(m, s_x, s_y)
    sizes_x = range(1, s_x + 1) if include_smaller else range(s_x, s_x + 1)
    sizes_y = range(1, s_y + 1) if include_smaller else range(s_y, s_y + 1)
    total = sum(math.comb(m.p, a) for a in sizes_x) * sum(
        math.comb(m.q, b) for b in sizes_y
    )
    if total > cap:
        raise SearchSpaceError(
            f"full search over {total} combinations exceeds cap {cap}"
        )
    y_factors = []
    for b in sizes_y:
        for j_tuple in combinations(range(m.q), b):
            ly = chol_spd(
                m.yy(j_tuple),
                tol.spd_condition_cap,
                f"covariance of Y columns {tuple(i + 1 for i in j_tuple)}",
                tol.ridge,
            )
            y_factors.append((j_tuple, ly))
    best_val = -np.inf
    best_pair = None
    for a in sizes_x:
        for k_tuple in combinations(range(m.p), a):
            lx = chol_spd(
                m.xx(k_tuple),
                tol.spd_condition_cap,
                f"covariance of X columns {tuple(i + 1 for i in k_tuple)}",
                tol.ridge,
            )
            sxy_k = m.sxy[list(k_tuple), :]
            for j_tuple, ly in y_factors:
                syx = sxy_k[:, list(j_tuple)].T
                g = solve_triangular(ly, syx, lower=True)
                h = solve_triangular(lx, g.T, lower=True)
                val = float(np.sum(h * h))
                if val > best_val or (
                    val == best_val and (k_tuple, j_tuple) < best_pair
                ):
                    best_val = val
                    best_pair = (k_tuple, j_tuple)
    return IndexPair(best_pair[0], best_pair[1]), best_val


def full_search(
    data: PairedDataset,
    s_x: int,
    s_y: int,
    rows: int | None = None,
    tol: Tolerances | None = None,
    cap: int = 1_000_000,
    include_smaller: bool = False,
) -> tuple[IndexPair, float]:
    """Exhaustive search on the empirical moments of a row prefix."""
    return full_search_moments(
        Moments.from_prefix(data, rows), s_x, s_y, tol, cap, include_smaller
    )


def scree_increments(
    data: PairedDataset,
    max_total: int,
    rows: int | None = None,
    tol: Tolerances | None = None,
) -> list[StepRecord]:
    """Unconstrained greedy run logging one trace increment per added column.

    The seeding pair occupies the first two records: the X column enters with
    increment 0 (a one-sided selection has no coherence), the Y column with
    the pair's full squared correlation. Summing all increments therefore
    reproduces the final trace. Output feeds scree plots for choosing sizes.
    """
    if max_total < 1:
        raise ValidationError("max_total must be at least 1")
    m = Moments.from_prefix(data, rows)
    state = GreedyState(m, tol)
    _initialize_best_pair(state)
    while len(state.step_log) < min(max_total, m.p + m.q):
        best_x = _pick(*state.scan_x())
        best_y = _pick(*state.scan_y())
        if best_x[1] == -np.inf and best_y[1] == -np.inf:
            break
        if best_y[1] > best_x[1]:
            state.add_y(best_y[0], best_y[1])
        else:
            state.add_x(best_x[0], best_x[1])
    return state.step_log[:max_total]


def submodularity_probe(
    data: PairedDataset,
    size1: int,
    size2: int,
    n_probes: int,
    seed: int,
    rows: int | None = None,
    tol: Tolerances | None = None,
    set_function: Callable[[tuple, tuple], float] | None = None,
) -> np.ndarray:
    """Diminishing-returns diagnostic for the root-Pillai set function.

    Samples a random selection of ``size2`` (column-pair elements), takes its
    first ``size1`` elements as the nested smaller selection, and returns
    ``gain(e | small) - gain(e | large)`` for random unselected elements
    ``e``; a submodular function would make every difference nonnegative.
    ``set_function`` replaces the default root-Pillai objective (test hook).
    """
    tol = tol or Tolerances()
    if not 1 <= size1 < size2:
        raise ValidationError("need 1 <= size1 < size2")
    if size2 >= min(data.p, data.q):
        raise ValidationError("size2 must leave room for probe elements")
    if n_probes < 1:
        raise ValidationError("n_probes must be at least 1")
    rng = np.random.default_rng(seed)
    k2 = [int(i) for i in rng.permutation(data.p)[:size2]]
    j2 = [int(i) for i in rng.permutation(data.q)[:size2]]
    if set_function is None:
        m = Moments.from_prefix(data, rows)

        def set_function(k_tuple, j_tuple):
            return math.sqrt(pillai_value(m, sorted(k_tuple), sorted(j_tuple), tol))

    k1, j1 = tuple(k2[:size1]), tuple(j2[:size1])
    k2t, j2t = tuple(k2), tuple(j2)
    base1 = set_function(k1, j1)
    base2 = set_function(k2t, j2t)
    rem_k = sorted(set(range(data.p)) - set(k2))
    rem_j = sorted(set(range(data.q)) - set(j2))
    n_pairs = len(rem_k) * len(rem_j)
    if n_probes > n_pairs:
        raise ValidationError(
            f"n_probes={n_probes} exceeds available elements {n_pairs}"
        )
    picks = rng.choice(n_pairs, size=n_probes, replace=False)
    diffs = np.empty(n_probes)
    for i, pid in enumerate(picks):
        a, b = divmod(int(pid), len(rem_j))
        k, j = rem_k[a], rem_j[b]
        gain1 = set_function(k1 + (k,), j1 + (j,)) - base1
        gain2 = set_function(k2t + (k,), j2t + (j,)) - base2
        diffs[i] = gain1 - gain2
    return diffs
