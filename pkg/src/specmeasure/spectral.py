"""Operator assembly, Perron iteration, and regime classification.

Two matrices matter.  The full operator

    (A u)_i = sum_j K(x_i, x_j) w_j u_j + a(x_i) u_i

whose largest eigenvalue mu gives the principal eigenvalue as -mu, and the
normalized operator

    (Kt u)_i = sum_j K(x_i, x_j) w_j u_j / (a0 - a(x_j)),    a0 = sup a,

whose spectral radius decides among three regimes: above one, the principal
eigenfunction is a continuous function; at one, an L^1 density; below one,
only a measure with an atom on the argmax set of a solves the problem.

Power iteration tracks the ratio interval [min_i (Av)_i / v_i,
max_i (Av)_i / v_i], which brackets the spectral radius of a nonnegative
irreducible matrix at every iterate.  When eigenvalue clustering stalls the
residual, the interval still narrows enough to certify the value, so the
iteration stops on whichever of the two criteria is reached first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ClassificationUnstableError,
    ConfigurationError,
    InconsistencyError,
    IterationLimitError,
    SingularNodeError,
)
from .geometry import GradeSpec, Grid, build_grid
from .model import Problem, detect_argmax_set

log = logging.getLogger(__name__)

__all__ = [
    "OperatorMatrix",
    "PerronPair",
    "LambdaPEstimate",
    "RegimeReport",
    "assemble_full",
    "assemble_ktilde",
    "perron",
    "collatz_wielandt_bounds",
    "estimate_lambda_p",
    "classify_regime",
]

_BLOCK = 512


@dataclass(frozen=True)
class OperatorMatrix:
    entries: np.ndarray
    kind: str                    # "full" | "ktilde"
    grid: Grid
    shift: float = 0.0           # added to the diagonal of the full operator
    x0: tuple[float, ...] | None = None
    a0: float | None = None

    def __post_init__(self):
        self.entries.setflags(write=False)


@dataclass(frozen=True)
class PerronPair:
    value: float
    vector: np.ndarray           # max-normalized, strictly positive
    iterations: int
    residual: float
    interval: tuple[float, float]
    stopped_by: str              # "residual" | "interval"
    bounds_history: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class LambdaPEstimate:
    value: float
    interval: tuple[float, float]
    iterations: int
    grid_size: int
    level_values: tuple[float, ...]


@dataclass(frozen=True)
class RegimeReport:
    regime: str                  # "continuous" | "l1" | "singular"
    lambda1: float
    lambda1_interval: tuple[float, float]
    lambda_p: float
    sup_a: float
    x0: tuple[float, ...]
    a0: float
    eigen_density: np.ndarray | None
    density_norm: str | None     # "max" | "mass"
    confirmed: bool
    coarse_lambda1: float | None = None
    coarse_size: int | None = None


def _kernel_rows(problem: Problem, rows: np.ndarray) -> np.ndarray:
    return np.asarray(
        problem.kernel.evaluate(rows, problem.grid.nodes), dtype=float
    )


def assemble_full(problem: Problem, shift: float | None = None) -> OperatorMatrix:
    """Dense matrix of the dispersal operator plus the coefficient.

    The diagonal shift (default: the sup norm of a on the grid) makes every
    entry nonnegative so Perron iteration applies; it is recorded and undone
    when eigenvalues are reported.
    """
    grid = problem.grid
    a = problem.a_at_nodes
    if shift is None:
        shift = float(np.max(np.abs(a)))
    if np.min(a + shift) < 0:
        raise ConfigurationError(
            f"shift {shift} leaves negative diagonal entries"
        )
    n = grid.size
    entries = np.empty((n, n))
    for start in range(0, n, _BLOCK):
        rows = slice(start, min(start + _BLOCK, n))
        entries[rows] = _kernel_rows(problem, grid.nodes[rows]) * grid.weights
    entries[np.diag_indices(n)] += a + shift
    return OperatorMatrix(entries, "full", grid, shift=shift)


def assemble_ktilde(problem: Problem, x0: tuple[float, ...],
                    a0: float | None = None) -> OperatorMatrix:
    """Matrix of the operator normalized by a0 - a(y), a0 = a(x0).

    Every node must keep a positive distance from the argmax set of a; build
    the grid with grading toward that set.
    """
    grid = problem.grid
    x0_arr = np.asarray(x0, dtype=float)[None, :]
    if a0 is None:
        a0 = float(problem.coeff.evaluate(x0_arr)[0])
    a = problem.a_at_nodes
    denom = a0 - a
    if a0 < problem.sup_a_grid - 1e-12 * (1.0 + abs(a0)):
        raise ConfigurationError(
            f"a(x0) = {a0} is below the grid maximum {problem.sup_a_grid}; "
            "x0 does not maximize the coefficient"
        )
    if np.any(denom <= 0):
        bad = int(np.sum(denom <= 0))
        raise SingularNodeError(
            f"{bad} grid nodes touch the argmax set of the coefficient; "
            "grade the grid toward it"
        )
    n = grid.size
    entries = np.empty((n, n))
    col = grid.weights / denom
    for start in range(0, n, _BLOCK):
        rows = slice(start, min(start + _BLOCK, n))
        entries[rows] = _kernel_rows(problem, grid.nodes[rows]) * col
    return OperatorMatrix(entries, "ktilde", grid,
                          x0=tuple(float(v) for v in x0), a0=a0)


def collatz_wielandt_bounds(entries: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Ratio bounds on the spectral radius from one positive test vector."""
    w = entries @ v
    pos = v > 0
    if not np.any(pos):
        raise ConfigurationError("test vector must be nonnegative and nonzero")
    lo = float(np.min(w[pos] / v[pos]))
    hi = float(np.max(w[pos] / v[pos])) if bool(np.all(pos)) else np.inf
    return lo, hi


def _power(entries: np.ndarray, v0: np.ndarray, tol_resid: float,
           max_iter: int, value_tol: float | None = None,
           keep_history: bool = False) -> PerronPair:
    v = v0 / float(np.max(v0))
    history: list[tuple[float, float]] = []
    res = np.inf
    for it in range(1, max_iter + 1):
        w = entries @ v
        lam = float(np.max(w))
        if lam <= 0:
            raise ConfigurationError("iteration collapsed; matrix has no positive cycle")
        pos = v > 0
        ratios = w[pos] / v[pos]
        lo = float(np.min(ratios))
        hi = float(np.max(ratios)) if bool(np.all(pos)) else np.inf
        if keep_history:
            history.append((lo, hi))
        res = float(np.max(np.abs(w - lam * v))) / lam
        v = w / lam
        if res <= tol_resid:
            return PerronPair(lam, v, it, res, (lo, hi), "residual",
                              tuple(history) if keep_history else None)
        if value_tol is not None and hi - lo <= value_tol:
            return PerronPair(0.5 * (lo + hi), v, it, res, (lo, hi), "interval",
                              tuple(history) if keep_history else None)
    raise IterationLimitError(
        f"no convergence in {max_iter} iterations (residual {res:.3e})",
        residual=res,
    )


def perron(matrix: OperatorMatrix | np.ndarray, tol_power: float = 1e-10,
           max_iter: int = 100_000, value_tol: float | None = None,
           v0: np.ndarray | None = None, keep_history: bool = False) -> PerronPair:
    """Perron root and vector of a nonnegative matrix by power iteration.

    Stops when the eigen-residual reaches ``tol_power``, or, if ``value_tol``
    is given, as soon as the ratio interval is that narrow; the returned
    value is then the interval midpoint.
    """
    entries = matrix.entries if isinstance(matrix, OperatorMatrix) else np.asarray(matrix, dtype=float)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ConfigurationError("matrix must be square")
    if np.any(entries < 0):
        raise ConfigurationError("Perron iteration needs a nonnegative matrix")
    n = entries.shape[0]
    if v0 is None:
        v0 = np.ones(n)
    else:
        v0 = np.asarray(v0, dtype=float)
        if v0.shape != (n,) or np.any(v0 < 0) or not np.any(v0 > 0):
            raise ConfigurationError("start vector must be nonnegative and nonzero")
    return _power(entries, v0, tol_power, int(max_iter), value_tol, keep_history)


def _derive_problem(problem: Problem, resolution: int, depth: int) -> Problem:
    spec = None
    g = problem.grid
    if g.graded_toward is not None:
        spec = GradeSpec(targets=g.graded_toward, ratio=g.grade_ratio,
                         depth=max(1, depth))
    grid = build_grid(problem.domain, max(2, resolution), spec)
    return Problem(problem.domain, problem.kernel, problem.coeff, grid)


def _transfer(values: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    _, idx = cKDTree(src.nodes).query(dst.nodes)
    return values[idx]


def estimate_lambda_p(problem: Problem, levels: int = 3,
                      tol_power: float = 1e-10, max_iter: int = 100_000,
                      value_tol: float | None = 1e-4) -> LambdaPEstimate:
    """Estimate the generalized principal eigenvalue on the problem's grid.

    Runs a short coarse-to-fine chain of grids, transferring the Perron
    vector forward as a warm start.  The estimate is minus the largest
    eigenvalue of the full operator; the interval is certified by the ratio
    bounds at the final iterate.
    """
    if levels < 1:
        raise ConfigurationError(f"levels must be >= 1, got {levels}")
    g = problem.grid
    chain: list[Problem] = []
    seen = set()
    for j in range(levels - 1, 0, -1):
        res = max(2, g.resolution - 2 * j)
        dep = max(1, g.grade_depth - j)
        if (res, dep) not in seen and (res, dep) != (g.resolution, g.grade_depth):
            seen.add((res, dep))
            chain.append(_derive_problem(problem, res, dep))
    chain.append(problem)

    v = None
    total_iters = 0
    per_level = []
    pair = None
    for k, prob in enumerate(chain):
        matrix = assemble_full(prob)
        v0 = None if v is None else _transfer(v, chain[k - 1].grid, prob.grid)
        pair = perron(matrix, tol_power=tol_power, max_iter=max_iter,
                      value_tol=value_tol, v0=v0)
        total_iters += pair.iterations
        per_level.append(matrix.shift - pair.value)
        v = pair.vector
    lo, hi = pair.interval
    shift = matrix.shift
    return LambdaPEstimate(
        value=shift - pair.value,
        interval=(shift - hi, shift - lo),
        iterations=total_iters,
        grid_size=problem.grid.size,
        level_values=tuple(per_level),
    )


def _pick_x0(problem: Problem, tol_maxset: float) -> tuple[tuple[float, ...], float]:
    amax = detect_argmax_set(problem.coeff, problem.grid, tol_maxset)
    comp = amax.components[0]
    if comp.kind == "segment":
        seg = comp.representative
        mid = tuple(0.5 * (s + e) for s, e in zip(seg.start, seg.end))
        return mid, amax.sup_value
    return tuple(comp.representative), amax.sup_value


def _classify_once(problem: Problem, x0: tuple[float, ...] | None,
                   tol_classify: float, tol_power: float, max_iter: int,
                   tol_maxset: float) -> tuple[str, PerronPair, tuple[float, ...], float]:
    if x0 is None:
        x0, a0 = _pick_x0(problem, tol_maxset)
    else:
        a0 = float(problem.coeff.evaluate(np.asarray(x0, dtype=float)[None, :])[0])
    kt = assemble_ktilde(problem, x0, a0=a0)
    pair = perron(kt, tol_power=tol_power, max_iter=max_iter,
                  value_tol=tol_classify / 10.0)
    lam1 = pair.value
    if lam1 > 1.0 + tol_classify:
        regime = "continuous"
    elif lam1 >= 1.0 - tol_classify:
        regime = "l1"
    else:
        regime = "singular"
    return regime, pair, x0, a0


def classify_regime(problem: Problem, x0: tuple[float, ...] | None = None,
                    tol_classify: float = 1e-3, tol_power: float = 1e-10,
                    max_iter: int = 100_000, tol_maxset: float = 1e-8,
                    confirm: bool = True) -> RegimeReport:
    """Decide which kind of principal eigenfunction the problem admits.

    The spectral radius of the normalized operator is compared against one
    at tolerance ``tol_classify``.  With ``confirm`` the label must agree
    with a one-step-coarser grid, otherwise the classification is reported
    unstable rather than silently trusted.
    """
    regime, pair, x0, a0 = _classify_once(problem, x0, tol_classify,
                                          tol_power, max_iter, tol_maxset)
    coarse_lam1 = None
    coarse_size = None
    if confirm:
        g = problem.grid
        coarse = _derive_problem(problem, g.resolution - 1,
                                 max(1, g.grade_depth - 1))
        regime_c, pair_c, _, _ = _classify_once(coarse, x0, tol_classify,
                                                tol_power, max_iter, tol_maxset)
        coarse_lam1 = pair_c.value
        coarse_size = coarse.grid.size
        if regime_c != regime:
            raise ClassificationUnstableError(
                f"regime flips between grids: {regime_c} at resolution "
                f"{coarse.grid.resolution} vs {regime} at {g.resolution} "
                f"(lambda1 {coarse_lam1:.6f} vs {pair.value:.6f})"
            )

    # cross-check against the full operator; at the threshold the principal
    # eigenvalue is -a0 itself and the full spectrum clusters there, so the
    # estimate is neither needed nor certifiable
    if regime == "l1":
        lambda_p = -a0
    else:
        est = estimate_lambda_p(problem, levels=1, tol_power=tol_power,
                                max_iter=max_iter, value_tol=tol_classify)
        lambda_p = est.value
        slack = 10.0 * tol_classify * max(1.0, abs(a0))
        mu = -est.value
        if regime == "continuous" and mu < a0 - slack:
            raise InconsistencyError(
                f"normalized radius {pair.value:.6f} exceeds one but the "
                f"principal eigenvalue estimate {est.value:.6f} sits above {-a0:.6f}"
            )
        if regime == "singular" and mu > a0 + slack:
            raise InconsistencyError(
                f"normalized radius {pair.value:.6f} is below one but the "
                f"principal eigenvalue estimate {est.value:.6f} sits below {-a0:.6f}"
            )

    density = None
    norm = None
    if regime == "continuous":
        full = assemble_full(problem)
        fpair = perron(full, tol_power=tol_power, max_iter=max_iter)
        density = fpair.vector
        norm = "max"
    elif regime == "l1":
        psi = pair.vector / (a0 - problem.a_at_nodes)
        mass = float(np.sum(problem.grid.weights * psi))
        density = psi / mass
        norm = "mass"

    return RegimeReport(
        regime=regime,
        lambda1=pair.value,
        lambda1_interval=pair.interval,
        lambda_p=lambda_p,
        sup_a=a0,
        x0=tuple(float(v) for v in x0),
        a0=a0,
        eigen_density=density,
        density_norm=norm,
        confirmed=confirm,
        coarse_lambda1=coarse_lam1,
        coarse_size=coarse_size,
    )
