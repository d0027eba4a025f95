"""Measure-valued eigensolutions in the singular regime.

When the normalized operator's radius sits below one, the eigenproblem at
lambda = -sup a is solved by a measure with a singular part mu0 on the argmax
set of a plus an absolutely continuous density f.  Writing g = (a0 - a) f,
the density solves the linear system

    (I - Kt) g = rhs,      rhs(x) = integral K(x, y) dmu0(y),

which this module assembles and solves directly.  Solutions carry a Nystrom
extension so their densities can be evaluated off the construction grid; on
the construction nodes the extension reproduces the solved values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (
    ConfigurationError,
    NearSingularSystemError,
    NormalizationError,
    PositivityViolationError,
    UnsupportedMeasureError,
)
from .geometry import Grid, Segment, contains
from .model import Problem
from .spectral import assemble_ktilde, perron

__all__ = [
    "DiscreteMeasure",
    "FredholmSolution",
    "NystromDensity",
    "CombinedDensity",
    "solve_fredholm",
    "build_atom_solution",
    "build_singular_solution",
    "span_combination",
    "cantor_approximant",
    "kernel_moment",
    "normalize",
]

Atom = tuple[tuple[float, ...], float]


@dataclass(frozen=True)
class NystromDensity:
    """Natural extension of a solved density beyond its grid.

    g extends through the same identity the grid values satisfy, and the
    density is g / (a0 - a); at construction nodes both reproduce the solved
    values to roundoff.
    """

    problem: Problem
    a0: float
    g_values: np.ndarray
    rhs: Callable[[np.ndarray], np.ndarray]

    def g_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        grid = self.problem.grid
        col = grid.weights * self.g_values / (self.a0 - self.problem.a_at_nodes)
        block = np.asarray(self.problem.kernel.evaluate(pts, grid.nodes), dtype=float)
        return np.asarray(self.rhs(pts), dtype=float) + block @ col

    def density_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        denom = self.a0 - np.asarray(self.problem.coeff.evaluate(pts), dtype=float)
        if np.any(denom <= 0):
            raise ConfigurationError(
                "density evaluation point touches the argmax set of the coefficient"
            )
        return self.g_at(pts) / denom


@dataclass(frozen=True)
class CombinedDensity:
    parts: tuple[tuple[float, "NystromDensity | CombinedDensity"], ...]

    def density_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for c, model in self.parts:
            out += c * model.density_at(pts)
        return out


@dataclass(frozen=True)
class DiscreteMeasure:
    """Atoms plus an optional density sampled on a grid.

    ``density_model`` supports off-grid evaluation and is carried alongside
    the samples; file serialization keeps only atoms and sampled values.
    """

    atoms: tuple[Atom, ...] = ()
    grid: Grid | None = None
    density_values: np.ndarray | None = None
    signed: bool = False
    density_model: "NystromDensity | CombinedDensity | None" = field(
        default=None, compare=False
    )

    def __post_init__(self):
        if (self.grid is None) != (self.density_values is None):
            raise ConfigurationError(
                "density values and their grid must be given together"
            )
        if self.density_values is not None:
            vals = np.asarray(self.density_values, dtype=float)
            if vals.shape != (self.grid.size,):
                raise ConfigurationError(
                    "density values must match the grid size"
                )
            vals.setflags(write=False)
            object.__setattr__(self, "density_values", vals)
        if not self.atoms and self.density_values is None:
            raise ConfigurationError("measure must carry atoms or a density")

    def atom_mass(self) -> float:
        return float(sum(w for _, w in self.atoms))

    def density_mass(self) -> float:
        if self.density_values is None:
            return 0.0
        return float(np.sum(self.grid.weights * self.density_values))

    def total_mass(self) -> float:
        return self.atom_mass() + self.density_mass()

    def total_variation(self) -> float:
        tv = float(sum(abs(w) for _, w in self.atoms))
        if self.density_values is not None:
            tv += float(np.sum(self.grid.weights * np.abs(self.density_values)))
        return tv

    def atom_fraction(self) -> float:
        tv = self.total_variation()
        if tv == 0:
            raise NormalizationError("measure has zero total variation")
        return float(sum(abs(w) for _, w in self.atoms)) / tv


@dataclass(frozen=True)
class FredholmSolution:
    g_values: np.ndarray
    rhs_values: np.ndarray
    lambda1: float
    solver_residual: float


def _atom_rhs(problem: Problem, atoms: tuple[Atom, ...]) -> Callable[[np.ndarray], np.ndarray]:
    pts0 = np.asarray([p for p, _ in atoms], dtype=float)
    wts0 = np.asarray([w for _, w in atoms], dtype=float)

    def rhs(points: np.ndarray) -> np.ndarray:
        block = np.asarray(problem.kernel.evaluate(
            np.atleast_2d(points), pts0), dtype=float)
        return block @ wts0

    return rhs


def _solve_linear(problem: Problem, a0: float, rhs_values: np.ndarray,
                  tol_linear: float, tol_guard: float) -> FredholmSolution:
    kt = assemble_ktilde(problem, _any_argmax_point(problem, a0), a0=a0)
    lam1 = perron(kt, value_tol=min(tol_guard / 10.0, 1e-6)).value
    if lam1 > 1.0 + tol_guard:
        raise ConfigurationError(
            f"normalized operator radius {lam1:.6f} exceeds one; the problem "
            "is in the continuous regime and has no singular solution"
        )
    if abs(lam1 - 1.0) <= tol_guard:
        raise NearSingularSystemError(
            f"normalized operator radius {lam1:.6f} is within {tol_guard} of "
            "one; the resolvent is too close to singular"
        )
    system = np.eye(kt.grid.size) - kt.entries
    lu, piv = lu_factor(system)
    g = lu_solve((lu, piv), rhs_values)
    # one step of iterative refinement
    g = g + lu_solve((lu, piv), rhs_values - system @ g)
    scale = float(np.max(np.abs(rhs_values)))
    resid = float(np.max(np.abs(system @ g - rhs_values)))
    if scale > 0 and resid > tol_linear * scale:
        raise NearSingularSystemError(
            f"linear solve residual {resid:.3e} exceeds {tol_linear:.1e} "
            "relative to the data"
        )
    return FredholmSolution(g, rhs_values, lam1, resid)


def _any_argmax_point(problem: Problem, a0: float) -> tuple[float, ...]:
    # assemble_ktilde only uses a0; the recorded x0 is informational here
    idx = int(np.argmax(problem.a_at_nodes))
    return tuple(float(v) for v in problem.grid.nodes[idx])


def _check_support(problem: Problem, atoms: tuple[Atom, ...],
                   tol_maxset: float) -> float:
    pts = np.asarray([p for p, _ in atoms], dtype=float)
    if pts.shape[1] != problem.grid.nodes.shape[1]:
        raise UnsupportedMeasureError("atom dimension does not match the domain")
    inside = contains(problem.domain, pts, tol=1e-12)
    if not bool(np.all(inside)):
        raise UnsupportedMeasureError("an atom lies outside the closed domain")
    a_atoms = np.asarray(problem.coeff.evaluate(pts), dtype=float)
    a0 = float(np.max(a_atoms))
    rng = a0 - float(np.min(problem.a_at_nodes))
    if np.any(a_atoms < a0 - max(tol_maxset * rng, 1e-13)):
        raise UnsupportedMeasureError(
            "atoms must sit on the argmax set of the coefficient"
        )
    if a0 < problem.sup_a_grid:
        raise UnsupportedMeasureError(
            "atoms sit below the coefficient values attained on the grid"
        )
    return a0


def solve_fredholm(problem: Problem, x0: tuple[float, ...], alpha: float = 1.0,
                   tol_linear: float = 1e-10,
                   tol_guard: float = 1e-3) -> FredholmSolution:
    """Solve (I - Kt) g = alpha K(., x0) for the density factor g."""
    if alpha == 0:
        raise ConfigurationError("alpha must be nonzero")
    a0 = _check_support(problem, ((tuple(x0), alpha),), tol_maxset=1e-8)
    rhs = _atom_rhs(problem, ((tuple(x0), alpha),))(problem.grid.nodes)
    sol = _solve_linear(problem, a0, rhs, tol_linear, tol_guard)
    if alpha > 0 and np.any(sol.g_values <= 0):
        raise PositivityViolationError(
            "solved density factor is not strictly positive"
        )
    return sol


def build_singular_solution(problem: Problem, atoms, *,
                            tol_linear: float = 1e-10,
                            tol_guard: float = 1e-3,
                            tol_maxset: float = 1e-8) -> DiscreteMeasure:
    """Singular eigensolution with the given atoms on the argmax set.

    ``atoms`` is a sequence of (point, weight) pairs, or a pure-atom
    DiscreteMeasure (a Cantor approximant, for instance).
    """
    if isinstance(atoms, DiscreteMeasure):
        if atoms.density_values is not None:
            raise UnsupportedMeasureError(
                "the prescribed singular part must be purely atomic"
            )
        atom_list = atoms.atoms
    else:
        atom_list = tuple((tuple(float(v) for v in p), float(w)) for p, w in atoms)
    if not atom_list:
        raise UnsupportedMeasureError("at least one atom is required")
    a0 = _check_support(problem, atom_list, tol_maxset)
    rhs_fn = _atom_rhs(problem, atom_list)
    rhs_values = rhs_fn(problem.grid.nodes)
    sol = _solve_linear(problem, a0, rhs_values, tol_linear, tol_guard)
    positive = all(w > 0 for _, w in atom_list)
    if positive and np.any(sol.g_values <= 0):
        raise PositivityViolationError(
            "solved density factor is not strictly positive"
        )
    f = sol.g_values / (a0 - problem.a_at_nodes)
    model = NystromDensity(problem, a0, sol.g_values, rhs_fn)
    signed = (not positive) or bool(np.any(f < 0))
    return DiscreteMeasure(atoms=atom_list, grid=problem.grid,
                           density_values=f, signed=signed,
                           density_model=model)


def build_atom_solution(problem: Problem, x0: tuple[float, ...],
                        alpha: float, **kwargs) -> DiscreteMeasure:
    """Single atom of weight alpha at x0 plus the induced density."""
    return build_singular_solution(problem, [(tuple(x0), alpha)], **kwargs)


def cantor_approximant(segment: Segment, level: int) -> DiscreteMeasure:
    """Uniform measure on the level-k Cantor set carried by a segment.

    2^k atoms of weight 2^-k at the midpoints of the surviving middle-third
    intervals, parameterized along the segment.
    """
    if level < 0:
        raise ConfigurationError(f"level must be >= 0, got {level}")
    start = np.asarray(segment.start, dtype=float)
    end = np.asarray(segment.end, dtype=float)
    ts = [(0.0, 1.0)]
    for _ in range(level):
        ts = [piece
              for lo, hi in ts
              for piece in ((lo, lo + (hi - lo) / 3.0), (hi - (hi - lo) / 3.0, hi))]
    weight = 0.5**level
    atoms = tuple(
        (tuple(start + 0.5 * (lo + hi) * (end - start)), weight)
        for lo, hi in ts
    )
    return DiscreteMeasure(atoms=atoms)


def span_combination(measures, coefficients) -> DiscreteMeasure:
    """Linear combination of measures sharing one construction grid."""
    measures = list(measures)
    coefficients = [float(c) for c in coefficients]
    if len(measures) != len(coefficients) or not measures:
        raise ConfigurationError(
            "need equally many measures and coefficients, at least one each"
        )
    grids = [m.grid for m in measures if m.grid is not None]
    for g in grids[1:]:
        if not grids[0].same_nodes(g):
            raise ConfigurationError(
                "span combination requires measures on identical grids"
            )
    merged: dict[tuple[float, ...], float] = {}
    for m, c in zip(measures, coefficients):
        for p, w in m.atoms:
            merged[p] = merged.get(p, 0.0) + c * w
    atoms = tuple((p, w) for p, w in merged.items() if w != 0.0)

    grid = grids[0] if grids else None
    density = None
    model = None
    if grid is not None:
        density = np.zeros(grid.size)
        parts = []
        for m, c in zip(measures, coefficients):
            if m.density_values is not None:
                density = density + c * m.density_values
                if m.density_model is not None:
                    parts.append((c, m.density_model))
        model = CombinedDensity(tuple(parts)) if parts else None

    signed = any(w < 0 for _, w in atoms) or (
        density is not None and bool(np.any(density < 0))
    )
    return DiscreteMeasure(atoms=atoms, grid=grid, density_values=density,
                           signed=signed, density_model=model)


def kernel_moment(problem: Problem, mu: DiscreteMeasure,
                  points: np.ndarray) -> np.ndarray:
    """integral K(x, y) dmu(y) evaluated at each row of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(pts.shape[0])
    if mu.atoms:
        apts = np.asarray([p for p, _ in mu.atoms], dtype=float)
        awts = np.asarray([w for _, w in mu.atoms], dtype=float)
        block = np.asarray(problem.kernel.evaluate(pts, apts), dtype=float)
        out += block @ awts
    if mu.density_values is not None:
        col = mu.grid.weights * mu.density_values
        block = np.asarray(problem.kernel.evaluate(pts, mu.grid.nodes), dtype=float)
        out += block @ col
    return out


def normalize(mu: DiscreteMeasure, target: float = 1.0) -> DiscreteMeasure:
    """Scale a measure so its total (signed) mass equals target."""
    mass = mu.total_mass()
    tv = mu.total_variation()
    if tv == 0 or abs(mass) <= 1e-14 * tv:
        raise NormalizationError(
            "measure has (numerically) zero mass; it cannot be normalized"
        )
    scale = target / mass
    if scale == 1.0:
        return mu
    atoms = tuple((p, scale * w) for p, w in mu.atoms)
    density = None if mu.density_values is None else scale * mu.density_values
    model = mu.density_model
    if model is not None:
        model = CombinedDensity(((scale, model),))
    signed = any(w < 0 for _, w in atoms) or (
        density is not None and bool(np.any(density < 0))
    )
    return DiscreteMeasure(atoms=atoms, grid=mu.grid, density_values=density,
                           signed=signed, density_model=model)
