"""Residual checks and refinement studies.

Constructed solutions satisfy the construction-grid equations to roundoff, so
same-grid residuals only certify the algebra.  Genuine accuracy shows up as
two-grid residuals decaying under joint grid refinement, and as residuals
jumping far above roundoff for deliberately wrong inputs.
"""

import math

import numpy as np
import pytest

from specmeasure import (
    Ball,
    ConfigurationError,
    Cylinder,
    DiscreteMeasure,
    GradeSpec,
    InvalidEigenpairError,
    Segment,
    build_atom_solution,
    build_grid,
    build_problem,
    build_singular_solution,
    cantor_approximant,
    constant_kernel,
    default_test_functions,
    gaussian_kernel,
    pointwise_residual,
    radial_power,
    refinement_study,
    span_combination,
    weak_residual,
)

CENTER = (0.0, 0.0, 0.0)
AXIS = Segment((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


def ball_problem(rho, resolution=5, depth=8):
    dom = Ball(center=CENTER, radius=1.0)
    return build_problem(
        dom,
        constant_kernel(rho),
        radial_power(top=1.0, scale=1.0, power=2.0, center=CENTER),
        resolution=resolution,
        grading=GradeSpec(targets=(CENTER,), ratio=0.5, depth=depth),
    )


def cylinder_factory(level):
    # joint refinement: both the base resolution and the grading depth grow
    dom = Cylinder(radius=1.0, height=1.0)
    return build_problem(
        dom,
        gaussian_kernel(amplitude=0.2, width=0.6),
        radial_power(top=1.0, scale=1.0, power=1.0, center=(0.0, 0.0), axes=(0, 1)),
        resolution=4 + level,
        grading=GradeSpec(targets=(AXIS,), ratio=0.5, depth=5 + level),
    )


def axis_atom_solution(prob):
    return build_atom_solution(prob, (0.0, 0.0, 0.5), alpha=1.0), -1.0


@pytest.fixture(scope="module")
def ball05():
    return ball_problem(0.05)


@pytest.fixture(scope="module")
def ball_solution(ball05):
    rho = 0.05
    alpha = 1.0 / rho - 4.0 * math.pi * (1.0 - 0.5**9)
    return build_atom_solution(ball05, CENTER, alpha=alpha)


def test_same_grid_residuals_are_roundoff(ball05, ball_solution):
    pw = pointwise_residual(ball05, ball_solution, -1.0)
    assert pw.kind == "pointwise"
    assert pw.value <= 1e-12
    wk = weak_residual(ball05, ball_solution, -1.0)
    assert wk.kind == "weak"
    assert wk.value <= 1e-12


def test_scaled_density_fails_pointwise(ball05, ball_solution):
    bad = DiscreteMeasure(
        atoms=ball_solution.atoms,
        grid=ball_solution.grid,
        density_values=1.1 * ball_solution.density_values,
    )
    report = pointwise_residual(ball05, bad, -1.0)
    assert report.value >= 1e-2


def test_wrong_eigenvalue_fails_weak(ball05, ball_solution):
    # lambda off by 0.1 shows up as exactly 0.1 against the constant function
    report = weak_residual(ball05, ball_solution, -0.9)
    assert abs(report.value - 0.1) <= 1e-12


def test_atom_eigenvalue_gate(ball05, ball_solution):
    with pytest.raises(InvalidEigenpairError):
        pointwise_residual(ball05, ball_solution, -0.9)


def test_offgrid_density_needs_a_model(ball05, ball_solution):
    finer = ball_problem(0.05, resolution=6).grid
    stripped = DiscreteMeasure(
        atoms=ball_solution.atoms,
        grid=ball_solution.grid,
        density_values=ball_solution.density_values,
    )
    with pytest.raises(ConfigurationError):
        pointwise_residual(ball05, stripped, -1.0, eval_grid=finer)


def test_zero_variation_rejected(ball05, ball_solution):
    combo = span_combination([ball_solution, ball_solution], [1.0, -1.0])
    with pytest.raises(ConfigurationError):
        weak_residual(ball05, combo, -1.0)


def test_default_test_functions_cover_quadratics():
    grid = build_grid(Cylinder(radius=1.0, height=1.0), resolution=3)
    fns = default_test_functions(grid)
    names = [name for name, _ in fns]
    assert names[0] == "one"
    assert {"lin0", "lin1", "lin2"} <= set(names)
    assert {"quad00", "quad12", "quad22"} <= set(names)
    assert names[-1] == "cosprod"
    assert len(names) == 11
    ones = fns[0][1](grid.nodes)
    assert np.all(ones == 1.0)
    for _, fn in fns:
        vals = fn(grid.nodes)
        assert vals.shape == (grid.size,)
        assert np.all(np.isfinite(vals))


def test_pointwise_residual_decays_under_refinement():
    rows = refinement_study(cylinder_factory, 3, "residual",
                            solution=axis_atom_solution,
                            residual_kind="pointwise")
    values = [r["value"] for r in rows]
    assert values[0] >= 8e-3
    for coarse, fine in zip(values, values[1:]):
        assert fine < coarse / 1.5
    assert values[-1] <= 4e-3
    assert all(r["ratio"] is None or r["ratio"] > 1.5 for r in rows)


def test_weak_residual_decays_under_refinement():
    rows = refinement_study(cylinder_factory, 3, "residual",
                            solution=axis_atom_solution,
                            residual_kind="weak")
    values = [r["value"] for r in rows]
    assert values[0] >= 1.5e-3
    for coarse, fine in zip(values, values[1:]):
        assert fine < coarse / 1.5
    assert values[-1] <= 1e-3


def test_cantor_solution_residual_decays():
    mu0 = cantor_approximant(AXIS, level=3)

    def solution(prob):
        return build_singular_solution(prob, mu0), -1.0

    rows = refinement_study(cylinder_factory, 3, "residual",
                            solution=solution, residual_kind="weak")
    values = [r["value"] for r in rows]
    for coarse, fine in zip(values, values[1:]):
        assert fine < coarse / 1.4
    assert values[-1] <= 1e-3


def test_lambda1_study_halves_depth_error():
    # with the depth growing one step per level the value error halves
    def factory(level):
        return ball_problem(0.05, resolution=4, depth=4 + level)

    rows = refinement_study(factory, 3, "lambda1")
    rho = 0.05
    for level, row in enumerate(rows):
        expected = rho * 4.0 * math.pi * (1.0 - 0.5 ** (5 + level))
        assert row["value"] == pytest.approx(expected, rel=1e-10)
        assert row["level"] == level
        assert row["size"] == factory(level).grid.size
    assert rows[2]["ratio"] == pytest.approx(2.0, rel=1e-6)


def test_recip_integral_study_converges_to_ball_value():
    def factory(level):
        return ball_problem(0.05, resolution=4, depth=6 + level)

    rows = refinement_study(factory, 3, "recip_integral")
    for level, row in enumerate(rows):
        expected = 4.0 * math.pi * (1.0 - 0.5 ** (7 + level))
        assert row["value"] == pytest.approx(expected, rel=1e-9)
    assert rows[2]["ratio"] == pytest.approx(2.0, rel=1e-6)


def test_lambda_p_study_runs_in_continuous_regime():
    def factory(level):
        return ball_problem(0.2, resolution=4, depth=4 + level)

    rows = refinement_study(factory, 2, "lambda_p", value_tol=1e-3)
    assert len(rows) == 2
    for row in rows:
        assert isinstance(row["value"], float)
        assert row["value"] < -1.0
    assert rows[1]["delta"] is not None


def test_study_guards():
    def factory(level):
        return ball_problem(0.05, resolution=3, depth=4 + level)

    with pytest.raises(ConfigurationError):
        refinement_study(factory, 1, "lambda1")
    with pytest.raises(ConfigurationError):
        refinement_study(factory, 3, "spectral_gap")
    with pytest.raises(ConfigurationError):
        refinement_study(factory, 3, "residual")

    def center_atom(prob):
        return build_atom_solution(prob, CENTER, alpha=1.0), -1.0

    with pytest.raises(ConfigurationError):
        refinement_study(factory, 2, "residual",
                         solution=center_atom,
                         residual_kind="strong")
