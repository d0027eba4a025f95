import math

import numpy as np
import pytest
from scipy.optimize import brentq

from specmeasure import (
    Ball,
    ClassificationUnstableError,
    ConfigurationError,
    Cylinder,
    GradeSpec,
    Interval,
    IterationLimitError,
    Segment,
    SingularNodeError,
    assemble_full,
    assemble_ktilde,
    build_problem,
    classify_regime,
    collatz_wielandt_bounds,
    constant_kernel,
    coordinate_linear,
    estimate_lambda_p,
    perron,
    radial_power,
)

CENTER3 = (0.0, 0.0, 0.0)
AXIS = Segment(start=(0.0, 0.0, 0.0), end=(0.0, 0.0, 1.0))


def ball_problem(rho, resolution=6, depth=6):
    return build_problem(
        Ball(center=CENTER3, radius=1.0), constant_kernel(rho),
        radial_power(top=1.0, scale=1.0, power=2.0, center=CENTER3),
        resolution=resolution,
        grading=GradeSpec(targets=(CENTER3,), depth=depth),
    )


def cylinder_problem(rho, resolution=6, depth=8):
    return build_problem(
        Cylinder(radius=1.0, height=1.0), constant_kernel(rho),
        radial_power(top=1.0, scale=1.0, power=1.0, center=CENTER3, axes=(0, 1)),
        resolution=resolution,
        grading=GradeSpec(targets=(AXIS,), depth=depth),
    )


def test_assemble_full_two_nodes():
    prob = build_problem(Interval(0.0, 1.0), constant_kernel(1.0),
                         coordinate_linear((1.0,)), resolution=2)
    m = assemble_full(prob, shift=0.0)
    np.testing.assert_allclose(m.entries, [[0.75, 0.5], [0.5, 1.25]])
    m2 = assemble_full(prob)
    assert m2.shift == pytest.approx(0.75)
    np.testing.assert_allclose(
        m2.entries, [[1.5, 0.5], [0.5, 2.0]]
    )


def test_assemble_ktilde_three_nodes():
    # nodes 1/6, 1/2, 5/6 with weight 1/3; K = 2, a(x) = x, a0 = a(1) = 1
    prob = build_problem(Interval(0.0, 1.0), constant_kernel(2.0),
                         coordinate_linear((1.0,)), resolution=3)
    m = assemble_ktilde(prob, (1.0,))
    row = [0.8, 4.0 / 3.0, 4.0]
    np.testing.assert_allclose(m.entries, [row, row, row], rtol=1e-14)
    assert m.a0 == pytest.approx(1.0)


def test_assemble_ktilde_rejects_singular_node():
    prob = build_problem(Interval(0.0, 1.0), constant_kernel(1.0),
                         radial_power(1.0, 1.0, 2.0, (0.125,)), resolution=4)
    with pytest.raises(SingularNodeError):
        assemble_ktilde(prob, (0.125,))


def test_assemble_ktilde_rejects_non_maximizer():
    prob = build_problem(Interval(-1.0, 1.0), constant_kernel(1.0),
                         radial_power(1.0, 1.0, 2.0, (0.0,)), resolution=4)
    with pytest.raises(ConfigurationError):
        assemble_ktilde(prob, (0.9,))


def test_perron_symmetric_pair():
    pair = perron(np.array([[2.0, 1.0], [1.0, 2.0]]), tol_power=1e-12)
    assert pair.value == pytest.approx(3.0, abs=1e-12)
    np.testing.assert_allclose(pair.vector, [1.0, 1.0])
    lo, hi = pair.interval
    assert lo <= 3.0 <= hi


def test_perron_matches_dense_eig():
    rng = np.random.default_rng(42)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        a = rng.uniform(0.05, 1.0, size=(n, n))
        pair = perron(a, tol_power=1e-13, max_iter=200_000, keep_history=True)
        eigs = np.linalg.eigvals(a)
        r = float(np.max(eigs.real))
        assert pair.value == pytest.approx(r, abs=1e-8)
        for lo, hi in pair.bounds_history:
            assert lo <= r + 1e-12
            assert hi >= r - 1e-12


def test_collatz_wielandt_bounds_contain_radius():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    lo, hi = collatz_wielandt_bounds(a, np.array([1.0, 2.0]))
    assert lo == pytest.approx(2.5)
    assert hi == pytest.approx(4.0)
    assert lo <= 3.0 <= hi


def test_perron_iteration_limit():
    a = np.array([[1.0, 1e-12], [1e-12, 1.0]])
    with pytest.raises(IterationLimitError) as exc:
        perron(a, tol_power=1e-14, max_iter=40, v0=np.array([1.0, 0.3]))
    assert exc.value.residual is not None
    assert exc.value.residual < 1.0


def test_perron_rejects_negative_matrix():
    with pytest.raises(ConfigurationError):
        perron(np.array([[1.0, -0.1], [0.2, 1.0]]))


def test_lambda1_equals_rho_times_shell_sum():
    # constant kernel: the normalized operator is rank one and its radius
    # is exactly rho * sum_j w_j / (a0 - a_j)
    prob = ball_problem(0.05, resolution=6, depth=8)
    kt = assemble_ktilde(prob, CENTER3)
    pair = perron(kt)
    ih = float(np.sum(prob.grid.weights / (1.0 - prob.a_at_nodes)))
    assert pair.value == pytest.approx(0.05 * ih, rel=1e-13)
    assert ih == pytest.approx(4 * math.pi * (1 - 0.5**9), rel=1e-12)


def test_lambda_p_matches_secular_root():
    # for a constant kernel the largest eigenvalue of the full operator
    # solves rho * sum_j w_j / (mu - a_j) = 1 above max a_j
    for rho in (0.05, 0.1):
        prob = ball_problem(rho, resolution=4, depth=4)
        w = prob.grid.weights
        a = prob.a_at_nodes
        top = float(np.max(a))

        def secular(mu):
            return rho * float(np.sum(w / (mu - a))) - 1.0

        lo = top + 1e-13
        hi = top + 10.0
        root = brentq(secular, lo, hi, xtol=1e-14)
        est = estimate_lambda_p(prob, levels=1, value_tol=1e-6)
        assert est.value == pytest.approx(-root, abs=5e-6)
        assert est.interval[0] <= -root <= est.interval[1]


def test_lambda_p_approaches_minus_sup_a_from_above():
    vals = []
    for depth in (4, 6, 8):
        prob = ball_problem(0.05, resolution=6, depth=depth)
        est = estimate_lambda_p(prob, levels=1, value_tol=1e-3)
        vals.append(est.value)
    assert all(v > -1.0 for v in vals)
    assert vals[0] > vals[1] > vals[2]


def test_estimate_warm_start_chain_consistent():
    prob = ball_problem(0.1, resolution=6, depth=6)
    single = estimate_lambda_p(prob, levels=1, value_tol=1e-5)
    chained = estimate_lambda_p(prob, levels=3, value_tol=1e-5)
    assert chained.value == pytest.approx(single.value, abs=2e-5)
    assert len(chained.level_values) == 3


def test_classify_ball_regimes():
    singular = classify_regime(ball_problem(0.05))
    assert singular.regime == "singular"
    assert singular.eigen_density is None
    assert singular.lambda_p > -1.0

    continuous = classify_regime(ball_problem(0.1))
    assert continuous.regime == "continuous"
    assert continuous.density_norm == "max"
    assert continuous.eigen_density.max() == pytest.approx(1.0)
    assert np.all(continuous.eigen_density > 0)
    assert continuous.lambda_p < -1.0


def test_classify_threshold_l1():
    rho_star = 1.0 / (2 * math.pi)
    prob = cylinder_problem(rho_star, depth=12)
    rep = classify_regime(prob)
    assert rep.regime == "l1"
    assert rep.lambda_p == pytest.approx(-1.0)
    assert rep.density_norm == "mass"
    psi = rep.eigen_density
    w = prob.grid.weights
    assert float(np.sum(w * psi)) == pytest.approx(1.0, rel=1e-12)
    exact = 1.0 / (rep.a0 - prob.a_at_nodes)
    exact /= float(np.sum(w * exact))
    np.testing.assert_allclose(psi, exact, rtol=1e-10)


def test_classify_flip_across_threshold():
    below = classify_regime(cylinder_problem(0.13))
    above = classify_regime(cylinder_problem(0.20))
    assert below.regime == "singular"
    assert above.regime == "continuous"
    assert below.lambda1 < 1.0 < above.lambda1


def test_classify_unstable_between_levels():
    # pick rho so the radius sits inside the threshold band on the fine
    # grid but below it on the coarse one
    i_fine = 4 * math.pi * (1 - 0.5 * 0.5**8)
    rho = 0.9992 / i_fine
    prob = ball_problem(rho, resolution=6, depth=8)
    with pytest.raises(ClassificationUnstableError):
        classify_regime(prob, tol_classify=1e-3)


def test_classify_explicit_x0():
    rep = classify_regime(ball_problem(0.05), x0=CENTER3)
    assert rep.regime == "singular"
    assert rep.x0 == CENTER3
    assert rep.a0 == pytest.approx(1.0)


def test_full_operator_shift_invariance():
    prob = ball_problem(0.1, resolution=4, depth=4)
    est = estimate_lambda_p(prob, levels=1, tol_power=1e-12, value_tol=None)
    shifted = build_problem(
        prob.domain, prob.kernel,
        radial_power(top=1.5, scale=1.0, power=2.0, center=CENTER3),
        resolution=4, grading=GradeSpec(targets=(CENTER3,), depth=4),
    )
    est2 = estimate_lambda_p(shifted, levels=1, tol_power=1e-12, value_tol=None)
    assert est2.value == pytest.approx(est.value - 0.5, abs=1e-10)
