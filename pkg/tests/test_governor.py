import numpy as np
import pytest

from tubeil.dynamics import NOMINAL_PARAMS, friction_constraint, normal_force, normal_force_affine
from tubeil.governor import GovernorSingular, constraint_gap_series, refine

CHANGED = NOMINAL_PARAMS.with_masses(6.0, 0.5)


def _random_states(rng, n):
    return rng.uniform([-3, -2, -0.3, -1.5], [3, 2, 0.3, 1.5], size=(n, 4))


def test_heavier_cart_scales_force_up():
    x = np.zeros(4)
    assert normal_force(x, 10.0, NOMINAL_PARAMS) == pytest.approx(49.05, abs=1e-12)
    assert normal_force(x, 10.0, CHANGED) == pytest.approx(63.765, abs=1e-12)
    res = refine(10.0, x, x, CHANGED, NOMINAL_PARAMS)
    assert res.u == pytest.approx(10.0 * 63.765 / 49.05, abs=1e-12)
    assert res.u == pytest.approx(13.0, abs=1e-12)


def test_identity_when_models_agree(rng):
    for x in _random_states(rng, 1000):
        u = rng.uniform(-20, 20)
        assert abs(refine(u, x, x, NOMINAL_PARAMS, NOMINAL_PARAMS).u - u) <= 1e-12


def test_zero_force_maps_to_zero(rng):
    for x, xb in zip(_random_states(rng, 20), _random_states(rng, 20)):
        assert refine(0.0, x, xb, CHANGED, NOMINAL_PARAMS).u == 0.0


def test_refined_force_matches_nominal_constraint(rng):
    xs, xbs = _random_states(rng, 1000), _random_states(rng, 1000)
    for x, xb in zip(xs, xbs):
        u = rng.uniform(-20, 20)
        res = refine(u, x, xb, CHANGED, NOMINAL_PARAMS)
        assert res.residual < 1e-8 * max(1.0, abs(res.u))
        gap = friction_constraint(x, res.u, CHANGED) - friction_constraint(xb, u, NOMINAL_PARAMS)
        assert abs(gap) < 1e-8


def test_fixed_point_path_agrees_with_closed_form(monkeypatch):
    import tubeil.governor as gov

    x, xb = np.array([0.0, 0.0, 0.1, 0.2]), np.array([0.0, 0.0, 0.05, 0.1])
    closed = refine(8.0, x, xb, CHANGED, NOMINAL_PARAMS)
    assert closed.method == "affine-closed-form"
    # a zero affine split makes the closed form fail its residual check
    monkeypatch.setattr(gov, "normal_force_affine", lambda state, params: (0.0, 0.0))
    fp = refine(8.0, x, xb, CHANGED, NOMINAL_PARAMS)
    assert fp.method == "fixed-point" and fp.iterations >= 1
    assert fp.u == pytest.approx(closed.u, abs=1e-7)


def test_singular_nominal_normal_force():
    # a force large enough to unload the wheels of the nominal model
    xb = np.array([0.0, 0.0, 0.5, 1.0])
    a, b = normal_force_affine(xb, NOMINAL_PARAMS)
    u = -a / b
    assert abs(normal_force(xb, u, NOMINAL_PARAMS)) < 1e-6
    with pytest.raises(GovernorSingular):
        refine(u, xb, xb, CHANGED, NOMINAL_PARAMS)


def test_gap_series_vanishes_for_identical_runs(rng):
    xs = _random_states(rng, 11)
    us = rng.uniform(-10, 10, 10)
    gap = constraint_gap_series(xs, xs, us, us, NOMINAL_PARAMS, NOMINAL_PARAMS)
    assert gap.shape == (10,)
    assert np.max(np.abs(gap)) <= 1e-10


def test_gap_series_alignment_checked():
    with pytest.raises(ValueError):
        constraint_gap_series(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros(3), np.zeros(2),
                              NOMINAL_PARAMS, NOMINAL_PARAMS)
