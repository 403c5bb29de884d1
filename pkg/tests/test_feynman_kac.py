import math

import numpy as np
import pytest

from markov_pide.catalog import build_catalog_model
from markov_pide.feynman_kac import (EstimatorResult, bayes_consistency, estimate_all,
                                     estimate_v_physical, estimate_v_weighted, summarize,
                                     weighted_values)

BUMP = {"intensity": "bump", "lam0": 1.0, "lam1": 1.0, "lam_bar": 2.0}
X0 = (np.array([0.0]), 0.0)


def test_unit_payoff_is_exact_under_physical_measure():
    m = build_catalog_model("cox", {**BUMP, "payoff": "constant", "g0": 1.0})
    r = estimate_v_physical(m, 0.0, X0, 500, 0.05, 0, T=1.0)
    assert r.mean == 1.0 and r.std_error == 0.0


def test_unit_payoff_weighted_is_unbiased():
    m = build_catalog_model("cox", {**BUMP, "payoff": "constant", "g0": 1.0})
    r = estimate_v_weighted(m, 0.0, X0, 1.0, 50_000, 0.002, 3, T=1.0)
    assert abs(r.mean - 1.0) <= 3 * r.std_error


def test_constant_discount():
    m = build_catalog_model("cox", {**BUMP, "payoff": "constant", "g0": 1.0, "c0": 0.3})
    r = estimate_v_physical(m, 0.25, X0, 100, 0.05, 0, T=1.0)
    assert r.mean == pytest.approx(math.exp(-0.3 * 0.75), rel=1e-12)


def test_constant_running_cost():
    m = build_catalog_model("cox", {**BUMP, "payoff": "constant", "g0": 0.0, "f0": 2.0})
    r = estimate_v_physical(m, 0.5, X0, 100, 0.05, 0, T=1.0)
    assert r.mean == pytest.approx(1.0, rel=1e-12)


def test_cox_counting_payoff():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    x = (np.array([0.0]), 5.0)
    r = estimate_v_physical(m, 0.0, x, 100_000, 0.05, 1, T=1.0)
    assert abs(r.mean - 7.0) <= 3 * r.std_error


def test_weighted_is_linear_in_xi0():
    m = build_catalog_model("cox", BUMP)
    one = estimate_v_weighted(m, 0.5, X0, 1.0, 2000, 0.02, 4, T=1.0)
    two = estimate_v_weighted(m, 0.5, X0, 2.0, 2000, 0.02, 4, T=1.0)
    assert two.mean == pytest.approx(2 * one.mean, rel=1e-15)
    assert two.std_error == pytest.approx(2 * one.std_error, rel=1e-15)


@pytest.mark.parametrize("xi0", [0.0, -1.0, math.exp(2.0 * 0.5) * 1.01])
def test_weighted_rejects_state_outside_domain(xi0):
    m = build_catalog_model("cox", BUMP)
    with pytest.raises(ValueError, match="outside"):
        estimate_v_weighted(m, 0.5, X0, xi0, 100, 0.05, 0, T=1.0)


def test_weighted_accepts_domain_edge():
    m = build_catalog_model("cox", BUMP)
    estimate_v_weighted(m, 0.5, X0, math.exp(1.0), 100, 0.05, 0, T=1.0)


def test_argument_checks():
    m = build_catalog_model("cox", BUMP)
    with pytest.raises(ValueError):
        estimate_v_physical(m, 1.0, X0, 100, 0.05, 0, T=1.0)
    with pytest.raises(ValueError):
        estimate_v_physical(m, 0.0, X0, 1, 0.05, 0, T=1.0)
    with pytest.raises(ValueError, match="form"):
        estimate_v_weighted(m, 0.0, X0, 1.0, 100, 0.05, 0, form="midpoint", T=1.0)


def test_standard_error_scales_as_root_n():
    m = build_catalog_model("ou_modulated_cox", BUMP)
    a = estimate_v_physical(m, 0.0, X0, 10_000, 0.05, 1, T=1.0)
    b = estimate_v_physical(m, 0.0, X0, 40_000, 0.05, 2, T=1.0)
    assert a.std_error / b.std_error == pytest.approx(2.0, rel=0.1)


def test_forms_coincide_without_running_cost():
    m = build_catalog_model("joint_jump", BUMP)
    terminal, running, _ = weighted_values(m, 0.0, X0, 1.0, 500, 0.05, 8)
    assert np.array_equal(terminal, running)


def test_forms_differ_with_running_cost():
    m = build_catalog_model("cox", {**BUMP, "f0": 1.0})
    terminal, running, _ = weighted_values(m, 0.0, X0, 1.0, 500, 0.05, 8)
    assert not np.array_equal(terminal, running)


def test_discount_is_monotone():
    vals = []
    for c0 in (0.0, 0.1, 0.5):
        m = build_catalog_model("compound_cox", {**BUMP, "c0": c0, "jump_sizes": [1.0, 2.0]})
        vals.append(estimate_v_physical(m, 0.0, X0, 2000, 0.05, 5, T=1.0).mean)
    assert vals[0] > vals[1] > vals[2]


def test_bayes_consistency_on_bump_model():
    m = build_catalog_model("cox", BUMP)
    rep = bayes_consistency(m, 0.0, X0, 50_000, (10, 11), T=1.0, dt_max=0.005)
    assert rep.passed
    assert rep.terminal.seed == rep.running.seed == 11


def test_estimate_all_order_and_tags():
    m = build_catalog_model("cox", BUMP)
    out = estimate_all(m, 0.0, X0, 200, 0.05, 0, T=1.0)
    assert [r.estimator_tag for r in out] == ["physical", "weighted_terminal",
                                              "weighted_running"]
    assert all(r.x == (0.0, 0.0) for r in out)


def test_summary_interval():
    r = summarize(np.array([1.0, 3.0]), 0, "physical")
    assert r.mean == 2.0
    assert r.ci95 == pytest.approx((2.0 - 1.96 * 1.0, 2.0 + 1.96 * 1.0))
    far = EstimatorResult(10.0, 0.1, 2, 0, "physical")
    assert not r.overlaps(far) and r.overlaps(r)
