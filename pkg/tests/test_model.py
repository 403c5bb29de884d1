import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markov_pide.catalog import CATALOG, build_catalog_model
from markov_pide.model import (DeclaredBounds, MarkMeasure, ModelError, ModelSpec,
                               SamplingBox, SmoothFunction, apply_diffusion_operator,
                               apply_generator, validate_assumptions)

BUMP = {"intensity": "bump", "lam0": 1.0, "lam1": 1.0, "lam_bar": 2.0}
BOX = SamplingBox((0.0, 1.0), (-3.0,), (3.0,), (0.0, 10.0))


def _catalog(name, **extra):
    return build_catalog_model(name, {**BUMP, **extra})


def test_mark_measure_total_mass():
    m = MarkMeasure(nodes=[0.5, 1.0, 1.5], weights=[0.1, 0.2, 0.3])
    assert m.size == 3
    assert m.total_mass == math.fsum([0.1, 0.2, 0.3])
    assert np.isclose(m.probabilities.sum(), 1.0)


@pytest.mark.parametrize("weights", [[], [1.0, 0.0], [1.0, -1.0], [math.inf]])
def test_mark_measure_rejects_bad_weights(weights):
    with pytest.raises(ModelError):
        MarkMeasure(nodes=np.zeros(len(weights)), weights=weights)


def test_cox_constant_is_reference_measure():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    z = np.linspace(-5, 5, 11)[:, None]
    nu = m.nu_density(np.zeros(11), z, np.zeros(11))
    assert np.all(nu == 1.0)
    assert m.reference_rate == 2.0


def test_cox_bump_density_range():
    m = _catalog("cox")
    z = np.linspace(-10, 10, 2001)[:, None]
    nu = m.nu_density(np.zeros(z.shape[0]), z, np.zeros(z.shape[0]))[:, 0]
    assert np.allclose(nu, (1 + 1 / (1 + z[:, 0] ** 2)) / 2)
    assert nu.min() >= 0.5 and nu.max() <= 1.0


def test_compound_cox_uniform_nodes():
    m = build_catalog_model("compound_cox", {"lam0": 2.0, "lam_bar": 2.0,
                                             "jump_sizes": [0.5, 1.0, 1.5]})
    assert m.n_marks == 3
    assert np.allclose(m.mark_measure.weights, [2 / 3, 2 / 3, 2 / 3])
    assert m.reference_rate == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("name,params,match", [
    ("nope", {}, "unknown model"),
    ("cox", {"lam0": 1.0}, "lam_bar"),
    ("cox", {"lam0": 1.0, "lam_bar": 2.0, "sigma": 0.0}, "sigma"),
    ("cox", {"lam0": 1.0, "lam_bar": 2.0, "colour": 1}, "unknown parameter"),
    ("cox", {"lam0": 3.0, "lam_bar": 2.0}, "A2"),
    ("cox", {"intensity": "bump", "lam0": 1.0, "lam1": 1.5, "lam_bar": 2.0}, "A2"),
    ("ou_modulated_cox", {"lam0": 1.0, "lam_bar": 2.0, "kappa": -1.0}, "kappa"),
])
def test_catalog_errors(name, params, match):
    with pytest.raises(ModelError, match=match):
        build_catalog_model(name, params)


@pytest.mark.parametrize("name", CATALOG)
def test_catalog_validates(name):
    rep = validate_assumptions(_catalog(name), BOX, n_samples=500, seed=1)
    assert rep.passed
    assert rep.check("A2").status == "pass"
    assert rep.check("A2").worst_value <= 1.0
    ids = {c.assumption for c in rep.checks}
    assert ids == {"A0", "A1", "A2", "A3", "A4", "A5", "ellipticity"}


def test_validation_is_deterministic():
    m = _catalog("joint_jump")
    a = validate_assumptions(m, BOX, n_samples=300, seed=4)
    b = validate_assumptions(m, BOX, n_samples=300, seed=4)
    assert a == b


def test_ou_drift_lipschitz_estimate():
    m = _catalog("ou_modulated_cox", kappa=1.7)
    rep = validate_assumptions(m, BOX, n_samples=2000, seed=0)
    assert rep.sampled_lipschitz["a"] == pytest.approx(1.7, rel=0.05)


def _custom(nu_value=0.5, sigma=1.0, dim_z=1):
    K = 1
    return ModelSpec(
        name="custom", dim_z=dim_z,
        drift=lambda t, z, l: np.zeros(z.shape),
        dispersion=lambda t, z, l: np.broadcast_to(sigma * np.eye(dim_z),
                                                   (z.shape[0], dim_z, dim_z)).copy(),
        jump_z=lambda t, z, l: np.zeros((z.shape[0], K, dim_z)),
        jump_l=lambda t, z, l: np.ones((z.shape[0], K)),
        nu_density=lambda t, z, l: np.full((z.shape[0], K), nu_value),
        mark_measure=MarkMeasure(nodes=[1.0], weights=[2.0]),
        discount=lambda t, z, l: np.zeros(l.shape),
        running_cost=lambda t, z, l: np.zeros(l.shape),
        terminal=lambda z, l: np.asarray(l, dtype=float),
        declared_bounds=DeclaredBounds(sup_b=abs(sigma), sup_c=0, sup_f=0, lip_a=0, lip_b=0,
                                       lip_f=0, lip_g=1),
    )


def test_validation_flags_density_above_one():
    rep = validate_assumptions(_custom(nu_value=1.5), BOX, n_samples=100)
    assert rep.check("A2").status == "fail"
    assert not rep.passed


def test_validation_flags_non_finite():
    rep = validate_assumptions(_custom(nu_value=math.nan), BOX, n_samples=100)
    assert rep.check("A0").status == "fail"


def test_validation_degenerate_dispersion_warns():
    rep = validate_assumptions(_custom(sigma=0.0), BOX, n_samples=100)
    ell = rep.check("ellipticity")
    assert ell.status == "warn"
    assert rep.ellipticity_estimate == 0.0


def test_generator_annihilates_constants():
    for name in CATALOG:
        m = _catalog(name)
        assert apply_generator(m, SmoothFunction.constant(3.0), 0.2, (np.array([0.4]), 1.0)) == 0.0


def test_generator_cox_l_coordinate():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    assert apply_generator(m, SmoothFunction.l_coordinate(), 0.0, (np.array([0.3]), 5.0)) == 2.0


def test_generator_compound_mean_jump():
    sizes = [0.5, 1.0, 2.5]
    m = build_catalog_model("compound_cox", {**BUMP, "jump_sizes": sizes})
    z = 0.7
    lam = 1.0 + 1.0 / (1.0 + z * z)
    got = apply_generator(m, SmoothFunction.l_coordinate(), 0.0, (np.array([z]), 0.0))
    assert got == pytest.approx(lam * np.mean(sizes), rel=1e-14)


def test_generator_ou_drift():
    m = _catalog("ou_modulated_cox", kappa=1.5, theta=0.2)
    z = np.array([1.1])
    got = apply_generator(m, SmoothFunction.z_coordinate(), 0.0, (z, 0.0))
    assert got == pytest.approx(1.5 * (0.2 - 1.1), abs=1e-14)


def test_generator_batch_matches_pointwise():
    m = _catalog("joint_jump")
    phi = SmoothFunction.quadratic_z().scaled_sum(1.0, SmoothFunction.l_coordinate(), 0.5)
    z = np.linspace(-1, 1, 5)[:, None]
    l = np.arange(5.0)
    batch = apply_generator(m, phi, 0.0, (z, l))
    for i in range(5):
        assert batch[i] == pytest.approx(apply_generator(m, phi, 0.0, (z[i], l[i])), abs=1e-13)


def test_generator_rejects_wrong_derivative_shape():
    m = _catalog("cox")
    with pytest.raises(ModelError):
        apply_generator(m, SmoothFunction.quadratic_z(dim_z=2), 0.0, (np.array([0.0]), 0.0))


def test_generator_reduces_to_diffusion_without_l_dependence():
    m = _catalog("ou_modulated_cox")
    phi = SmoothFunction.quadratic_z()
    x = (np.array([0.8]), 2.0)
    assert apply_generator(m, phi, 0.0, x) == apply_diffusion_operator(m, phi, 0.0, x)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(-5, 5), beta=st.floats(-5, 5), z=st.floats(-3, 3), l=st.floats(0, 10),
       name=st.sampled_from(CATALOG))
def test_generator_is_linear(alpha, beta, z, l, name):
    m = _catalog(name)
    phi, psi = SmoothFunction.quadratic_z(), SmoothFunction.l_coordinate()
    x = (np.array([z]), l)
    combo = apply_generator(m, phi.scaled_sum(alpha, psi, beta), 0.0, x)
    parts = alpha * apply_generator(m, phi, 0.0, x) + beta * apply_generator(m, psi, 0.0, x)
    assert combo == pytest.approx(parts, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(CATALOG), intensity=st.sampled_from(["bump", "saturating", "logistic"]),
       lam1=st.floats(0.0, 1.0), z=st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_density_in_unit_interval(name, intensity, lam1, z):
    m = build_catalog_model(name, {"intensity": intensity, "lam0": 1.0, "lam1": lam1,
                                   "lam_bar": 2.0})
    z = np.asarray(z)[:, None]
    nu = m.nu_density(np.zeros(z.shape[0]), z, np.zeros(z.shape[0]))
    assert np.all(nu >= 0) and np.all(nu <= 1)


def test_diffusion_matrix_is_psd():
    m = _catalog("ou_modulated_cox")
    z = np.linspace(-2, 2, 7)[:, None]
    sig = m.diffusion_matrix(np.zeros(7), z, np.zeros(7))
    assert np.all(np.linalg.eigvalsh(sig) >= 0)
