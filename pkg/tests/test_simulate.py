import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markov_pide.catalog import CATALOG, build_catalog_model
from markov_pide.model import ModelSpec
from markov_pide.simulate import (PHYSICAL, REFERENCE, SimulationError, base_grid,
                                  simulate_batch, simulate_paths, simulate_physical_path,
                                  simulate_reference_path, xi_sde_check)

BUMP = {"intensity": "bump", "lam0": 1.0, "lam1": 1.0, "lam_bar": 2.0}
X0 = (np.array([0.0]), 0.0)


def _catalog(name, **extra):
    return build_catalog_model(name, {**BUMP, **extra})


def test_base_grid_lands_on_horizon():
    g = base_grid(0.1, 1.0, 0.07)
    assert g[0] == 0.1 and g[-1] == 1.0
    assert np.all(np.diff(g) <= 0.07 + 1e-15)


def test_unit_density_gives_unit_xi():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    for i in range(20):
        tr = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=3, path_index=i)
        assert np.all(tr.xi_path == 1.0)


def test_constant_half_density_product_formula():
    m = build_catalog_model("cox", {"lam0": 1.0, "lam_bar": 2.0})
    for i in range(20):
        tr = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=5, path_index=i)
        n = len(tr.events)
        assert tr.xi_path[-1] == pytest.approx(0.5 ** n * math.exp(2.0 / 2), rel=1e-12)


def test_poisson_mean_event_count():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    b = simulate_batch(m, 0.0, X0, 1.0, 0.05, seed=11, n_paths=100_000)
    n = b.n_proposed
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - 2.0) <= 3 * se


def test_thinned_mean_event_count():
    m = build_catalog_model("cox", {"lam0": 1.0, "lam_bar": 2.0})
    b = simulate_batch(m, 0.0, X0, 1.0, 0.05, seed=12, n_paths=100_000, measure=PHYSICAL)
    n = b.n_accepted
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - 1.0) <= 3 * se
    assert np.all(b.xi_T == 1.0)


def test_zero_intensity_accepts_nothing():
    m = build_catalog_model("cox", {"lam0": 0.0, "lam_bar": 2.0})
    b = simulate_batch(m, 0.0, X0, 1.0, 0.05, seed=1, n_paths=2000, measure=PHYSICAL)
    assert b.n_accepted.sum() == 0
    assert b.n_proposed.sum() > 0
    assert np.all(b.l_T == 0.0)


def test_zero_density_event_flags_path():
    m = build_catalog_model("cox", {"lam0": 0.0, "lam_bar": 2.0})
    b = simulate_batch(m, 0.0, X0, 1.0, 0.05, seed=1, n_paths=2000)
    assert np.array_equal(b.flagged, b.n_proposed > 0)
    tr = next(t for t in simulate_paths(m, 0.0, X0, 1.0, 0.05, 1, range(20)) if t.events)
    assert tr.flagged


def test_coupling_with_unit_density():
    m = build_catalog_model("joint_jump", {"lam0": 2.0, "lam_bar": 2.0})
    ref = simulate_paths(m, 0.0, X0, 1.0, 0.02, 9, range(50), REFERENCE)
    phy = simulate_paths(m, 0.0, X0, 1.0, 0.02, 9, range(50), PHYSICAL)
    for a, b in zip(ref, phy):
        assert np.array_equal(a.grid_times, b.grid_times)
        assert np.array_equal(a.z_path, b.z_path)
        assert np.array_equal(a.l_path, b.l_path)


@pytest.mark.parametrize("name", CATALOG)
def test_trajectory_invariants(name):
    m = _catalog(name)
    dt = 0.05
    base = base_grid(0.0, 1.0, dt)
    for measure in (REFERENCE, PHYSICAL):
        for tr in simulate_paths(m, 0.0, X0, 1.0, dt, 21, range(30), measure):
            times = tr.grid_times
            assert np.all(np.diff(times) > 0)
            assert np.all(np.diff(times) <= dt + 1e-12)
            assert np.all(np.isin(base, times))
            assert np.all(np.diff(tr.event_times) > 0)
            assert np.all(tr.xi_path > 0)
            assert np.all(tr.xi_path <= np.exp(m.reference_rate * times) + 1e-12)
            accepted = {e.time for e in tr.events if e.accepted}
            changes = times[1:][np.diff(tr.l_path) != 0]
            assert set(changes) <= accepted
            if measure == PHYSICAL:
                assert np.all(tr.xi_path == 1.0)
            else:
                assert all(e.accepted for e in tr.events)


def test_paths_are_reproducible():
    m = _catalog("ou_modulated_cox")
    a = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=7, path_index=4)
    b = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=7, path_index=4)
    assert np.array_equal(a.z_path, b.z_path) and np.array_equal(a.xi_path, b.xi_path)
    c = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=8, path_index=4)
    assert not np.array_equal(a.z_path, c.z_path)


def test_batch_independent_of_chunking_and_workers():
    m = _catalog("joint_jump")
    a = simulate_batch(m, 0.0, X0, 1.0, 0.02, 3, 1000, chunk_size=1000, workers=1)
    b = simulate_batch(m, 0.0, X0, 1.0, 0.02, 3, 1000, chunk_size=97, workers=3)
    for key in ("z_T", "l_T", "xi_T", "running_weighted", "n_proposed"):
        assert np.array_equal(getattr(a, key), getattr(b, key))


def test_thread_env_var(monkeypatch):
    from markov_pide.simulate import worker_count
    monkeypatch.setenv("MARKOV_PIDE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("MARKOV_PIDE_THREADS", "0")
    assert worker_count() >= 1


def test_batch_matches_recorded_paths():
    m = _catalog("compound_cox", jump_sizes=[0.5, 1.5])
    b = simulate_batch(m, 0.2, X0, 1.0, 0.03, 5, 40, measure=PHYSICAL)
    trs = simulate_paths(m, 0.2, X0, 1.0, 0.03, 5, range(40), PHYSICAL)
    assert np.array_equal(b.z_T, np.array([t.z_path[-1] for t in trs]))
    assert np.array_equal(b.l_T, np.array([t.l_path[-1] for t in trs]))


def test_single_path_matches_batch_index():
    m = _catalog("cox")
    tr = simulate_physical_path(m, 0.0, X0, 1.0, 0.02, seed=2, path_index=17)
    b = simulate_batch(m, 0.0, X0, 1.0, 0.02, 2, 20, measure=PHYSICAL)
    assert tr.z_path[-1, 0] == b.z_T[17, 0] and tr.l_path[-1] == b.l_T[17]


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_non_finite_state_aborts():
    m = build_catalog_model("cox", {"lam0": 1.0, "lam_bar": 2.0})
    bad = ModelSpec(**{**m.__dict__, "drift": lambda t, z, l: np.full(z.shape, np.inf)})
    with pytest.raises(SimulationError):
        simulate_batch(bad, 0.0, X0, 1.0, 0.1, 0, 10)


def test_argument_checks():
    m = _catalog("cox")
    with pytest.raises(ValueError):
        simulate_reference_path(m, 1.0, X0, 1.0, 0.1, 0)
    with pytest.raises(ValueError):
        simulate_reference_path(m, 0.0, X0, 1.0, 0.0, 0)


def test_xi_sde_check_unit_density_is_exact():
    m = build_catalog_model("cox", {"lam0": 2.0, "lam_bar": 2.0})
    tr = simulate_reference_path(m, 0.0, X0, 1.0, 0.01, seed=1)
    assert xi_sde_check(tr, m) == 0.0


def test_xi_sde_check_first_order_in_step():
    # constant density 1/2: the deviation is the Euler error of a deterministic exponential
    m = build_catalog_model("cox", {"lam0": 1.0, "lam_bar": 2.0})
    devs = [xi_sde_check(simulate_reference_path(m, 0.0, X0, 1.0, dt, seed=4), m)
            for dt in (0.02, 0.01, 0.005)]
    ratios = np.array(devs[:-1]) / np.array(devs[1:])
    assert np.all((ratios > 1.8) & (ratios < 2.2))


def test_xi_sde_check_bound_regime():
    # density zero between events: xi grows like exp(lam~ t) until the first event;
    # Euler's product (1 + h lam~)^n trails it by about exp(lam~ t) lam~^2 t h / 2
    m = build_catalog_model("cox", {"lam0": 0.0, "lam_bar": 2.0})
    for dt in (1e-3, 5e-4):
        tr = next(t for t in simulate_paths(m, 0.0, X0, 1.0, dt, 3, range(50))
                  if not t.events)
        dev = xi_sde_check(tr, m)
        predicted = math.exp(2.0) * (1 - math.exp(-0.5 * 4.0 * dt + 4.0 * dt ** 2 / 3))
        assert dev == pytest.approx(predicted, rel=0.05)


def test_xi_sde_check_needs_reference_path():
    m = _catalog("cox")
    tr = simulate_physical_path(m, 0.0, X0, 1.0, 0.1, seed=0)
    with pytest.raises(ValueError):
        xi_sde_check(tr, m)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32), name=st.sampled_from(CATALOG),
       dt=st.sampled_from([0.1, 0.05, 0.02]))
def test_xi_never_exceeds_bound(seed, name, dt):
    m = _catalog(name)
    b = simulate_batch(m, 0.0, X0, 1.0, dt, seed, 200)
    assert b.xi_bound_excess.max() <= 1e-12
    assert np.all(b.xi_T > 0)
