import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

from conftest import probit_toy
from epkit.ep import EPWorkspace, adf_run, ep_run, moment_match_site, moment_mismatch
from epkit.errors import OutOfRange
from epkit.exact import enumerate_ising, exact_gaussian_stats
from epkit.experiments import instance_rng, random_gaussian_instance, random_spin_instance
from epkit.models import GaussianLatentModel
from epkit.sites import CavityParams, Probit, TiltedSummary


def test_gaussian_sites_are_exact():
    for idx in range(5):
        model = random_gaussian_instance(8, 0, idx)
        st = ep_run(model, tol=1e-12)
        ex = exact_gaussian_stats(model)
        assert st.converged
        assert st.logZ_ep == pytest.approx(ex.logZ, abs=1e-10)
        np.testing.assert_allclose(st.mean, ex.means, atol=1e-10)
        np.testing.assert_allclose(st.cov, ex.covariance, atol=1e-10)


def test_single_probit_against_quadrature():
    st = ep_run(GaussianLatentModel(np.eye(1), (Probit(label=1.0),)), tol=1e-13)
    z, w = hermegauss(61)
    p = w * ndtr(z)
    p = p / p.sum()
    mean = p @ z
    var = p @ z**2 - mean**2
    assert st.mean[0] == pytest.approx(mean, abs=1e-8)
    assert st.cov[0, 0] == pytest.approx(var, abs=1e-8)
    # unnormalised prior exp(-x^2/2): Z = sqrt(2 pi) / 2
    assert st.logZ_ep == pytest.approx(0.5 * np.log(2 * np.pi) + np.log(0.5), abs=1e-12)


def test_weak_spins_close_to_enumeration():
    model = random_spin_instance(4, 0.25, 0, 0)
    st = ep_run(model)
    assert st.converged
    np.testing.assert_allclose(st.mean, enumerate_ising(model).means, atol=0.05)


@pytest.mark.parametrize("seed", range(4))
def test_moment_matching_at_convergence(seed):
    tol = 1e-10
    for model in (random_spin_instance(6, 0.3, seed, 0), probit_toy(4, seed)):
        st = ep_run(model, tol=tol)
        assert st.converged
        assert moment_mismatch(st) <= 10 * tol
        np.testing.assert_allclose(st.cov, np.linalg.inv(_precision(model, st)), atol=1e-10)
        np.testing.assert_allclose(st.mean, st.cov @ st.gamma, atol=1e-10)


def _precision(model, st):
    K = -model.J if hasattr(model, "J") else model.K
    return K + np.diag(st.Lambda)


def test_rank_one_update_matches_reinversion():
    r = np.random.default_rng(0)
    for idx in range(10):
        model = random_gaussian_instance(8, 4, idx)
        lam = r.uniform(0.2, 1.0, 8)
        gam = r.normal(size=8)
        ws = EPWorkspace(model.K, lam, gam)
        for _ in range(8):
            i = int(r.integers(8))
            ws.update(i, r.uniform(-0.1, 0.5), r.normal())
            fresh = EPWorkspace(model.K, ws.Lambda, ws.gamma)
            for j in range(8):
                a, b = ws.cavity(j), fresh.cavity(j)
                assert a.a == pytest.approx(b.a, abs=1e-9)
                assert a.V == pytest.approx(b.V, abs=1e-9)


def test_damping_does_not_move_fixed_point():
    tol = 1e-10
    for model in (random_spin_instance(8, 0.3, 1, 0), probit_toy(3, 2)):
        st = ep_run(model, tol=tol)
        again = ep_run(model, tol=tol, damping=0.7, init=st)
        assert again.converged and again.sweep == 1
        assert again.max_delta <= tol
        np.testing.assert_allclose(again.mean, st.mean, atol=1e-9)


def test_random_schedule_reaches_same_fixed_point():
    model = probit_toy(4, 5)
    a = ep_run(model, tol=1e-12)
    b = ep_run(model, tol=1e-12, schedule="random", seed=3)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
    assert a.logZ_ep == pytest.approx(b.logZ_ep, abs=1e-9)


def test_min_variance_policy_runs():
    model = probit_toy(3, 1)
    st = ep_run(model, neg_cavity_policy="min-variance")
    assert st.converged and st.skipped == ()


def test_invalid_options():
    model = probit_toy(2, 0)
    with pytest.raises(ValueError):
        ep_run(model, schedule="nope")
    with pytest.raises(ValueError):
        ep_run(model, neg_cavity_policy="nope")
    with pytest.raises(ValueError):
        ep_run(model, damping=1.0)


def test_non_convergence_is_reported():
    st = ep_run(random_spin_instance(8, 0.5, 0, 0), max_sweeps=2)
    assert not st.converged and st.sweep == 2


def test_moment_match_flat_site():
    cav = CavityParams.from_moments(0.4, 2.0)
    g = moment_match_site(TiltedSummary(0.4, 2.0, cav.log_normalizer), cav)
    assert g.Lambda == pytest.approx(0.0, abs=1e-15)
    assert g.gamma == pytest.approx(0.0, abs=1e-15)
    assert g.logC == pytest.approx(0.0, abs=1e-15)


def test_moment_match_by_hand():
    g = moment_match_site(TiltedSummary(0.5, 0.5, 0.0), CavityParams.from_moments(0.0, 1.0))
    assert g.Lambda == pytest.approx(1.0, abs=1e-15)
    assert g.gamma == pytest.approx(1.0, abs=1e-15)


def test_moment_match_zero_variance():
    with pytest.raises(OutOfRange):
        moment_match_site(TiltedSummary(0.0, 0.0, 0.0), CavityParams.from_moments(0.0, 1.0))


def test_adf_empty_stream():
    C = np.diag([1.0, 2.0])
    res = adf_run(np.zeros(2), C, [])
    np.testing.assert_array_equal(res.mean, 0.0)
    np.testing.assert_array_equal(res.cov, C)
    assert res.log_evidence == 0.0


def test_adf_projection_locality():
    n = 5
    e1 = np.eye(n)[0]
    res = adf_run(np.zeros(n), np.eye(n), [(e1, Probit(label=1.0))])
    assert res.mean[0] > 0
    np.testing.assert_array_equal(res.mean[1:], 0.0)
    np.testing.assert_array_equal(res.cov[1:, 1:], np.eye(n - 1))
    np.testing.assert_array_equal(res.cov[0, 1:], 0.0)
    assert res.log_evidence == pytest.approx(np.log(0.5), abs=1e-15)


def test_adf_depends_on_order():
    n, T = 10, 30
    r = instance_rng(0, 0, 0)
    w = r.normal(size=n)
    X = r.normal(size=(T, n))
    data = [(x, Probit(label=float(np.sign(x @ w)))) for x in X]
    a = adf_run(np.zeros(n), np.eye(n), data)
    b = adf_run(np.zeros(n), np.eye(n), data[::-1])
    assert np.max(np.abs(a.mean - b.mean)) > 1e-6
    assert len(a.trace) == T


def test_ep_is_order_free():
    model = probit_toy(4, 8, rho=0.7)
    perm = np.array([2, 0, 3, 1])
    permuted = GaussianLatentModel(model.K[np.ix_(perm, perm)], tuple(model.sites[p] for p in perm))
    a = ep_run(model, tol=1e-12)
    b = ep_run(permuted, tol=1e-12)
    np.testing.assert_allclose(a.mean[perm], b.mean, atol=1e-9)
    assert a.logZ_ep == pytest.approx(b.logZ_ep, abs=1e-10)
