import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsa import noise as Nz

LAM = 0.7


def lambda_chain_model():
    """Two states with second eigenvalue 0.7 and A(x) = -2 +/- 1, b constant."""
    chain = Nz.chain_with_lambda2(2, LAM, stationary=[0.5, 0.5])
    A = np.array([[[-1.0]], [[-3.0]]])
    b = np.ones((2, 1, 1))
    return Nz.NoiseModel(chain, A, b)


def test_chain_validation():
    with pytest.raises(Nz.NoiseError):
        Nz.MarkovChain(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(Nz.NoiseError) as exc:
        Nz.MarkovChain(np.eye(2))
    assert exc.value.assumption == "chain-ergodic"
    with pytest.raises(Nz.NoiseError):
        Nz.MarkovChain(np.array([[0.0, 1.0], [1.0, 0.0]]))  # periodic


def test_stationary_examples():
    mu = Nz.stationary_distribution(Nz.MarkovChain(np.array([[0.9, 0.1], [0.2, 0.8]])))
    assert np.allclose(mu, [2 / 3, 1 / 3], atol=1e-14)
    ds = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    assert np.allclose(Nz.stationary_distribution(Nz.MarkovChain(ds)), 1 / 3)
    assert np.array_equal(Nz.stationary_distribution(Nz.MarkovChain(np.ones((1, 1)))), [1.0])


def test_sample_path_examples():
    one = Nz.MarkovChain(np.ones((1, 1)))
    assert np.all(Nz.sample_path(one, 50, seed=1) == 0)
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    p1 = Nz.sample_path(Nz.MarkovChain(P), 100, seed=5)
    assert np.array_equal(p1, Nz.sample_path(Nz.MarkovChain(P), 100, seed=5))
    assert len(p1) == 101
    fixed = Nz.MarkovChain(np.array([[0.999999, 0.000001], [0.5, 0.5]]), initial=0)
    assert Nz.sample_path(fixed, 10, seed=0)[0] == 0


def test_sample_path_occupancy_clt():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    path = Nz.sample_path(Nz.MarkovChain(P), 100_000, seed=7)
    freq = np.mean(path == 0)
    # asymptotic variance of the occupancy of a two-state chain: mu0 mu1 (1 + lam) / (1 - lam)
    lam = 1 - 0.1 - 0.2
    sd = math.sqrt((2 / 3) * (1 / 3) * (1 + lam) / (1 - lam) / len(path))
    assert abs(freq - 2 / 3) <= 3 * sd


def test_limits_and_norms():
    m = Nz.NoiseModel(Nz.iid_chain(3, seed=2), *Nz.random_hurwitz_maps(3, 2, 2, seed=2))
    assert np.allclose(m.A_limit, np.einsum("x,xkl->kl", m.mu, m.A_states), atol=1e-12)
    assert m.A_max == pytest.approx(max(np.linalg.svd(A, compute_uv=False)[0] for A in m.A_states), rel=1e-12)
    assert m.b_max == pytest.approx(max(np.linalg.norm(v) for v in m.b_states.reshape(-1, 2)), rel=1e-12)
    assert np.linalg.norm(m.A_limit, 2) <= m.A_max + 1e-12
    assert np.linalg.norm(m.b_limits, axis=1).max() <= m.b_max + 1e-12


def test_hurwitz_is_enforced():
    chain = Nz.iid_chain(2)
    with pytest.raises(Nz.NoiseError) as exc:
        Nz.NoiseModel(chain, np.ones((2, 1, 1)), np.zeros((2, 1, 1)))
    assert exc.value.assumption == "hurwitz-mean"
    loose = Nz.NoiseModel(chain, np.ones((2, 1, 1)), np.zeros((2, 1, 1)), strict=False)
    assert loose.violations()[0][0] == "hurwitz-mean"


def test_mixing_time_examples():
    one = Nz.NoiseModel(Nz.MarkovChain(np.ones((1, 1))), -np.ones((1, 1, 1)), np.ones((1, 2, 1)))
    assert Nz.mixing_time(one, 1e-3) == 0
    iid = Nz.NoiseModel(Nz.iid_chain(4, seed=1), *Nz.random_hurwitz_maps(4, 2, 2, seed=1))
    assert Nz.mixing_time(iid, 1e-6) <= 1
    m = lambda_chain_model()
    # deviation from the mean is exactly 0.7^t from either start state
    assert Nz.mixing_time(m, 0.01) == math.ceil(math.log(0.01) / math.log(LAM))


def test_mixing_profile_exact_crossings():
    m = lambda_chain_model()
    prof = Nz.MixingProfile(m, alpha_floor=1e-6)
    assert np.allclose(prof.dev[:30], LAM ** np.arange(30), rtol=1e-9)
    for a, want in ((1e-1, 7), (1e-2, 13), (1e-3, 20)):
        assert prof.tau(a) == want
    assert np.all(prof.dev <= prof.envelope + 1e-15)


def test_geometric_rate_constant():
    one = Nz.NoiseModel(Nz.MarkovChain(np.ones((1, 1))), -np.ones((1, 1, 1)), np.ones((1, 1, 1)))
    assert Nz.geometric_rate_constant(one, np.logspace(-1, -4, 7)) == 0.0
    C = Nz.geometric_rate_constant(lambda_chain_model(), np.logspace(-1, -4, 7))
    assert C == pytest.approx(1 / math.log(1 / LAM), rel=0.1)
    iid = Nz.NoiseModel(Nz.iid_chain(3), *Nz.random_hurwitz_maps(3, 1, 1))
    assert Nz.geometric_rate_constant(iid, np.logspace(-1, -6, 11)) <= 1 / math.log(10) * (1 + 1e-12)


def test_td_instance():
    zero = Nz.td_instance(seed=1, n_states=3, dim=2, n_agents=2, rewards=np.zeros((2, 3)))
    assert np.allclose(zero.fixed_point(), 0)
    single = Nz.td_instance(seed=4, n_states=4, dim=2, n_agents=1)
    m = single.model
    direct = np.linalg.solve(m.A_limit, -m.b_limits[0])
    assert np.allclose(single.fixed_point(), direct, atol=1e-10)
    r = np.array([[0.2, 0.9, 0.4]])
    rbar = np.full((1, 3), 0.5)
    split = Nz.td_instance(seed=2, n_states=3, dim=2, n_agents=2, rewards=np.vstack([r, 2 * rbar - r]))
    pooled = Nz.td_instance(seed=2, n_states=3, dim=2, n_agents=1, rewards=rbar)
    uniform_target = np.linalg.solve(split.model.A_limit, -split.model.b_limits.mean(axis=0))
    assert np.allclose(uniform_target, pooled.fixed_point(), atol=1e-10)


@given(st.integers(2, 5), st.floats(0.0, 0.9), st.integers(0, 1000))
def test_envelope_dominates_deviation(n, lam, seed):
    chain = Nz.chain_with_lambda2(n, lam, seed=seed)
    m = Nz.NoiseModel(chain, *Nz.random_hurwitz_maps(n, 2, 2, seed=seed))
    prof = Nz.MixingProfile(m, alpha_floor=1e-8)
    # the suffix max of dev never exceeds the envelope at the same index
    assert np.all(prof.suffix_max <= prof.envelope + 1e-12)
    for a in (1e-1, 1e-3, 1e-6):
        t = prof.tau(a)
        assert np.all(prof.dev[t:] <= a)
        if t > 0:
            assert prof.suffix_max[t - 1] > a


@given(st.integers(1, 5), st.integers(0, 500))
def test_norms_attained_by_enumeration(n, seed):
    m = Nz.NoiseModel(Nz.iid_chain(n, seed=seed), *Nz.random_hurwitz_maps(n, 3, 2, seed=seed))
    per_state = [np.sqrt(np.linalg.eigvalsh(A.T @ A).max()) for A in m.A_states]
    assert m.A_max == pytest.approx(max(per_state), rel=1e-10)
