import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btdz.btd import sample_uniform_sphere
from btdz.engine import (PolicyLibrary, RewardProbe, gpi_policy, gpi_q_values, infer_task_vector, make_probe,
                         oracle_return, train_policy_library, zero_shot_eval)
from btdz.errors import InvalidArgumentError, NumericalError
from btdz.mdp import FeatureMap, evaluate_policy_return
from util import random_features, random_mdp, single_state_mdp, swap_mdp


def all_policies(n_states, n_actions):
    return [np.array(p) for p in itertools.product(range(n_actions), repeat=n_states)]


@pytest.fixture(scope="module")
def small():
    mdp = random_mdp(4, 3, 0.9, seed=7)
    fm = random_features(4, 3, seed=1)
    lib = train_policy_library(mdp, fm, sample_uniform_sphere(3, 6, seed=0))
    return mdp, fm, lib


def test_library_entries_optimal_by_enumeration(small):
    mdp, fm, lib = small
    pols = all_policies(4, 3)
    for e in lib.entries:
        r = fm.phi @ e.z
        best = max(evaluate_policy_return(mdp, p, r) for p in pols)
        assert evaluate_policy_return(mdp, e.policy, r) == pytest.approx(best, abs=1e-9)


def test_duplicate_tasks_share_entries():
    mdp, fm = random_mdp(3, 2), random_features(3, 2)
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    lib = train_policy_library(mdp, fm, z)
    assert lib.entries[0] is lib.entries[1]


def test_gpi_matches_brute_force(small):
    mdp, fm, lib = small
    z = np.array([0.3, -0.2, 0.9])
    q = gpi_q_values(lib, z)
    ref = np.empty((len(lib), 4, 3))
    for i, e in enumerate(lib.entries):
        for s in range(4):
            for a in range(3):
                ref[i, s, a] = e.sf.psi_sa[s, a] @ z
    assert np.allclose(q, ref)
    assert np.array_equal(gpi_policy(lib, z), ref.max(axis=0).argmax(axis=1))


def test_gpi_recovers_member_policy(small):
    mdp, fm, lib = small
    for e in lib.entries:
        r = fm.phi @ e.z
        ret = evaluate_policy_return(mdp, gpi_policy(lib, e.z), r)
        assert ret == pytest.approx(evaluate_policy_return(mdp, e.policy, r), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gpi_dominates_members(seed):
    mdp = random_mdp(4, 2, 0.9, seed=seed % 50)
    fm = random_features(4, 2, seed=seed)
    lib = train_policy_library(mdp, fm, sample_uniform_sphere(2, 4, seed=seed))
    z = np.random.default_rng(seed).standard_normal(2)
    r = fm.phi @ z
    gpi_ret = evaluate_policy_return(mdp, gpi_policy(lib, z), r)
    assert gpi_ret >= max(evaluate_policy_return(mdp, e.policy, r) for e in lib.entries) - 1e-9


def test_gpi_tie_lowest_action():
    mdp = single_state_mdp(n_actions=3)
    fm = FeatureMap(np.ones((1, 1)))
    lib = train_policy_library(mdp, fm, np.array([[1.0]]))
    assert gpi_policy(lib, np.array([1.0]))[0] == 0


def test_inference_matches_lstsq(rng):
    fm = random_features(10, 3, seed=2)
    states = rng.integers(0, 10, size=25)
    r = rng.standard_normal(10)
    z, unit = infer_task_vector(RewardProbe(states, r[states]), fm, ridge=0.0)
    ref = np.linalg.lstsq(fm.phi[states], r[states], rcond=None)[0]
    assert np.allclose(z, ref, atol=1e-10)
    assert np.linalg.norm(unit) == pytest.approx(1.0)


def test_inference_ridge_closed_form(rng):
    fm = random_features(6, 2, seed=3)
    probe = RewardProbe(np.arange(6), rng.standard_normal(6))
    X = fm.phi
    ref = np.linalg.solve(X.T @ X / 6 + 0.1 * np.eye(2), X.T @ probe.rewards / 6)
    assert np.allclose(infer_task_vector(probe, fm, 0.1)[0], ref)


def test_inference_singular_without_ridge():
    fm = random_features(5, 3)
    with pytest.raises(NumericalError):
        infer_task_vector(RewardProbe([0, 0, 1], [1.0, 1.0, 0.0]), fm, ridge=0.0)
    with pytest.raises(InvalidArgumentError):
        infer_task_vector(RewardProbe([0], [1.0]), fm, ridge=-1.0)


def test_zero_reward_has_no_direction():
    fm = random_features(4, 2)
    z, unit = infer_task_vector(RewardProbe([0, 1], [0.0, 0.0]), fm)
    assert np.allclose(z, 0.0) and unit is None


def test_oracle_constant_reward():
    mdp = random_mdp(5, 2, 0.8)
    assert oracle_return(mdp, np.full(5, 2.0)) == pytest.approx(2.0 / 0.2)


def test_zero_shot_swap_chain():
    mdp = swap_mdp()
    fm = FeatureMap(np.eye(2))
    lib = train_policy_library(mdp, fm, np.eye(2))
    res = zero_shot_eval(mdp, lib, fm, np.array([1.0, 0.0]), probe_size=2, replace=False)
    # from state 0 the walk alternates: 1 + g^2 + g^4 ...
    assert res.oracle == pytest.approx(1 / (1 - 0.81))
    assert res.ratio == pytest.approx(1.0)


def test_zero_shot_representable_is_optimal():
    mdp = random_mdp(6, 3, 0.9, seed=11)
    fm = random_features(6, 3, seed=5)
    z_star = np.array([0.2, -0.5, 0.8])
    lib = train_policy_library(mdp, fm, np.vstack([sample_uniform_sphere(3, 5, 0).vectors, z_star]))
    res = zero_shot_eval(mdp, lib, fm, fm.phi @ z_star, probe_size=6, replace=False, ridge=1e-10)
    assert res.ratio == pytest.approx(1.0, abs=1e-6)
    assert res.gpi_margin >= -1e-9


def test_zero_shot_deterministic(small):
    mdp, fm, lib = small
    r = np.array([1.0, 0.0, -1.0, 0.5])
    a = zero_shot_eval(mdp, lib, fm, r, probe_size=8, seed=3)
    b = zero_shot_eval(mdp, lib, fm, r, probe_size=8, seed=3)
    assert a.ret == b.ret and np.array_equal(a.z_raw, b.z_raw)


def test_zero_shot_rejects_foreign_library(small):
    mdp, fm, lib = small
    other = random_mdp(4, 3, 0.9, seed=8)
    with pytest.raises(InvalidArgumentError):
        zero_shot_eval(other, lib, fm, np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        zero_shot_eval(mdp, lib, random_features(4, 3, seed=99), np.zeros(4))


def test_probe_without_replacement():
    probe = make_probe(np.arange(5.0), 5, 5, seed=0, replace=False)
    assert np.array_equal(probe.states, np.arange(5))
    with pytest.raises(InvalidArgumentError):
        make_probe(np.arange(5.0), 5, 6, seed=0, replace=False)


def test_library_binary_round_trip(small, tmp_path):
    _, _, lib = small
    path = tmp_path / "lib.bin"
    lib.save(path)
    back = PolicyLibrary.load(path)
    assert back.features_fingerprint == lib.features_fingerprint
    assert back.mdp_fingerprint == lib.mdp_fingerprint
    for a, b in zip(lib.entries, back.entries):
        assert np.array_equal(a.z, b.z) and np.array_equal(a.policy, b.policy)
        assert np.array_equal(a.sf.psi_sa, b.sf.psi_sa)


def test_library_binary_corruption(small):
    blob = small[2].to_bytes()
    with pytest.raises(InvalidArgumentError):
        PolicyLibrary.from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(InvalidArgumentError):
        PolicyLibrary.from_bytes(blob[:-8])


def test_library_input_errors():
    mdp, fm = random_mdp(3, 2), random_features(3, 2)
    with pytest.raises(InvalidArgumentError):
        train_policy_library(mdp, fm, np.zeros((0, 2)))
    with pytest.raises(InvalidArgumentError):
        train_policy_library(mdp, fm, np.ones((1, 3)))
    with pytest.raises(InvalidArgumentError):
        train_policy_library(random_mdp(4, 2), fm, np.ones((1, 2)))
