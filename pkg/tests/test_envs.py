import numpy as np
import pytest

from btdz.envs import builtin_names, four_rooms, make_env
from btdz.errors import InvalidArgumentError
from btdz.mdp import evaluate_policy_return


@pytest.mark.parametrize("name", builtin_names())
def test_builtin_envs_well_formed(name):
    mdp, tasks = make_env(name)
    assert np.allclose(mdp.transitions.sum(axis=2), 1.0)
    assert mdp.initial_dist.sum() == pytest.approx(1.0)
    assert mdp.n_states == 64 and len(tasks) == 4
    for r in tasks.values():
        assert r.shape == (64,) and np.any(r != 0)


def test_size_parameter_propagates_to_tasks():
    mdp, tasks = make_env("corridor", length=12)
    assert mdp.n_states == 12 and all(r.size == 12 for r in tasks.values())


def test_four_rooms_wall_blocks_without_slip():
    mdp = four_rooms(size=4, slip=0.0)
    # row 0, column 1 moving east hits the wall between rooms (doors at rows 1 and 2)
    east = 2
    assert mdp.transitions[east, 1, 1] == 1.0
    assert mdp.transitions[east, 4 + 1, 4 + 2] == 1.0


def test_corridor_stay_action():
    mdp, tasks = make_env("corridor", length=8)
    stay = np.zeros(8, dtype=np.int64)
    ret = evaluate_policy_return(mdp, stay, tasks["hold_center"])
    start = mdp.initial_dist
    assert ret == pytest.approx(start @ tasks["hold_center"] / (1 - mdp.discount))


def test_unknown_env_and_bad_sizes():
    with pytest.raises(InvalidArgumentError):
        make_env("moon_base")
    with pytest.raises(InvalidArgumentError):
        make_env("four_rooms", size=5)
    with pytest.raises(InvalidArgumentError):
        make_env("corridor", length=2)
