import numpy as np
import pytest

from sacha.errors import ContractError, GenerationError
from sacha.evaluation import evaluate, generate_instances, score
from sacha.gridworld import GridMap, MapfInstance
from sacha.heuristics import compute_heuristic_maps

from conftest import DescentPolicy


def fixture():
    corridor = MapfInstance(GridMap(np.zeros((1, 5), dtype=bool)), [(0, 0)], [(0, 4)])
    open3 = MapfInstance(GridMap(np.zeros((3, 3), dtype=bool)), [(0, 0), (2, 0)], [(0, 2), (2, 1)])
    # head-on swap in a one-wide corridor can never finish
    swap = MapfInstance(GridMap(np.zeros((1, 4), dtype=bool)), [(0, 0), (0, 3)], [(0, 3), (0, 0)])
    return [corridor, open3, swap]


@pytest.mark.parametrize("max_steps", [256, 512])
def test_three_instance_fixture(max_steps):
    report = evaluate(DescentPolicy(), fixture(), max_steps=max_steps)
    assert [r.success for r in report.results] == [True, True, False]
    assert [r.steps for r in report.results] == [[4], [2, 1], [max_steps, max_steps]]
    assert report.success_rate == 2 / 3
    assert report.average_step == (4.0 + 1.5 + max_steps) / 3


def test_score_substitutes_max_steps():
    rep = score([[3, 5], [7, 1]], [True, False], 256)
    assert rep.average_step == (4 + 256) / 2
    assert rep.to_json()["results"][1]["steps"] == [256, 256]


def test_all_on_goal_is_instant_success():
    inst = MapfInstance(GridMap(np.zeros((2, 2), dtype=bool)), [(0, 0), (1, 1)], [(0, 0), (1, 1)])
    rep = evaluate(DescentPolicy(), [inst])
    assert rep.success_rate == 1.0 and rep.average_step == 0.0


def test_empty_instance_list():
    with pytest.raises(ContractError, match="no instances"):
        evaluate(DescentPolicy(), [])


def test_report_json_keys():
    rep = evaluate(DescentPolicy(), fixture()[:1])
    js = rep.to_json()
    assert set(js) == {"max_steps", "instances", "success_rate", "average_step", "results"}
    assert js["results"][0]["steps"] == [4]


class TestGenerate:
    def test_deterministic(self):
        grid = GridMap(np.random.default_rng(0).random((12, 12)) < 0.2)
        a = generate_instances(grid, 4, 10, seed=7)
        b = generate_instances(grid, 4, 10, seed=7)
        assert a == b
        assert generate_instances(grid, 4, 10, seed=8) != a

    def test_instances_are_solvable(self):
        grid = GridMap(np.random.default_rng(1).random((12, 12)) < 0.3)
        for inst in generate_instances(grid, 5, 20, seed=0):
            hm = compute_heuristic_maps(inst)
            for i, s in enumerate(inst.starts):
                assert np.isfinite(hm.dist[i][s])
            assert len(set(inst.starts)) == 5 and len(set(inst.goals)) == 5

    def test_single_free_cell(self):
        grid = GridMap.from_rows(["@@", "@."])
        (inst,) = generate_instances(grid, 1, 1, seed=0)
        assert inst.starts == inst.goals == ((1, 1),)
        with pytest.raises(GenerationError):
            generate_instances(grid, 2, 1, seed=0)
