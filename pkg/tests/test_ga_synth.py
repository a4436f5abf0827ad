import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatcast import synthgen
from heatcast.errors import PredictorSetMismatchError, TaskMismatchError
from heatcast.forest import CLASSIFICATION, ForestParams, fit
from heatcast.ga_synth import (
    GaParams, SolutionVector, SyntheticPopulation, compare_solutions, evolve, generation_rng,
    next_generation, roulette_probabilities, solution_vector,
)

from helpers import (
    SEPARATING, SEPARATION_PREDICTORS, gain_from_config, hand_forest, hand_tree, leaf,
    separation_config, stump,
)

TABLE_2 = {
    "metersabove": (623.02, 395.78), "land": (0.73, 0.67),
    "temp4": (274.48, 228.16), "temp5": (268.84, 232.32), "temp6": (259.13, 224.15),
    "temp7": (246.98, 225.02), "temp8": (233.93, 211.24), "temp9": (215.74, 245.85),
    "temp10": (217.13, 260.26), "temp11": (218.14, 227.19), "temp12": (220.84, 265.94),
    "mix4": (5.33, 6.97), "mix5": (3.44, 1.47), "mix6": (1.67, 0.76), "mix7": (0.61, 0.16),
    "mix8": (2.60, 6.86), "mix9": (1.31, 5.84), "mix10": (4.47, 3.90), "mix11": (7.68, 5.73),
    "mix12": (2.84, 5.20), "tropheight": (11766.76, 6728.78),
}


def _solution(names, values, fitness=1.0):
    v = np.asarray(values, dtype=float)
    return SolutionVector(list(names), v, fitness, v.copy(), fitness)


def _population(members, fitness):
    members = np.asarray(members, dtype=float)
    p = members.shape[1]
    return SyntheticPopulation([f"x{j}" for j in range(p)], members, np.asarray(fitness, dtype=float),
                               [], members.min(axis=0), members.max(axis=0), None, {})


def step_forest(c=0.7):
    return hand_forest([stump(0, c, 0.0, 1.0)], ["x1", "x2"], [0.0, 0.0], [1.0, 1.0])


def test_constant_landscape():
    pop = evolve(hand_forest([leaf(4.2)], ["a", "b"], [0, 0], [1, 1]),
                 GaParams(population_size=20, n_iterations=30, seed=1))
    assert {best for best, _ in pop.history} == {4.2}
    assert len(pop.history) == 31


@pytest.mark.parametrize("seed", range(5))
def test_step_landscape_concentrates(seed):
    pop = evolve(step_forest(), GaParams(population_size=50, n_iterations=200, seed=seed))
    assert pop.members[:, 0].mean() > 0.7
    bests = [b for b, _ in pop.history]
    assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))


def test_bounds_and_fitness_consistency():
    forest = hand_forest([stump(0, 0.2, 0.0, 1.0), stump(1, 0.9, 3.0, -1.0)], ["a", "b"],
                         [-1.0, 0.0], [1.0, 2.0])
    pop = evolve(forest, GaParams(population_size=30, n_iterations=50, seed=2))
    assert (pop.members >= pop.lower).all() and (pop.members <= pop.upper).all()
    assert np.array_equal(forest.predict_array(pop.members), pop.fitness)


def test_explicit_bounds_override_training_range():
    pop = evolve(step_forest(), GaParams(population_size=20, n_iterations=10, seed=0,
                                         bounds={"x2": (5.0, 6.0)}))
    assert pop.members[:, 1].min() >= 5.0 and pop.members[:, 1].max() <= 6.0


def test_determinism():
    p = GaParams(population_size=20, n_iterations=40, seed=9)
    a, b = evolve(step_forest(), p), evolve(step_forest(), p)
    assert a.to_json() == b.to_json()


def test_rejects_classification_forest():
    tree = hand_tree([-1], [np.nan], [-1], [-1], [[1.0, 1.0]])
    with pytest.raises(TaskMismatchError):
        evolve(hand_forest([tree], ["a"], [0], [1], task=CLASSIFICATION))


@pytest.mark.parametrize("bad", [dict(crossover_prob=1.5), dict(mutation_prob=-0.1),
                                 dict(elitism=100), dict(population_size=1)])
def test_param_validation(bad):
    with pytest.raises(ValueError):
        GaParams(**bad).validate()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_generation_step_keeps_elites_and_bounds(seed, pc, pm):
    rng = np.random.default_rng(seed)
    lower = rng.normal(size=3) - 1
    upper = lower + rng.random(3) * 5
    members = lower + rng.random((12, 3)) * (upper - lower)
    fitness = rng.normal(size=12)
    params = GaParams(population_size=12, elitism=3, crossover_prob=pc, mutation_prob=pm)
    nxt = next_generation(members, fitness, lower, upper, params, generation_rng(seed, 1))
    order = np.argsort(-fitness, kind="stable")
    assert np.array_equal(nxt[:3], members[order[:3]])
    assert (nxt >= lower).all() and (nxt <= upper).all()


def test_roulette_shift():
    assert roulette_probabilities(np.array([1.0, 2.0, 3.0])).tolist() == [0.0, 1 / 3, 2 / 3]
    assert roulette_probabilities(np.array([5.0, 5.0])).tolist() == [0.5, 0.5]


def test_solution_examples():
    same = solution_vector(_population([[1.0, 2.0]] * 4, [1, 2, 3, 4]))
    assert same.values.tolist() == [1.0, 2.0]
    two = solution_vector(_population([[0.0], [4.0]], [1.0, 3.0]))
    assert two.values[0] == 3.0
    assert two.mean_fitness == 2.0
    assert two.best_member.tolist() == [4.0] and two.best_fitness == 3.0


def test_solution_with_negative_fitness_stays_in_bounds():
    sol = solution_vector(_population([[0.0], [2.0], [4.0]], [-3.0, -1.0, 1.0]))
    # shifted weights 0, 2, 4
    assert sol.values[0] == pytest.approx((2 * 2 + 4 * 4) / 6)


def test_solution_json_round_trip():
    sol = _solution(["a", "b"], [1.5, -2.0])
    assert SolutionVector.from_dict(sol.to_dict()).to_json() == sol.to_json()


def test_compare_identical():
    a = _solution(["a", "b", "c"], [1.0, 2.0, 3.0])
    rows = compare_solutions(a, a, k=3)
    assert all(r.delta == 0.0 and not r.selected for r in rows)


def test_compare_table_2():
    names = list(TABLE_2)
    true = _solution(names, [v[0] for v in TABLE_2.values()])
    faux = _solution(names, [v[1] for v in TABLE_2.values()])
    rows = compare_solutions(true, faux, k=3)
    selected = {r.predictor for r in rows if r.selected}
    assert {"tropheight", "metersabove"} <= selected
    assert len(selected) == 3
    assert rows[0].predictor == "tropheight" and rows[0].delta == pytest.approx(5037.98)


def test_compare_mismatch():
    with pytest.raises(PredictorSetMismatchError):
        compare_solutions(_solution(["a"], [1.0]), _solution(["b"], [1.0]))


def test_history_csv(tmp_path):
    pop = evolve(step_forest(), GaParams(population_size=10, n_iterations=5))
    path = tmp_path / "h.csv"
    pop.write_history(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "best", "mean"] and len(rows) == 7
    assert SyntheticPopulation.from_dict(pop.to_dict()).to_json() == pop.to_json()
    assert pop.correlation_matrix().shape == (2, 2)


def test_planted_separation_selected_and_signs_stable():
    hits, signs = 0, 0
    for s in range(20):
        event, _ = gain_from_config(separation_config(s, +1), SEPARATION_PREDICTORS)
        faux, _ = gain_from_config(separation_config(1000 + s, -1), SEPARATION_PREDICTORS,
                                   scenario="faux")
        gp = GaParams(population_size=50, n_iterations=200, seed=s)
        a = solution_vector(evolve(fit(event, ForestParams(n_trees=100, seed=s)), gp))
        b = solution_vector(evolve(fit(faux, ForestParams(n_trees=100, seed=s)), gp))
        rows = compare_solutions(a, b, k=len(SEPARATING))
        hits += {r.predictor for r in rows if r.selected} == set(SEPARATING)
        signs += all(a.as_dict()[p] > b.as_dict()[p] for p in SEPARATING)
    assert hits >= 18 and signs >= 18
