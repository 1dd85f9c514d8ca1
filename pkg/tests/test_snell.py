"""Envelope recursion on scenario trees: dominance, minimality, attainment."""

import numpy as np
import pytest

from conftest import random_scenario_tree
from switchmc.snell import (
    ScenarioTree,
    envelope_limit_check,
    optimal_stopping_rule,
    random_dominating_supermartingale,
    rule_value,
    snell_envelope,
    tree_from_json,
    tree_to_json,
)

TOL = 1e-12


def two_level_tree():
    """Root with two children, each child with two grandchildren."""
    parents = np.array([-1, 0, 0, 1, 1, 2, 2])
    probs = np.array([1.0, 0.5, 0.5, 0.5, 0.5, 0.25, 0.75])
    levels = np.array([0, 1, 1, 2, 2, 2, 2])
    states = np.zeros((7, 1))
    times = np.array([0.0, 0.5, 1.0])
    return ScenarioTree(parents=parents, probs=probs, levels=levels, states=states, times=times)


def test_envelope_by_hand():
    tree = two_level_tree()
    payoff = np.array([0.0, 1.0, 0.0, 4.0, 0.0, 8.0, 0.0])
    z = snell_envelope(tree, payoff)
    assert z[5] == 8.0 and z[6] == 0.0
    assert z[2] == pytest.approx(0.25 * 8.0)
    assert z[1] == pytest.approx(2.0)
    assert z[0] == pytest.approx(0.5 * 2.0 + 0.5 * 2.0)
    stop = optimal_stopping_rule(tree, payoff, z)
    assert not stop[0]
    assert not stop[1] and not stop[2]
    assert rule_value(tree, payoff, stop) == pytest.approx(z[0], abs=TOL)


def test_envelope_never_stops_on_zero_payoff_interior():
    tree = two_level_tree()
    payoff = np.array([0.5, 0.0, 0.0, 1.0, -1.0, 2.0, -2.0])
    z = snell_envelope(tree, payoff)
    assert z[0] == pytest.approx(max(0.5, 0.25))
    stop = optimal_stopping_rule(tree, payoff, z)
    assert stop[0]


def test_tree_validation_errors():
    with pytest.raises(ValueError):
        ScenarioTree(
            parents=np.array([0]),
            probs=np.array([1.0]),
            levels=np.array([0]),
            states=np.zeros((1, 1)),
            times=np.array([0.0]),
        )
    with pytest.raises(ValueError):
        ScenarioTree(
            parents=np.array([-1, 0, 0]),
            probs=np.array([1.0, 0.5, 0.6]),
            levels=np.array([0, 1, 1]),
            states=np.zeros((3, 1)),
            times=np.array([0.0, 1.0]),
        )


def test_snell_properties_random_trees():
    rng = np.random.default_rng(100)
    for _ in range(25):
        tree = random_scenario_tree(rng)
        payoff = rng.normal(size=tree.n_nodes)
        z = snell_envelope(tree, payoff)
        assert np.all(z >= payoff - TOL)
        for i in range(tree.n_nodes):
            kids = tree.children[i]
            if kids:
                assert z[i] >= float(np.dot(tree.probs[kids], z[kids])) - TOL
        for _ in range(3):
            w = random_dominating_supermartingale(tree, payoff, rng)
            assert np.all(w >= z - TOL)
        stop = optimal_stopping_rule(tree, payoff, z)
        assert rule_value(tree, payoff, stop) == pytest.approx(z[0], abs=TOL)


def test_reach_probabilities_sum_per_level():
    rng = np.random.default_rng(5)
    tree = random_scenario_tree(rng)
    reach = tree.reach_probabilities()
    for lev in range(tree.n_levels + 1):
        sel = tree.levels == lev
        assert reach[sel].sum() == pytest.approx(1.0, abs=1e-9)


def test_envelope_limit_tracking():
    rng = np.random.default_rng(8)
    tree = random_scenario_tree(rng)
    u = rng.normal(size=tree.n_nodes)
    bump = rng.normal(size=tree.n_nodes)
    payoffs = [u + bump * (0.5**j) for j in range(6)] + [u]
    rep = envelope_limit_check(tree, payoffs)
    assert rep.nonincreasing
    assert rep.final_deviation == 0.0
    assert rep.deviations[0] >= rep.deviations[-2]


def test_tree_json_roundtrip():
    rng = np.random.default_rng(3)
    tree = random_scenario_tree(rng, dim=2)
    clone = tree_from_json(tree_to_json(tree))
    assert np.array_equal(clone.parents, tree.parents)
    assert np.array_equal(clone.probs, tree.probs)
    assert np.array_equal(clone.states, tree.states)
    payoff = rng.normal(size=tree.n_nodes)
    assert np.array_equal(snell_envelope(clone, payoff), snell_envelope(tree, payoff))


def test_ancestor_and_path():
    tree = two_level_tree()
    assert tree.path_to(5) == [0, 2, 5]
    assert tree.ancestor(5, 1) == 2
    assert tree.ancestor(5, 5) == 0
    assert tree.time_of(5) == 1.0
    assert sorted(tree.leaves.tolist()) == [3, 4, 5, 6]
