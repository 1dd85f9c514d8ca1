"""Non-recombining scenario trees and least dominating supermartingales.

A tree node carries the full path history by construction (no
recombining), so path functionals and delayed lookbacks are exact node
attributes.  For a payoff process U on the tree, the envelope computed
here is the smallest supermartingale dominating U; stopping at the first
node where the envelope touches the payoff attains it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

TOUCH_TOL = 1e-12

__all__ = [
    "ScenarioTree",
    "snell_envelope",
    "optimal_stopping_rule",
    "rule_value",
    "envelope_limit_check",
    "random_dominating_supermartingale",
    "tree_to_json",
    "tree_from_json",
]


@dataclass(frozen=True)
class ScenarioTree:
    """Rooted tree with per-node states and child probabilities.

    ``parents[i]`` is the parent index (-1 for the root, which must be
    node 0), ``probs[i]`` the probability of reaching node i from its
    parent, ``levels[i]`` its depth, ``states`` the (n_nodes, dim) state
    array and ``times`` the per-level time stamps.  Nodes must be ordered
    so that parents precede children.
    """

    parents: np.ndarray
    probs: np.ndarray
    levels: np.ndarray
    states: np.ndarray
    times: np.ndarray
    children: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        levels = np.asarray(self.levels, dtype=np.int64)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        times = np.asarray(self.times, dtype=float)
        for name, val in (("parents", parents), ("probs", probs), ("levels", levels), ("states", states), ("times", times)):
            object.__setattr__(self, name, val)
        n = parents.shape[0]
        if parents[0] != -1 or levels[0] != 0:
            raise ValueError("node 0 must be the root")
        if np.any(parents[1:] >= np.arange(1, n)):
            raise ValueError("parents must precede children")
        children = [[] for _ in range(n)]
        for i in range(1, n):
            children[parents[i]].append(i)
        object.__setattr__(self, "children", children)
        for i in range(n):
            if children[i]:
                mass = probs[children[i]].sum()
                if abs(mass - 1.0) > TOUCH_TOL:
                    raise ValueError(f"child probabilities of node {i} sum to {mass}")

    @property
    def n_nodes(self) -> int:
        return self.parents.shape[0]

    @property
    def n_levels(self) -> int:
        return int(self.levels.max())

    def is_leaf(self, i: int) -> bool:
        return not self.children[i]

    @property
    def leaves(self) -> np.ndarray:
        return np.array([i for i in range(self.n_nodes) if self.is_leaf(i)], dtype=np.int64)

    def time_of(self, i: int) -> float:
        return float(self.times[self.levels[i]])

    def path_to(self, i: int) -> list:
        """Node indices from the root to node i inclusive."""
        path = [i]
        while self.parents[path[-1]] != -1:
            path.append(int(self.parents[path[-1]]))
        return path[::-1]

    def ancestor(self, i: int, steps_back: int) -> int:
        """Ancestor of node i exactly steps_back levels up (clamped at root)."""
        j = i
        for _ in range(steps_back):
            if self.parents[j] == -1:
                break
            j = int(self.parents[j])
        return j

    def reach_probabilities(self) -> np.ndarray:
        """Probability of reaching each node from the root."""
        reach = np.empty(self.n_nodes)
        reach[0] = 1.0
        for i in range(1, self.n_nodes):
            reach[i] = reach[self.parents[i]] * self.probs[i]
        return reach


def snell_envelope(tree: ScenarioTree, payoff: np.ndarray) -> np.ndarray:
    """Smallest supermartingale dominating the payoff process.

    Backward recursion: the envelope equals the payoff at leaves and
    max(payoff, expected child envelope) inside.
    """
    u = np.asarray(payoff, dtype=float)
    if u.shape != (tree.n_nodes,):
        raise ValueError("payoff must have one value per node")
    z = np.empty_like(u)
    for i in range(tree.n_nodes - 1, -1, -1):
        kids = tree.children[i]
        if not kids:
            z[i] = u[i]
        else:
            z[i] = max(u[i], float(np.dot(tree.probs[kids], z[kids])))
    return z


def optimal_stopping_rule(tree: ScenarioTree, payoff: np.ndarray, envelope: Optional[np.ndarray] = None) -> np.ndarray:
    """First-hitting stop set: stop where the envelope touches the payoff.

    Ties count as touching, so the rule stops there.  Leaves always stop.
    """
    u = np.asarray(payoff, dtype=float)
    z = snell_envelope(tree, u) if envelope is None else np.asarray(envelope, dtype=float)
    stop = (z - u) <= TOUCH_TOL
    for i in range(tree.n_nodes):
        if tree.is_leaf(i):
            stop[i] = True
    return stop


def rule_value(tree: ScenarioTree, payoff: np.ndarray, stop: np.ndarray) -> float:
    """Expected payoff of the first-hitting rule defined by a stop set."""
    u = np.asarray(payoff, dtype=float)
    v = np.empty_like(u)
    for i in range(tree.n_nodes - 1, -1, -1):
        if stop[i] or tree.is_leaf(i):
            v[i] = u[i]
        else:
            kids = tree.children[i]
            v[i] = float(np.dot(tree.probs[kids], v[kids]))
    return float(v[0])


@dataclass(frozen=True)
class LimitReport:
    deviations: tuple
    nonincreasing: bool
    final_deviation: float


def envelope_limit_check(
    tree: ScenarioTree,
    payoffs: Sequence[np.ndarray],
    limit_payoff: Optional[np.ndarray] = None,
) -> LimitReport:
    """Track envelope deviations along a payoff sequence.

    Computes max |Z(U_k) - Z(U_lim)| per element; the limit payoff
    defaults to the last element of the sequence.
    """
    lim = payoffs[-1] if limit_payoff is None else limit_payoff
    z_lim = snell_envelope(tree, lim)
    devs = tuple(float(np.max(np.abs(snell_envelope(tree, u) - z_lim))) for u in payoffs)
    noninc = all(a >= b - TOUCH_TOL for a, b in zip(devs[:-1], devs[1:]))
    return LimitReport(deviations=devs, nonincreasing=noninc, final_deviation=devs[-1])


def random_dominating_supermartingale(
    tree: ScenarioTree, payoff: np.ndarray, rng: np.random.Generator, slack_scale: float = 1.0
) -> np.ndarray:
    """A random supermartingale dominating the payoff (for minimality checks).

    Built backward by adding nonnegative slack on top of the exact
    recursion, so dominance and the supermartingale property hold by
    construction.
    """
    u = np.asarray(payoff, dtype=float)
    w = np.empty_like(u)
    for i in range(tree.n_nodes - 1, -1, -1):
        slack = slack_scale * float(rng.random())
        kids = tree.children[i]
        if not kids:
            w[i] = u[i] + slack
        else:
            w[i] = max(u[i], float(np.dot(tree.probs[kids], w[kids]))) + slack
    return w


def tree_to_json(tree: ScenarioTree) -> str:
    """Serialize a tree to JSON (schema: docs/tree_schema.md)."""
    payload = {
        "parents": [int(v) for v in tree.parents],
        "probs": [float(v) for v in tree.probs],
        "levels": [int(v) for v in tree.levels],
        "states": [[float(v) for v in row] for row in tree.states],
        "times": [float(v) for v in tree.times],
    }
    return json.dumps(payload, sort_keys=True)


def tree_from_json(text: str) -> ScenarioTree:
    """Inverse of :func:`tree_to_json`; float values round-trip exactly."""
    payload = json.loads(text)
    return ScenarioTree(
        parents=np.array(payload["parents"], dtype=np.int64),
        probs=np.array(payload["probs"], dtype=float),
        levels=np.array(payload["levels"], dtype=np.int64),
        states=np.array(payload["states"], dtype=float),
        times=np.array(payload["times"], dtype=float),
    )
