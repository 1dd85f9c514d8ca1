"""Mode sets, switching controls, costs, jump maps, rewards, validators.

A control is a finite sequence of (time, target mode) pairs with
nondecreasing on-grid times and no self-switches.  The total reward of a
control is the expectation of accumulated running rewards plus the
terminal reward minus the switch costs paid along the way, with the
running term accumulated at left endpoints.  Structural
assumptions on the cost/jump-map family (loop-cost floor, terminal
no-switch margin, chain reduction) each get an exhaustive finite check
that either passes or returns a concrete witness.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .sdde import SddeSpec, TimeGrid, sample_noise_batch, simulate_batch

__all__ = [
    "ModeSet",
    "SwitchingControl",
    "SwitchingCostModel",
    "JumpMapFamily",
    "RewardSpec",
    "SwitchingProblem",
    "ValidationReport",
    "validate_control",
    "validate_no_free_loop",
    "validate_terminal_no_switch",
    "validate_cycle_reduction",
    "evaluate_reward",
]


@dataclass(frozen=True)
class ModeSet:
    """Operating modes labelled 1..n_modes with a designated initial mode."""

    n_modes: int
    initial: int = 1

    def __post_init__(self):
        if self.n_modes < 2:
            raise ValueError("need at least two modes")
        if not 1 <= self.initial <= self.n_modes:
            raise ValueError("initial mode out of range")

    @property
    def labels(self) -> range:
        return range(1, self.n_modes + 1)

    def others(self, b: int):
        return [m for m in self.labels if m != b]


@dataclass(frozen=True)
class SwitchingControl:
    """Switch times and target modes, one entry per switch."""

    times: tuple = ()
    modes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "modes", tuple(int(b) for b in self.modes))
        if len(self.times) != len(self.modes):
            raise ValueError("times and modes must have equal length")

    @classmethod
    def empty(cls) -> "SwitchingControl":
        return cls((), ())

    @property
    def n_switches(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class SwitchingCostModel:
    """Nonnegative switch costs c(b_from, b_to, t) with a loop-cost floor.

    ``loop_floor`` is the declared lower bound on the total cost of any
    mode cycle; :func:`validate_no_free_loop` checks it exhaustively.
    """

    cost: Callable
    loop_floor: float

    def __post_init__(self):
        if not self.loop_floor > 0.0:
            raise ValueError("loop_floor must be strictly positive")

    def __call__(self, b_from: int, b_to: int, t: float) -> float:
        c = float(self.cost(b_from, b_to, t))
        if c < 0.0:
            raise ValueError(f"negative switch cost c({b_from},{b_to},{t}) = {c}")
        return c

    @classmethod
    def from_table(cls, table, loop_floor: float) -> "SwitchingCostModel":
        """Constant costs from a matrix indexed by (b_from - 1, b_to - 1)."""
        arr = np.asarray(table, dtype=float)
        return cls(cost=lambda bf, bt, t: arr[bf - 1, bt - 1], loop_floor=loop_floor)

    @classmethod
    def affine(cls, base: float, slope: float, loop_floor: float) -> "SwitchingCostModel":
        """Pair-independent costs base + slope * t."""
        return cls(cost=lambda bf, bt, t: base + slope * t, loop_floor=loop_floor)


@dataclass(frozen=True)
class JumpMapFamily:
    """State resets h(b_from, b_to, t, x) applied at switches.

    ``apply`` must accept batched states (n, dim).  ``state_bound`` is the
    constant C in |h(t,x)| <= max(C, |x|); ``reduction_length`` the
    declared chain-reduction length checked by
    :func:`validate_cycle_reduction`.  ``target_only`` declares that
    ``apply`` ignores ``b_from`` (the reset depends on the target mode
    alone), which lets the regression solver close same-instant switch
    chains over one moved-state table per target mode.
    """

    apply: Callable
    state_bound: float = 0.0
    time_lipschitz: float = 0.0
    reduction_length: int = 2
    is_identity: bool = False
    target_only: bool = False

    @classmethod
    def identity(cls, reduction_length: int = 2) -> "JumpMapFamily":
        return cls(
            apply=lambda bf, bt, t, x: x,
            reduction_length=reduction_length,
            is_identity=True,
            target_only=True,
        )


@dataclass(frozen=True)
class RewardSpec:
    """Running and terminal rewards with a declared polynomial growth bound.

    ``running(t, x, mode) -> (n,)`` and ``terminal(x) -> (n,)`` on batched
    states; |f| + |g| <= growth_constant * (1 + |x|^growth_exponent).
    """

    running: Callable
    terminal: Callable
    growth_exponent: float = 2.0
    growth_constant: float = 1.0


@dataclass(frozen=True)
class SwitchingProblem:
    """A complete instance: dynamics, modes, costs, jump maps, rewards."""

    dynamics: SddeSpec
    modes: ModeSet
    costs: SwitchingCostModel
    jump_maps: JumpMapFamily
    reward: RewardSpec
    history_reward: Optional[Callable] = None
    """Optional extra terminal reward of the control history itself:
    ``history_reward(times, modes, states) -> (n_paths,)``."""

    @property
    def switch_map(self) -> Callable:
        return self.jump_maps.apply

    def control_cost(self, control: SwitchingControl) -> float:
        total = 0.0
        prev = self.modes.initial
        for t, b in zip(control.times, control.modes):
            total += self.costs(prev, b, t)
            prev = b
        return total


def validate_control(control: SwitchingControl, mode_set: ModeSet, grid: TimeGrid) -> list:
    """Structural admissibility check; returns a list of complaints (empty = ok)."""
    complaints = []
    prev_t = 0.0
    prev_b = mode_set.initial
    for j, (t, b) in enumerate(zip(control.times, control.modes)):
        if t < prev_t:
            complaints.append(f"switch {j}: time {t} decreases below {prev_t}")
        if not (0.0 <= t <= grid.horizon):
            complaints.append(f"switch {j}: time {t} outside [0, {grid.horizon}]")
        else:
            idx = round(t / grid.step)
            if abs(t - idx * grid.step) > 1e-9 * max(grid.step, 1.0):
                complaints.append(f"switch {j}: time {t} is off the grid (step {grid.step})")
        if b == prev_b:
            complaints.append(f"switch {j}: target mode {b} equals the current mode")
        if not 1 <= b <= mode_set.n_modes:
            complaints.append(f"switch {j}: mode {b} outside 1..{mode_set.n_modes}")
        prev_t, prev_b = t, b
    return complaints


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    detail: str
    witness: Optional[tuple] = None
    margin: Optional[float] = None


def validate_no_free_loop(
    costs: SwitchingCostModel, mode_set: ModeSet, time_samples: Sequence[float]
) -> ValidationReport:
    """Exhaustively check that every mode cycle costs at least the floor.

    Enumerates every cycle through distinct modes (length 2..n_modes, all
    traversal orders) and every nondecreasing assignment of times from
    ``time_samples`` to its legs, including the closing leg.  Returns the
    minimum total found; a witness below the floor fails the report.
    """
    if mode_set.n_modes > 8:
        raise ValueError("exhaustive loop check supports at most 8 modes")
    ts = sorted(set(float(t) for t in time_samples))
    if not ts:
        raise ValueError("need at least one time sample")
    best = None
    for length in range(2, mode_set.n_modes + 1):
        for cycle in itertools.permutations(mode_set.labels, length):
            legs = [(cycle[i], cycle[(i + 1) % length]) for i in range(length)]
            for assignment in itertools.combinations_with_replacement(ts, length):
                total = sum(costs(bf, bt, t) for (bf, bt), t in zip(legs, assignment))
                if best is None or total < best[0]:
                    best = (total, cycle, assignment)
    total, cycle, assignment = best
    ok = total >= costs.loop_floor - 1e-12
    detail = f"minimum cycle cost {total} over floor {costs.loop_floor}"
    return ValidationReport(ok=ok, detail=detail, witness=(cycle, assignment), margin=total)


def validate_terminal_no_switch(
    reward: RewardSpec,
    costs: SwitchingCostModel,
    jump_maps: JumpMapFamily,
    mode_set: ModeSet,
    horizon: float,
    probe_states: np.ndarray,
) -> ValidationReport:
    """Check that switching at the horizon strictly loses at every probe state."""
    probes = np.atleast_2d(np.asarray(probe_states, dtype=float))
    g_here = np.asarray(reward.terminal(probes), dtype=float)
    worst = None
    for b in mode_set.labels:
        for b2 in mode_set.others(b):
            moved = np.broadcast_to(
                np.asarray(jump_maps.apply(b, b2, horizon, probes), dtype=float), probes.shape
            )
            margin = g_here - (np.asarray(reward.terminal(moved), dtype=float) - costs(b, b2, horizon))
            i = int(np.argmin(margin))
            if worst is None or margin[i] < worst[0]:
                worst = (float(margin[i]), (b, b2, probes[i].copy()))
    ok = worst[0] > 0.0
    return ValidationReport(
        ok=ok,
        detail=f"minimum terminal margin {worst[0]}",
        witness=worst[1],
        margin=worst[0],
    )


def _compose_chain(jump_maps: JumpMapFamily, chain: Sequence[int], t: float, probes: np.ndarray) -> np.ndarray:
    x = probes
    for bf, bt in zip(chain[:-1], chain[1:]):
        x = np.broadcast_to(np.asarray(jump_maps.apply(bf, bt, t, x), dtype=float), probes.shape)
    return x


def validate_cycle_reduction(
    jump_maps: JumpMapFamily,
    mode_set: ModeSet,
    probe_states: np.ndarray,
    kappa: Optional[int] = None,
    times: Sequence[float] = (0.0,),
    n_chains: int = 25,
    seed: int = 0,
) -> ValidationReport:
    """Check that long switch chains reduce to short ones on the probes.

    For random mode chains of length kappa+1 .. kappa+3 the composed jump
    map must agree (within 1e-9 at every probe) with the composition along
    some subsequence of at most kappa modes; the trivial subsequence
    composes to the identity.  Returns the first offending chain as a
    witness.
    """
    if mode_set.n_modes > 5:
        raise ValueError("reduction check supports at most 5 modes")
    k = jump_maps.reduction_length if kappa is None else int(kappa)
    probes = np.atleast_2d(np.asarray(probe_states, dtype=float))
    rng = np.random.default_rng(seed)
    for length in range(k + 1, k + 4):
        for _ in range(n_chains):
            chain = [int(rng.integers(1, mode_set.n_modes + 1))]
            while len(chain) < length:
                nxt = int(rng.integers(1, mode_set.n_modes + 1))
                if nxt != chain[-1]:
                    chain.append(nxt)
            for t in times:
                full = _compose_chain(jump_maps, chain, t, probes)
                if not _has_short_match(jump_maps, chain, k, t, probes, full):
                    return ValidationReport(
                        ok=False,
                        detail=f"chain {tuple(chain)} at t={t} has no reduction of length <= {k}",
                        witness=(tuple(chain), t),
                    )
    return ValidationReport(ok=True, detail=f"all sampled chains reduce to length <= {k}")


def _has_short_match(jump_maps, chain, k, t, probes, full) -> bool:
    n = len(chain)
    if np.max(np.abs(full - probes)) <= 1e-9:
        return True  # empty subsequence: identity
    for size in range(2, min(k, n) + 1):
        for idx in itertools.combinations(range(n), size):
            sub = [chain[i] for i in idx]
            if any(a == b for a, b in zip(sub[:-1], sub[1:])):
                continue
            if np.max(np.abs(_compose_chain(jump_maps, sub, t, probes) - full)) <= 1e-9:
                return True
    return False


def reward_terms(
    problem: SwitchingProblem,
    grid: TimeGrid,
    control: SwitchingControl,
    states: np.ndarray,
    modes: np.ndarray,
) -> np.ndarray:
    """Per-path total reward of a batch simulated under one control."""
    dt = grid.step
    n = grid.n_steps
    times = grid.times
    total = np.zeros(states.shape[0])
    for i in range(n):
        total += dt * np.asarray(
            problem.reward.running(times[i], states[:, i], int(modes[i])), dtype=float
        )
    total += np.asarray(problem.reward.terminal(states[:, n]), dtype=float)
    total -= problem.control_cost(control)
    if problem.history_reward is not None:
        total += np.asarray(problem.history_reward(control.times, control.modes, states), dtype=float)
    return total


def evaluate_reward(
    problem: SwitchingProblem,
    grid: TimeGrid,
    control: SwitchingControl,
    n_paths: int,
    seed: int,
    quantization: Optional[int] = None,
):
    """Monte Carlo estimate of a control's total reward and its standard error.

    Running rewards are accumulated at left endpoints, the terminal reward
    is taken at the (post-switch) horizon state and switch costs are
    deducted exactly.  Inadmissible controls raise ValueError.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    complaints = validate_control(control, problem.modes, grid)
    if complaints:
        raise ValueError("; ".join(complaints))
    dw, counts = sample_noise_batch(problem.dynamics, grid, seed, n_paths, quantization)
    states, modes = simulate_batch(
        problem.dynamics,
        grid,
        control,
        dw,
        counts,
        switch_map=problem.switch_map,
        initial_mode=problem.modes.initial,
    )
    totals = reward_terms(problem, grid, control, states, modes)
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n_paths))
