"""Regression Monte Carlo solver for the switching value family.

The value of being in mode b at grid time t_i with at most k switches
left is approximated by per-(budget, mode, time) linear regressions on
polynomial features of the current and delayed state.

Training data come from one exploration ensemble: every path starts from
the common initial state, gets a randomized starting mode, and re-rolls
its mode at random grid instants (applying the switch reset map, but no
cost, since randomization is a sampling device rather than a control).
That way each per-mode regression is fitted on, and later evaluated at,
states the controlled system actually reaches under mixed mode
histories.  Mode-frozen ensembles would park every mode in its own
corner of the state space and turn each cross-mode evaluation into an
extrapolation.

The family is built by backward induction in the budget index:

* Per (k, b, i) a regression on the paths that ran in mode b across
  [t_i, t_{i+1}) fits the conditional expectation of the next-step
  level-k value.
* The level-k value at (i, b) is the larger of the fitted continuation
  (running reward over the step plus that fit) and the best switch,
  whose value is read from the level-(k-1) table of the target mode at
  the post-switch state, at the same instant, so same-instant switch
  chains compose.  Closing that recursion needs the switch reset to be
  either the identity or a function of the target mode alone; the moved
  values then live in one table per target mode.
* Every surface evaluation is clipped to the empirical range of its
  regression targets.  A conditional mean cannot leave the target range,
  so the clip only suppresses polynomial extrapolation far from the
  training cloud.

Certification resimulates the extracted policy on a fresh seed and
reports the gap between the root value and the realized reward.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controls import SwitchingProblem
from .sdde import DivergedError, TimeGrid, _draw_one, euler_increment, sample_noise_batch

__all__ = [
    "FeatureMap",
    "FitInfo",
    "SolveDiagnostics",
    "ValueSurface",
    "Policy",
    "CertifyReport",
    "solve",
    "extract_policy",
    "certify",
    "surface_to_csv",
    "diagnostics_to_json",
]

GAP_TOL_SCALE = 1e-3
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class FeatureMap:
    """Polynomial features of (current state, delayed state).

    Columns: constant, each variable, each variable to powers 2..degree,
    and pairwise products when cross_terms is set.  The delayed state
    contributes variables only when the problem has a positive delay.
    """

    degree: int = 2
    cross_terms: bool = True

    def design(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
        v = x if y is None else np.concatenate([x, y], axis=1)
        cols = [np.ones(v.shape[0])]
        for j in range(v.shape[1]):
            cols.append(v[:, j])
        for deg in range(2, self.degree + 1):
            for j in range(v.shape[1]):
                cols.append(v[:, j] ** deg)
        if self.cross_terms and self.degree >= 2:
            for j in range(v.shape[1]):
                for l in range(j + 1, v.shape[1]):
                    cols.append(v[:, j] * v[:, l])
        return np.column_stack(cols)

    def n_features(self, dim: int, use_delay: bool) -> int:
        nv = dim * (2 if use_delay else 1)
        p = 1 + nv + nv * max(self.degree - 1, 0)
        if self.cross_terms and self.degree >= 2:
            p += nv * (nv - 1) // 2
        return p


@dataclass(frozen=True)
class FitInfo:
    rank: int
    n_features: int
    used_ridge: bool
    resid_std: float

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n_features


def _fit(design: np.ndarray, target: np.ndarray):
    """Least squares with constant-column pruning and a ridge fallback.

    Feature columns that are exactly constant across the training batch
    (beyond the leading intercept) carry no information and would let the
    minimum-norm solution smear the fitted level across them; evaluating
    such a fit at a state whose constant components differ, as happens
    when a switch map rewrites part of the state, then extrapolates
    wildly.  Those columns are dropped (their effect lands in the
    intercept) and get zero coefficients.  ``numpy.linalg.lstsq``
    resolves remaining rank deficiency by the minimum-norm solution,
    which keeps degenerate (e.g. deterministic) fits exact; the ridge
    path only triggers if that still produces non-finite coefficients.
    """
    keep = np.ptp(design, axis=0) != 0.0
    keep[0] = True
    reduced = design[:, keep]
    sol, _, rank, _ = np.linalg.lstsq(reduced, target, rcond=None)
    used_ridge = False
    if not np.all(np.isfinite(sol)):
        gram = reduced.T @ reduced
        p = gram.shape[0]
        lam = RIDGE_SCALE * np.trace(gram) / p
        sol = np.linalg.solve(gram + lam * np.eye(p), reduced.T @ target)
        used_ridge = True
    coef = np.zeros(design.shape[1])
    coef[keep] = sol
    resid = target - reduced @ sol
    dof = max(design.shape[0] - rank, 1)
    info = FitInfo(
        rank=int(rank),
        n_features=int(keep.sum()),
        used_ridge=used_ridge,
        resid_std=float(np.sqrt(resid @ resid / dof)),
    )
    return coef, info


def _prediction_se(fit_design: np.ndarray, resid_std: float, eval_design: np.ndarray) -> np.ndarray:
    """Regression prediction standard error, using the pruning of ``_fit``."""
    keep = np.ptp(fit_design, axis=0) != 0.0
    keep[0] = True
    reduced = fit_design[:, keep]
    gram_pinv = np.linalg.pinv(reduced.T @ reduced)
    rows = eval_design[:, keep]
    lev = np.einsum("ij,jk,ik->i", rows, gram_pinv, rows)
    return resid_std * np.sqrt(np.maximum(lev, 0.0))


def _isotonic(seq: np.ndarray) -> np.ndarray:
    """Least-squares nondecreasing fit by pool adjacent violators.

    Monotone input comes back unchanged, so exact (noise-free) level
    sequences are never perturbed.  A decreasing run is replaced by its
    mean, which averages statistically tied levels instead of lifting
    them to their upper envelope.
    """
    vals = [float(v) for v in seq]
    weights = [1.0] * len(vals)
    out = []
    wout = []
    for v, w in zip(vals, weights):
        out.append(v)
        wout.append(w)
        while len(out) > 1 and out[-2] > out[-1]:
            v2, w2 = out.pop(), wout.pop()
            v1, w1 = out.pop(), wout.pop()
            out.append((v1 * w1 + v2 * w2) / (w1 + w2))
            wout.append(w1 + w2)
    flat = np.empty(len(vals))
    pos = 0
    for v, w in zip(out, wout):
        hits = int(round(w))
        flat[pos : pos + hits] = v
        pos += hits
    return flat


def _moved_state(problem: SwitchingProblem, b2: int, t: float, x: np.ndarray) -> np.ndarray:
    """State after a switch into mode b2 (reset maps must ignore the source)."""
    labels = problem.modes.labels
    b_from = labels[0] if labels[0] != b2 else labels[1]
    out = np.asarray(problem.jump_maps.apply(b_from, b2, t, x), dtype=float)
    return np.broadcast_to(out, x.shape)


@dataclass
class SolveDiagnostics:
    k_levels: int = 0
    k_max_requested: int = 0
    converged: bool = False
    final_gap: float = float("nan")
    gap_by_k: list = field(default_factory=list)
    rank_deficient_fits: int = 0
    ridge_fits: int = 0
    empty_subset_fits: int = 0
    probe_values: dict = field(default_factory=dict)
    probe_se: dict = field(default_factory=dict)
    root_values: dict = field(default_factory=dict)
    root_se: dict = field(default_factory=dict)


@dataclass
class ValueSurface:
    """Fitted value family, one continuation regression per (k, b, i).

    The value itself is not a stored regression but the backward formula
    replayed on top of the continuation fits: the larger of continuation
    and best intervention, where interventions read the level-(k-1)
    values of the target modes at the post-switch states.  ``value_at``
    and the policy both evaluate that formula, so decisions reproduce
    exactly what the training pass compared.
    """

    problem: SwitchingProblem
    grid: TimeGrid
    feature_map: FeatureMap
    use_delay: bool
    k_max_requested: int
    k_levels: int
    train_seed: int
    quantization: Optional[int]
    explore_prob: float
    cont_coef: dict
    cont_range: dict
    root_value: dict
    root_se: dict
    diagnostics: SolveDiagnostics

    def design(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.feature_map.design(x, y if self.use_delay else None)

    def _tab_eval(self, i: int, x: np.ndarray, y: np.ndarray, k_hi: Optional[int] = None):
        """Value tables at interior index i for budgets 0..k_hi.

        Returns (tab, moved), each of shape (k_hi + 1, n_modes, n_rows):
        the value per mode at the given states, and the value per target
        mode at the corresponding post-switch states.  For identity
        reset maps the two are the same array.  Levels are the raw
        per-budget fits; only reported root and probe values are
        monotonized, never the surfaces decisions compare, since a
        running max would bias the intervention side upward.
        """
        problem = self.problem
        grid = self.grid
        if not 0 <= i < grid.n_steps:
            raise ValueError("value tables live on interior grid indices")
        k_top = self.k_levels if k_hi is None else k_hi
        modes = problem.modes
        m = modes.n_modes
        t = grid.times[i]
        dt = grid.step
        yv = y if self.use_delay else None
        A = self.feature_map.design(x, yv)
        n_rows = x.shape[0]
        identity = problem.jump_maps.is_identity
        run_pre = np.empty((m, n_rows))
        for b in modes.labels:
            run_pre[b - 1] = dt * np.asarray(problem.reward.running(t, x, b), dtype=float)
        if not identity:
            moved_design = {}
            run_moved = {}
            for b2 in modes.labels:
                xm = _moved_state(problem, b2, t, x)
                moved_design[b2] = self.feature_map.design(xm, yv)
                run_moved[b2] = dt * np.asarray(problem.reward.running(t, xm, b2), dtype=float)
        tab = np.empty((k_top + 1, m, n_rows))
        tabm = tab if identity else np.empty_like(tab)
        for k in range(k_top + 1):
            for b in modes.labels:
                lo, hi = self.cont_range[(k, b, i)]
                c = run_pre[b - 1] + np.clip(A @ self.cont_coef[(k, b, i)], lo, hi)
                if k == 0:
                    tab[k, b - 1] = c
                else:
                    best = np.full(n_rows, -np.inf)
                    for b2 in modes.others(b):
                        np.maximum(best, tabm[k - 1, b2 - 1] - problem.costs(b, b2, t), out=best)
                    tab[k, b - 1] = np.maximum(c, best)
            if not identity:
                for b2 in modes.labels:
                    lo, hi = self.cont_range[(k, b2, i)]
                    cm = run_moved[b2] + np.clip(
                        moved_design[b2] @ self.cont_coef[(k, b2, i)], lo, hi
                    )
                    if k == 0:
                        tabm[k, b2 - 1] = cm
                    else:
                        best = np.full(n_rows, -np.inf)
                        for b3 in modes.others(b2):
                            np.maximum(
                                best, tabm[k - 1, b3 - 1] - problem.costs(b2, b3, t), out=best
                            )
                        tabm[k, b2 - 1] = np.maximum(cm, best)
        return tab, tabm

    def value_at(self, k: int, b: int, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Fitted value of mode b with budget k at grid index i."""
        if i == self.grid.n_steps:
            return np.asarray(self.problem.reward.terminal(x), dtype=float)
        tab, _ = self._tab_eval(i, x, y, k_hi=k)
        return tab[k, b - 1]

    def continuation_at(self, k: int, b: int, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Value of staying in b across [t_i, t_{i+1}): running reward plus fit."""
        if i == self.grid.n_steps:
            return np.asarray(self.problem.reward.terminal(x), dtype=float)
        lo, hi = self.cont_range[(k, b, i)]
        run = self.grid.step * np.asarray(
            self.problem.reward.running(self.grid.times[i], x, b), dtype=float
        )
        return run + np.clip(self.design(x, y) @ self.cont_coef[(k, b, i)], lo, hi)

    @property
    def y0(self) -> float:
        return self.root_value[(self.k_levels, self.problem.modes.initial)]

    @property
    def y0_se(self) -> float:
        return self.root_se[(self.k_levels, self.problem.modes.initial)]


def _randomized_ensemble(
    problem: SwitchingProblem,
    grid: TimeGrid,
    n_paths: int,
    seed,
    quantization,
    explore_prob: float,
):
    """Paths whose mode re-rolls at random grid instants.

    At time zero half the paths keep the initial mode and half draw a
    uniform one, so every mode carries data from the first step on; at
    interior instants each path switches to a uniform other mode with
    probability ``explore_prob``.  Reset maps are applied, costs are not
    (the randomization samples states, it does not act).  Returns
    pre-switch states, post-switch states, the mode driving each step,
    the initial segment, and the delay in steps.  Per-path noise and
    mode draws come from one spawned stream each, so results do not
    depend on batching.
    """
    spec = problem.dynamics
    modes = problem.modes
    labels = list(modes.labels)
    m = len(labels)
    n = grid.n_steps
    times = grid.times
    dt = grid.step
    d = spec.delay_steps(grid)
    pres = spec.presegment(grid)

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    dw = np.empty((n_paths, n, spec.brownian_dim))
    counts = np.zeros((n_paths, n, spec.n_marks), dtype=np.int64)
    u_start = np.empty(n_paths)
    pick_start = np.empty(n_paths, dtype=np.int64)
    u_switch = np.empty((n_paths, n))
    pick_switch = np.empty((n_paths, n), dtype=np.int64)
    for p, child in enumerate(root.spawn(n_paths)):
        rng = np.random.default_rng(child)
        dw[p], counts[p] = _draw_one(rng, spec, grid, quantization)
        u_start[p] = rng.random()
        pick_start[p] = rng.integers(0, m)
        u_switch[p] = rng.random(n)
        pick_switch[p] = rng.integers(0, max(m - 1, 1), size=n)

    label_arr = np.asarray(labels, dtype=np.int64)
    x = np.broadcast_to(spec.initial_state(), (n_paths, spec.dim)).copy()
    mode = np.full(n_paths, modes.initial, dtype=np.int64)
    pre = np.empty((n_paths, n + 1, spec.dim))
    post = np.empty_like(pre)
    mode_of_step = np.empty((n_paths, n + 1), dtype=np.int64)

    for i in range(n + 1):
        t = times[i]
        pre[:, i] = x
        if i == 0:
            target = label_arr[pick_start]
            explore = (u_start >= 0.5) & (target != mode)
        elif i < n:
            explore = u_switch[:, i] < explore_prob
            target = np.zeros(n_paths, dtype=np.int64)
            for b in labels:
                rows = np.flatnonzero(explore & (mode == b))
                if rows.size:
                    alt = np.asarray(modes.others(b), dtype=np.int64)
                    target[rows] = alt[pick_switch[rows, i] % alt.size]
        else:
            explore = np.zeros(n_paths, dtype=bool)
        if explore.any():
            for b in labels:
                rows_b = np.flatnonzero(explore & (mode == b))
                if rows_b.size == 0:
                    continue
                for b2 in np.unique(target[rows_b]):
                    rows = rows_b[target[rows_b] == b2]
                    moved = np.asarray(
                        problem.jump_maps.apply(int(b), int(b2), t, x[rows]), dtype=float
                    )
                    x[rows] = np.broadcast_to(moved, x[rows].shape)
                    mode[rows] = b2
        post[:, i] = x
        mode_of_step[:, i] = mode
        if i == n:
            break
        if d == 0:
            y = x
        elif i >= d:
            y = post[:, i - d]
        else:
            y = np.broadcast_to(pres[i], x.shape)
        x_new = np.empty_like(x)
        for b in np.unique(mode):
            sel = mode == b
            counts_row = counts[sel, i] if spec.jump_intensity > 0.0 else None
            x_new[sel] = x[sel] + euler_increment(
                spec, dt, t, x[sel], y[sel], int(b), dw[sel, i], counts_row
            )
        x = x_new
        if not np.all(np.isfinite(x)) or np.linalg.norm(x, axis=1).max() > spec.state_bound:
            raise DivergedError(i + 1)
    return pre, post, mode_of_step, pres, d


def solve(
    problem: SwitchingProblem,
    grid: TimeGrid,
    feature_map: Optional[FeatureMap] = None,
    k_max: Optional[int] = None,
    n_paths: int = 4000,
    seed: int = 0,
    quantization: Optional[int] = None,
    probe_paths: int = 48,
    workers: int = 1,
    explore_prob: float = 0.15,
    se_batches: int = 8,
) -> ValueSurface:
    """Fit the budget-indexed value family for k = 0..k_max backward.

    Stops early at the first k where both the root move and every
    statistically resolvable probe move against k-1 (the change beyond
    three paired standard errors) fall below 1e-3 * (1 + |root value|);
    otherwise runs to k_max and flags the surface as unconverged (with a
    warning carrying the last gap).  ``explore_prob`` is the per-instant
    mode re-roll probability of the training ensemble; ``workers`` is
    validated but the backward pass itself runs single-process.
    ``se_batches`` controls the root standard error: the pass is rerun
    on that many independent path blocks and the spread of their root
    values is reported (values below 2 keep the cheaper and much too
    optimistic design-conditional error).
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if se_batches < 0:
        raise ValueError("se_batches must be nonnegative")
    if not 0.0 <= explore_prob < 1.0:
        raise ValueError("explore_prob must lie in [0, 1)")
    maps = problem.jump_maps
    if not (maps.is_identity or maps.target_only):
        raise ValueError(
            "the regression solver needs identity or target-only switch resets; "
            "source-dependent resets are only supported by the exact oracle"
        )
    fm = feature_map or FeatureMap()
    modes = problem.modes
    m = modes.n_modes
    labels = list(modes.labels)
    if k_max is None:
        k_max = m + 2
    n = grid.n_steps
    dt = grid.step
    times = grid.times
    identity = maps.is_identity

    pre, post, mode_of_step, pres, d = _randomized_ensemble(
        problem, grid, n_paths, seed, quantization, explore_prob
    )
    use_delay = d > 0
    P = n_paths
    dim = problem.dynamics.dim

    fit_rows = {
        (b, i): np.flatnonzero(mode_of_step[:, i] == b) for b in labels for i in range(n)
    }
    g_pre = np.asarray(problem.reward.terminal(pre[:, n]), dtype=float)
    if not identity:
        g_moved = np.empty((m, P))
        for b2 in labels:
            g_moved[b2 - 1] = np.asarray(
                problem.reward.terminal(_moved_state(problem, b2, times[n], pre[:, n])),
                dtype=float,
            )

    diag = SolveDiagnostics(k_max_requested=k_max)
    cont_coef = {}
    cont_range = {}
    root_value = {}
    root_se = {}

    probe_times = sorted({0, n // 4, n // 2, (3 * n) // 4} - {n})
    q = min(probe_paths, P)

    def record_fit(info: FitInfo):
        if info.rank_deficient:
            diag.rank_deficient_fits += 1
        if info.used_ridge:
            diag.ridge_fits += 1

    def run_level(k: int, moved_prev, ens, coef_store, range_store, record: bool):
        """One backward pass at budget k; returns (post-switch tables, roots).

        ``ens`` bundles the path arrays the pass runs on, so the same
        recursion serves the full ensemble and the path-block reruns
        behind the spread-based root standard error (those pass
        ``record`` false and throwaway stores).  Regression targets stay
        raw; root and probe values are recorded per level as fitted and
        projected onto the nondecreasing-in-k cone once the budget loop
        finishes, since that is a property of the quantity they
        estimate.  Clamping the training targets instead would rectify
        fit noise upward at every step and compound that bias through
        the backward recursion.
        """
        pre_e, post_e, rows_e, g_pre_e, g_moved_e = ens
        n_rows = pre_e.shape[0]
        tab = np.empty((n + 1, m, n_rows))
        tab[n] = g_pre_e
        if identity:
            moved = tab
        else:
            moved = np.empty_like(tab)
            moved[n] = g_moved_e
        probe_se_parts = {}
        for i in range(n - 1, -1, -1):
            t = times[i]
            if not use_delay:
                y_del = None
            elif i >= d:
                y_del = post_e[:, i - d]
            else:
                y_del = np.broadcast_to(pres[i], (n_rows, dim))
            A_post = fm.design(post_e[:, i], y_del)
            A_pre = A_post if identity else fm.design(pre_e[:, i], y_del)
            fit_design = {}
            fit_rstd = {}
            for b in labels:
                rows = rows_e[(b, i)]
                target_all = tab[i + 1, b - 1]
                if rows.size:
                    F = A_post[rows]
                    target = target_all[rows]
                else:
                    F = A_post
                    target = target_all
                    if record:
                        diag.empty_subset_fits += 1
                coef, info = _fit(F, target)
                if record:
                    record_fit(info)
                coef_store[(k, b, i)] = coef
                range_store[(k, b, i)] = (float(target.min()), float(target.max()))
                fit_design[b] = F
                fit_rstd[b] = info.resid_std
            cont_pre = np.empty((m, n_rows))
            for b in labels:
                lo, hi = range_store[(k, b, i)]
                run = dt * np.asarray(problem.reward.running(t, pre_e[:, i], b), dtype=float)
                cont_pre[b - 1] = run + np.clip(A_pre @ coef_store[(k, b, i)], lo, hi)
            if not identity:
                cont_moved = np.empty((m, n_rows))
                for b2 in labels:
                    xm = _moved_state(problem, b2, t, pre_e[:, i])
                    Am = fm.design(xm, y_del)
                    lo, hi = range_store[(k, b2, i)]
                    run = dt * np.asarray(problem.reward.running(t, xm, b2), dtype=float)
                    cont_moved[b2 - 1] = run + np.clip(Am @ coef_store[(k, b2, i)], lo, hi)
            if k == 0:
                tab[i] = cont_pre
                if not identity:
                    moved[i] = cont_moved
            else:
                for b in labels:
                    best = np.full(n_rows, -np.inf)
                    for b2 in modes.others(b):
                        np.maximum(
                            best, moved_prev[i, b2 - 1] - problem.costs(b, b2, t), out=best
                        )
                    tab[i, b - 1] = np.maximum(cont_pre[b - 1], best)
                if not identity:
                    for b2 in labels:
                        best = np.full(n_rows, -np.inf)
                        for b3 in modes.others(b2):
                            np.maximum(
                                best, moved_prev[i, b3 - 1] - problem.costs(b2, b3, t), out=best
                            )
                        moved[i, b2 - 1] = np.maximum(cont_moved[b2 - 1], best)
            if record and i in probe_times:
                for b in labels:
                    probe_se_parts[(b, i)] = _prediction_se(fit_design[b], fit_rstd[b], A_pre[:q])
        roots = {b: float(tab[0, b - 1, 0]) for b in labels}
        if record:
            for b in labels:
                root_value[(k, b)] = roots[b]
                root_se[(k, b)] = float(
                    _prediction_se(fit_design[b], fit_rstd[b], A_pre[:1])[0]
                )
            vals = np.concatenate([tab[i, b - 1, :q] for b in labels for i in probe_times])
            ses = np.concatenate([probe_se_parts[(b, i)] for b in labels for i in probe_times])
            diag.probe_values[k] = vals
            diag.probe_se[k] = ses
        return moved, roots

    ens_full = (pre, post, fit_rows, g_pre, None if identity else g_moved)
    moved_prev, _ = run_level(0, None, ens_full, cont_coef, cont_range, True)
    k_final = 0
    for k in range(1, k_max + 1):
        moved_prev, _ = run_level(k, moved_prev, ens_full, cont_coef, cont_range, True)
        root_gap = max(abs(root_value[(k, b)] - root_value[(k - 1, b)]) for b in labels)
        probe_diff = np.abs(diag.probe_values[k] - diag.probe_values[k - 1])
        probe_gap = float(np.max(probe_diff))
        # A probe only counts as unsettled when its change is resolvable:
        # larger than three paired standard errors.  Noise-free problems
        # have zero SE, so this nets out to the raw gap there.
        pair_se = np.hypot(diag.probe_se[k], diag.probe_se[k - 1])
        probe_gap_net = float(np.max(np.maximum(probe_diff - 3.0 * pair_se, 0.0)))
        gap = max(root_gap, probe_gap_net)
        diag.gap_by_k.append(
            {
                "k": k,
                "gap": gap,
                "root_gap": root_gap,
                "probe_gap": probe_gap,
                "probe_gap_net": probe_gap_net,
                "min_probe_increment": float(
                    np.min(diag.probe_values[k] - diag.probe_values[k - 1])
                ),
            }
        )
        k_final = k
        y0_k = root_value[(k, modes.initial)]
        if gap < GAP_TOL_SCALE * (1.0 + abs(y0_k)):
            diag.converged = True
            break
    diag.k_levels = k_final
    diag.final_gap = diag.gap_by_k[-1]["gap"] if diag.gap_by_k else 0.0
    for b in labels:
        fitted = _isotonic(np.array([root_value[(k, b)] for k in range(k_final + 1)]))
        for k in range(k_final + 1):
            root_value[(k, b)] = float(fitted[k])
    probe_stack = np.vstack([diag.probe_values[k] for k in range(k_final + 1)])
    for col in range(probe_stack.shape[1]):
        probe_stack[:, col] = _isotonic(probe_stack[:, col])
    for k in range(k_final + 1):
        diag.probe_values[k] = probe_stack[k]
    # The design-conditional root SE treats the regression targets as
    # data, but they are themselves fitted, so it badly understates the
    # sampling error of the whole recursion.  Rerunning the pass on
    # independent path blocks and reading the spread of their roots
    # captures that propagated noise; the design SE stays as a floor.
    n_blocks = min(se_batches, P // 2)
    if n_blocks >= 2:
        edges = np.linspace(0, P, n_blocks + 1).astype(int)
        block_roots = {key: [] for key in root_value}
        for lo_e, hi_e in zip(edges[:-1], edges[1:]):
            rows_blk = np.arange(lo_e, hi_e)
            rows_map = {
                (b, i): np.flatnonzero(mode_of_step[rows_blk, i] == b)
                for b in labels
                for i in range(n)
            }
            ens_blk = (
                pre[rows_blk],
                post[rows_blk],
                rows_map,
                g_pre[rows_blk],
                None if identity else g_moved[:, rows_blk],
            )
            moved_blk = None
            seq = {b: [] for b in labels}
            for k in range(k_final + 1):
                moved_blk, roots_blk = run_level(k, moved_blk, ens_blk, {}, {}, False)
                for b in labels:
                    seq[b].append(roots_blk[b])
            for b in labels:
                fitted = _isotonic(np.asarray(seq[b]))
                for k in range(k_final + 1):
                    block_roots[(k, b)].append(float(fitted[k]))
        for key, vals_blk in block_roots.items():
            spread = float(np.std(vals_blk, ddof=1) / np.sqrt(n_blocks))
            root_se[key] = max(root_se[key], spread)
    diag.root_values = {f"{k},{b}": val for (k, b), val in root_value.items()}
    diag.root_se = {f"{k},{b}": val for (k, b), val in root_se.items()}
    if not diag.converged and k_max >= 1:
        warnings.warn(
            f"value family not settled at k_max={k_max}: last gap {diag.final_gap:.3e}",
            RuntimeWarning,
        )
    return ValueSurface(
        problem=problem,
        grid=grid,
        feature_map=fm,
        use_delay=use_delay,
        k_max_requested=k_max,
        k_levels=k_final,
        train_seed=seed,
        quantization=quantization,
        explore_prob=explore_prob,
        cont_coef=cont_coef,
        cont_range=cont_range,
        root_value=root_value,
        root_se=root_se,
        diagnostics=diag,
    )


@dataclass(frozen=True)
class Policy:
    """Switching rule read off a solved value surface.

    At grid index i in mode b it switches to the best alternative when
    the intervention value strictly beats the continuation value (ties
    continue, the lowest mode label wins among equal alternatives) and
    never switches at the horizon.  Both sides of the comparison are the
    same expressions the training pass maximized.
    """

    surface: ValueSurface

    @property
    def k(self) -> int:
        return self.surface.k_levels

    def decide_batch(self, i: int, b: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Target modes per path; 0 means continue."""
        surf = self.surface
        n = surf.grid.n_steps
        out = np.zeros(x.shape[0], dtype=np.int64)
        if i >= n or self.k < 1:
            return out
        problem = surf.problem
        t = surf.grid.times[i]
        cont = surf.continuation_at(self.k, b, i, x, y)
        _, moved = surf._tab_eval(i, x, y, k_hi=self.k - 1)
        best = np.full(x.shape[0], -np.inf)
        for b2 in problem.modes.others(b):
            cand = moved[self.k - 1, b2 - 1] - problem.costs(b, b2, t)
            better = cand > best
            out = np.where(better, b2, out)
            best = np.where(better, cand, best)
        out[~(best > cont)] = 0
        return out

    def decide(self, i: int, b: int, x: np.ndarray, y: np.ndarray) -> int:
        return int(self.decide_batch(i, b, np.atleast_2d(x), np.atleast_2d(y))[0])


def extract_policy(surface: ValueSurface) -> Policy:
    """Policy from a surface solved with budget at least the mode count."""
    m = surface.problem.modes.n_modes
    if surface.k_max_requested < m:
        raise ValueError(f"policy extraction needs k_max >= {m} (got {surface.k_max_requested})")
    return Policy(surface=surface)


@dataclass
class CertifyReport:
    lower_bound: float
    lower_bound_se: float
    y0: float
    y0_se: float
    gap: float
    se_combined: float
    n_paths: int
    switch_histogram: dict
    max_switches: int
    terminal_switches: int
    j_min: float
    j_max: float
    switch_bound: float
    switch_bound_ok: bool

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["switch_histogram"] = {str(k): int(v) for k, v in self.switch_histogram.items()}
        return out


def certify(
    policy: Policy,
    n_paths: int,
    seed: int,
    quantization: Optional[int] = None,
    workers: int = 1,
) -> CertifyReport:
    """Resimulate the policy pathwise on a fresh seed and report the gap.

    The certified value is an expected-reward estimate of the adapted
    control the policy induces, so it lower-bounds the true value up to
    Monte Carlo error; ``gap`` is (surface root value) - (certified
    value).  The seed must differ from the training seed.
    """
    surface = policy.surface
    if seed == surface.train_seed:
        raise ValueError("certification seed must differ from the training seed")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    problem = surface.problem
    grid = surface.grid
    spec = problem.dynamics
    modes = problem.modes
    n = grid.n_steps
    dt = grid.step
    times = grid.times
    d = spec.delay_steps(grid)
    pres = spec.presegment(grid)

    dw, counts = sample_noise_batch(spec, grid, seed, n_paths, quantization)
    x = np.broadcast_to(spec.initial_state(), (n_paths, spec.dim)).copy()
    mode = np.full(n_paths, modes.initial, dtype=np.int64)
    buffer = np.empty((n_paths, n + 1, spec.dim))
    run_acc = np.zeros(n_paths)
    cost_acc = np.zeros(n_paths)
    switch_count = np.zeros(n_paths, dtype=np.int64)
    terminal_switches = 0

    for i in range(n + 1):
        t = times[i]
        if d == 0:
            y_dec = x
        elif i >= d:
            y_dec = buffer[:, i - d]
        else:
            y_dec = np.broadcast_to(pres[i], x.shape)
        if i < n:
            for _ in range(modes.n_modes - 1):
                switched_any = False
                for b in np.unique(mode):
                    sel = np.flatnonzero(mode == b)
                    if sel.size == 0:
                        continue
                    targets = policy.decide_batch(i, int(b), x[sel], y_dec[sel])
                    hit = targets > 0
                    if not np.any(hit):
                        continue
                    switched_any = True
                    for b2 in np.unique(targets[hit]):
                        rows = sel[targets == b2]
                        cost_acc[rows] += problem.costs(int(b), int(b2), t)
                        x[rows] = np.broadcast_to(
                            np.asarray(
                                problem.jump_maps.apply(int(b), int(b2), t, x[rows]), dtype=float
                            ),
                            x[rows].shape,
                        )
                        mode[rows] = b2
                        switch_count[rows] += 1
                if not switched_any:
                    break
        buffer[:, i] = x
        if i == n:
            # No switch is applied at the horizon; count the paths where one
            # would have looked profitable (it should be none when the
            # terminal reward strictly dominates every switch-then-stop).
            g_here = np.asarray(problem.reward.terminal(x), dtype=float)
            tempted = np.zeros(n_paths, dtype=bool)
            for b in np.unique(mode):
                sel = np.flatnonzero(mode == b)
                for b2 in modes.others(int(b)):
                    xb = np.broadcast_to(
                        np.asarray(
                            problem.jump_maps.apply(int(b), int(b2), t, x[sel]), dtype=float
                        ),
                        x[sel].shape,
                    )
                    cand = np.asarray(problem.reward.terminal(xb), dtype=float) - problem.costs(
                        int(b), int(b2), t
                    )
                    tempted[sel] |= cand > g_here[sel]
            terminal_switches = int(tempted.sum())
            break
        y = buffer[:, i - d] if i - d >= 0 else np.broadcast_to(pres[i], x.shape)
        for b in np.unique(mode):
            sel = mode == b
            run_acc[sel] += dt * np.asarray(
                problem.reward.running(t, x[sel], int(b)), dtype=float
            )
        x_new = np.empty_like(x)
        for b in np.unique(mode):
            sel = mode == b
            counts_row = counts[sel, i] if spec.jump_intensity > 0.0 else None
            x_new[sel] = x[sel] + euler_increment(
                spec, dt, t, x[sel], y[sel], int(b), dw[sel, i], counts_row
            )
        x = x_new

    j = run_acc + np.asarray(problem.reward.terminal(buffer[:, n]), dtype=float) - cost_acc
    lower = float(j.mean())
    lower_se = float(j.std(ddof=1) / np.sqrt(n_paths))
    y0 = surface.y0
    y0_se = surface.y0_se
    uniq, cnt = np.unique(switch_count, return_counts=True)
    hist = {int(u): int(c) for u, c in zip(uniq, cnt)}
    j_min, j_max = float(j.min()), float(j.max())
    m = modes.n_modes
    bound = m * (j_max - j_min) / problem.costs.loop_floor + m
    return CertifyReport(
        lower_bound=lower,
        lower_bound_se=lower_se,
        y0=y0,
        y0_se=y0_se,
        gap=y0 - lower,
        se_combined=float(np.hypot(lower_se, y0_se)),
        n_paths=n_paths,
        switch_histogram=hist,
        max_switches=int(switch_count.max()),
        terminal_switches=terminal_switches,
        j_min=j_min,
        j_max=j_max,
        switch_bound=bound,
        switch_bound_ok=bool(switch_count.max() <= bound),
    )


def surface_to_csv(surface: ValueSurface, fileobj: io.TextIOBase) -> None:
    """Write continuation-regression coefficients as CSV rows (k, b, i, c_0..)."""
    p = next(iter(surface.cont_coef.values())).shape[0]
    fileobj.write("k,b,i," + ",".join(f"c_{j}" for j in range(p)) + "\n")
    for (k, b, i) in sorted(surface.cont_coef):
        coef = surface.cont_coef[(k, b, i)]
        fileobj.write(f"{k},{b},{i}," + ",".join(repr(c) for c in coef) + "\n")


def diagnostics_to_json(diag: SolveDiagnostics) -> str:
    payload = {
        "k_levels": diag.k_levels,
        "k_max_requested": diag.k_max_requested,
        "converged": diag.converged,
        "final_gap": diag.final_gap,
        "gap_by_k": diag.gap_by_k,
        "rank_deficient_fits": diag.rank_deficient_fits,
        "ridge_fits": diag.ridge_fits,
        "empty_subset_fits": diag.empty_subset_fits,
        "root_values": diag.root_values,
        "root_se": diag.root_se,
    }
    return json.dumps(payload, sort_keys=True, indent=2)
