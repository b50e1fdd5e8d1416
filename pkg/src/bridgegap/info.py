"""Exact information-theoretic kernels (all in bits).

Everything here is computed from enumerated finite joints; nothing is
estimated from samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    PROB_ATOL,
    BridgePomdp,
    BudgetExceeded,
    ClosedLoopRow,
    ModelError,
    Policy,
    Quotient,
    UnrealizableHistory,
    enum_budget,
    prefix_fiber,
    quotient_value,
    rollout,
)


def entropy(p) -> float:
    """Shannon entropy in bits with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError("not a probability vector")
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _entropy_unnormalized(w) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > 0]
    s = w.sum()
    if s == 0:
        return 0.0
    p = w / s
    return float(max(0.0, -np.sum(p * np.log2(p))))


def binary_entropy(p: float) -> float:
    return entropy([p, 1.0 - p])


class JointTable:
    """A finite joint law over named axes, stored as sparse rows.

    Zero-probability rows are dropped on construction; duplicate index tuples
    are merged.
    """

    def __init__(self, axes: Sequence[str], rows: Iterable[Sequence[Hashable]], probs: Iterable[float]):
        self.axes = tuple(axes)
        if len(set(self.axes)) != len(self.axes):
            raise ValueError("duplicate axis names")
        merged: dict[tuple, float] = {}
        for r, p in zip(rows, probs):
            r = tuple(r)
            if len(r) != len(self.axes):
                raise ValueError(f"row {r} does not match axes {self.axes}")
            if p < 0:
                raise ValueError("negative probability")
            if p > 0:
                merged[r] = merged.get(r, 0.0) + float(p)
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"joint sums to {total}")
        self.rows = list(merged)
        self.probs = np.array([merged[r] for r in self.rows])
        self._cache: dict[tuple, float] = {}

    @classmethod
    def from_rows(cls, axes, weighted_rows: Iterable[tuple[Sequence[Hashable], float]]) -> "JointTable":
        rows, probs = [], []
        for r, p in weighted_rows:
            rows.append(r)
            probs.append(p)
        return cls(axes, rows, probs)

    def _idx(self, axes: Sequence[str]) -> tuple[int, ...]:
        try:
            return tuple(self.axes.index(a) for a in axes)
        except ValueError:
            raise KeyError(f"unknown axis in {tuple(axes)}; have {self.axes}") from None

    def marginal(self, axes: Sequence[str]) -> dict[tuple, float]:
        idx = self._idx(axes)
        out: dict[tuple, float] = {}
        for r, p in zip(self.rows, self.probs):
            k = tuple(r[i] for i in idx)
            out[k] = out.get(k, 0.0) + p
        return out

    def entropy(self, axes: Sequence[str]) -> float:
        key = tuple(sorted(set(axes)))
        if not key:
            return 0.0
        if key not in self._cache:
            self._cache[key] = _entropy_unnormalized(list(self.marginal(key).values()))
        return self._cache[key]


def _axes(a) -> tuple[str, ...]:
    return (a,) if isinstance(a, str) else tuple(a)


def cond_entropy(j: JointTable, target, given=()) -> float:
    t, g = _axes(target), _axes(given)
    return max(0.0, j.entropy(t + g) - j.entropy(g))


def mutual_info(j: JointTable, a, b, given=()) -> float:
    """I(A;B|C) via the entropy expansion."""
    a, b, c = _axes(a), _axes(b), _axes(given)
    if set(a) & set(b) or set(a) & set(c) or set(b) & set(c):
        raise ValueError("axes must be disjoint")
    return j.entropy(a + c) + j.entropy(b + c) - j.entropy(a + b + c) - j.entropy(c)


def closed_loop_joint(rows: Sequence[ClosedLoopRow], variables: Mapping[str, object]) -> JointTable:
    """Joint law of named functions of enumerated trajectories.

    Each variable is a :class:`Quotient` or a callable on the
    :class:`Trajectory`.
    """
    names = list(variables)

    def val(v, traj):
        return quotient_value(v, traj) if isinstance(v, Quotient) else v(traj)

    return JointTable(
        names,
        [tuple(val(variables[n], r.trajectory) for n in names) for r in rows],
        [r.probability for r in rows],
    )


# -- posteriors and one-step gain ---------------------------------------------


def posterior_latent(model: BridgePomdp, prefix: Sequence[int], policy: Policy | None = None) -> np.ndarray:
    """Bayes posterior over latents given an observe-act-observe prefix.

    For mixture policies, each latent is weighted by the total mass of the
    components that would have taken the prefix actions.
    """
    prefix = tuple(int(v) for v in prefix)
    zs, _ = prefix_fiber(model, prefix)
    post = np.zeros(model.n_latent)
    if policy is None or policy.is_deterministic:
        post[zs] = model.prior[zs]
    else:
        for w, comp in policy.components():
            for z in zs:
                if _consistent(model, comp, int(z), prefix):
                    post[z] += w * model.prior[z]
        if post.sum() == 0:
            raise UnrealizableHistory(f"prefix {prefix} has zero probability under the policy")
    return post / post.sum()


def _consistent(model, policy, z, prefix) -> bool:
    tr = rollout(model, policy, z).transcript
    return tr[: len(prefix)] == prefix


def information_gain(model: BridgePomdp, prefix: Sequence[int], action: int, policy: Policy | None = None) -> float:
    """IG_t = H(Z | h, a) - E[H(Z | h, a, O_{t+1})]."""
    prefix = tuple(int(v) for v in prefix)
    t = len(prefix) // 2
    if t >= model.horizon:
        raise ModelError("no action left at a terminal history")
    post = posterior_latent(model, prefix, policy)
    zs, xs = prefix_fiber(model, prefix)
    w = post[zs]
    _, on = model.step(t, zs, xs, int(action))
    before = _entropy_unnormalized(w)
    after = 0.0
    for o in np.unique(on):
        m = on == o
        after += w[m].sum() * _entropy_unnormalized(w[m])
    return max(0.0, before - after)


# -- reachability and empowerment ----------------------------------------------


def reachable_states(model: BridgePomdp, z: int, x: int, t0: int, horizon: int, cap: int | None = None) -> list[np.ndarray]:
    """Reachable state sets at times t0..t0+horizon by set propagation.

    Each layer is expanded in chunks of at most ``cap`` (state, action) pairs,
    so memory stays bounded; ``cap`` also bounds the size of any layer.
    """
    if t0 + horizon > model.horizon or horizon < 0:
        raise ModelError("t0 + horizon exceeds the model horizon")
    cap = enum_budget() if cap is None else cap
    layers = [np.array([int(x)])]
    for t in range(t0, t0 + horizon):
        cur, acts = layers[-1], model.actions(t)
        if cur.size > cap:
            raise BudgetExceeded("reach-set layer", cur.size, cap)
        chunk = max(1, cap // acts.size)
        seen = np.zeros(model.n_states[t + 1], dtype=bool)
        for i in range(0, cur.size, chunk):
            xn, _ = model.step(t, int(z), cur[i : i + chunk, None], acts[None, :])
            seen[xn.ravel()] = True
        layers.append(np.flatnonzero(seen))
    return layers


def reach_set(model: BridgePomdp, context: tuple[int, int, int], horizon: int, quotient: Quotient) -> frozenset:
    """V-classes of X_{t0+h} reachable by open-loop action sequences from the
    deterministic context ``(z, x, t0)``. Observation quotients read O_{t0+h}."""
    z, x, t0 = (int(c) for c in context)
    if quotient.domain == "observation":
        return frozenset(int(quotient.class_of[o]) for o in reachable_observations(model, context, horizon))
    if quotient.domain == "latent":
        return frozenset({int(quotient.class_of[z])})
    if quotient.domain != "state":
        raise ModelError("reach_set needs a state, observation or latent quotient")
    final = reachable_states(model, z, x, t0, horizon)[-1]
    return frozenset(np.unique(quotient.class_of[final]).tolist())


def reachable_observations(model: BridgePomdp, context, horizon: int) -> np.ndarray:
    z, x, t0 = (int(c) for c in context)
    if horizon == 0:
        raise ModelError("observation reach needs at least one step")
    layers = reachable_states(model, z, x, t0, horizon - 1)
    t = t0 + horizon - 1
    _, on = model.step(t, z, layers[-1][:, None], model.actions(t)[None, :])
    return np.unique(on)


def reach_set_bruteforce(model: BridgePomdp, context, horizon: int, quotient: Quotient, budget: int | None = None) -> frozenset:
    """Same as :func:`reach_set` by enumerating all |A|^h action sequences."""
    z, x, t0 = (int(c) for c in context)
    budget = enum_budget() if budget is None else budget
    count = int(np.prod([model.n_actions[t] for t in range(t0, t0 + horizon)]))
    if count > budget:
        raise BudgetExceeded("action-sequence enumeration", count, budget)
    grids = np.meshgrid(*[model.actions(t) for t in range(t0, t0 + horizon)], indexing="ij")
    seqs = np.stack([g.ravel() for g in grids], axis=1) if grids else np.zeros((1, 0), dtype=int)
    xs = np.full(seqs.shape[0], x)
    os_ = None
    for k in range(horizon):
        xs, os_ = model.step(t0 + k, z, xs, seqs[:, k])
    if quotient.domain == "observation":
        return frozenset(np.unique(quotient.class_of[os_]).tolist())
    return frozenset(np.unique(quotient.class_of[xs]).tolist())


def empowerment_det(model: BridgePomdp, context, horizon: int, quotient: Quotient) -> float:
    """Deterministic empowerment: log2 of the reachable image."""
    return float(np.log2(len(reach_set(model, context, horizon, quotient))))


def induced_channel(model: BridgePomdp, context, horizon: int, quotient: Quotient) -> np.ndarray:
    """Row-stochastic 0/1 matrix from action sequences to quotient classes."""
    z, x, t0 = (int(c) for c in context)
    grids = np.meshgrid(*[model.actions(t) for t in range(t0, t0 + horizon)], indexing="ij")
    seqs = np.stack([g.ravel() for g in grids], axis=1)
    xs = np.full(seqs.shape[0], x)
    os_ = None
    for k in range(horizon):
        xs, os_ = model.step(t0 + k, z, xs, seqs[:, k])
    vals = quotient.class_of[os_] if quotient.domain == "observation" else quotient.class_of[xs]
    m = np.zeros((seqs.shape[0], quotient.class_count))
    m[np.arange(seqs.shape[0]), vals] = 1.0
    return m


# -- channel capacity -----------------------------------------------------------


@dataclass
class CapacityResult:
    capacity: float
    input_dist: np.ndarray
    converged: bool
    iterations: int
    upper_bound: float
    lower_bounds: list[float]


def _mi_bits(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-input divergence D(W(.|x) || pW) in bits."""
    q = p @ w
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, w / q[None, :], 1.0)
        return np.sum(np.where(w > 0, w * np.log2(ratio), 0.0), axis=1)


def channel_capacity(matrix, tolerance: float = 1e-9, max_iters: int = 100_000) -> CapacityResult:
    """Blahut-Arimoto ascent for ``max_p I(X;Y)`` of a row-stochastic channel.

    Stops when the gap between the lower bound ``I(p, W)`` and the upper bound
    ``max_x D(W(.|x) || pW)`` falls below ``tolerance``. The lower bounds are
    nondecreasing across iterations.
    """
    w = np.asarray(matrix, dtype=float)
    if w.ndim != 2 or np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > PROB_ATOL):
        raise ValueError("channel must be a row-stochastic matrix")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    n = w.shape[0]
    p = np.full(n, 1.0 / n)
    lows: list[float] = []
    best, best_p, upper = -np.inf, p, np.inf
    for it in range(1, max_iters + 1):
        d = _mi_bits(p, w)
        low = float(p @ d)
        upper = float(d.max())
        lows.append(low)
        if low > best:
            best, best_p = low, p
        if upper - low < tolerance:
            return CapacityResult(max(best, 0.0), best_p, True, it, upper, lows)
        p = p * np.exp2(d)
        p /= p.sum()
    return CapacityResult(max(best, 0.0), best_p, False, max_iters, upper, lows)


# -- directed information -------------------------------------------------------


def directed_information(j: JointTable, a_axes: Sequence[str], o_axes: Sequence[str]) -> tuple[float, float, float]:
    """``(I(A^T -> O^T), I(O^{T-1} -> A^T), I(A^T; O^T))``.

    Feedback indexing: ``A_t`` is chosen after ``O^{t-1}`` and before ``O_t``.
    """
    a_axes, o_axes = tuple(a_axes), tuple(o_axes)
    if len(a_axes) != len(o_axes) or not a_axes:
        raise ValueError("need equally many action and observation axes")
    out = inward = 0.0
    for t in range(len(a_axes)):
        out += mutual_info(j, a_axes[: t + 1], o_axes[t], o_axes[:t])
        if t > 0:
            inward += mutual_info(j, o_axes[:t], a_axes[t], a_axes[:t])
    return out, inward, mutual_info(j, a_axes, o_axes)
