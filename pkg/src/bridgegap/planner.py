"""Exact finite-horizon planning over reachable belief histories.

Because the model is deterministic given the latent, a decision-time history
is summarized exactly by the latents still consistent with it and the state
each of them is in. Backward induction over that tree is exact.

Objectives:

``bgp``
    task reward plus ``beta * (Phi(H_t) - Phi(H_{t+1}))`` for the bridge
    potential ``Phi``.
``empowerment_ungated``
    each step pays the (posterior-averaged) empowerment over the next
    observation at the history reached, with no relevance gating.
``ig_one_step`` / ``efe_one_step``
    greedy one-step information gain (plus expected task reward for EFE).
``prediction_loss``
    minimize expected terminal log-loss of a declared target.
``coarse_return``
    maximize MAP accuracy on a declared coarse target at the horizon.

Ties go to the lowest action index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    BridgePomdp,
    BudgetExceeded,
    ModelError,
    Policy,
    Quotient,
    enum_budget,
    enumerate_closed_loop,
    prefix_fiber,
    split_history,
)
from .info import _entropy_unnormalized, reachable_states

OBJECTIVES = (
    "bgp",
    "empowerment_ungated",
    "ig_one_step",
    "efe_one_step",
    "prediction_loss",
    "coarse_return",
)
GREEDY_OBJECTIVES = ("ig_one_step", "efe_one_step")
TIE_ATOL = 1e-12
DEFAULT_NODE_BUDGET = 10**6


@dataclass(frozen=True, eq=False)
class Factor:
    """A controllable terminal factor Y_i: a state quotient plus an
    intervention map ``do[x, y] -> x'`` used by the relevance gate.

    Without an explicit map, ``do(Y=y)`` keeps ``x`` if it already has class
    ``y`` and otherwise moves to the lowest-index state of class ``y``.
    """

    name: str
    quotient: Quotient
    do: np.ndarray | None = None

    def __post_init__(self):
        if self.quotient.domain != "state":
            raise ModelError(f"factor {self.name!r} must be a state quotient")
        if self.do is None:
            c = self.quotient.class_of
            first = {}
            for x, y in enumerate(c.tolist()):
                first.setdefault(y, x)
            table = np.array(
                [[x if c[x] == y else first[y] for y in range(self.quotient.class_count)] for x in range(c.size)]
            )
            object.__setattr__(self, "do", table)
        else:
            object.__setattr__(self, "do", np.asarray(self.do, dtype=np.int64))

    @property
    def values(self) -> range:
        return range(self.quotient.class_count)


@dataclass
class BgpWeights:
    q: Quotient
    lambda_c: float = 1.0
    lambda_v: float = 1.0
    lambda_o: float = 1.0
    lambda_d: float = 1.0
    beta: float = 1.0
    tau: float = 1e-9
    c_star: frozenset = frozenset()
    v_q: Quotient | None = None
    v_tilde: Quotient | None = None
    factors: tuple[Factor, ...] = ()
    channel_term: str = "any"
    eval_policy: str = "greedy_ig"

    def __post_init__(self):
        for k in ("lambda_c", "lambda_v", "lambda_o", "lambda_d", "beta", "tau"):
            if getattr(self, k) < 0:
                raise ModelError(f"{k} must be nonnegative")
        if self.q.domain != "latent":
            raise ModelError("q must be a latent quotient")
        if self.channel_term not in ("any", "all"):
            raise ModelError("channel_term must be 'any' or 'all'")
        if self.eval_policy not in ("greedy_ig", "worst_case"):
            raise ModelError("eval_policy must be 'greedy_ig' or 'worst_case'")
        self.c_star = frozenset(self.c_star)
        self.factors = tuple(self.factors)

    def replace(self, **kw) -> "BgpWeights":
        d = dict(self.__dict__)
        d.update(kw)
        return BgpWeights(**d)


@dataclass(eq=False)
class BeliefNode:
    """Sufficient statistic of a history: consistent latents, their current
    states and their prior masses."""

    t: int
    history: tuple
    zs: np.ndarray
    xs: np.ndarray
    w: np.ndarray

    @property
    def prob(self) -> float:
        return float(self.w.sum())

    def posterior(self, n_latent: int) -> np.ndarray:
        p = np.zeros(n_latent)
        p[self.zs] = self.w / self.w.sum()
        return p

    @property
    def key(self) -> tuple:
        return (self.t, self.history[-1], self.zs.tobytes(), self.xs.tobytes())


@dataclass
class PotentialTerms:
    ambiguity: float = 0.0
    channel: float = 0.0
    control: float = 0.0
    observation: float = 0.0
    distractor: float = 0.0
    gates: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.ambiguity + self.channel + self.control + self.observation + self.distractor


@dataclass
class Gate:
    open: bool
    delta_q: float
    delta_r: float


@dataclass
class Evaluation:
    success: float
    residual: float
    residual_q: float
    histories: dict
    phi_trajectory: list[float] | None = None
    phi_terminal: list[tuple[float, float]] | None = None


@dataclass
class PlanResult:
    objective: str
    policy: Policy
    value: float
    node_values: dict
    node_actions: dict
    evaluation: Evaluation | None
    nodes_expanded: int

    @property
    def success(self) -> float:
        return self.evaluation.success

    @property
    def residual(self) -> float:
        return self.evaluation.residual


def reward_function(task_reward) -> Callable | None:
    """Wrap a reward table ``(T, Z, X, A)`` or callable ``r(t, zs, xs, a)``."""
    if task_reward is None or callable(task_reward):
        return task_reward
    if isinstance(task_reward, (list, tuple)):
        tabs = [np.asarray(r, dtype=float) for r in task_reward]
    else:
        arr = np.asarray(task_reward, dtype=float)
        tabs = [arr[t] for t in range(arr.shape[0])]
    return lambda t, zs, xs, a: tabs[t][zs, xs, a]


class Planner:
    """Belief-tree planner bound to one model and one set of weights."""

    def __init__(
        self,
        model: BridgePomdp,
        weights: BgpWeights | None = None,
        task_reward=None,
        *,
        prediction_target: Quotient | None = None,
        coarse_target: Quotient | None = None,
        emp_horizon: int = 1,
        node_budget: int = DEFAULT_NODE_BUDGET,
    ):
        self.model = model
        self.w = weights
        self.reward = reward_function(task_reward)
        self.prediction_target = prediction_target
        self.coarse_target = coarse_target
        self.emp_horizon = emp_horizon
        self.node_budget = node_budget
        self.expanded = 0
        self._reach_cache: dict = {}
        self._label_cache: dict = {}
        self._emp_cache: dict = {}
        self._phi_cache: dict = {}
        self._cont_cache: dict = {}
        self._n_vq = None
        if weights is not None and weights.c_star:
            unknown = weights.c_star - set(model.channel_labels)
            if unknown:
                raise ModelError(f"c_star labels {sorted(unknown)} not in channel_labels")

    # -- tree ---------------------------------------------------------------
    def root(self) -> BeliefNode:
        m = self.model
        zs = m.support
        # a constant O_0 is the common case; otherwise the root is per-observation
        obs0 = np.unique(m.init_obs[zs])
        if obs0.size != 1:
            raise ModelError("use roots() for models with an informative initial observation")
        return BeliefNode(0, (int(obs0[0]),), zs, m.init_state[zs], m.prior[zs])

    def roots(self) -> list[BeliefNode]:
        m = self.model
        zs = m.support
        out = []
        for o in np.unique(m.init_obs[zs]):
            sel = m.init_obs[zs] == o
            out.append(BeliefNode(0, (int(o),), zs[sel], m.init_state[zs[sel]], m.prior[zs[sel]]))
        return out

    def expand(self, node: BeliefNode) -> list[list[BeliefNode]]:
        """Children of ``node`` grouped by action, each group split by the
        next observation."""
        m, t = self.model, node.t
        self.expanded += 1
        if self.expanded > self.node_budget:
            raise BudgetExceeded("belief-tree nodes", self.expanded, self.node_budget)
        acts = m.actions(t)
        xn, on = m.step(t, node.zs[:, None], node.xs[:, None], acts[None, :])
        return [self._children(node, int(a), xn, on) for a in acts]

    def node_at(self, history: Sequence[int]) -> BeliefNode:
        history = tuple(int(v) for v in history)
        zs, xs = prefix_fiber(self.model, history)
        return BeliefNode(len(history) // 2, history, zs, xs, self.model.prior[zs])

    # -- node statistics ------------------------------------------------------
    def class_entropy(self, node: BeliefNode, q: Quotient) -> float:
        labels = q.class_of[node.zs] if q.domain == "latent" else q.class_of[node.xs]
        return _entropy_unnormalized(np.bincount(labels, weights=node.w))

    def map_accuracy(self, node: BeliefNode, q: Quotient) -> float:
        labels = q.class_of[node.zs] if q.domain == "latent" else q.class_of[node.xs]
        mass = np.bincount(labels, weights=node.w)
        return float(mass[int(np.argmax(mass))] / node.prob)

    def expected_reward(self, node: BeliefNode, a: int) -> float:
        if self.reward is None:
            return 0.0
        r = np.asarray(self.reward(node.t, node.zs, node.xs, a), dtype=float)
        return float(np.dot(node.w, r) / node.prob)

    def _final_layer(self, t: int, z: int, x: int) -> np.ndarray:
        key = (t, z, x)
        if key not in self._reach_cache:
            self._reach_cache[key] = reachable_states(self.model, z, x, t, self.model.horizon - t)
        return self._reach_cache[key]

    def _posterior_mean(self, node: BeliefNode, fn) -> float:
        vals = np.array([fn(int(z), int(x)) for z, x in zip(node.zs, node.xs)])
        return float(np.dot(node.w, vals) / node.prob)

    def controllability(self, node: BeliefNode, q: Quotient) -> float:
        """Posterior-averaged deterministic empowerment over a terminal state
        quotient within the remaining horizon."""
        if node.t == self.model.horizon:
            return 0.0
        return self._posterior_mean(
            node, lambda z, x: math.log2(np.unique(q.class_of[self._final_layer(node.t, z, x)[-1]]).size)
        )

    def _reachable_labels(self, t: int, z: int, x: int) -> frozenset:
        key = (t, z, x)
        if key not in self._label_cache:
            m, names = self.model, self.model.channel_labels
            labs = set()
            for k, layer in enumerate(self._final_layer(t, z, x)):
                labs.update(names[i] for i in np.unique(m.phi(t + k, z, layer)))
                labs.update(names[i] for i in np.unique(m.kappa(t + k, z, layer)))
            self._label_cache[key] = frozenset(labs)
        return self._label_cache[key]

    def channel_deficit(self, node: BeliefNode) -> float:
        """Unweighted channel bracket. ``any``: ``log2(1+|C*|)`` when no C*
        label is reachable in the remaining horizon, else 0. ``all``:
        ``log2(1+|C*|) - log2(1+|reachable ∩ C*|)``."""
        cs = self.w.c_star
        if not cs:
            return 0.0
        full = math.log2(1 + len(cs))
        if self.w.channel_term == "any":
            return self._posterior_mean(
                node, lambda z, x: 0.0 if self._reachable_labels(node.t, z, x) & cs else full
            )
        return self._posterior_mean(
            node, lambda z, x: full - math.log2(1 + len(self._reachable_labels(node.t, z, x) & cs))
        )

    def n_vq_classes(self) -> int:
        """Number of V_Q classes reachable at the horizon from the prior support."""
        if self._n_vq is None:
            m, v = self.model, self.w.v_q
            seen = set()
            for z in m.support:
                seen.update(v.class_of[self._final_layer(0, int(z), int(m.init_state[z]))[-1]].tolist())
            self._n_vq = len(seen)
        return self._n_vq

    def observation_empowerment(self, node: BeliefNode) -> float:
        """Posterior-averaged empowerment over the next ``emp_horizon``
        observations. Terminal histories reuse the last step's dynamics."""
        t = min(node.t, self.model.horizon - self.emp_horizon)
        vals = np.array([self._emp_row(t, int(z))[int(x)] for z, x in zip(node.zs, node.xs)])
        return float(np.dot(node.w, vals) / node.prob)

    def _emp_row(self, t: int, z: int) -> np.ndarray:
        """Observation empowerment from every state at time ``t`` under ``z``."""
        key = (t, z)
        if key not in self._emp_cache:
            m, k = self.model, self.emp_horizon
            if k == 1:
                acts = m.actions(t)
                row = np.empty(m.n_states[t])
                chunk = max(1, enum_budget() // acts.size)
                for i in range(0, row.size, chunk):
                    xs = np.arange(i, min(i + chunk, row.size))
                    _, on = m.step(t, z, xs[:, None], acts[None, :])
                    on = np.sort(on, axis=1)
                    row[xs] = np.log2(1 + np.count_nonzero(np.diff(on, axis=1), axis=1))
            else:
                row = np.empty(m.n_states[t])
                for x in range(row.size):
                    layers = reachable_states(m, z, x, t, k - 1)
                    _, on = m.step(t + k - 1, z, layers[-1][:, None], m.actions(t + k - 1)[None, :])
                    row[x] = math.log2(np.unique(on).size)
            self._emp_cache[key] = row
        return self._emp_cache[key]

    # -- evaluation continuation ----------------------------------------------------
    def one_step_gain(self, kids: list[BeliefNode]) -> float:
        """I(Z; O_{t+1} | h, a) = H(O_{t+1} | h, a) for deterministic observations."""
        return _entropy_unnormalized([k.prob for k in kids])

    def action_gains(self, node: BeliefNode) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One-step information gain of every action at ``node``, plus the
        successor states and observations as ``(|zs|, |A|)`` arrays."""
        m, t = self.model, node.t
        acts = m.actions(t)
        xn, on = m.step(t, node.zs[:, None], node.xs[:, None], acts[None, :])
        gains = _column_entropy(on, node.w)
        return np.maximum(gains, 0.0), xn, on

    def _children(self, node: BeliefNode, a: int, xn: np.ndarray, on: np.ndarray) -> list[BeliefNode]:
        col = on[:, a]
        if np.all(col == col[0]):
            return [BeliefNode(node.t + 1, node.history + (int(a), int(col[0])), node.zs, xn[:, a], node.w)]
        kids = []
        for o in np.unique(col):
            sel = col == o
            kids.append(BeliefNode(node.t + 1, node.history + (int(a), int(o)), node.zs[sel], xn[sel, a], node.w[sel]))
        return kids

    def continuation(self, node: BeliefNode) -> tuple[list[BeliefNode], float]:
        """Terminal leaves under the greedy one-step-IG evaluation policy and
        the expected task reward collected on the way."""
        key = (node.t, node.zs.tobytes(), node.xs.tobytes())
        if key in self._cont_cache:
            return self._cont_cache[key]
        if node.t == self.model.horizon:
            out = ([node], 0.0)
        else:
            self.expanded += 1
            gains, xn, on = self.action_gains(node)
            a = _argmax(gains)
            leaves, reward = [], self.expected_reward(node, a)
            for k in self._children(node, a, xn, on):
                lv, r = self.continuation(k)
                leaves.extend(lv)
                reward += k.prob * r / node.prob
            out = (leaves, reward)
        self._cont_cache[key] = out
        return out

    def _continuation_value(self, node: BeliefNode) -> tuple[float, float]:
        """Expected terminal H(Q|H_T) and task reward under the evaluation policy."""
        key = ("value", node.t, node.zs.tobytes(), node.xs.tobytes())
        if key not in self._cont_cache:
            leaves, r = self.continuation(node)
            h = sum(lf.prob * self.class_entropy(lf, self.w.q) for lf in leaves) / node.prob
            self._cont_cache[key] = (h, r)
        return self._cont_cache[key]

    def _open_loop_leaves(self, node: BeliefNode) -> list[list[BeliefNode]]:
        m = self.model
        seqs = itertools.product(*[range(m.n_actions[t]) for t in range(node.t, m.horizon)])
        out = []
        for seq in seqs:
            frontier = [node]
            for a in seq:
                frontier = [k for n in frontier for k in self.expand(n)[a]]
            out.append(frontier)
        return out

    def observation_loss(self, node: BeliefNode) -> float:
        """Ĥ(V_Q | Ṽ, h) from the terminal joint under the evaluation policy."""
        v, vt = self.w.v_q, self.w.v_tilde

        def h_of(leaves):
            mass: dict = {}
            for lf in leaves:
                ov = int(vt.class_of[lf.history[-1]])
                for xv, p in zip(v.class_of[lf.xs].tolist(), lf.w):
                    mass[(xv, ov)] = mass.get((xv, ov), 0.0) + p
            joint = _entropy_unnormalized(list(mass.values()))
            marg: dict = {}
            for (xv, ov), p in mass.items():
                marg[ov] = marg.get(ov, 0.0) + p
            return max(0.0, joint - _entropy_unnormalized(list(marg.values())))

        if node.t == self.model.horizon:
            return h_of([node])
        if self.w.eval_policy == "worst_case":
            return max(h_of(lv) for lv in self._open_loop_leaves(node))
        return h_of(self.continuation(node)[0])

    def relevance_gate(self, node: BeliefNode, factor: Factor) -> Gate:
        """Counterfactual relevance of a factor at ``node``.

        ``do(Y=y)`` rewrites every consistent state through the factor's
        intervention map without touching the posterior, then the evaluation
        policy runs to the horizon. Evidence relevance is the largest drop in
        expected terminal ``H(Q|H_T)`` against the non-intervened
        continuation; reward relevance is the spread of expected remaining
        task reward across values.
        """
        base, _ = self._continuation_value(node)
        dq, rewards = 0.0, []
        for y in factor.values:
            alt = BeliefNode(node.t, node.history, node.zs, factor.do[node.xs, y], node.w)
            h, r = self._continuation_value(alt)
            dq = max(dq, base - h)
            rewards.append(r)
        dr = max(rewards) - min(rewards) if rewards else 0.0
        return Gate(dq + dr > self.w.tau, dq, dr)

    def potential(self, node: BeliefNode) -> PotentialTerms:
        key = node.key
        if key in self._phi_cache:
            return self._phi_cache[key]
        w = self.w
        terms = PotentialTerms(ambiguity=self.class_entropy(node, w.q))
        if w.lambda_c > 0 and w.c_star:
            terms.channel = w.lambda_c * self.channel_deficit(node)
        if w.v_q is not None:
            if w.lambda_v > 0:
                deficit = math.log2(self.n_vq_classes()) - self.controllability(node, w.v_q)
                terms.control = w.lambda_v * max(0.0, deficit)
            if w.lambda_o > 0 and w.v_tilde is not None:
                terms.observation = w.lambda_o * self.observation_loss(node)
        if w.lambda_d > 0:
            for f in w.factors:
                c = self.controllability(node, f.quotient)
                if c <= 0:
                    continue
                g = self.relevance_gate(node, f)
                terms.gates[f.name] = g
                if not g.open:
                    terms.distractor += w.lambda_d * c
        self._phi_cache[key] = terms
        return terms

    def phi(self, node: BeliefNode) -> float:
        return self.potential(node).total

    # -- planning --------------------------------------------------------------------
    def plan(self, objective: str, lookahead: int | None = None) -> PlanResult:
        if objective not in OBJECTIVES:
            raise ModelError(f"unknown objective {objective!r}")
        if objective == "bgp" and self.w is None:
            raise ModelError("bgp needs BgpWeights")
        if objective == "prediction_loss" and self.prediction_target is None:
            raise ModelError("prediction_loss needs a prediction target")
        if objective == "coarse_return" and self.coarse_target is None:
            raise ModelError("coarse_return needs a coarse target")
        if lookahead is not None and lookahead != 1:
            raise ModelError("only one-step lookahead is supported besides exact DP")
        self._objective = objective
        values: dict = {}
        actions: dict = {}
        total = 0.0
        for root in self.roots():
            if objective in GREEDY_OBJECTIVES or lookahead == 1:
                v = self._greedy(root, values, actions)
            else:
                v = self._solve(root, values, actions)
                if objective == "bgp":
                    v += self.w.beta * self.phi(root)
            total += root.prob * v
        policy = Policy.from_table(actions)
        evaluation = None
        if self.w is not None:
            evaluation = evaluate_policy(self.model, policy, self.w.q, planner=self)
        return PlanResult(objective, policy, total, values, actions, evaluation, self.expanded)

    def _terminal(self, node: BeliefNode) -> float:
        obj = self._objective
        if obj == "bgp":
            return -self.w.beta * self.phi(node)
        if obj == "prediction_loss":
            return -self.class_entropy(node, self.prediction_target)
        if obj == "coarse_return":
            return self.map_accuracy(node, self.coarse_target)
        return 0.0

    def _arrival(self, node: BeliefNode) -> float:
        if self._objective == "empowerment_ungated":
            return self.observation_empowerment(node)
        return 0.0

    def _solve(self, node: BeliefNode, values: dict, actions: dict) -> float:
        if node.t == self.model.horizon:
            return self._terminal(node)
        if node.t + 1 == self.model.horizon and self._objective in ("empowerment_ungated", "bgp"):
            return self._last_step(node, values, actions)
        scores = []
        for a, kids in enumerate(self.expand(node)):
            cont = sum(k.prob * (self._arrival(k) + self._solve(k, values, actions)) for k in kids)
            r = self.expected_reward(node, a) if self._objective == "bgp" else 0.0
            scores.append(r + cont / node.prob)
        a = _argmax(scores)
        values[node.history] = scores[a]
        actions[node.history] = a
        return scores[a]

    def _last_step(self, node: BeliefNode, values: dict, actions: dict) -> float:
        """Final decision without building terminal nodes.

        Every terminal term is either a posterior mean or a conditional
        entropy given the last observation, so each action's expectation over
        its children is computed column-wise.
        """
        m = self.model
        self.expanded += 1
        if self.expanded > self.node_budget:
            raise BudgetExceeded("belief-tree nodes", self.expanded, self.node_budget)
        acts = m.actions(node.t)
        xn, on = m.step(node.t, node.zs[:, None], node.xs[:, None], acts[None, :])
        if self._objective == "empowerment_ungated":
            t = m.horizon - self.emp_horizon
            rows = np.stack([self._emp_row(t, int(z)) for z in node.zs])
            scores = (node.w @ rows[np.arange(node.zs.size)[:, None], xn]) / node.prob
        else:
            reward = np.array([self.expected_reward(node, int(a)) for a in acts])
            scores = reward - self.w.beta * self._terminal_phi_columns(node, xn, on)
        a = _argmax(scores)
        values[node.history] = float(scores[a])
        actions[node.history] = a
        return float(scores[a])

    def _terminal_phi_columns(self, node: BeliefNode, xn: np.ndarray, on: np.ndarray) -> np.ndarray:
        """Expected terminal potential of each action's children."""
        m, w = self.model, self.w
        T, n_obs = m.horizon, m.n_obs[m.horizon]
        h_o = _column_entropy(on, node.w)
        qz = np.broadcast_to(w.q.class_of[node.zs][:, None], on.shape)
        total = _column_entropy(qz.astype(np.int64) * n_obs + on, node.w) - h_o
        if w.lambda_c > 0 and w.c_star:
            zz = np.broadcast_to(node.zs[:, None], xn.shape)
            mask = np.array([lab in w.c_star for lab in m.channel_labels])
            lp, lk = m.phi(T, zz, xn), m.kappa(T, zz, xn)
            ip, ik = mask[lp], mask[lk]
            full = math.log2(1 + len(w.c_star))
            if w.channel_term == "any":
                f = np.where(ip | ik, 0.0, full)
            else:
                hit = ip.astype(int) + ik.astype(int) - (ip & ik & (lp == lk)).astype(int)
                f = full - np.log2(1 + hit)
            total = total + w.lambda_c * (node.w @ f) / node.prob
        if w.v_q is not None:
            if w.lambda_v > 0:
                total = total + w.lambda_v * max(0.0, math.log2(self.n_vq_classes()))
            if w.lambda_o > 0 and w.v_tilde is not None:
                keys = w.v_q.class_of[xn].astype(np.int64) * n_obs + on
                total = total + w.lambda_o * (_column_entropy(keys, node.w) - h_o)
        return np.maximum(total, 0.0)

    def step_score(self, node: BeliefNode, a: int, kids: list[BeliefNode]) -> float:
        """One-step criterion used by the greedy planners."""
        obj = self._objective
        if obj == "ig_one_step":
            return self.one_step_gain(kids)
        if obj == "efe_one_step":
            return self.one_step_gain(kids) + self.expected_reward(node, a)
        if obj == "bgp":
            nxt = sum(k.prob * self.phi(k) for k in kids) / node.prob
            return self.expected_reward(node, a) + self.w.beta * (self.phi(node) - nxt)
        if obj == "empowerment_ungated":
            return sum(k.prob * self.observation_empowerment(k) for k in kids) / node.prob
        if node.t + 1 == self.model.horizon:
            return sum(k.prob * self._terminal(k) for k in kids) / node.prob
        return 0.0

    def _greedy(self, node: BeliefNode, values: dict, actions: dict) -> float:
        if node.t == self.model.horizon:
            return 0.0
        groups = self.expand(node)
        scores = [self.step_score(node, a, g) for a, g in enumerate(groups)]
        a = _argmax(scores)
        v = scores[a] + sum(k.prob * self._greedy(k, values, actions) for k in groups[a]) / node.prob
        values[node.history] = v
        actions[node.history] = a
        return v


def _column_entropy(keys: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Entropy of the ``w``-weighted law of each column of ``keys`` (bits)."""
    order = np.argsort(keys, axis=0, kind="stable")
    srt = np.take_along_axis(keys, order, axis=0)
    new = np.ones(srt.shape, dtype=bool)
    new[1:] = srt[1:] != srt[:-1]
    group = np.cumsum(new, axis=0) - 1
    n_rows, n_cols = srt.shape
    flat = (group * n_cols + np.arange(n_cols)[None, :]).ravel()
    mass = np.bincount(flat, weights=w[order].ravel(), minlength=n_rows * n_cols) / w.sum()
    terms = np.where(mass > 0, -mass * np.log2(np.where(mass > 0, mass, 1.0)), 0.0)
    return np.maximum(terms.reshape(n_rows, n_cols).sum(axis=0), 0.0)


def _argmax(scores: Sequence[float]) -> int:
    """Lowest index whose score is within ``TIE_ATOL`` of the maximum."""
    s = np.asarray(scores, dtype=float)
    return int(np.flatnonzero(s >= s.max() - TIE_ATOL)[0])


# -- module-level API --------------------------------------------------------------


def bgp_potential(node: BeliefNode, w: BgpWeights, model: BridgePomdp) -> float:
    return Planner(model, w).phi(node)


def relevance_gate(node: BeliefNode, factor: Factor, w: BgpWeights, model: BridgePomdp, task_reward=None) -> Gate:
    return Planner(model, w, task_reward).relevance_gate(node, factor)


def plan_exact(
    model: BridgePomdp,
    objective: str,
    w: BgpWeights | None = None,
    task_reward=None,
    *,
    prediction_target: Quotient | None = None,
    coarse_target: Quotient | None = None,
    lookahead: int | None = None,
    emp_horizon: int = 1,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PlanResult:
    planner = Planner(
        model,
        w,
        task_reward,
        prediction_target=prediction_target,
        coarse_target=coarse_target,
        emp_horizon=emp_horizon,
        node_budget=node_budget,
    )
    return planner.plan(objective, lookahead=lookahead)


def evaluate_policy(
    model: BridgePomdp,
    policy: Policy,
    q: Quotient,
    report_target: Quotient | None = None,
    weights: BgpWeights | None = None,
    planner: Planner | None = None,
) -> Evaluation:
    """Terminal MAP success and residual ambiguity, from exhaustive rollouts.

    Success is the prior-weighted probability that the MAP class of the
    report target (lowest class id on ties) given H_T is the true one.
    Residual is ``E[H(target | H_T)]``; ``residual_q`` is ``E[H(Q | H_T)]``.
    With weights (or a BGP planner), the expected potential at each time and
    the terminal potential distribution are included.
    """
    target = q if report_target is None else report_target
    rows = enumerate_closed_loop(model, policy)
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault(r.trajectory.transcript, []).append(r)

    def mass_by(rs, quot):
        out: dict[int, float] = {}
        for r in rs:
            c = int(quot.class_of[r.latent] if quot.domain == "latent" else quot.class_of[r.trajectory.states[-1]])
            out[c] = out.get(c, 0.0) + r.probability
        return out

    success = residual = residual_q = 0.0
    hist = {}
    for tr, rs in groups.items():
        p = sum(r.probability for r in rs)
        mt = mass_by(rs, target)
        guess = min(mt, key=lambda c: (-mt[c], c))
        h_t = _entropy_unnormalized(list(mt.values()))
        h_q = _entropy_unnormalized(list(mass_by(rs, q).values()))
        success += mt[guess]
        residual += p * h_t
        residual_q += p * h_q
        hist[tr] = (p, h_t)
    ev = Evaluation(success, residual, residual_q, hist)
    if planner is None and weights is not None:
        planner = Planner(model, weights)
    if planner is not None and planner.w is not None:
        traj = []
        for t in range(model.horizon + 1):
            prefixes: dict[tuple, float] = {}
            for r in rows:
                h = r.trajectory.history(t)
                prefixes[h] = prefixes.get(h, 0.0) + r.probability
            traj.append(sum(p * planner.phi(planner.node_at(h)) for h, p in prefixes.items()))
        ev.phi_trajectory = traj
        ev.phi_terminal = [(p, planner.phi(planner.node_at(tr))) for tr, (p, _) in hist.items()]
    return ev


# -- exhaustive policy enumeration (independent cross-check) ------------------------


def count_policies(planner: Planner) -> int:
    def n(node):
        if node.t == planner.model.horizon:
            return 1
        return sum(math.prod(n(k) for k in kids) for kids in planner.expand(node))

    return math.prod(n(r) for r in planner.roots())


def enumerate_policies(model: BridgePomdp, budget: int = 200) -> list[Policy]:
    """Every deterministic history policy over reachable histories."""
    planner = Planner(model)
    count = count_policies(planner)
    if count > budget:
        raise BudgetExceeded("policy enumeration", count, budget)

    def gen(node):
        if node.t == model.horizon:
            yield {}
            return
        for a, kids in enumerate(planner.expand(node)):
            for combo in itertools.product(*[list(gen(k)) for k in kids]):
                table = {node.history: a}
                for c in combo:
                    table.update(c)
                yield table

    tables = [{}]
    for root in planner.roots():
        tables = [{**t, **u} for t in tables for u in gen(root)]
    return [Policy.from_table(t) for t in tables]


def objective_value(
    planner: Planner,
    policy: Policy,
    objective: str,
) -> float:
    """Policy value by direct rollout, recomputing every node from scratch.

    For ``bgp`` this sums the shaped per-step rewards; for the greedy
    objectives it sums the realized one-step criteria.
    """
    m = planner.model
    planner._objective = objective
    total = 0.0
    for r in enumerate_closed_loop(m, policy):
        tr = r.trajectory
        acc = 0.0
        for t in range(m.horizon):
            h0, h1 = tr.history(t), tr.history(t + 1)
            n0, n1 = planner.node_at(h0), planner.node_at(h1)
            a = tr.actions[t]
            if objective == "bgp":
                if planner.reward is not None:
                    acc += float(np.asarray(planner.reward(t, np.array([tr.latent]), np.array([tr.states[t]]), a))[0])
                acc += planner.w.beta * (planner.phi(n0) - planner.phi(n1))
            elif objective == "empowerment_ungated":
                acc += planner.observation_empowerment(n1)
            elif objective in GREEDY_OBJECTIVES:
                acc += planner.step_score(n0, a, planner.expand(n0)[a])
        if objective in ("prediction_loss", "coarse_return"):
            acc = planner._terminal(planner.node_at(tr.transcript))
        total += r.probability * acc
    return total
