"""Finite deterministic bridge-POMDPs: the model, policies, rollouts and
exhaustive closed-loop enumeration.

The latent microstate ``z`` is a single flat index carrying everything that is
random (initial state, law bits, unrolled noise). Given ``z`` and a
deterministic policy the whole trajectory is fixed, so every distribution in
this package is the prior pushed through a finite set of deterministic maps.

Histories are flat tuples ``(o0, a0, o1, a1, ..., o_t)``; a transcript is the
terminal history.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

PROB_ATOL = 1e-12
BITS_ATOL = 1e-9
DEFAULT_ENUM_BUDGET = 2**20


def enum_budget() -> int:
    """Enumeration budget, overridable through ``BRIDGEGAP_BUDGET``."""
    return int(os.environ.get("BRIDGEGAP_BUDGET", DEFAULT_ENUM_BUDGET))


class ModelError(ValueError):
    """Raised when a model, quotient or policy violates its invariants."""


class BudgetExceeded(RuntimeError):
    def __init__(self, what: str, required: int, budget: int):
        super().__init__(f"{what}: {required} exceeds budget {budget}")
        self.required = required
        self.budget = budget


class UnrealizableHistory(ModelError):
    pass


class PolicyUndefined(KeyError):
    pass


def _per_time(value, length: int, what: str) -> tuple[int, ...]:
    if np.isscalar(value):
        out = (int(value),) * length
    else:
        out = tuple(int(v) for v in value)
    if len(out) != length:
        raise ModelError(f"{what}: expected {length} entries, got {len(out)}")
    if any(v < 1 for v in out):
        raise ModelError(f"{what}: counts must be positive")
    return out


@dataclass(frozen=True, eq=False)
class LatentSpace:
    prior: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        p = np.array(self.prior, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ModelError("prior must be a nonempty vector")
        if np.any(p < 0):
            raise ModelError("prior has negative entries")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ModelError(f"prior is not normalized (sums to {p.sum():.15g})")
        if self.labels is not None and len(self.labels) != p.size:
            raise ModelError("latent labels do not match latent size")
        p.setflags(write=False)
        object.__setattr__(self, "prior", p)

    @property
    def size(self) -> int:
        return self.prior.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.prior > 0)

    @classmethod
    def uniform(cls, size: int, labels=None) -> "LatentSpace":
        return cls(np.full(size, 1.0 / size), labels)


StepFn = Callable[[int, np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
LabelFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class BridgePomdp:
    """A finite deterministic bridge-POMDP.

    ``step`` is either a list of ``horizon`` integer arrays of shape
    ``(|Z|, |X_t|, |A_t|, 2)`` holding ``(x_next, o_next)``, or a vectorized
    callable ``step(t, z, x, a) -> (x_next, o_next)`` over broadcastable integer
    arrays. Callables keep large benchmark instances lazy; :meth:`step_tables`
    materializes them on demand.

    ``phi_x`` and ``kappa_x`` give the environment-owned channel label of the
    state ``x`` at time ``t`` under latent ``z`` (indices into
    ``channel_labels``), as arrays ``(T+1, |Z|, |X|)`` or callables.
    Agent-owned bridge settings are part of the action alphabet.
    """

    def __init__(
        self,
        horizon: int,
        latent: LatentSpace,
        n_states,
        n_obs,
        n_actions,
        init_state,
        init_obs,
        step,
        phi_x=None,
        kappa_x=None,
        channel_labels: Sequence[str] = ("none",),
        name: str = "",
        validate: bool = True,
    ):
        if int(horizon) < 1:
            raise ModelError("horizon must be positive")
        self.horizon = T = int(horizon)
        self.latent = latent
        self.name = name
        self.n_states = _per_time(n_states, T + 1, "states")
        self.n_obs = _per_time(n_obs, T + 1, "observations")
        self.n_actions = _per_time(n_actions, T, "actions")
        self.init_state = np.asarray(init_state, dtype=np.int64)
        self.init_obs = np.asarray(init_obs, dtype=np.int64)
        self.channel_labels = tuple(channel_labels)
        if callable(step):
            self._step_fn, self._tables = step, None
        else:
            if len(step) != T:
                raise ModelError(f"step: expected {T} time slices, got {len(step)}")
            self._tables = [np.asarray(s, dtype=np.int64) for s in step]
            self._step_fn = None
        self._phi = phi_x
        self._kappa = kappa_x
        if validate:
            self.validate()

    # -- basic accessors -------------------------------------------------
    @property
    def n_latent(self) -> int:
        return self.latent.size

    @property
    def prior(self) -> np.ndarray:
        return self.latent.prior

    @property
    def support(self) -> np.ndarray:
        return self.latent.support

    def actions(self, t: int) -> np.ndarray:
        return np.arange(self.n_actions[t])

    def step(self, t: int, z, x, a) -> tuple[np.ndarray, np.ndarray]:
        z, x, a = np.asarray(z), np.asarray(x), np.asarray(a)
        if self._tables is not None:
            out = self._tables[t][z, x, a]
            return out[..., 0], out[..., 1]
        xn, on = self._step_fn(t, z, x, a)
        return np.asarray(xn, dtype=np.int64), np.asarray(on, dtype=np.int64)

    def _label(self, src, t: int, z, x) -> np.ndarray:
        z, x = np.asarray(z), np.asarray(x)
        if src is None:
            return np.zeros(np.broadcast(z, x).shape, dtype=np.int64)
        if callable(src):
            return np.asarray(src(t, z, x), dtype=np.int64)
        return np.asarray(src[t])[z, x]

    def phi(self, t: int, z, x) -> np.ndarray:
        return self._label(self._phi, t, z, x)

    def kappa(self, t: int, z, x) -> np.ndarray:
        return self._label(self._kappa, t, z, x)

    @property
    def has_tables(self) -> bool:
        return self._tables is not None

    def table_size(self) -> int:
        return sum(self.n_latent * self.n_states[t] * self.n_actions[t] for t in range(self.horizon))

    def step_tables(self) -> list[np.ndarray]:
        """Dense ``(x_next, o_next)`` tables, one per time step."""
        if self._tables is not None:
            return self._tables
        out = []
        for t in range(self.horizon):
            z, x, a = np.meshgrid(
                np.arange(self.n_latent), np.arange(self.n_states[t]), self.actions(t), indexing="ij"
            )
            xn, on = self.step(t, z, x, a)
            out.append(np.stack([xn, on], axis=-1))
        return out

    def label_tables(self, which: str) -> np.ndarray | None:
        src = self._phi if which == "phi" else self._kappa
        if src is None:
            return None
        rows = []
        for t in range(self.horizon + 1):
            z, x = np.meshgrid(np.arange(self.n_latent), np.arange(self.n_states[t]), indexing="ij")
            rows.append(self._label(src, t, z, x).tolist())
        return rows

    def validate(self, max_entries: int = 2**22) -> None:
        Z, T = self.n_latent, self.horizon
        if self.init_state.shape != (Z,) or self.init_obs.shape != (Z,):
            raise ModelError("init_state/init_obs must have one entry per latent")
        if np.any((self.init_state < 0) | (self.init_state >= self.n_states[0])):
            raise ModelError("init_state out of range")
        if np.any((self.init_obs < 0) | (self.init_obs >= self.n_obs[0])):
            raise ModelError("init_obs out of range")
        if self._tables is None and self.table_size() > max_entries:
            return
        for t, tab in enumerate(self.step_tables()):
            shape = (Z, self.n_states[t], self.n_actions[t], 2)
            if tab.shape != shape:
                raise ModelError(f"step[{t}] has shape {tab.shape}, expected {shape}")
            xn, on = tab[..., 0], tab[..., 1]
            if np.any((xn < 0) | (xn >= self.n_states[t + 1])):
                raise ModelError(f"step[{t}] next state out of range")
            if np.any((on < 0) | (on >= self.n_obs[t + 1])):
                raise ModelError(f"step[{t}] observation out of range")
        nl = len(self.channel_labels)
        for which in ("phi", "kappa"):
            lab = self.label_tables(which)
            if lab is None:
                continue
            for t, row in enumerate(lab):
                arr = np.asarray(row)
                if np.any((arr < 0) | (arr >= nl)):
                    raise ModelError(f"{which}_x[{t}] label out of range")

    def __repr__(self) -> str:
        return (
            f"BridgePomdp({self.name or 'anon'}, T={self.horizon}, |Z|={self.n_latent}, "
            f"|X|={max(self.n_states)}, |A|={max(self.n_actions)})"
        )


# -- policies -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic-history, open-loop, or a finite mixture of those.

    A deterministic-history rule is either a mapping ``history -> action`` or a
    callable. Randomization exists only as mixture weights over deterministic
    components.
    """

    kind: str
    rule: Mapping | Callable | None = None
    actions: tuple[int, ...] | None = None
    mixture: tuple[tuple[float, "Policy"], ...] | None = None

    @classmethod
    def from_table(cls, table: Mapping[tuple, int]) -> "Policy":
        return cls("deterministic-history", rule=dict(table))

    @classmethod
    def from_function(cls, fn: Callable[[tuple], int]) -> "Policy":
        return cls("deterministic-history", rule=fn)

    @classmethod
    def open_loop(cls, actions: Iterable[int]) -> "Policy":
        return cls("open-loop-sequence", actions=tuple(int(a) for a in actions))

    @classmethod
    def mix(cls, components: Iterable[tuple[float, "Policy"]]) -> "Policy":
        comps = tuple((float(w), p) for w, p in components)
        if any(w < 0 for w, _ in comps) or abs(sum(w for w, _ in comps) - 1.0) > PROB_ATOL:
            raise ModelError("mixture weights must be nonnegative and sum to 1")
        if any(p.kind == "mixture" for _, p in comps):
            raise ModelError("nested mixtures are not supported")
        kind = "open-loop-distribution" if all(p.kind == "open-loop-sequence" for _, p in comps) else "mixture"
        return cls(kind, mixture=comps)

    @property
    def is_deterministic(self) -> bool:
        return self.mixture is None

    def components(self) -> tuple[tuple[float, "Policy"], ...]:
        return self.mixture if self.mixture is not None else ((1.0, self),)

    def act(self, history: tuple) -> int:
        if self.mixture is not None:
            raise ModelError("a mixture policy has no single action; iterate components()")
        t = len(history) // 2
        if self.actions is not None:
            if t >= len(self.actions):
                raise PolicyUndefined(history)
            return self.actions[t]
        if callable(self.rule):
            return int(self.rule(history))
        try:
            return int(self.rule[history])
        except KeyError:
            raise PolicyUndefined(history) from None


# -- trajectories ----------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    latent: int
    observations: tuple[int, ...]
    actions: tuple[int, ...]
    states: tuple[int, ...]
    phi: tuple[int, ...]
    kappa: tuple[int, ...]

    @property
    def transcript(self) -> tuple[int, ...]:
        return interleave(self.observations, self.actions)

    def history(self, t: int) -> tuple[int, ...]:
        return interleave(self.observations[: t + 1], self.actions[:t])


def interleave(obs: Sequence[int], acts: Sequence[int]) -> tuple[int, ...]:
    out = [int(obs[0])]
    for a, o in zip(acts, obs[1:]):
        out += [int(a), int(o)]
    return tuple(out)


def split_history(history: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """``(o0, a0, o1, ...)`` -> ``(observations, actions)``."""
    return tuple(history[0::2]), tuple(history[1::2])


def rollout(model: BridgePomdp, policy: Policy, z: int) -> Trajectory:
    if not policy.is_deterministic:
        raise ModelError("rollout needs a deterministic policy or a single mixture component")
    z = int(z)
    x = int(model.init_state[z])
    obs, acts, states = [int(model.init_obs[z])], [], [x]
    phi, kappa = [int(model.phi(0, z, x))], [int(model.kappa(0, z, x))]
    history: tuple[int, ...] = (obs[0],)
    for t in range(model.horizon):
        a = policy.act(history)
        if not 0 <= a < model.n_actions[t]:
            raise ModelError(f"policy chose action {a} outside alphabet at t={t}")
        xn, on = model.step(t, z, x, a)
        x, o = int(xn), int(on)
        acts.append(a)
        obs.append(o)
        states.append(x)
        phi.append(int(model.phi(t + 1, z, x)))
        kappa.append(int(model.kappa(t + 1, z, x)))
        history = history + (a, o)
    return Trajectory(z, tuple(obs), tuple(acts), tuple(states), tuple(phi), tuple(kappa))


@dataclass(frozen=True)
class ClosedLoopRow:
    latent: int
    component: int
    probability: float
    trajectory: Trajectory


def enumerate_closed_loop(model: BridgePomdp, policy: Policy, budget: int | None = None) -> list[ClosedLoopRow]:
    """One row per (latent in support, mixture component), sorted by that pair."""
    support = model.support
    comps = policy.components()
    budget = enum_budget() if budget is None else budget
    required = len(support) * len(comps)
    if required > budget:
        raise BudgetExceeded("closed-loop enumeration", required, budget)
    rows = []
    for z in support:
        for k, (w, pol) in enumerate(comps):
            if w == 0:
                continue
            rows.append(ClosedLoopRow(int(z), k, float(model.prior[z]) * w, rollout(model, pol, z)))
    return rows


def transcript_fiber(model: BridgePomdp, policy: Policy, transcript: Sequence[int]) -> frozenset[int]:
    transcript = tuple(int(v) for v in transcript)
    fiber = frozenset(
        r.latent for r in enumerate_closed_loop(model, policy) if r.trajectory.transcript == transcript
    )
    if not fiber:
        raise UnrealizableHistory(f"transcript {transcript} is not realizable")
    return fiber


def transcript_partition(model: BridgePomdp, policy: Policy) -> dict[tuple, frozenset[int]]:
    """All fibers of the transcript map of a deterministic policy."""
    fibers: dict[tuple, set[int]] = {}
    for r in enumerate_closed_loop(model, policy):
        fibers.setdefault(r.trajectory.transcript, set()).add(r.latent)
    return {k: frozenset(v) for k, v in fibers.items()}


def prefix_fiber(model: BridgePomdp, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Latents in the prior support consistent with an observe-act-observe
    prefix, with the current state of each. Actions are read off the prefix,
    so no policy is needed for deterministic agents."""
    prefix = tuple(int(v) for v in prefix)
    if len(prefix) % 2 != 1 or len(prefix) // 2 > model.horizon:
        raise UnrealizableHistory(f"malformed prefix {prefix}")
    zs = model.support
    xs = model.init_state[zs]
    keep = model.init_obs[zs] == prefix[0]
    zs, xs = zs[keep], xs[keep]
    for t in range(len(prefix) // 2):
        a, o = prefix[2 * t + 1], prefix[2 * t + 2]
        if not 0 <= a < model.n_actions[t]:
            raise UnrealizableHistory(f"action {a} outside alphabet at t={t}")
        xn, on = model.step(t, zs, xs, a)
        keep = on == o
        zs, xs = zs[keep], xn[keep]
    if zs.size == 0:
        raise UnrealizableHistory(f"prefix {prefix} has empty fiber")
    return zs, xs


# -- quotients ---------------------------------------------------------------

QUOTIENT_DOMAINS = ("latent", "state", "observation", "transcript")


@dataclass(frozen=True, eq=False)
class Quotient:
    """A partition given by a class-label map.

    ``latent``/``state``/``observation`` quotients carry an integer array
    ``class_of``; ``state`` and ``observation`` quotients read the value at
    ``time`` (default: the horizon). ``transcript`` quotients carry a ``key``
    callable on history tuples; its hashable return value is the class label.
    """

    domain: str
    class_of: np.ndarray | None = None
    key: Callable[[tuple], object] | None = None
    time: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.domain not in QUOTIENT_DOMAINS:
            raise ModelError(f"unknown quotient domain {self.domain!r}")
        if self.domain == "transcript":
            if self.key is None:
                raise ModelError("transcript quotient needs a key function")
            return
        if self.class_of is None:
            raise ModelError(f"{self.domain} quotient needs class_of")
        c = np.asarray(self.class_of, dtype=np.int64)
        if c.ndim != 1 or np.any(c < 0):
            raise ModelError("class_of must be a vector of nonnegative labels")
        c.setflags(write=False)
        object.__setattr__(self, "class_of", c)

    @property
    def class_count(self) -> int | None:
        if self.class_of is None:
            return None
        return int(self.class_of.max()) + 1 if self.class_of.size else 0

    def __call__(self, item):
        if self.domain == "transcript":
            return self.key(tuple(item))
        return self.class_of[item]

    def check_against(self, model: BridgePomdp) -> None:
        if self.domain == "latent":
            if self.class_of.size != model.n_latent:
                raise ModelError(f"quotient {self.name!r}: size {self.class_of.size} != |Z|")
            seen = set(self.class_of[model.support].tolist())
            if seen != set(range(self.class_count)):
                raise ModelError(f"quotient {self.name!r}: empty class on the prior support")
        elif self.domain == "state":
            t = model.horizon if self.time is None else self.time
            if self.class_of.size != model.n_states[t]:
                raise ModelError(f"quotient {self.name!r}: size != |X_{t}|")
        elif self.domain == "observation":
            t = model.horizon if self.time is None else self.time
            if self.class_of.size != model.n_obs[t]:
                raise ModelError(f"quotient {self.name!r}: size != |O_{t}|")

    @classmethod
    def latent(cls, class_of, name: str = "") -> "Quotient":
        return cls("latent", class_of=np.asarray(class_of), name=name)

    @classmethod
    def state(cls, class_of, time: int | None = None, name: str = "") -> "Quotient":
        return cls("state", class_of=np.asarray(class_of), time=time, name=name)

    @classmethod
    def observation(cls, class_of, time: int | None = None, name: str = "") -> "Quotient":
        return cls("observation", class_of=np.asarray(class_of), time=time, name=name)

    @classmethod
    def transcript(cls, key: Callable[[tuple], object], name: str = "") -> "Quotient":
        return cls("transcript", key=key, name=name)

    @classmethod
    def identity(cls, size: int, domain: str = "latent", name: str = "") -> "Quotient":
        return cls(domain, class_of=np.arange(size), name=name)

    @classmethod
    def constant(cls, size: int, domain: str = "latent", name: str = "") -> "Quotient":
        return cls(domain, class_of=np.zeros(size, dtype=np.int64), name=name)


def quotient_value(q: Quotient, traj: Trajectory):
    """Evaluate any quotient on a trajectory."""
    if q.domain == "latent":
        return int(q.class_of[traj.latent])
    if q.domain == "state":
        t = len(traj.actions) if q.time is None else q.time
        return int(q.class_of[traj.states[t]])
    if q.domain == "observation":
        t = len(traj.actions) if q.time is None else q.time
        return int(q.class_of[traj.observations[t]])
    return q.key(traj.transcript)
