"""Bridge-gap diagnostics: quotients, gap components, surrogate-transfer
bounds, missing sensing bits, refinement, absorption, bridge budgets and
authority."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    BITS_ATOL,
    BridgePomdp,
    BudgetExceeded,
    ModelError,
    Policy,
    Quotient,
    enum_budget,
    enumerate_closed_loop,
    prefix_fiber,
    quotient_value,
    split_history,
)
from .info import (
    JointTable,
    _entropy_unnormalized,
    closed_loop_joint,
    cond_entropy,
    directed_information,
    mutual_info,
    reachable_states,
)


def quotient_from_targets(model: BridgePomdp, targets: Sequence[Sequence[int] | Callable[[int], object]]) -> Quotient:
    """Coarsest latent partition on which every target is constant.

    Classes are numbered in order of first appearance along the support;
    latents outside the support join class 0.
    """
    support = model.support
    keys = []
    for z in support:
        try:
            keys.append(tuple(t(int(z)) if callable(t) else t[int(z)] for t in targets))
        except (IndexError, KeyError) as exc:
            raise ModelError(f"target undefined at latent {z}") from exc
    ids: dict[tuple, int] = {}
    class_of = np.zeros(model.n_latent, dtype=np.int64)
    for z, k in zip(support, keys):
        class_of[z] = ids.setdefault(k, len(ids))
    return Quotient.latent(class_of, name="Q")


def _h(label_weights: Mapping[object, float]) -> float:
    return _entropy_unnormalized(list(label_weights.values()))


# -- control-side quantities from a deterministic context ------------------------


def terminal_pairs(model: BridgePomdp, context, v: Quotient, v_tilde: Quotient) -> set[tuple[int, int]]:
    """Achievable (V, Ṽ) value pairs over all action sequences from ``context``.

    V reads the terminal state, Ṽ the terminal observation; both are
    propagated jointly as (state, last observation) pairs.
    """
    z, x, t0 = (int(c) for c in context)
    if t0 >= model.horizon:
        raise ModelError("context leaves no actions before the horizon")
    pairs = {(x, -1)}
    cap = enum_budget()
    for t in range(t0, model.horizon):
        xs = np.array(sorted({p[0] for p in pairs}))
        if xs.size * model.n_actions[t] > cap:
            raise BudgetExceeded("terminal pair propagation", xs.size * model.n_actions[t], cap)
        xn, on = model.step(t, z, xs[:, None], model.actions(t)[None, :])
        pairs = set(zip(xn.ravel().tolist(), on.ravel().tolist()))
    return {(int(v.class_of[xt]), int(v_tilde.class_of[ot])) for xt, ot in pairs}


def sup_conditional_entropy(pairs: set[tuple[int, int]]) -> tuple[float, float]:
    """``(sup_p H(V|Ṽ), sup_p H(Ṽ|V))`` over action-sequence distributions.

    For deterministic contexts every distribution over achievable pairs is
    realizable, and ``H(V|Ṽ) = sum_w q(w) H(V|Ṽ=w) <= max_w log|{v: (v,w)}|``
    with equality for the uniform law on the largest Ṽ-fiber.
    """
    by_w: dict[int, set[int]] = {}
    by_v: dict[int, set[int]] = {}
    for vv, ww in pairs:
        by_w.setdefault(ww, set()).add(vv)
        by_v.setdefault(vv, set()).add(ww)
    return (
        math.log2(max(len(s) for s in by_w.values())),
        math.log2(max(len(s) for s in by_v.values())),
    )


@dataclass
class BridgeGapReport:
    delta_qw: float
    delta_sense: float
    delta_v_vtilde: float
    delta_act: float
    normalized_sense_deficit: float
    normalized_act_deficit: float
    context: tuple[int, int, int]
    capacity_v: float = 0.0
    capacity_vtilde: float = 0.0
    h_q: float = 0.0
    i_q_transcript: float = 0.0
    log_supp_v: float = 0.0
    notes: list[str] = field(default_factory=list)

    def components(self) -> dict[str, float]:
        return {
            "delta_qw": self.delta_qw,
            "delta_sense": self.delta_sense,
            "delta_v_vtilde": self.delta_v_vtilde,
            "delta_act": self.delta_act,
        }

    def total(self, weights: Mapping[str, float]) -> float:
        """Weighted total gap; weights must be supplied explicitly."""
        return sum(weights[k] * v for k, v in self.components().items())

    def to_json(self) -> dict:
        return report_json(self)


def report_json(report) -> dict:
    """Full-precision fields plus a rounded ``display`` mirror."""
    raw = asdict(report)
    display = {k: round(v, 6) for k, v in raw.items() if isinstance(v, float)}
    return {**raw, "display": display}


def bridge_gap_report(
    model: BridgePomdp,
    policy: Policy,
    q: Quotient,
    w: Quotient,
    v: Quotient,
    v_tilde: Quotient,
    context: tuple[int, int, int] | None = None,
) -> BridgeGapReport:
    """All four gap components.

    ``q`` is a latent quotient, ``w`` a transcript quotient (or latent), ``v``
    a terminal-state quotient and ``v_tilde`` a terminal-observation quotient.
    The default context is the first prior-support latent at t=0.
    """
    if v.domain != "state" or v_tilde.domain != "observation":
        raise ModelError("v must be a state quotient and v_tilde an observation quotient")
    if context is None:
        z0 = int(model.support[0])
        context = (z0, int(model.init_state[z0]), 0)
    rows = enumerate_closed_loop(model, policy)
    j = closed_loop_joint(rows, {"Q": q, "W": w, "T": lambda tr: tr.transcript})
    h_qw, h_wq = cond_entropy(j, "Q", "W"), cond_entropy(j, "W", "Q")
    d_sense = cond_entropy(j, "Q", "T")
    h_q = j.entropy(("Q",))

    pairs = terminal_pairs(model, context, v, v_tilde)
    s_vw, s_wv = sup_conditional_entropy(pairs)
    c_v = math.log2(len({p[0] for p in pairs}))
    c_vt = math.log2(len({p[1] for p in pairs}))
    log_supp = math.log2(v.class_count)
    d_act = log_supp - c_v
    return BridgeGapReport(
        delta_qw=max(h_qw, h_wq),
        delta_sense=d_sense,
        delta_v_vtilde=max(s_vw, s_wv),
        delta_act=d_act,
        normalized_sense_deficit=d_sense / h_q if h_q > 0 else 0.0,
        normalized_act_deficit=d_act / log_supp if log_supp > 0 else 0.0,
        context=tuple(int(c) for c in context),
        capacity_v=c_v,
        capacity_vtilde=c_vt,
        h_q=h_q,
        i_q_transcript=mutual_info(j, "Q", "T"),
        log_supp_v=log_supp,
        notes=["delta_v_vtilde sup attained on the largest fiber (exact for deterministic contexts)"],
    )


@dataclass
class SandwichResult:
    passed: bool
    compression_upper_slack: float
    compression_lower_slack: float
    control_upper_slack: float
    control_lower_slack: float

    @property
    def worst_slack(self) -> float:
        return min(
            self.compression_upper_slack,
            self.compression_lower_slack,
            self.control_upper_slack,
            self.control_lower_slack,
        )


def sandwich_check(model, policy, q, w, v, v_tilde, context=None, tol: float = BITS_ATOL) -> SandwichResult:
    """Sandwich bounds on I(Q;T)-I(W;T) and on C_V - C_Ṽ; slacks >= -tol pass."""
    r = bridge_gap_report(model, policy, q, w, v, v_tilde, context)
    rows = enumerate_closed_loop(model, policy)
    j = closed_loop_joint(rows, {"Q": q, "W": w, "T": lambda tr: tr.transcript})
    diff = mutual_info(j, "Q", "T") - mutual_info(j, "W", "T")
    up = cond_entropy(j, "Q", "W") - diff
    lo = diff + cond_entropy(j, "W", "Q")
    pairs = terminal_pairs(model, r.context, v, v_tilde)
    s_vw, s_wv = sup_conditional_entropy(pairs)
    cdiff = r.capacity_v - r.capacity_vtilde
    res = SandwichResult(False, up, lo, s_vw - cdiff, cdiff + s_wv)
    res.passed = res.worst_slack >= -tol
    return res


# -- surrogate transfer ---------------------------------------------------------------


@dataclass
class ObjectiveTable:
    options: list
    values: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.options:
            raise ValueError("need at least one option")
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        for k, v in self.values.items():
            if v.shape != (len(self.options),):
                raise ValueError(f"objective {k} has wrong length")
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"objective {k} leaves [0, 1]")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.values[name]
        except KeyError:
            raise KeyError(f"unknown objective {name!r}") from None


def oscillation(table: ObjectiveTable, i: str, j: str) -> float:
    d = table[i] - table[j]
    return float(d.max() - d.min())


@dataclass
class RegretTransfer:
    bound: float
    worst_regret: float
    tight: bool
    holds: bool


def regret_transfer_check(table: ObjectiveTable, i: str, j: str, eta: float, tol: float = BITS_ATOL) -> RegretTransfer:
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    ji, jj = table[i], table[j]
    bound = eta + oscillation(table, i, j)
    good = ji >= ji.max() - eta - 1e-15
    regrets = jj.max() - jj[good]
    worst = float(regrets.max())
    return RegretTransfer(bound, worst, abs(worst - bound) <= tol, worst <= bound + tol)


def tightness_table(eta: float, omega: float) -> ObjectiveTable:
    """Two-option construction attaining the regret-transfer bound."""
    if eta + omega > 1:
        raise ValueError("need eta + omega <= 1 to stay inside [0, 1]")
    return ObjectiveTable(["a", "b"], {"i": [1 - eta, 1.0], "j": [1 - eta - omega, 1.0]})


# -- sensing ----------------------------------------------------------------------------


@dataclass
class MissingBits:
    bits: float
    witness_residual: float
    witness_entropy: float


def missing_sensing_bits(model: BridgePomdp, q: Quotient, prefix: Sequence[int], policy: Policy | None = None) -> MissingBits:
    """H(Q | prefix) plus the tight witness B = Q appended to the transcript."""
    zs, _ = prefix_fiber(model, prefix)
    w = model.prior[zs]
    labels = q.class_of[zs]
    by_class: dict[int, float] = {}
    for c, p in zip(labels.tolist(), w):
        by_class[c] = by_class.get(c, 0.0) + p
    h = _h(by_class)
    # witness: append B = Q to the transcript, evaluated inside the fiber
    j = JointTable(["Q", "B"], [(c, c) for c in labels.tolist()], w / w.sum())
    return MissingBits(h, cond_entropy(j, "Q", "B"), j.entropy(("B",)))


def _fiber_ids(table: Sequence[int], support) -> dict[int, int]:
    return {int(z): int(table[z]) for z in support}


def blackwell_refines(e_fine: Sequence[int], e_coarse: Sequence[int], support, prior=None) -> bool:
    """True iff the coarse experiment factors through the fine one on support.

    When it does and a prior is given, data processing
    ``I(Z;O_fine) >= I(Z;O_coarse)`` is asserted as well.
    """
    support = [int(z) for z in support]
    r: dict[int, int] = {}
    for z in support:
        f, c = int(e_fine[z]), int(e_coarse[z])
        if r.setdefault(f, c) != c:
            return False
    if prior is not None:
        p = np.asarray(prior, dtype=float)
        assert experiment_information(e_fine, support, p) >= experiment_information(e_coarse, support, p) - BITS_ATOL
    return True


def experiment_information(e: Sequence[int], support, prior) -> float:
    """I(Z; O) = H(O) for a deterministic experiment."""
    mass: dict[int, float] = {}
    for z in support:
        mass[int(e[z])] = mass.get(int(e[z]), 0.0) + float(prior[z])
    return _h(mass)


# -- absorption ------------------------------------------------------------------------------


@dataclass
class AbsorptionReport:
    i_q_v: float
    i_q_m: float
    h_q_given_v: float
    h_q_given_m: float
    h_v_given_m: float
    h_q: float
    memory_classes: int
    identification: bool
    overwrite_collapse: bool
    omission: bool
    memory_lower_bound: float
    bound_holds: bool

    def to_json(self) -> dict:
        return report_json(self)


def absorption_report(
    model: BridgePomdp,
    policy: Policy,
    q: Quotient,
    v: Quotient,
    memory: Quotient | Callable[[tuple], object] | None = None,
    omission: bool = False,
    tol: float = BITS_ATOL,
) -> AbsorptionReport:
    """Prediction-absorption accounting for a terminal memory M_T = m(H_T).

    ``memory`` defaults to the full terminal history. The omission flag is
    declared by the caller.
    """
    if memory is None:
        key = lambda h: h
    elif isinstance(memory, Quotient):
        if memory.domain != "transcript":
            raise ModelError("memory quotient must be defined on terminal histories")
        key = memory.key
    else:
        key = memory
    rows = enumerate_closed_loop(model, policy)
    j = closed_loop_joint(rows, {"Q": q, "V": v, "M": lambda tr: key(tr.transcript)})
    h_v_m = cond_entropy(j, "V", "M")
    h_q_v = cond_entropy(j, "Q", "V")
    h_q_m = cond_entropy(j, "Q", "M")
    i_q_v, i_q_m = mutual_info(j, "Q", "V"), mutual_info(j, "Q", "M")
    predictable = h_v_m <= tol
    holds = (not predictable) or (i_q_m >= i_q_v - tol and h_q_m <= h_q_v + tol)
    h_q = j.entropy(("Q",))
    return AbsorptionReport(
        i_q_v=i_q_v,
        i_q_m=i_q_m,
        h_q_given_v=h_q_v,
        h_q_given_m=h_q_m,
        h_v_given_m=h_v_m,
        h_q=h_q,
        memory_classes=len(j.marginal(("M",))),
        identification=h_q_v <= tol,
        overwrite_collapse=h_q_v > tol and predictable,
        omission=omission,
        memory_lower_bound=h_q if h_q_m <= tol else 0.0,
        bound_holds=holds,
    )


# -- bridge budget ------------------------------------------------------------------------------


@dataclass
class BudgetCheck:
    passed: bool
    outward: float
    inward: float
    total: float
    h_b: float
    mediation_residual: float


class MediationViolated(ValueError):
    pass


def di_budget_check(j: JointTable, a_axes, o_axes, b_axes, b: float, tol: float = BITS_ATOL) -> BudgetCheck:
    """Directed split of I(A^T;O^T) bounded by the mediating bridge entropy."""
    a_axes, o_axes, b_axes = tuple(a_axes), tuple(o_axes), tuple(b_axes)
    resid = mutual_info(j, a_axes, o_axes, b_axes)
    if resid > tol:
        raise MediationViolated(f"I(A;O|B) = {resid:.3g} > 0: B does not mediate")
    out, inward, total = directed_information(j, a_axes, o_axes)
    h_b = j.entropy(b_axes)
    ok = abs(out + inward - total) <= tol and total <= min(h_b, b) + tol
    return BudgetCheck(ok, out, inward, total, h_b, resid)


# -- authority ----------------------------------------------------------------------------------


@dataclass
class AuthorityReport:
    state_conditioned: bool
    strong_overwrite: bool
    strong_targets: list[int]
    unreachable: list[tuple[int, int, int]]
    separating_pairs: list[tuple[int, int, int]]


def _terminal_map(model: BridgePomdp, z: int, x0: int, horizon: int) -> np.ndarray:
    grids = np.meshgrid(*[model.actions(t) for t in range(horizon)], indexing="ij")
    seqs = np.stack([g.ravel() for g in grids], axis=1)
    xs = np.full(seqs.shape[0], x0)
    for t in range(horizon):
        xs, _ = model.step(t, z, xs, seqs[:, t])
    return xs


def authority_report(model: BridgePomdp, horizon: int | None = None, max_witnesses: int = 20) -> AuthorityReport:
    """State-conditioned and strong-overwrite authority over X_T.

    State-conditioned: every (latent, x0, x*) has a reaching sequence, with
    the latent fixing the law bits. Strong overwrite: for each x*, one sequence
    reaches x* from every prior-support initial condition. Separating pairs
    are support latents sharing O_0 for which no single sequence reaches a
    common target they can each reach.
    """
    T = model.horizon if horizon is None else int(horizon)
    n_seq = int(np.prod(model.n_actions[:T]))
    work = model.n_latent * model.n_states[0] * n_seq
    if work > enum_budget():
        raise BudgetExceeded("authority enumeration", work, enum_budget())
    n_target = model.n_states[T]
    unreachable = []
    for z in model.support:
        for x0 in range(model.n_states[0]):
            hit = set(_terminal_map(model, int(z), x0, T).tolist())
            for xs in range(n_target):
                if xs not in hit:
                    unreachable.append((int(z), x0, xs))
    maps = {int(z): _terminal_map(model, int(z), int(model.init_state[z]), T) for z in model.support}
    strong = [xs for xs in range(n_target) if np.any(np.all([m == xs for m in maps.values()], axis=0))]
    pairs = []
    for z1, z2 in itertools.combinations(sorted(maps), 2):
        if model.init_obs[z1] != model.init_obs[z2]:
            continue
        m1, m2 = maps[z1], maps[z2]
        for xs in sorted(set(m1.tolist()) & set(m2.tolist())):
            if not np.any((m1 == xs) & (m2 == xs)):
                pairs.append((z1, z2, xs))
    return AuthorityReport(
        state_conditioned=not unreachable,
        strong_overwrite=len(strong) == n_target,
        strong_targets=strong,
        unreachable=unreachable[:max_witnesses],
        separating_pairs=pairs,
    )


def dumps(report) -> str:
    return json.dumps(report.to_json() if hasattr(report, "to_json") else asdict(report), indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(type(o))
