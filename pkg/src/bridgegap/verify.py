"""Randomized, reproducible checks of every structural guarantee.

Each check draws small random instances from a seeded generator, computes a
slack that must be ``>= -tol`` and, on failure, dumps a model document that
:func:`replay` reloads to reproduce the recorded slack exactly. Checks whose
hypothesis does not hold on a drawn instance are counted as vacuous.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import BITS_ATOL, BridgePomdp, LatentSpace, Policy, Quotient, enumerate_closed_loop, transcript_partition
from .gap import (
    ObjectiveTable,
    absorption_report,
    authority_report,
    blackwell_refines,
    di_budget_check,
    experiment_information,
    missing_sensing_bits,
    regret_transfer_check,
    sandwich_check,
    tightness_table,
)
from .info import (
    _entropy_unnormalized,
    closed_loop_joint,
    cond_entropy,
    information_gain,
    mutual_info,
    posterior_latent,
    reach_set,
    reach_set_bruteforce,
    reachable_observations,
    reachable_states,
)
from .planner import BgpWeights, Factor, Planner, evaluate_policy, objective_value
from .specfile import parse_policy, parse_spec, policy_table, spec_dict

DEFAULT_CAPS = (64, 16, 4, 3)


@dataclass
class VerifyConfig:
    seed: int = 1
    trials: int = 1000
    caps: tuple[int, int, int, int] = DEFAULT_CAPS
    checks: tuple[str, ...] | None = None
    dump_dir: Path | None = None
    tol: float = BITS_ATOL
    corrupt: frozenset = frozenset()

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.caps) != 4 or min(self.caps) < 1:
            raise ValueError("caps are four positive integers (|Z|, |X|, |A|, T)")
        self.caps = tuple(int(c) for c in self.caps)
        if self.checks is not None:
            unknown = set(self.checks) - set(CHECKS)
            if unknown:
                raise ValueError(f"unknown checks: {sorted(unknown)}")
        self.corrupt = frozenset(self.corrupt)


@dataclass
class CheckSummary:
    name: str
    trials: int = 0
    passed: int = 0
    failed: int = 0
    vacuous: int = 0
    worst_slack: float | None = None
    counterexamples: list[str] = field(default_factory=list)


@dataclass
class VerifySummary:
    config: VerifyConfig
    checks: list[CheckSummary]

    @property
    def passed(self) -> bool:
        return all(c.failed == 0 for c in self.checks)

    def to_text(self) -> str:
        c = self.config
        lines = [f"verify seed={c.seed} trials={c.trials} caps={','.join(map(str, c.caps))} tol={c.tol:g}"]
        for s in self.checks:
            worst = "n/a" if s.worst_slack is None else f"{s.worst_slack + 0.0:.3e}"
            status = "PASS" if s.failed == 0 else "FAIL"
            lines.append(
                f"{status} {s.name:<14} passed={s.passed} failed={s.failed} vacuous={s.vacuous} worst_slack={worst}"
            )
            lines += [f"     counterexample: {p}" for p in s.counterexamples]
        lines.append("ALL PASS" if self.passed else "FAILURES")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "seed": self.config.seed,
            "trials": self.config.trials,
            "caps": list(self.config.caps),
            "passed": self.passed,
            "checks": [s.__dict__ for s in self.checks],
        }


# -- random instances -----------------------------------------------------------------


def _salted_choice(salt: int, history: tuple, n: int) -> int:
    digest = hashlib.blake2b(repr((salt, history)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n


def random_model(rng: np.random.Generator, caps, *, obs_from_state: bool = False, labels: bool = False) -> BridgePomdp:
    zc, xc, ac, tc = caps
    Z, X, A, T = (int(rng.integers(1, c + 1)) for c in (zc, xc, ac, tc))
    O = int(rng.integers(1, 6))
    w = rng.integers(0, 4, Z).astype(float)
    if w.sum() == 0:
        w[rng.integers(Z)] = 1.0
    prior = w / w.sum()
    init_state = rng.integers(0, X, Z)
    init_obs = rng.integers(0, O, Z) if rng.random() < 0.3 else np.zeros(Z, dtype=int)
    step = []
    g = [rng.integers(0, O, X) for _ in range(T)]
    for t in range(T):
        xn = rng.integers(0, X, (Z, X, A))
        on = g[t][xn] if obs_from_state else rng.integers(0, O, (Z, X, A))
        step.append(np.stack([xn, on], axis=-1))
    kw = {}
    if labels:
        kw = dict(phi_x=[rng.integers(0, 2, (Z, X)) for _ in range(T + 1)], channel_labels=("c0", "c1"))
    return BridgePomdp(T, LatentSpace(prior), X, O, A, init_state, init_obs, step, **kw)


def random_policy_doc(rng: np.random.Generator, model: BridgePomdp, mixture: bool = False) -> dict:
    def one():
        salt = int(rng.integers(2**31))
        pol = Policy.from_function(lambda h: _salted_choice(salt, h, model.n_actions[len(h) // 2]))
        return policy_table(model, pol)

    if not mixture:
        return one()
    k = int(rng.integers(1, 4))
    w = rng.integers(1, 5, k).astype(float)
    return {"mixture": [[float(x), one()] for x in w / w.sum()]}


def random_partition(rng: np.random.Generator, size: int, support=None, k_max: int = 4) -> list[int]:
    """Random class map whose classes are all hit on ``support``."""
    support = np.arange(size) if support is None else np.asarray(support)
    k = int(rng.integers(1, min(len(support), k_max) + 1))
    raw = rng.integers(0, k, size)
    _, inv = np.unique(raw[support], return_inverse=True)
    out = np.zeros(size, dtype=int)
    out[support] = inv
    return out.tolist()


def _hash_key(salt: int, k: int) -> Callable[[tuple], int]:
    return lambda h: _salted_choice(salt, tuple(h), k)


# -- checks ----------------------------------------------------------------------------
# Each check is gen(rng, caps) -> (model | None, params) and
# run(model, params) -> slack (None when vacuous).


def _ctx(rng, model):
    z = int(rng.choice(model.support))
    t0 = int(rng.integers(0, model.horizon))
    return [z, int(rng.integers(0, model.n_states[t0])), t0]


def gen_sandwich(rng, caps):
    m = random_model(rng, caps)
    T = m.horizon
    return m, {
        "policy": random_policy_doc(rng, m),
        "q": random_partition(rng, m.n_latent, m.support),
        "w": random_partition(rng, m.n_latent, m.support),
        "v": random_partition(rng, m.n_states[T]),
        "vt": random_partition(rng, m.n_obs[T]),
        "context": _ctx(rng, m),
    }


def run_sandwich(m, p):
    r = sandwich_check(
        m,
        parse_policy(p["policy"]),
        Quotient.latent(p["q"]),
        Quotient.latent(p["w"]),
        Quotient.state(p["v"]),
        Quotient.observation(p["vt"]),
        tuple(p["context"]),
    )
    return r.worst_slack


def gen_regret(rng, caps):
    k = int(rng.integers(1, 9))
    eta = float(rng.random() * 0.5)
    eta2 = float(rng.random() * 0.5)
    return None, {
        "options": k,
        "ji": rng.random(k).tolist(),
        "jj": rng.random(k).tolist(),
        "eta": eta,
        "tight": [eta2, float(rng.random() * (1 - eta2))],
    }


def run_regret(_, p):
    tab = ObjectiveTable(list(range(p["options"])), {"i": p["ji"], "j": p["jj"]})
    r = regret_transfer_check(tab, "i", "j", p["eta"])
    eta, om = p["tight"]
    t = regret_transfer_check(tightness_table(eta, om), "i", "j", eta)
    return min(r.bound - r.worst_regret, -abs(t.worst_regret - (eta + om)))


def gen_fibers(rng, caps):
    m = random_model(rng, caps)
    return m, {"policy": random_policy_doc(rng, m)}


def run_fibers(m, p):
    pol = parse_policy(p["policy"])
    fibers = transcript_partition(m, pol)
    members = sorted(z for f in fibers.values() for z in f)
    if members != sorted(m.support.tolist()):
        return -1.0
    worst = 0.0
    for tr, fib in fibers.items():
        post = posterior_latent(m, tr, pol)
        expect = np.zeros(m.n_latent)
        idx = sorted(fib)
        expect[idx] = m.prior[idx] / m.prior[idx].sum()
        worst = max(worst, float(np.abs(post - expect).max()))
    return -worst


def gen_missing_bits(rng, caps):
    m = random_model(rng, caps)
    doc = random_policy_doc(rng, m)
    rows = enumerate_closed_loop(m, parse_policy(doc))
    tr = rows[int(rng.integers(len(rows)))].trajectory
    t = int(rng.integers(0, m.horizon + 1))
    return m, {"policy": doc, "q": random_partition(rng, m.n_latent, m.support), "prefix": list(tr.history(t))}


def run_missing_bits(m, p):
    q = Quotient.latent(p["q"])
    mb = missing_sensing_bits(m, q, p["prefix"])
    post = posterior_latent(m, p["prefix"])
    h = _entropy_unnormalized(np.bincount(q.class_of, weights=post))
    return min(-mb.witness_residual, -abs(mb.witness_entropy - mb.bits), -abs(h - mb.bits))


def gen_refinement(rng, caps):
    m = random_model(rng, caps)
    Z = m.n_latent
    k = int(rng.integers(1, 6))
    fine = rng.integers(0, k, Z).tolist()
    r = rng.integers(0, max(1, k - 1), k).tolist()
    return m, {
        "policy": random_policy_doc(rng, m),
        "fine": fine,
        "coarse": [r[f] for f in fine],
        "other": rng.integers(0, k, Z).tolist(),
        "salt": int(rng.integers(2**31)),
        "k": int(rng.integers(1, 4)),
    }


def run_refinement(m, p):
    sup, prior = m.support, m.prior
    if not blackwell_refines(p["fine"], p["coarse"], sup, prior):
        return -1.0
    slack = experiment_information(p["fine"], sup, prior) - experiment_information(p["coarse"], sup, prior)
    # mutual refinement forces identical partitions
    if blackwell_refines(p["fine"], p["other"], sup) and blackwell_refines(p["other"], p["fine"], sup):
        a = {(p["fine"][z], p["other"][z]) for z in sup}
        if len({x for x, _ in a}) != len(a) or len({y for _, y in a}) != len(a):
            return -1.0
    rows = enumerate_closed_loop(m, parse_policy(p["policy"]))
    key = _hash_key(p["salt"], p["k"])
    j = closed_loop_joint(rows, {"Z": lambda tr: tr.latent, "T": lambda tr: tr.transcript, "R": lambda tr: key(tr.transcript)})
    return min(slack, mutual_info(j, "Z", "T") - mutual_info(j, "Z", "R"))


def gen_telescoping(rng, caps):
    m = random_model(rng, caps, labels=True)
    T = m.horizon
    return m, {
        "policy": random_policy_doc(rng, m),
        "q": random_partition(rng, m.n_latent, m.support),
        "c_star": ["c1"] if rng.random() < 0.7 else [],
        "v_q": random_partition(rng, m.n_states[T]),
        "v_tilde": random_partition(rng, m.n_obs[T]),
        "factor": random_partition(rng, m.n_states[T]),
        "lambdas": rng.integers(0, 3, 4).tolist(),
    }


def _weights(p) -> BgpWeights:
    lc, lv, lo, ld = (float(x) for x in p["lambdas"])
    return BgpWeights(
        q=Quotient.latent(p["q"]),
        lambda_c=lc,
        lambda_v=lv,
        lambda_o=lo,
        lambda_d=ld,
        c_star=frozenset(p["c_star"]),
        v_q=Quotient.state(p["v_q"]),
        v_tilde=Quotient.observation(p["v_tilde"]),
        factors=(Factor("Y", Quotient.state(p["factor"])),),
    )


def run_telescoping(m, p):
    pl = Planner(m, _weights(p))
    pol = parse_policy(p["policy"])
    shaped = objective_value(pl, pol, "bgp")
    ev = evaluate_policy(m, pol, pl.w.q, planner=pl)
    terminal = sum(pp * phi for pp, phi in ev.phi_terminal)
    telescoped = ev.phi_trajectory[0] - terminal
    res = pl.plan("bgp")
    replayed = objective_value(pl, res.policy, "bgp")
    return min(
        -abs(shaped - telescoped),
        -abs(res.value - replayed),
        res.value - shaped,
        min(phi for _, phi in ev.phi_terminal),
    )


def gen_di_budget(rng, caps):
    m = random_model(rng, caps)
    return m, {"policy": random_policy_doc(rng, m, mixture=True), "extra_budget": float(rng.random() * 2)}


def run_di_budget(m, p):
    rows = enumerate_closed_loop(m, parse_policy(p["policy"]))
    T = m.horizon
    a_ax = [f"A{t}" for t in range(T)]
    o_ax = [f"O{t + 1}" for t in range(T)]
    vars_ = {}
    for t in range(T):
        vars_[a_ax[t]] = lambda tr, t=t: tr.actions[t]
        vars_[o_ax[t]] = lambda tr, t=t: tr.observations[t + 1]
    vars_["B"] = lambda tr: tr.transcript
    j = closed_loop_joint(rows, vars_)
    hb = j.entropy(("B",))
    res = di_budget_check(j, a_ax, o_ax, ["B"], hb + p["extra_budget"])
    return min(-abs(res.outward + res.inward - res.total), min(res.h_b, hb + p["extra_budget"]) - res.total)


def gen_absorption(rng, caps):
    m = random_model(rng, caps)
    T = m.horizon
    return m, {
        "policy": random_policy_doc(rng, m),
        "q": random_partition(rng, m.n_latent, m.support),
        "memory": [int(rng.integers(2**31)), int(rng.integers(1, 9))] if rng.random() < 0.6 else None,
        "v_state": random_partition(rng, m.n_states[T]) if rng.random() < 0.5 else None,
        "v_mod": int(rng.integers(1, 4)),
    }


def _absorption(m, p):
    mem = None if p["memory"] is None else _hash_key(*p["memory"])
    mkey = (lambda h: h) if mem is None else mem
    if p["v_state"] is not None:
        v = Quotient.state(p["v_state"])
    else:
        # a coarsening of the memory is predictable from it by construction
        v = Quotient.transcript(lambda h: _salted_choice(7, (mkey(h),), p["v_mod"]))
    return absorption_report(m, parse_policy(p["policy"]), Quotient.latent(p["q"]), v, mem)


def run_absorption(m, p):
    r = _absorption(m, p)
    if r.h_v_given_m > BITS_ATOL:
        return None
    flags_ok = r.identification == (r.h_q_given_v <= BITS_ATOL) and r.overwrite_collapse == (r.h_q_given_v > BITS_ATOL)
    return min(r.i_q_m - r.i_q_v, r.h_q_given_v - r.h_q_given_m, 0.0 if flags_ok else -1.0)


def run_memory_count(m, p):
    r = _absorption(m, p)
    if r.h_q_given_m > BITS_ATOL:
        return None
    return math.log2(r.memory_classes) - r.h_q


def gen_ig(rng, caps):
    m = random_model(rng, caps)
    return m, {"policy": random_policy_doc(rng, m)}


def run_ig(m, p):
    rows = enumerate_closed_loop(m, parse_policy(p["policy"]))
    T = m.horizon
    gain = 0.0
    for r in rows:
        tr = r.trajectory
        gain += r.probability * sum(information_gain(m, tr.history(t), tr.actions[t]) for t in range(T))
    j = closed_loop_joint(rows, {"Z": lambda tr: tr.latent, "H0": lambda tr: tr.history(0), "HT": lambda tr: tr.transcript})
    drop = cond_entropy(j, "Z", "H0") - cond_entropy(j, "Z", "HT")
    return -abs(gain - drop)


def gen_bottleneck(rng, caps):
    m = random_model(rng, caps, obs_from_state=True)
    ctx = _ctx(rng, m)
    return m, {"context": ctx, "h": int(rng.integers(1, m.horizon - ctx[2] + 1))}


def run_bottleneck(m, p):
    ctx, h = tuple(p["context"]), p["h"]
    z, x, t0 = ctx
    emp_o = math.log2(reachable_observations(m, ctx, h).size)
    emp_x = math.log2(reachable_states(m, z, x, t0, h)[-1].size)
    ids = Quotient.identity(m.n_states[t0 + h], "state")
    ido = Quotient.identity(m.n_obs[t0 + h], "observation")
    agree = reach_set(m, ctx, h, ids) == reach_set_bruteforce(m, ctx, h, ids) and reach_set(
        m, ctx, h, ido
    ) == reach_set_bruteforce(m, ctx, h, ido)
    return min(emp_x - emp_o, 0.0 if agree else -1.0)


def gen_steer(rng, caps):
    zc, xc, ac, tc = caps
    Z, X, A, T = (int(rng.integers(1, c + 1)) for c in (zc, xc, ac, tc))
    return None, {
        "Z": Z,
        "X": X,
        "A": A,
        "T": T,
        "dyn": rng.integers(0, X, (T, X, A)).tolist(),
        "cstar": (rng.random(X) < 0.15).astype(int).tolist(),
        "g": rng.integers(0, 3, X).tolist(),
    }


def steer_model(p) -> BridgePomdp:
    """Sensing is lossless only in channel state C*; outside it the
    observation depends on the (latent-independent) state alone."""
    Z, X, A, T = p["Z"], p["X"], p["A"], p["T"]
    dyn, cs, g = np.array(p["dyn"]), np.array(p["cstar"]), np.array(p["g"])
    step = []
    for t in range(T):
        xn = np.broadcast_to(dyn[t][None], (Z, X, A))
        on = np.where(cs[xn] == 1, 3 + np.arange(Z)[:, None, None], g[xn])
        step.append(np.stack([xn, on], axis=-1))
    phi = [np.broadcast_to(cs[None], (Z, X)) for _ in range(T + 1)]
    return BridgePomdp(
        T, LatentSpace.uniform(Z), X, 3 + Z, A, np.zeros(Z, int), np.zeros(Z, int), step,
        phi_x=phi, channel_labels=("out", "cstar"),
    )


def run_steer(_, p):
    m = steer_model(p)
    layers = reachable_states(m, 0, 0, 0, m.horizon)
    labels = {int(m.phi(t, 0, layer).max()) for t, layer in enumerate(layers)}
    if 1 in labels:
        return None
    h_z = math.log2(m.n_latent)
    worst = 0.0
    for seq in itertools.product(*[range(m.n_actions[t]) for t in range(m.horizon)]):
        rows = enumerate_closed_loop(m, Policy.open_loop(seq))
        j = closed_loop_joint(rows, {"Z": lambda tr: tr.latent, "T": lambda tr: tr.transcript})
        worst = max(worst, h_z - cond_entropy(j, "Z", "T"))
    return -worst


def gen_authority(rng, caps):
    zc, xc, ac, tc = caps
    small = (min(zc, 8), min(xc, 6), min(ac, 3), min(tc, 3))
    return random_model(rng, small), {}


def run_authority(m, _):
    rep = authority_report(m)
    seqs = list(itertools.product(*[range(m.n_actions[t]) for t in range(m.horizon)]))

    def run(z, seq):
        x, obs = int(m.init_state[z]), [int(m.init_obs[z])]
        for t, a in enumerate(seq):
            xn, on = m.step(t, z, x, a)
            x = int(xn)
            obs.append(int(on))
        return x, tuple(obs)

    bad = 0
    for z1, z2, xs in rep.separating_pairs:
        r1 = [run(z1, s) for s in seqs]
        r2 = [run(z2, s) for s in seqs]
        # no single sequence may drive both to xs, so a shared history cannot guarantee it
        if any(a[0] == xs and b[0] == xs for a, b in zip(r1, r2)):
            bad += 1
    if rep.strong_overwrite and rep.separating_pairs:
        bad += 1
    return -float(bad)


CHECKS: dict[str, tuple[Callable, Callable]] = {
    "sandwich": (gen_sandwich, run_sandwich),
    "regret": (gen_regret, run_regret),
    "fibers": (gen_fibers, run_fibers),
    "missing_bits": (gen_missing_bits, run_missing_bits),
    "refinement": (gen_refinement, run_refinement),
    "telescoping": (gen_telescoping, run_telescoping),
    "di_budget": (gen_di_budget, run_di_budget),
    "absorption": (gen_absorption, run_absorption),
    "memory_count": (gen_absorption, run_memory_count),
    "ig_telescoping": (gen_ig, run_ig),
    "bottleneck": (gen_bottleneck, run_bottleneck),
    "steer": (gen_steer, run_steer),
    "authority": (gen_authority, run_authority),
}


def evaluate_case(name: str, model, params, corrupt: bool = False):
    slack = CHECKS[name][1](model, params)
    if corrupt and slack is not None:
        slack = -abs(slack) - 1.0
    return slack


def _dump(cfg: VerifyConfig, name: str, trial: int, model, params, slack) -> str:
    d = Path(cfg.dump_dir or ".")
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"counterexample-{name}-seed{cfg.seed}-trial{trial}.json"
    rec = {"verify": {"check": name, "params": params, "slack": slack, "corrupt": name in cfg.corrupt}}
    doc = spec_dict(model, extra=rec) if model is not None else rec
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return str(path)


def run_verify(cfg: VerifyConfig) -> VerifySummary:
    names = list(CHECKS) if cfg.checks is None else [n for n in CHECKS if n in cfg.checks]
    out = []
    for name in names:
        gen, _ = CHECKS[name]
        s = CheckSummary(name)
        for trial in range(cfg.trials):
            rng = np.random.default_rng([cfg.seed, list(CHECKS).index(name), trial])
            model, params = gen(rng, cfg.caps)
            slack = evaluate_case(name, model, params, name in cfg.corrupt)
            s.trials += 1
            if slack is None:
                s.vacuous += 1
                continue
            s.worst_slack = slack if s.worst_slack is None else min(s.worst_slack, slack)
            if slack >= -cfg.tol:
                s.passed += 1
            else:
                s.failed += 1
                s.counterexamples.append(_dump(cfg, name, trial, model, params, slack))
        out.append(s)
    return VerifySummary(cfg, out)


def replay(path: str | Path) -> tuple[str, float | None, float | None]:
    """Reload a counterexample dump; returns (check, recorded, recomputed)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rec = doc["verify"]
    model = parse_spec(doc).model if "horizon" in doc else None
    slack = evaluate_case(rec["check"], model, rec["params"], rec.get("corrupt", False))
    return rec["check"], rec["slack"], slack
