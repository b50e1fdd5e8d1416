"""Benchmark families with one failing baseline each, plus the comparison table.

Every family is uniform over ``2**n`` latents and uses the minimal horizon
that realizes its failure. Step functions are vectorized callables so that
large distractor alphabets stay lazy.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import BridgePomdp, LatentSpace, ModelError, Quotient
from .info import empowerment_det, information_gain
from .planner import BgpWeights, Factor, PlanResult, evaluate_policy, plan_exact

FAMILIES = ("settable_distractor", "delayed_sensor", "inspect_overwrite", "quotient_transfer")


@dataclass
class BenchmarkInstance:
    name: str
    params: dict
    model: BridgePomdp
    quotients: dict[str, Quotient]
    baseline: str
    c_star: frozenset = frozenset()
    factors: tuple[Factor, ...] = ()
    baseline_kw: dict = field(default_factory=dict)
    task_reward: object = None

    @property
    def q(self) -> Quotient:
        return self.quotients["Q"]

    def weights(self, **kw) -> BgpWeights:
        base = dict(
            q=self.q,
            c_star=self.c_star,
            factors=self.factors,
            v_q=self.quotients.get("V_Q"),
            v_tilde=self.quotients.get("V_tilde"),
        )
        base.update(kw)
        return BgpWeights(**base)

    def plan(self, objective: str, weights: BgpWeights | None = None, **kw) -> PlanResult:
        w = self.weights() if weights is None else weights
        if objective == self.baseline:
            kw = {**self.baseline_kw, **kw}
        return plan_exact(self.model, objective, w, self.task_reward, **kw)

    def evaluate(self, result: PlanResult) -> tuple[Fraction, float]:
        """Exact success (as a rational) and residual on the report target."""
        target = self.quotients.get("report", self.q)
        ev = evaluate_policy(self.model, result.policy, self.q, target)
        return Fraction(ev.success).limit_denominator(2**20), ev.residual


def _uniform(n: int) -> LatentSpace:
    return LatentSpace.uniform(2**n)


def make_settable_distractor(n: int, m: int, inspect_first: bool = False) -> BenchmarkInstance:
    """Two decisions. Actions set an m-bit register D (revealing D only) or
    inspect, which locks a viewing state that shows Q from then on.

    States: 0 idle, 1 viewing, 2+d holding D=d. Observations: 0 null,
    1+d shows D=d, 1+2**m+q shows Q=q.
    """
    if n < 1 or m < 1:
        raise ModelError("n and m must be positive")
    nd, nq = 2**m, 2**n
    inspect = 0 if inspect_first else nd
    shift = 1 if inspect_first else 0

    def step(t, z, x, a):
        z, x, a = np.asarray(z), np.asarray(x), np.asarray(a)
        view = (x == 1) | (a == inspect)
        shape = np.broadcast_shapes(z.shape, x.shape, a.shape)
        xn = np.broadcast_to(np.where(view, 1, 2 + a - shift), shape)
        on = np.broadcast_to(np.where(view, 1 + nd + z, 1 + a - shift), shape)
        return xn, on

    model = BridgePomdp(
        2,
        _uniform(n),
        2 + nd,
        1 + nd + nq,
        nd + 1,
        np.zeros(nq, dtype=int),
        np.zeros(nq, dtype=int),
        step,
        name=f"settable_distractor(n={n},m={m})",
    )
    d_of = np.concatenate([[0, 0], np.arange(nd)])
    d = Quotient.state(d_of, name="D")
    return BenchmarkInstance(
        "settable_distractor",
        {"n": n, "m": m},
        model,
        {"Q": Quotient.identity(nq, name="Q"), "D": d},
        baseline="empowerment_ungated",
        factors=(Factor("D", d),),
    )


def make_delayed_sensor(n: int, stay_index: int = 0) -> BenchmarkInstance:
    """First action enters the sensing channel state C* or stays out; its
    observation is constant. The second action senses, revealing Q only
    from inside C*."""
    if n < 1:
        raise ModelError("n must be positive")
    if stay_index not in (0, 1):
        raise ModelError("stay_index must be 0 or 1")
    nq = 2**n
    enter = 1 - stay_index

    def step(t, z, x, a):
        z, x, a = np.broadcast_arrays(z, x, a)
        if t == 0:
            return np.where(a == enter, 1, x), np.zeros_like(x)
        return x.copy(), np.where((x == 1) & (a == 1), 1 + z, 0)

    model = BridgePomdp(
        2,
        _uniform(n),
        2,
        1 + nq,
        2,
        np.zeros(nq, dtype=int),
        np.zeros(nq, dtype=int),
        step,
        phi_x=lambda t, z, x: np.broadcast_arrays(z, x)[1],
        channel_labels=("out", "cstar"),
        name=f"delayed_sensor(n={n})",
    )
    return BenchmarkInstance(
        "delayed_sensor",
        {"n": n, "stay_index": stay_index},
        model,
        {"Q": Quotient.identity(nq, name="Q")},
        baseline="ig_one_step",
        c_star=frozenset({"cstar"}),
    )


def make_inspect_overwrite(n: int, inspect_first: bool = False) -> BenchmarkInstance:
    """One decision. The state is a register V starting at V=Q. Overwrite
    sets V:=0 and shows nothing; inspect keeps V and reveals Q."""
    if n < 1:
        raise ModelError("n must be positive")
    nq = 2**n
    inspect = 0 if inspect_first else 1

    def step(t, z, x, a):
        z, x, a = np.broadcast_arrays(z, x, a)
        look = a == inspect
        return np.where(look, x, 0), np.where(look, 1 + z, 0)

    model = BridgePomdp(
        1,
        _uniform(n),
        nq,
        1 + nq,
        2,
        np.arange(nq),
        np.zeros(nq, dtype=int),
        step,
        name=f"inspect_overwrite(n={n})",
    )
    v = Quotient.identity(nq, domain="state", name="V")
    return BenchmarkInstance(
        "inspect_overwrite",
        {"n": n},
        model,
        {
            "Q": Quotient.identity(nq, name="Q"),
            "V": v,
            "V_Q": v,
            "V_tilde": Quotient.identity(1 + nq, domain="observation", name="display"),
        },
        baseline="prediction_loss",
        baseline_kw={"prediction_target": v},
    )


def make_quotient_transfer(n_c: int, n_f: int, fine_first: bool = False) -> BenchmarkInstance:
    """One decision over z = (q_c, q_f). Coarse inspection shows q_c only;
    fine inspection shows the full latent. Training return pays for q_c."""
    if n_c < 1 or n_f < 1:
        raise ModelError("n_c and n_f must be positive")
    nz, nc = 2 ** (n_c + n_f), 2**n_c
    fine = 0 if fine_first else 1

    def step(t, z, x, a):
        z, x, a = np.broadcast_arrays(z, x, a)
        return np.zeros_like(x), np.where(a == fine, 1 + nc + z, 1 + (z >> n_f))

    model = BridgePomdp(
        1,
        LatentSpace.uniform(nz),
        1,
        1 + nc + nz,
        2,
        np.zeros(nz, dtype=int),
        np.zeros(nz, dtype=int),
        step,
        name=f"quotient_transfer(n_c={n_c},n_f={n_f})",
    )
    coarse = Quotient.latent(np.arange(nz) >> n_f, name="Q_c")
    return BenchmarkInstance(
        "quotient_transfer",
        {"n_c": n_c, "n_f": n_f},
        model,
        {"Q": Quotient.identity(nz, name="Q"), "Q_c": coarse},
        baseline="coarse_return",
        baseline_kw={"coarse_target": coarse},
    )


def make_lossy_display(n: int) -> BenchmarkInstance:
    """Ablation instance for the observation-loss term.

    A latent offset xi is uniform on n bits and Q carries nothing. Each
    action writes V := v XOR xi; hidden writes (lower indices) show nothing,
    observed writes show xi, which pins down V. Evaluated on V.
    """
    if n < 1:
        raise ModelError("n must be positive")
    nv = 2**n

    def step(t, z, x, a):
        z, x, a = np.broadcast_arrays(z, x, a)
        shown = a >= nv
        return (a % nv) ^ z, np.where(shown, 1 + z, 0)

    model = BridgePomdp(
        1,
        _uniform(n),
        nv,
        1 + nv,
        2 * nv,
        np.zeros(nv, dtype=int),
        np.zeros(nv, dtype=int),
        step,
        name=f"lossy_display(n={n})",
    )
    v = Quotient.identity(nv, domain="state", name="V")
    return BenchmarkInstance(
        "lossy_display",
        {"n": n},
        model,
        {
            "Q": Quotient.constant(nv, name="Q"),
            "V_Q": v,
            "V_tilde": Quotient.identity(1 + nv, domain="observation", name="display"),
            "report": v,
        },
        baseline="bgp",
    )


# -- family predicates --------------------------------------------------------


def check_family(inst: BenchmarkInstance) -> None:
    """Assert the defining property of the instance's family."""
    m = inst.model
    root = (int(m.init_obs[0]),)
    if inst.name == "settable_distractor":
        # D is written by the action alone, so it carries nothing about Q
        for a in range(m.n_actions[0]):
            xn, _ = m.step(0, m.support, m.init_state[m.support], a)
            d = inst.quotients["D"].class_of[xn]
            if xn[0] != 1 and np.unique(d).size != 1:
                raise ModelError("distractor register depends on the latent")
    elif inst.name == "delayed_sensor":
        for a in range(m.n_actions[0]):
            if information_gain(m, root, a) > 1e-12:
                raise ModelError("first-step information gain is not zero")
    elif inst.name == "inspect_overwrite":
        v = inst.quotients["V"]
        for a in range(2):
            xn, on = m.step(0, m.support, m.init_state[m.support], a)
            for o in np.unique(on):
                if np.unique(v.class_of[xn[on == o]]).size != 1:
                    raise ModelError("terminal target is not predicted exactly")
    elif inst.name == "quotient_transfer":
        nf = inst.params["n_f"]
        qc, qf = m.support >> nf, m.support & (2**nf - 1)
        joint = np.zeros((qc.max() + 1, qf.max() + 1))
        np.add.at(joint, (qc, qf), m.prior[m.support])
        if not np.allclose(joint, np.outer(joint.sum(1), joint.sum(0))):
            raise ModelError("coarse and fine parts are dependent")


def distractor_empowerment(inst: BenchmarkInstance) -> float:
    """Empowerment over the D register from the initial context in one step."""
    m = inst.model
    z = int(m.support[0])
    return empowerment_det(m, (z, int(m.init_state[z]), 0), 1, inst.quotients["D"])


# -- comparison table ----------------------------------------------------------

LABELS = {
    "settable_distractor": ("Settable distractor", "ungated empowerment controls irrelevant D"),
    "delayed_sensor": ("Delayed sensor", "one-step IG/EFE sees zero immediate information"),
    "inspect_overwrite": ("Inspect-overwrite", "terminal prediction loss chooses overwrite"),
    "quotient_transfer": ("Quotient transfer", "coarse return ignores refined bits"),
}


@dataclass
class Row:
    family: str
    objective: str
    success: Fraction
    residual: float
    digest: str

    @property
    def success_pct(self) -> float:
        return float(self.success * 100)

    def cell(self) -> str:
        pct = f"{self.success_pct:.1f}".rstrip("0").rstrip(".") if self.success == 1 else f"{self.success_pct:.1f}"
        return f"{pct}% / {self.residual:.6g}"


@dataclass
class BenchmarkResult:
    family: str
    params: dict
    baseline: Row
    bgp: Row
    runtime: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def row(r):
            return {
                "objective": r.objective,
                "success": f"{r.success.numerator}/{r.success.denominator}",
                "success_pct": r.success_pct,
                "success_display": f"{r.success_pct:.1f}",
                "residual_bits": r.residual,
                "policy_digest": r.digest,
            }

        return {
            "family": self.family,
            "params": self.params,
            "baseline": row(self.baseline),
            "bgp": row(self.bgp),
            "runtime_s": self.runtime,
            **self.extras,
        }


def policy_digest(result: PlanResult) -> str:
    items = sorted((list(h), a) for h, a in result.node_actions.items())
    return hashlib.sha256(json.dumps(items).encode()).hexdigest()[:12]


def run_instance(inst: BenchmarkInstance) -> BenchmarkResult:
    t0 = time.perf_counter()
    check_family(inst)
    rows = []
    for objective in (inst.baseline, "bgp"):
        res = inst.plan(objective)
        s, r = inst.evaluate(res)
        rows.append(Row(inst.name, objective, s, r, policy_digest(res)))
    out = BenchmarkResult(inst.name, inst.params, rows[0], rows[1], time.perf_counter() - t0)
    if inst.name == "settable_distractor":
        out.extras["distractor_empowerment_bits"] = distractor_empowerment(inst)
    return out


def make_instances(n: int = 4, m: int = 8, n_c: int = 2, n_f: int = 2) -> list[BenchmarkInstance]:
    return [
        make_settable_distractor(n, m),
        make_delayed_sensor(n),
        make_inspect_overwrite(n),
        make_quotient_transfer(n_c, n_f),
    ]


def run_table(n: int = 4, m: int = 8, n_c: int = 2, n_f: int = 2) -> list[BenchmarkResult]:
    return [run_instance(i) for i in make_instances(n, m, n_c, n_f)]


def format_table(results: list[BenchmarkResult]) -> str:
    head = ("Benchmark", "Failing objective", "Baseline success / H(Q|H_T)", "BGP success / H(Q|H_T)")
    body = [(LABELS[r.family][0], LABELS[r.family][1], r.baseline.cell(), r.bgp.cell()) for r in results]
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(4)]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    lines = [fmt(head), "  ".join("-" * w for w in widths)]
    lines += [fmt(row) for row in body]
    return "\n".join(lines)


def instance_planner_doc(inst: BenchmarkInstance) -> dict:
    doc = {"objective": inst.baseline, "q": "Q", "tie_break": "lowest"}
    if inst.c_star:
        doc["c_star"] = sorted(inst.c_star)
    if inst.factors:
        doc["factors"] = [f.name for f in inst.factors]
    for key in ("V_Q", "V_tilde"):
        if key in inst.quotients:
            doc[key.lower()] = key
    for key, q in inst.baseline_kw.items():
        doc[key] = q.name
    return doc


def emit_specs(instances: list[BenchmarkInstance], directory) -> list:
    """Write each instance as a model document that the CLI can diagnose."""
    from pathlib import Path

    from .specfile import dump_spec

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return [
        dump_spec(d / f"{i.name}.json", i.model, dict(i.quotients), planner=instance_planner_doc(i))
        for i in instances
    ]
