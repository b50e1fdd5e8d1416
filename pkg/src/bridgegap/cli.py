"""Command-line entry point: ``diagnose``, ``plan``, ``bench`` and ``verify``.

Exit status is 0 on success, 1 when a check or diagnostic fails and 2 for
usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from .bench import emit_specs, format_table, make_instances, run_instance
from .core import BudgetExceeded, ModelError, Policy, Quotient, enumerate_closed_loop
from .gap import _jsonable, absorption_report, bridge_gap_report, missing_sensing_bits
from .info import closed_loop_joint, directed_information, empowerment_det
from .planner import Planner, evaluate_policy
from .specfile import SpecError, load_spec, parse_policy, planner_config
from .verify import CHECKS, DEFAULT_CAPS, VerifyConfig, run_verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, default=_jsonable))
    else:
        print(text)


def _csv_ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _pick(spec, name: str | None, fallback: Quotient, what: str) -> Quotient:
    if name is None:
        return fallback
    if name not in spec.quotients:
        raise UsageError(f"unknown {what} quotient {name!r}; known: {sorted(spec.quotients)}")
    return spec.quotients[name]


def _weights(s: str) -> dict[str, float]:
    out = {}
    for item in s.split(","):
        k, sep, v = item.partition("=")
        try:
            if not sep:
                raise ValueError
            out[k.strip()] = float(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected name=value pairs, got {item!r}") from None
    return out


def _plan(spec, objective: str | None = None, lookahead=None, weights=None):
    if weights:
        # flags win over the document's planner block
        block = dict(spec.planner or {})
        block["weights"] = {**block.get("weights", {}), **weights}
        spec.planner = block
    kw = planner_config(spec)
    obj = objective or kw.pop("objective")
    kw.pop("objective", None)
    if lookahead is not None:
        kw["lookahead"] = lookahead
    la = kw.pop("lookahead")
    planner = Planner(
        spec.model,
        kw["w"],
        kw["task_reward"],
        prediction_target=kw["prediction_target"],
        coarse_target=kw["coarse_target"],
        emp_horizon=kw["emp_horizon"],
    )
    return planner, planner.plan(obj, lookahead=la)


def _phi_dump(planner: Planner, limit: int = 2000) -> list[dict]:
    """Potential terms at every reachable node, breadth first."""
    out, frontier = [], planner.roots()
    while frontier and len(out) < limit:
        nxt = []
        for node in frontier:
            terms = planner.potential(node)
            out.append(
                {
                    "history": list(node.history),
                    "probability": node.prob,
                    "phi": terms.total,
                    "ambiguity": terms.ambiguity,
                    "channel": terms.channel,
                    "control": terms.control,
                    "observation": terms.observation,
                    "distractor": terms.distractor,
                }
            )
            if node.t < planner.model.horizon:
                nxt.extend(k for group in planner.expand(node) for k in group)
        frontier = nxt
    return out


def cmd_diagnose(args) -> int:
    spec = load_spec(args.spec)
    m = spec.model
    q = _pick(spec, args.q, spec.quotients.get("Q", Quotient.identity(m.n_latent, name="Z")), "Q")
    w = _pick(spec, args.w, q, "W")
    v = _pick(spec, args.v, spec.quotients.get("V", Quotient.identity(m.n_states[-1], "state", "X_T")), "V")
    vt = _pick(
        spec, args.vt, spec.quotients.get("V_tilde", Quotient.identity(m.n_obs[-1], "observation", "O_T")), "V~"
    )
    planner = None
    if args.policy:
        try:
            doc = json.loads(Path(args.policy).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SpecError(f"line {e.lineno} column {e.colno}", f"policy file is not JSON: {e.msg}") from None
        policy, source = parse_policy(doc.get("policy", doc)), f"file {args.policy}"
    elif spec.policy is not None:
        policy, source = spec.policy, "declared"
    else:
        planner, res = _plan(spec)
        policy, source = res.policy, f"planned ({res.objective})"
    if args.context:
        if len(args.context) != 3:
            raise UsageError("--context takes z,x,t")
        ctx = args.context
    else:
        z0 = int(m.support[0])
        ctx = (z0, int(m.init_state[z0]), 0)
    gap = bridge_gap_report(m, policy, q, w, v, vt, ctx)
    absorb = absorption_report(m, policy, q, v)
    first_obs = sorted({int(m.init_obs[z]) for z in m.support})
    missing = {str(o): missing_sensing_bits(m, q, (o,)).bits for o in first_obs}
    emp = empowerment_det(m, ctx, m.horizon - ctx[2], v)
    rows = enumerate_closed_loop(m, policy)
    T = m.horizon
    axes = {f"A{t}": (lambda tr, t=t: tr.actions[t]) for t in range(T)}
    axes.update({f"O{t + 1}": (lambda tr, t=t: tr.observations[t + 1]) for t in range(T)})
    di = directed_information(closed_loop_joint(rows, axes), [f"A{t}" for t in range(T)], [f"O{t + 1}" for t in range(T)])
    payload = {
        "policy": source,
        "bridge_gap": gap.to_json(),
        "absorption": absorb.to_json(),
        "missing_sensing_bits": missing,
        "empowerment_v": emp,
        "directed_information": {"outward": di[0], "inward": di[1], "total": di[2]},
    }
    if spec.planner or planner is not None:
        if planner is None:
            planner, _ = _plan(spec)
        payload["phi_nodes"] = _phi_dump(planner)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnose.json").write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n", encoding="utf-8")
    lines = [f"policy: {source}", "bridge gap (bits):"]
    lines += [f"  {k:<16} {val:.6f}" for k, val in gap.components().items()]
    lines += [
        "absorption:",
        f"  I(Q;V)={absorb.i_q_v:.6f}  I(Q;M_T)={absorb.i_q_m:.6f}  H(Q|M_T)={absorb.h_q_given_m:.6f}",
        f"  identification={absorb.identification} overwrite_collapse={absorb.overwrite_collapse}",
        f"missing sensing bits at O_0: {', '.join(f'{o}: {b:.6f}' for o, b in missing.items())}",
        f"empowerment over V from context {tuple(ctx)}: {emp:.6f}",
        f"directed information: outward={di[0]:.6f} inward={di[1]:.6f} total={di[2]:.6f}",
    ]
    if "phi_nodes" in payload:
        lines.append("potential by node:")
        for n in payload["phi_nodes"][:50]:
            lines.append(f"  {tuple(n['history'])}: phi={n['phi']:.6f} channel={n['channel']:.6f}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_plan(args) -> int:
    spec = load_spec(args.spec)
    planner, res = _plan(spec, args.objective, args.lookahead, args.weights)
    ev = evaluate_policy(spec.model, res.policy, planner.w.q, planner=planner)
    payload = {
        "objective": res.objective,
        "value": res.value,
        "success": ev.success,
        "residual_bits": ev.residual,
        "phi_trajectory": ev.phi_trajectory,
        "policy": [[list(h), a] for h, a in sorted(res.node_actions.items())],
        "nodes_expanded": res.nodes_expanded,
    }
    lines = [
        f"objective: {res.objective}",
        f"value: {res.value:.9f}",
        f"success: {100 * ev.success:.4f}%  residual H(Q|H_T): {ev.residual:.9f}",
        "policy:",
    ]
    lines += [f"  {tuple(h)} -> {a}" for h, a in sorted(res.node_actions.items())[:100]]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    instances = make_instances(args.n, args.m, args.ncoarse, args.nfine)
    results = [run_instance(i) for i in instances]
    total = time.perf_counter() - t0
    if args.emit_spec:
        emit_specs(instances, args.emit_spec)
    payload = {"rows": [r.to_json() for r in results], "runtime_s": total}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    text = format_table(results) + f"\n\nn={args.n} m={args.m} n_c={args.ncoarse} n_f={args.nfine}  runtime {total:.2f}s"
    _emit(args, payload, text)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = VerifyConfig(
        seed=args.seed,
        trials=args.trials,
        caps=args.caps,
        checks=tuple(args.checks.split(",")) if args.checks else None,
        dump_dir=Path(args.dump_dir) if args.dump_dir else None,
        corrupt=frozenset(args.corrupt.split(",")) if args.corrupt else frozenset(),
    )
    summary = run_verify(cfg)
    _emit(args, summary.to_json(), summary.to_text())
    return EXIT_OK if summary.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bridgegap", description="Exact bridge-gap diagnostics and planning.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("text", "json"), default="text")

    d = sub.add_parser("diagnose", help="gap, absorption, empowerment and budget reports for a model document")
    d.add_argument("spec")
    d.add_argument("--q", help="name of the target quotient (default: Q or the identity)")
    d.add_argument("--w", help="name of the comparison quotient (default: Q)")
    d.add_argument("--v", help="terminal state quotient (default: V or X_T)")
    d.add_argument("--vt", help="terminal observation quotient (default: V_tilde or O_T)")
    d.add_argument("--policy", help="policy document (JSON) overriding the model's declared policy")
    d.add_argument("--context", type=_csv_ints, help="rollout context z,x,t")
    d.add_argument("--out", help="directory for diagnose.json")
    common(d)
    d.set_defaults(func=cmd_diagnose)

    pl = sub.add_parser("plan", help="plan with the document's planner settings and evaluate")
    pl.add_argument("spec")
    pl.add_argument("--objective", choices=("bgp", "empowerment_ungated", "ig_one_step", "efe_one_step",
                                            "prediction_loss", "coarse_return"))
    pl.add_argument("--weights", type=_weights, help="overrides such as lambda_d=0,beta=2")
    pl.add_argument("--lookahead", type=int, choices=(1,), help="one-step lookahead instead of exact DP")
    common(pl)
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="benchmark comparison table")
    b.add_argument("--n", type=int, default=4)
    b.add_argument("--m", type=int, default=8)
    b.add_argument("--ncoarse", type=int, default=2)
    b.add_argument("--nfine", type=int, default=2)
    b.add_argument("--emit-spec", metavar="DIR", help="write each instance as a model document")
    b.add_argument("--out", help="write the JSON rows to this file")
    common(b)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="randomized checks of the structural guarantees")
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--caps", type=_csv_ints, default=DEFAULT_CAPS, help="|Z|,|X|,|A|,T")
    v.add_argument("--checks", "--theorems", dest="checks", help=f"comma-separated subset of {','.join(CHECKS)}")
    v.add_argument("--dump-dir", help="directory for counterexample documents")
    v.add_argument("--corrupt", help=argparse.SUPPRESS)
    common(v)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except (SpecError, UsageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
