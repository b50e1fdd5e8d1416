"""Model documents in JSON syntax: parsing, validation and dumping.

Top-level keys: ``horizon``, ``latent`` (``size``, ``prior``, ``labels``),
``states``/``observations``/``actions`` (a count or per-time list),
``init_state``, ``init_obs``, ``step``, and optionally ``phi_x``,
``kappa_x``, ``channel_labels``, ``quotients``, ``planner``, ``policy``.

``step`` is dense (``step[t][z][x][a] = [x', o']``) or sparse
(``{"entries": [[t, z, x, a, x', o'], ...], "default": "stay" | [x', o']}``;
``"stay"`` keeps the state and emits observation 0). Priors are exact
rationals (``"1/3"``) or decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .core import PROB_ATOL, BridgePomdp, LatentSpace, ModelError, Policy, Quotient, enumerate_closed_loop


class SpecError(ModelError):
    """Invalid model document; the message names the offending location."""

    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


@dataclass
class Spec:
    model: BridgePomdp
    quotients: dict[str, Quotient] = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    policy: Policy | None = None
    extra: dict = field(default_factory=dict)


def _need(doc: dict, key: str, where: str = "$"):
    if key not in doc:
        raise SpecError(where, f"missing required key {key!r}")
    return doc[key]


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SpecError(where, f"expected an integer, got {v!r}")
    return v


def _counts(v, n: int, where: str) -> list[int]:
    if isinstance(v, list):
        if len(v) != n:
            raise SpecError(where, f"expected {n} per-time counts, got {len(v)}")
        return [_int(c, f"{where}[{i}]") for i, c in enumerate(v)]
    return [_int(v, where)] * n


def parse_prior(values: list, where: str = "$.latent.prior") -> np.ndarray:
    exact, out = True, []
    for i, v in enumerate(values):
        w = f"{where}[{i}]"
        if isinstance(v, str):
            try:
                out.append(Fraction(v))
            except (ValueError, ZeroDivisionError):
                raise SpecError(w, f"bad rational {v!r}") from None
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            exact = exact and isinstance(v, int)
            out.append(Fraction(str(v)))
        else:
            raise SpecError(w, f"expected a probability, got {v!r}")
        if out[-1] < 0:
            raise SpecError(w, "negative probability")
    total = sum(out, Fraction(0))
    if exact and all(isinstance(v, str) or isinstance(v, int) for v in values):
        if total != 1:
            raise SpecError(where, f"rational prior sums to {total}, not 1")
    elif abs(float(total) - 1.0) > PROB_ATOL:
        raise SpecError(where, f"prior sums to {float(total):.15g}")
    # decimals are kept bit-for-bit so dumped models reload identically
    return np.array([float(v) for v in out])


def _step_tables(doc, T, Z, nx, na, where="$.step") -> list[np.ndarray]:
    if isinstance(doc, list):
        if len(doc) != T:
            raise SpecError(where, f"expected {T} time slices, got {len(doc)}")
        tabs = []
        for t, sl in enumerate(doc):
            try:
                arr = np.asarray(sl, dtype=np.int64)
            except (ValueError, TypeError):
                raise SpecError(f"{where}[{t}]", "ragged or non-integer table") from None
            shape = (Z, nx[t], na[t], 2)
            if arr.shape != shape:
                raise SpecError(f"{where}[{t}]", f"shape {arr.shape}, expected {shape}")
            tabs.append(arr)
        return tabs
    if not isinstance(doc, dict):
        raise SpecError(where, "expected a dense array or an object with 'entries'")
    default = doc.get("default")
    tabs, filled = [], []
    for t in range(T):
        shape = (Z, nx[t], na[t])
        tab = np.zeros(shape + (2,), dtype=np.int64)
        if default == "stay":
            tab[..., 0] = np.arange(nx[t])[None, :, None]
        elif isinstance(default, list) and len(default) == 2:
            tab[..., 0], tab[..., 1] = _int(default[0], f"{where}.default[0]"), _int(default[1], f"{where}.default[1]")
        elif default is not None:
            raise SpecError(f"{where}.default", "expected 'stay' or [x', o']")
        tabs.append(tab)
        filled.append(np.zeros(shape, dtype=bool))
    for i, e in enumerate(_need(doc, "entries", where)):
        w = f"{where}.entries[{i}]"
        if not isinstance(e, list) or len(e) != 6:
            raise SpecError(w, "expected [t, z, x, a, x', o']")
        t, z, x, a, xn, on = (_int(v, w) for v in e)
        if not (0 <= t < T and 0 <= z < Z and 0 <= x < nx[t] and 0 <= a < na[t]):
            raise SpecError(w, "index out of range")
        tabs[t][z, x, a] = (xn, on)
        filled[t][z, x, a] = True
    if default is None:
        for t, f in enumerate(filled):
            if not f.all():
                z, x, a = map(int, np.argwhere(~f)[0])
                raise SpecError(where, f"entries miss (t={t}, z={z}, x={x}, a={a}) and no default is declared")
    return tabs


def _labels(doc, T, Z, nx, names, where) -> list[np.ndarray]:
    if not isinstance(doc, list) or len(doc) != T + 1:
        raise SpecError(where, f"expected {T + 1} time slices")
    out = []
    for t, sl in enumerate(doc):
        arr = np.asarray(sl, dtype=object)
        if arr.shape != (Z, nx[t]):
            raise SpecError(f"{where}[{t}]", f"shape {arr.shape}, expected {(Z, nx[t])}")
        conv = np.zeros(arr.shape, dtype=np.int64)
        for idx, v in np.ndenumerate(arr):
            if isinstance(v, str):
                if v not in names:
                    raise SpecError(f"{where}[{t}]", f"unknown channel label {v!r}")
                conv[idx] = names.index(v)
            else:
                conv[idx] = _int(v, f"{where}[{t}]")
        out.append(conv)
    return out


def _quotient(name: str, d: dict, where: str) -> Quotient:
    dom = _need(d, "domain", where)
    if dom == "transcript":
        table = {tuple(h): c for h, c in _need(d, "table", where)}
        return Quotient.transcript(lambda h, _t=table: _t.get(tuple(h), ("other", tuple(h))), name=name)
    try:
        return Quotient(dom, class_of=np.asarray(_need(d, "class_of", where)), time=d.get("time"), name=name)
    except ModelError as e:
        raise SpecError(where, str(e)) from None


def parse_policy(d, where: str = "$.policy") -> Policy:
    if "mixture" in d:
        comps = []
        for i, (w, sub) in enumerate(d["mixture"]):
            comps.append((float(Fraction(str(w))), parse_policy(sub, f"{where}.mixture[{i}]")))
        return Policy.mix(comps)
    if "open_loop" in d:
        return Policy.open_loop(d["open_loop"])
    if "table" in d:
        return Policy.from_table({tuple(h): _int(a, where) for h, a in d["table"]})
    raise SpecError(where, "expected 'table', 'open_loop' or 'mixture'")


def parse_spec(doc: dict | str) -> Spec:
    """Build a model from a parsed document or JSON text."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise SpecError(f"line {e.lineno} column {e.colno}", e.msg) from None
    if not isinstance(doc, dict):
        raise SpecError("$", "top level must be an object")
    T = _int(_need(doc, "horizon"), "$.horizon")
    if T < 1:
        raise SpecError("$.horizon", "must be positive")
    lat = _need(doc, "latent")
    Z = _int(_need(lat, "size", "$.latent"), "$.latent.size")
    prior = parse_prior(lat["prior"]) if "prior" in lat else np.full(Z, 1.0 / Z)
    if prior.size != Z:
        raise SpecError("$.latent.prior", f"length {prior.size} != size {Z}")
    labels = tuple(lat["labels"]) if "labels" in lat else None
    nx = _counts(_need(doc, "states"), T + 1, "$.states")
    no = _counts(_need(doc, "observations"), T + 1, "$.observations")
    na = _counts(_need(doc, "actions"), T, "$.actions")

    def per_latent(key):
        v = _need(doc, key)
        return [v] * Z if isinstance(v, int) else v

    names = tuple(doc.get("channel_labels", ["none"]))
    phi = _labels(doc["phi_x"], T, Z, nx, names, "$.phi_x") if "phi_x" in doc else None
    kappa = _labels(doc["kappa_x"], T, Z, nx, names, "$.kappa_x") if "kappa_x" in doc else None
    try:
        model = BridgePomdp(
            T,
            LatentSpace(prior, labels),
            nx,
            no,
            na,
            per_latent("init_state"),
            per_latent("init_obs"),
            _step_tables(_need(doc, "step"), T, Z, nx, na),
            phi_x=phi,
            kappa_x=kappa,
            channel_labels=names,
            name=doc.get("name", ""),
        )
    except SpecError:
        raise
    except ModelError as e:
        raise SpecError("$", str(e)) from None
    quotients = {}
    for name, d in doc.get("quotients", {}).items():
        q = _quotient(name, d, f"$.quotients.{name}")
        try:
            q.check_against(model)
        except ModelError as e:
            raise SpecError(f"$.quotients.{name}", str(e)) from None
        quotients[name] = q
    policy = parse_policy(doc["policy"], "$.policy") if "policy" in doc else None
    known = {"horizon", "latent", "states", "observations", "actions", "init_state", "init_obs", "step",
             "phi_x", "kappa_x", "channel_labels", "quotients", "planner", "policy", "name"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return Spec(model, quotients, doc.get("planner", {}), policy, extra)


def load_spec(path: str | Path) -> Spec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))


# -- dumping ------------------------------------------------------------------------


def _count_field(v: tuple[int, ...]):
    return v[0] if len(set(v)) == 1 else list(v)


def policy_table(model: BridgePomdp, policy: Policy) -> dict:
    """Serializable form of a policy restricted to its reachable histories."""
    comps = policy.components()

    def one(p):
        if p.kind == "open-loop-sequence":
            return {"open_loop": list(p.actions)}
        seen = {}
        for z in model.support:
            h = (int(model.init_obs[z]),)
            x = int(model.init_state[z])
            for t in range(model.horizon):
                a = p.act(h)
                seen[h] = a
                xn, on = model.step(t, int(z), x, a)
                x, h = int(xn), h + (a, int(on))
        return {"table": [[list(h), a] for h, a in sorted(seen.items())]}

    if policy.is_deterministic:
        return one(policy)
    return {"mixture": [[w, one(p)] for w, p in comps]}


def quotient_doc(q: Quotient, model: BridgePomdp | None = None, policy: Policy | None = None) -> dict:
    if q.domain == "transcript":
        if model is None or policy is None:
            raise ModelError("transcript quotients need a model and policy to tabulate")
        trs = sorted({r.trajectory.transcript for r in enumerate_closed_loop(model, policy)})
        labels = {}
        table = []
        for tr in trs:
            k = q.key(tr)
            table.append([list(tr), labels.setdefault(k, len(labels))])
        return {"domain": "transcript", "table": table}
    d = {"domain": q.domain, "class_of": q.class_of.tolist()}
    if q.time is not None:
        d["time"] = q.time
    return d


def spec_dict(
    model: BridgePomdp,
    quotients: dict[str, Quotient] | None = None,
    policy: Policy | None = None,
    planner: dict | None = None,
    extra: dict | None = None,
) -> dict:
    """JSON-ready document that :func:`parse_spec` reloads to the same model."""
    doc: dict[str, Any] = {
        "name": model.name,
        "horizon": model.horizon,
        "latent": {"size": model.n_latent, "prior": [float(p) for p in model.prior]},
        "states": _count_field(model.n_states),
        "observations": _count_field(model.n_obs),
        "actions": _count_field(model.n_actions),
        "init_state": model.init_state.tolist(),
        "init_obs": model.init_obs.tolist(),
        "step": [t.tolist() for t in model.step_tables()],
    }
    if model.latent.labels is not None:
        doc["latent"]["labels"] = list(model.latent.labels)
    if model.channel_labels != ("none",):
        doc["channel_labels"] = list(model.channel_labels)
    for which in ("phi", "kappa"):
        tab = model.label_tables(which)
        if tab is not None:
            doc[f"{which}_x"] = tab
    if quotients:
        doc["quotients"] = {k: quotient_doc(q, model, policy) for k, q in quotients.items()}
    if policy is not None:
        doc["policy"] = policy_table(model, policy)
    if planner:
        doc["planner"] = planner
    if extra:
        doc.update(extra)
    return doc


def dump_spec(path: str | Path, *args, **kw) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec_dict(*args, **kw), separators=(",", ":")) + "\n", encoding="utf-8")
    return path


# -- planner configuration ----------------------------------------------------------


def _reward_table(doc, model: BridgePomdp, where: str) -> list[np.ndarray]:
    T, Z = model.horizon, model.n_latent
    if isinstance(doc, list):
        out = []
        for t in range(T):
            arr = np.asarray(doc[t], dtype=float)
            if arr.shape != (Z, model.n_states[t], model.n_actions[t]):
                raise SpecError(f"{where}[{t}]", "reward table has the wrong shape")
            out.append(arr)
        return out
    default = float(doc.get("default", 0.0))
    out = [np.full((Z, model.n_states[t], model.n_actions[t]), default) for t in range(T)]
    for i, e in enumerate(_need(doc, "entries", where)):
        if not isinstance(e, list) or len(e) != 5:
            raise SpecError(f"{where}.entries[{i}]", "expected [t, z, x, a, r]")
        t, z, x, a = (_int(v, f"{where}.entries[{i}]") for v in e[:4])
        out[t][z, x, a] = float(e[4])
    return out


def planner_config(spec: Spec) -> dict:
    """Keyword arguments for ``plan_exact`` from the document's ``planner`` key.

    Quotients are referenced by name; ``factors`` lists state quotients used
    as controllable factors; ``weights`` holds lambda_c, lambda_v, lambda_o,
    lambda_d, beta and tau.
    """
    from .planner import BgpWeights, Factor

    cfg, qs = spec.planner, spec.quotients

    def ref(key, default=None):
        name = cfg.get(key, default)
        if name is None:
            return None
        if name not in qs:
            raise SpecError(f"$.planner.{key}", f"unknown quotient {name!r}")
        return qs[name]

    if cfg.get("tie_break", "lowest") != "lowest":
        raise SpecError("$.planner.tie_break", "only 'lowest' is supported")
    m = spec.model
    q = ref("q", "Q" if "Q" in qs else None) or Quotient.identity(m.n_latent, name="Z")
    try:
        w = BgpWeights(
            q=q,
            c_star=frozenset(cfg.get("c_star", [])),
            v_q=ref("v_q"),
            v_tilde=ref("v_tilde"),
            factors=tuple(Factor(n, qs[n]) for n in cfg.get("factors", [])),
            channel_term=cfg.get("channel_term", "any"),
            eval_policy=cfg.get("eval_policy", "greedy_ig"),
            **{k: float(v) for k, v in cfg.get("weights", {}).items()},
        )
    except (KeyError, TypeError, ModelError) as e:
        raise SpecError("$.planner", str(e)) from None
    reward = _reward_table(cfg["task_reward"], m, "$.planner.task_reward") if "task_reward" in cfg else None
    return {
        "objective": cfg.get("objective", "bgp"),
        "w": w,
        "task_reward": reward,
        "prediction_target": ref("prediction_target"),
        "coarse_target": ref("coarse_target"),
        "lookahead": cfg.get("lookahead"),
        "emp_horizon": int(cfg.get("emp_horizon", 1)),
    }
