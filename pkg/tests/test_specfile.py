import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgegap.bench import emit_specs, make_instances, make_settable_distractor
from bridgegap.core import Policy, Quotient, enumerate_closed_loop
from bridgegap.specfile import (
    SpecError,
    dump_spec,
    load_spec,
    parse_policy,
    parse_prior,
    parse_spec,
    planner_config,
    policy_table,
    spec_dict,
)

from conftest import look_or_skip, models


def minimal_doc(**over):
    doc = {
        "horizon": 1,
        "latent": {"size": 1},
        "states": 1,
        "observations": 1,
        "actions": 1,
        "init_state": 0,
        "init_obs": 0,
        "step": [[[[[0, 0]]]]],
    }
    doc.update(over)
    return doc


class TestParse:
    def test_minimal_document(self):
        spec = parse_spec(minimal_doc())
        assert spec.model.n_latent == 1
        assert spec.policy is None and spec.quotients == {}

    def test_json_text_and_syntax_error_location(self):
        assert parse_spec(json.dumps(minimal_doc())).model.horizon == 1
        with pytest.raises(SpecError) as e:
            parse_spec('{"horizon": 1,\n  "latent": }')
        assert e.value.where.startswith("line 2")

    def test_missing_key_names_path(self):
        doc = minimal_doc()
        del doc["step"]
        with pytest.raises(SpecError) as e:
            parse_spec(doc)
        assert e.value.where == "$" and "step" in str(e.value)

    def test_wrong_type(self):
        with pytest.raises(SpecError, match=r"\$\.horizon"):
            parse_spec(minimal_doc(horizon="one"))

    def test_out_of_range_entry(self):
        with pytest.raises(SpecError, match="next state"):
            parse_spec(minimal_doc(step=[[[[[3, 0]]]]]))

    def test_prior_not_normalized(self):
        with pytest.raises(SpecError, match="prior"):
            parse_spec(minimal_doc(latent={"size": 2, "prior": [0.5, 0.4]}, init_state=0, init_obs=0,
                                   step=[[[[[0, 0]]], [[[0, 0]]]]]))

    def test_sparse_step_with_default(self):
        doc = minimal_doc(
            latent={"size": 2},
            states=2,
            observations=3,
            actions=2,
            step={"default": "stay", "entries": [[0, 1, 0, 1, 1, 2]]},
        )
        tabs = parse_spec(doc).model.step_tables()
        assert tabs[0][1, 0, 1].tolist() == [1, 2]
        assert tabs[0][0, 1, 0].tolist() == [1, 0]

    def test_partial_sparse_table(self):
        doc = minimal_doc(latent={"size": 2}, step={"entries": [[0, 0, 0, 0, 0, 0]]})
        with pytest.raises(SpecError, match="z=1"):
            parse_spec(doc)

    def test_unknown_channel_label(self):
        with pytest.raises(SpecError, match="unknown channel label"):
            parse_spec(minimal_doc(channel_labels=["a"], phi_x=[[["b"]], [["a"]]]))

    def test_quotient_with_empty_class(self):
        doc = minimal_doc(quotients={"Q": {"domain": "latent", "class_of": [1]}})
        with pytest.raises(SpecError, match=r"quotients\.Q"):
            parse_spec(doc)

    def test_extra_keys_are_kept(self):
        assert parse_spec(minimal_doc(notes="x")).extra == {"notes": "x"}


class TestPrior:
    def test_exact_rationals(self):
        np.testing.assert_allclose(parse_prior(["1/3", "2/3"]), [1 / 3, 2 / 3])

    def test_exact_rationals_must_sum_exactly(self):
        with pytest.raises(SpecError, match="rational"):
            parse_prior(["1/3", "1/3"])

    def test_decimals_are_kept_bit_for_bit(self):
        vals = [0.1, 0.2, 0.7000000000000001]
        assert parse_prior(vals).tolist() == vals

    def test_negative(self):
        with pytest.raises(SpecError, match="negative"):
            parse_prior([1.5, -0.5])


class TestPolicyDocs:
    def test_forms(self):
        assert parse_policy({"open_loop": [1, 0]}).actions == (1, 0)
        assert parse_policy({"table": [[[0], 1]]}).act((0,)) == 1
        mix = parse_policy({"mixture": [["1/4", {"open_loop": [0]}], [0.75, {"open_loop": [1]}]]})
        assert [w for w, _ in mix.components()] == [0.25, 0.75]

    def test_unknown_form(self):
        with pytest.raises(SpecError):
            parse_policy({"nope": 1})

    def test_table_covers_reachable_histories(self, nibble):
        pol = Policy.from_function(lambda h: 0)
        table = dict((tuple(h), a) for h, a in policy_table(nibble, pol)["table"])
        assert table == {(0,): 0}


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(models(), st.integers(0, 10**6))
    def test_random_models_reload_identically(self, m, salt):
        pol = Policy.from_function(lambda h: hash((salt, h)) % m.n_actions[len(h) // 2])
        spec = parse_spec(json.loads(json.dumps(spec_dict(m, policy=pol))))
        m2 = spec.model
        assert m2.prior.tolist() == m.prior.tolist()
        for a, b in zip(m.step_tables(), m2.step_tables()):
            np.testing.assert_array_equal(a, b)
        rows1 = [r.trajectory for r in enumerate_closed_loop(m, pol)]
        rows2 = [r.trajectory for r in enumerate_closed_loop(m2, spec.policy)]
        assert rows1 == rows2

    def test_transcript_quotient_round_trip(self, coin):
        pol = Policy.open_loop([0])
        q = Quotient.transcript(lambda h: h[-1] % 2, name="W")
        spec = parse_spec(spec_dict(coin, {"W": q}, pol))
        trs = [r.trajectory.transcript for r in enumerate_closed_loop(coin, pol)]
        # labels are renumbered, so compare the induced partitions
        pairs = {(q(tr), spec.quotients["W"](tr)) for tr in trs}
        assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})

    def test_emitted_distractor_document(self, tmp_path):
        paths = emit_specs([make_settable_distractor(4, 8)], tmp_path)
        spec = load_spec(paths[0])
        assert spec.model.n_latent == 16
        assert spec.model.n_actions[0] >= 2**8 + 1
        assert set(spec.quotients) >= {"Q", "D"}

    def test_every_benchmark_document_plans_the_same(self, tmp_path):
        insts = make_instances(2, 2, 1, 1)
        for inst, path in zip(insts, emit_specs(insts, tmp_path)):
            spec = load_spec(path)
            kw = planner_config(spec)
            assert kw["objective"] == inst.baseline
            assert kw["w"].q.class_of.tolist() == inst.q.class_of.tolist()

    def test_dump_writes_file(self, tmp_path, coin):
        path = dump_spec(tmp_path / "m.json", coin)
        assert load_spec(path).model.n_latent == 2


class TestPlannerConfig:
    def test_defaults(self, coin):
        spec = parse_spec(spec_dict(coin))
        kw = planner_config(spec)
        assert kw["objective"] == "bgp"
        assert kw["w"].q.class_count == 2
        assert kw["task_reward"] is None

    def test_unknown_quotient_reference(self, coin):
        spec = parse_spec(spec_dict(coin, planner={"q": "missing"}))
        with pytest.raises(SpecError, match="missing"):
            planner_config(spec)

    def test_only_lowest_tie_break(self, coin):
        spec = parse_spec(spec_dict(coin, planner={"tie_break": "random"}))
        with pytest.raises(SpecError, match="tie_break"):
            planner_config(spec)

    def test_sparse_reward_and_weights(self, coin):
        planner = {"task_reward": {"default": 0.0, "entries": [[0, 1, 0, 1, 2.5]]}, "weights": {"beta": 0.5}}
        kw = planner_config(parse_spec(spec_dict(coin, planner=planner)))
        assert kw["task_reward"][0][1, 0, 1] == 2.5
        assert kw["w"].beta == 0.5

    def test_bad_weight_name(self, coin):
        spec = parse_spec(spec_dict(coin, planner={"weights": {"gamma": 1}}))
        with pytest.raises(SpecError):
            planner_config(spec)
