import json

import numpy as np
import pytest

from bridgegap.verify import CHECKS, VerifyConfig, evaluate_case, random_model, random_partition, replay, run_verify


def quick(**kw):
    kw.setdefault("trials", 3)
    kw.setdefault("caps", (6, 4, 3, 2))
    return run_verify(VerifyConfig(**kw))


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            VerifyConfig(trials=0)
        with pytest.raises(ValueError):
            VerifyConfig(caps=(4, 4, 0, 2))
        with pytest.raises(ValueError):
            VerifyConfig(checks=("nope",))


class TestRun:
    def test_same_seed_same_summary(self):
        a, b = quick(seed=7).to_json(), quick(seed=7).to_json()
        assert a == b

    def test_every_check_passes_at_small_caps(self):
        s = quick(trials=10)
        assert s.passed
        assert [c.name for c in s.checks] == list(CHECKS)
        assert all(c.passed + c.vacuous == 10 for c in s.checks)

    def test_degenerate_caps(self):
        assert quick(caps=(1, 1, 1, 1)).passed

    def test_subset_keeps_registry_order(self):
        s = quick(checks=("regret", "sandwich"))
        assert [c.name for c in s.checks] == ["sandwich", "regret"]

    def test_text_report(self):
        text = quick(checks=("fibers",)).to_text()
        assert "PASS fibers" in text and text.endswith("ALL PASS")


class TestCounterexamples:
    def test_dump_round_trips(self, tmp_path):
        s = quick(checks=("telescoping",), corrupt={"telescoping"}, dump_dir=tmp_path)
        c = s.checks[0]
        assert not s.passed and c.failed == len(c.counterexamples) > 0
        doc = json.loads(open(c.counterexamples[0]).read())
        assert doc["verify"]["check"] == "telescoping"
        name, recorded, recomputed = replay(c.counterexamples[0])
        assert recomputed == pytest.approx(recorded)

    def test_uncorrupted_replay_is_nonnegative(self, tmp_path):
        s = quick(checks=("sandwich",), corrupt={"sandwich"}, dump_dir=tmp_path)
        path = s.checks[0].counterexamples[0]
        doc = json.loads(open(path).read())
        doc["verify"]["corrupt"] = False
        clean = tmp_path / "clean.json"
        clean.write_text(json.dumps(doc))
        assert replay(clean)[2] >= -1e-9


class TestGenerators:
    @pytest.mark.parametrize("name", list(CHECKS))
    def test_generated_cases_evaluate(self, name):
        gen, _ = CHECKS[name]
        rng = np.random.default_rng([3, 1])
        model, params = gen(rng, (6, 4, 3, 2))
        slack = evaluate_case(name, model, params)
        assert slack is None or slack >= -1e-9

    def test_random_model_respects_caps(self):
        m = random_model(np.random.default_rng(0), (5, 3, 2, 2))
        assert m.n_latent <= 5 and m.horizon <= 2
        assert max(m.n_actions) <= 2

    def test_random_partition_is_compact(self):
        labels = random_partition(np.random.default_rng(0), 10)
        assert sorted(set(labels)) == list(range(len(set(labels))))
