from fractions import Fraction

import numpy as np
import pytest

from bridgegap.bench import (
    FAMILIES,
    check_family,
    distractor_empowerment,
    format_table,
    make_delayed_sensor,
    make_inspect_overwrite,
    make_instances,
    make_lossy_display,
    make_quotient_transfer,
    make_settable_distractor,
    policy_digest,
    run_instance,
)
from bridgegap.core import ModelError, Policy, enumerate_closed_loop
from bridgegap.info import information_gain
from bridgegap.planner import Planner


class TestConstructions:
    def test_instances_cover_all_families(self):
        assert [i.name for i in make_instances()] == list(FAMILIES)

    @pytest.mark.parametrize("inst", make_instances(3, 3, 1, 2), ids=lambda i: i.name)
    def test_family_properties_hold(self, inst):
        check_family(inst)
        for q in inst.quotients.values():
            q.check_against(inst.model)

    def test_distractor_sizes(self):
        inst = make_settable_distractor(4, 8)
        assert inst.model.n_latent == 16
        assert inst.model.n_actions[0] == 2**8 + 1

    def test_register_is_written_by_action_alone(self):
        inst = make_settable_distractor(3, 4)
        d = inst.quotients["D"]
        for a in (0, 5, 15):
            rows = enumerate_closed_loop(inst.model, Policy.open_loop([a, a]))
            assert {int(d.class_of[r.trajectory.states[-1]]) for r in rows} == {a}

    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_delayed_sensor_first_step_is_uninformative(self, n):
        m = make_delayed_sensor(n).model
        assert information_gain(m, (0,), 0) == 0.0
        assert information_gain(m, (0,), 1) == 0.0

    def test_delayed_sensor_second_step_inside_channel(self):
        m = make_delayed_sensor(4).model
        assert information_gain(m, (0, 1, 0), 1) == pytest.approx(4.0)

    def test_quotient_transfer_parts(self):
        inst = make_quotient_transfer(2, 3)
        assert inst.model.n_latent == 32
        assert inst.q.class_count == 32

    def test_lossy_display_hidden_and_observed_writes(self):
        inst = make_lossy_display(2)
        m = inst.model
        hidden = enumerate_closed_loop(m, Policy.open_loop([0]))
        shown = enumerate_closed_loop(m, Policy.open_loop([4]))
        assert len({r.trajectory.transcript for r in hidden}) == 1
        assert len({r.trajectory.transcript for r in shown}) == 4

    @pytest.mark.parametrize(
        "maker, bad",
        [(make_delayed_sensor, (0,)), (make_inspect_overwrite, (0,)), (make_settable_distractor, (0, 1))],
    )
    def test_rejects_nonpositive_sizes(self, maker, bad):
        with pytest.raises(ModelError):
            maker(*bad)


class TestRows:
    def test_distractor_row(self):
        res = run_instance(make_settable_distractor(4, 8))
        assert res.baseline.success == Fraction(1, 16)
        assert res.baseline.residual == pytest.approx(4.0)
        assert res.bgp.success == 1 and res.bgp.residual == 0.0
        assert res.extras["distractor_empowerment_bits"] == pytest.approx(8.0)

    def test_wider_register_keeps_residual(self):
        inst = make_settable_distractor(4, 12)
        assert distractor_empowerment(inst) == pytest.approx(12.0)
        assert inst.evaluate(inst.plan("empowerment_ungated")) == (Fraction(1, 16), 4.0)

    def test_six_bits(self):
        inst = make_delayed_sensor(6)
        success, _ = inst.evaluate(inst.plan("ig_one_step"))
        assert success == Fraction(1, 64)
        assert float(success) * 100 == pytest.approx(1.5625)

    def test_minimal_distractor_bgp_inspects(self):
        inst = make_settable_distractor(1, 1)
        res = inst.plan("bgp")
        assert inst.evaluate(res) == (Fraction(1), 0.0)

    def test_gate_closed_for_register(self):
        inst = make_settable_distractor(4, 8)
        p = Planner(inst.model, inst.weights())
        assert not p.potential(p.root()).gates["D"].open

    def test_cells_and_table_text(self):
        res = run_instance(make_quotient_transfer(2, 2))
        assert res.baseline.cell() == "25.0% / 2"
        assert res.bgp.cell() == "100% / 0"
        text = format_table([res])
        assert "Quotient transfer" in text and "25.0% / 2" in text

    def test_json_has_exact_success(self):
        d = run_instance(make_inspect_overwrite(4)).to_json()
        assert d["baseline"]["success"] == "1/16"
        assert d["baseline"]["success_display"] == "6.2"
        assert d["bgp"]["success"] == "1/1"

    def test_digest_is_stable(self):
        inst = make_delayed_sensor(3)
        assert policy_digest(inst.plan("bgp")) == policy_digest(inst.plan("bgp"))
        assert policy_digest(inst.plan("bgp")) != policy_digest(inst.plan("ig_one_step"))

    def test_rows_are_deterministic(self):
        a = [r.to_json() for r in map(run_instance, make_instances(2, 2, 1, 1))]
        b = [r.to_json() for r in map(run_instance, make_instances(2, 2, 1, 1))]
        for x, y in zip(a, b):
            x.pop("runtime_s"), y.pop("runtime_s")
            assert x == y

    def test_success_is_exact_rational(self):
        inst = make_inspect_overwrite(5)
        success, residual = inst.evaluate(inst.plan("prediction_loss"))
        assert success == Fraction(1, 32) and np.isclose(residual, 5.0)
