import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgegap.bench import make_inspect_overwrite, make_quotient_transfer, make_settable_distractor
from bridgegap.core import ModelError, Policy, Quotient, enumerate_closed_loop
from bridgegap.gap import (
    MediationViolated,
    ObjectiveTable,
    absorption_report,
    authority_report,
    blackwell_refines,
    bridge_gap_report,
    di_budget_check,
    experiment_information,
    missing_sensing_bits,
    oscillation,
    quotient_from_targets,
    regret_transfer_check,
    sup_conditional_entropy,
    terminal_pairs,
    sandwich_check,
    tightness_table,
)
from bridgegap.info import JointTable, closed_loop_joint
from bridgegap.verify import random_partition

from conftest import models

BITS = 1e-9


def identity_state(m, t=None):
    t = m.horizon if t is None else t
    return Quotient.state(np.arange(m.n_states[t]), time=t)


def identity_obs(m, t=None):
    t = m.horizon if t is None else t
    return Quotient.observation(np.arange(m.n_obs[t]), time=t)


class TestQuotientFromTargets:
    def test_all_coordinate_bits_give_singletons(self, nibble):
        q = quotient_from_targets(nibble, [lambda z, k=k: (z >> k) & 1 for k in range(4)])
        assert q.class_count == 16

    def test_single_bit_target(self, nibble):
        q = quotient_from_targets(nibble, [lambda z: z & 1])
        assert q.class_count == 2
        assert q.class_of.tolist() == [0, 1] * 8

    def test_undefined_target(self, nibble):
        with pytest.raises(ModelError):
            quotient_from_targets(nibble, [[0, 1]])


class TestBridgeGapReport:
    def test_set_register_leaves_full_ambiguity(self):
        inst = make_settable_distractor(4, 2)
        m = inst.model
        pol = Policy.open_loop([0, 0])
        r = bridge_gap_report(m, pol, inst.q, inst.q, identity_state(m), identity_obs(m))
        assert r.delta_sense == pytest.approx(4.0, abs=BITS)
        assert r.normalized_sense_deficit == pytest.approx(1.0)
        assert r.delta_qw == 0.0

    def test_inspect_overwrite_with_constant_display(self):
        inst = make_inspect_overwrite(2)
        m = inst.model
        v = inst.quotients["V"]
        blind = Quotient.constant(m.n_obs[m.horizon], "observation")
        z = 3
        r = bridge_gap_report(m, Policy.open_loop([1]), inst.q, inst.q, v, blind, (z, int(m.init_state[z]), 0))
        # reachable V values are {q, 0}; a constant display hides which one
        assert r.delta_v_vtilde == pytest.approx(1.0)
        assert r.capacity_v == pytest.approx(1.0)
        assert r.delta_act == pytest.approx(math.log2(v.class_count) - 1.0)

    def test_quotient_mismatch(self, nibble):
        q = Quotient.identity(16)
        w = Quotient.latent(np.arange(16) >> 2)
        r = bridge_gap_report(nibble, Policy.open_loop([0]), q, w, identity_state(nibble), identity_obs(nibble))
        assert r.delta_qw == pytest.approx(2.0)

    def test_domain_errors(self, coin):
        with pytest.raises(ModelError):
            bridge_gap_report(coin, Policy.open_loop([0]), Quotient.identity(2), Quotient.identity(2),
                              identity_obs(coin), identity_state(coin))

    def test_weighted_total_needs_explicit_weights(self, nibble):
        r = bridge_gap_report(nibble, Policy.open_loop([1]), Quotient.identity(16), Quotient.identity(16),
                              identity_state(nibble), identity_obs(nibble))
        assert r.total({"delta_qw": 1, "delta_sense": 1, "delta_v_vtilde": 0, "delta_act": 0}) == pytest.approx(4.0)
        with pytest.raises(KeyError):
            r.total({})

    def test_json_keeps_full_precision(self, nibble):
        r = bridge_gap_report(nibble, Policy.open_loop([1]), Quotient.identity(16), Quotient.identity(16),
                              identity_state(nibble), identity_obs(nibble))
        d = r.to_json()
        assert d["delta_sense"] == 4.0
        assert d["display"]["delta_sense"] == 4.0


class TestSandwich:
    def test_strict_refinement_upper_slack(self, nibble):
        q = Quotient.identity(16)
        w = Quotient.latent(np.arange(16) >> 1)
        res = sandwich_check(nibble, Policy.open_loop([0]), q, w, identity_state(nibble), identity_obs(nibble))
        assert res.passed
        assert res.compression_upper_slack == pytest.approx(0.0, abs=BITS)

    @settings(max_examples=50, deadline=None)
    @given(models(), st.integers(0, 2**32 - 1))
    def test_random_instances_pass(self, m, seed):
        rng = np.random.default_rng(seed)
        pol = Policy.from_function(lambda h: hash((seed, h)) % m.n_actions[len(h) // 2])
        q = Quotient.latent(random_partition(rng, m.n_latent, m.support))
        w = Quotient.latent(random_partition(rng, m.n_latent, m.support))
        v = Quotient.state(random_partition(rng, m.n_states[m.horizon]))
        vt = Quotient.observation(random_partition(rng, m.n_obs[m.horizon]))
        assert sandwich_check(m, pol, q, w, v, vt).worst_slack >= -BITS

    def test_sup_entropy_on_largest_fiber(self):
        pairs = {(0, 0), (1, 0), (2, 0), (3, 1)}
        assert sup_conditional_entropy(pairs) == (pytest.approx(math.log2(3)), 0.0)

    def test_terminal_pairs_need_an_action(self, coin):
        with pytest.raises(ModelError):
            terminal_pairs(coin, (0, 0, 1), identity_state(coin), identity_obs(coin))


class TestRegretTransfer:
    def test_two_option_construction_attains_bound(self):
        eta, omega = 0.1, 0.3
        table = tightness_table(eta, omega)
        assert oscillation(table, "i", "j") == pytest.approx(omega)
        res = regret_transfer_check(table, "i", "j", eta)
        assert res.holds and res.tight
        assert res.worst_regret == pytest.approx(eta + omega)

    def test_construction_must_fit_unit_interval(self):
        with pytest.raises(ValueError):
            tightness_table(0.6, 0.6)

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValueError):
            ObjectiveTable([0], {"i": [1.5]})

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 0.5))
    def test_random_tables_respect_bound(self, seed, eta):
        rng = np.random.default_rng(seed)
        table = ObjectiveTable(list(range(8)), {"i": rng.random(8), "j": rng.random(8)})
        res = regret_transfer_check(table, "i", "j", eta)
        best_j = table["j"].max()
        good = table["i"] >= table["i"].max() - eta
        assert res.worst_regret == pytest.approx(float((best_j - table["j"][good]).max()))
        assert res.holds


class TestMissingBits:
    def test_distractor_root(self):
        inst = make_settable_distractor(4, 8)
        mb = missing_sensing_bits(inst.model, inst.q, (0,))
        assert mb.bits == pytest.approx(4.0)
        assert mb.witness_residual == 0.0
        assert mb.witness_entropy == pytest.approx(4.0)

    def test_after_coarse_inspection(self):
        inst = make_quotient_transfer(2, 2)
        row = enumerate_closed_loop(inst.model, Policy.open_loop([0]))[0]
        mb = missing_sensing_bits(inst.model, inst.q, row.trajectory.transcript)
        assert mb.bits == pytest.approx(2.0)


class TestRefinement:
    def test_refinement_and_information_order(self):
        support = range(8)
        prior = np.full(8, 1 / 8)
        fine, coarse = list(range(8)), [z >> 1 for z in range(8)]
        assert blackwell_refines(fine, coarse, support, prior)
        assert not blackwell_refines(coarse, fine, support)
        assert experiment_information(fine, support, prior) == pytest.approx(3.0)
        assert experiment_information(coarse, support, prior) == pytest.approx(2.0)

    @given(st.lists(st.integers(0, 3), min_size=6, max_size=6), st.lists(st.integers(0, 2), min_size=4, max_size=4))
    def test_garbling_is_refined(self, e, g):
        coarse = [g[v] for v in e]
        prior = np.full(6, 1 / 6)
        assert blackwell_refines(e, coarse, range(6), prior)


class TestAbsorption:
    @pytest.mark.parametrize("n", [1, 4])
    def test_overwrite_collapses(self, n):
        inst = make_inspect_overwrite(n)
        r = absorption_report(inst.model, Policy.open_loop([0]), inst.q, inst.quotients["V"])
        assert r.overwrite_collapse and not r.identification
        assert r.h_q_given_m == pytest.approx(n)
        assert r.bound_holds

    @pytest.mark.parametrize("n", [1, 4])
    def test_inspect_identifies(self, n):
        inst = make_inspect_overwrite(n)
        r = absorption_report(inst.model, Policy.open_loop([1]), inst.q, inst.quotients["V"])
        assert r.identification and not r.overwrite_collapse
        assert r.h_q_given_m == 0.0
        assert math.log2(r.memory_classes) >= n - BITS
        assert r.memory_lower_bound == pytest.approx(n)

    def test_memory_must_be_history_quotient(self, coin):
        with pytest.raises(ModelError):
            absorption_report(coin, Policy.open_loop([0]), Quotient.identity(2), identity_state(coin),
                              memory=Quotient.identity(2))


class TestBridgeBudget:
    def test_copied_bit_through_one_bit_bridge(self):
        rows, probs = [], []
        for a in (0, 1):
            rows.append((a, a, a))
            probs.append(0.5)
        j = JointTable(["A0", "B", "O1"], rows, probs)
        res = di_budget_check(j, ["A0"], ["O1"], ["B"], b=1.0)
        assert res.passed
        assert res.total == pytest.approx(1.0)
        assert res.total <= 1.0 + BITS

    def test_non_mediating_bridge(self):
        j = JointTable(["A0", "B", "O1"], [(0, 0, 0), (1, 0, 1)], [0.5, 0.5])
        with pytest.raises(MediationViolated):
            di_budget_check(j, ["A0"], ["O1"], ["B"], b=1.0)

    def test_transcript_as_bridge(self, nibble):
        pol = Policy.from_function(lambda h: 0)
        rows = enumerate_closed_loop(nibble, pol)
        j = closed_loop_joint(
            rows,
            {"A0": lambda tr: tr.actions[0], "O1": lambda tr: tr.observations[1], "B": lambda tr: tr.transcript},
        )
        assert di_budget_check(j, ["A0"], ["O1"], ["B"], b=8.0).passed


class TestAuthority:
    def test_overwrite_target_is_strong(self):
        inst = make_inspect_overwrite(2)
        r = authority_report(inst.model)
        assert 0 in r.strong_targets
        assert not set(r.strong_targets) - {0}
        assert not r.strong_overwrite

    def test_look_or_skip_is_strong(self, coin):
        r = authority_report(coin)
        assert r.strong_overwrite and r.state_conditioned
        assert r.separating_pairs == []
