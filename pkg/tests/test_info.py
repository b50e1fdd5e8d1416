import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import entropy as scipy_entropy

from bridgegap.core import LatentSpace, ModelError, Policy, Quotient, UnrealizableHistory, enumerate_closed_loop
from bridgegap.info import (
    JointTable,
    binary_entropy,
    channel_capacity,
    closed_loop_joint,
    cond_entropy,
    directed_information,
    empowerment_det,
    entropy,
    induced_channel,
    information_gain,
    mutual_info,
    posterior_latent,
    reach_set,
    reach_set_bruteforce,
    reachable_states,
)

from conftest import distributions, look_or_skip, models


def joint_from_matrix(p):
    rows, probs = [], []
    for (i, j), v in np.ndenumerate(p):
        rows.append((i, j))
        probs.append(v)
    return JointTable(["A", "B"], rows, probs)


@st.composite
def joint_matrices(draw):
    r, c = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    w = draw(st.lists(st.integers(0, 6), min_size=r * c, max_size=r * c).filter(lambda v: sum(v) > 0))
    p = np.asarray(w, dtype=float).reshape(r, c)
    return p / p.sum()


class TestEntropy:
    def test_uniform_bits(self):
        assert entropy(np.full(8, 1 / 8)) == pytest.approx(3.0)

    def test_point_mass(self):
        assert entropy([0.0, 1.0, 0.0]) == 0.0

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            entropy([0.3, 0.3])

    def test_binary_entropy_half(self):
        assert binary_entropy(0.5) == pytest.approx(1.0)

    @given(distributions())
    def test_matches_scipy(self, p):
        assert entropy(p) == pytest.approx(scipy_entropy(p, base=2), abs=1e-12)

    @given(distributions())
    def test_bounded_by_log_support(self, p):
        assert 0.0 <= entropy(p) <= math.log2(np.count_nonzero(p)) + 1e-12


class TestJointTable:
    def test_merges_duplicates_and_drops_zeros(self):
        j = JointTable(["A"], [(0,), (0,), (1,)], [0.5, 0.5, 0.0])
        assert j.rows == [(0,)]
        assert j.entropy(["A"]) == 0.0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            JointTable(["A"], [(0,)], [0.5])

    def test_rejects_duplicate_axes(self):
        with pytest.raises(ValueError):
            JointTable(["A", "A"], [(0, 0)], [1.0])

    def test_unknown_axis(self):
        j = JointTable(["A"], [(0,)], [1.0])
        with pytest.raises(KeyError):
            j.marginal(["B"])

    def test_overlapping_axes_rejected(self):
        j = joint_from_matrix(np.full((2, 2), 0.25))
        with pytest.raises(ValueError):
            mutual_info(j, "A", "A")

    @settings(max_examples=80)
    @given(joint_matrices())
    def test_mutual_information_matches_independent_formula(self, p):
        j = joint_from_matrix(p)
        pa, pb = p.sum(1), p.sum(0)
        nz = p > 0
        oracle = float(np.sum(p[nz] * np.log2(p[nz] / np.outer(pa, pb)[nz])))
        assert mutual_info(j, "A", "B") == pytest.approx(oracle, abs=1e-9)

    @settings(max_examples=80)
    @given(joint_matrices())
    def test_chain_rule_and_nonnegativity(self, p):
        j = joint_from_matrix(p)
        h_ab = j.entropy(["A", "B"])
        assert h_ab == pytest.approx(j.entropy(["A"]) + cond_entropy(j, "B", "A"), abs=1e-9)
        assert cond_entropy(j, "A", "B") <= j.entropy(["A"]) + 1e-12
        assert mutual_info(j, "A", "B") >= -1e-12


class TestPosteriorAndGain:
    def test_posterior_after_revealing_observation(self, nibble):
        post = posterior_latent(nibble, (0, 0, 6))
        assert post[5] == 1.0 and post.sum() == 1.0

    def test_posterior_after_blank_is_prior(self, nibble):
        np.testing.assert_allclose(posterior_latent(nibble, (0, 1, 0)), 1 / 16)

    def test_unrealizable_prefix(self, nibble):
        with pytest.raises(UnrealizableHistory):
            posterior_latent(nibble, (0, 1, 5))

    def test_gain_of_looking_is_latent_entropy(self, nibble):
        assert information_gain(nibble, (0,), 0) == pytest.approx(4.0)
        assert information_gain(nibble, (0,), 1) == 0.0

    def test_gain_under_skewed_prior(self):
        m = look_or_skip(1, prior=np.array([0.11, 0.89]))
        assert information_gain(m, (0,), 0) == pytest.approx(binary_entropy(0.11))

    def test_no_gain_at_horizon(self, coin):
        with pytest.raises(ModelError):
            information_gain(coin, (0, 0, 1), 0)

    def test_mixture_posterior_weights_components(self, coin):
        pol = Policy.mix([(0.5, Policy.open_loop([0])), (0.5, Policy.open_loop([1]))])
        np.testing.assert_allclose(posterior_latent(coin, (0, 1, 0), pol), [0.5, 0.5])


class TestReachability:
    def test_look_or_skip_reach(self, coin):
        q = Quotient.state(np.arange(2))
        assert reach_set(coin, (0, 0, 0), 1, q) == frozenset({0, 1})
        assert empowerment_det(coin, (0, 0, 0), 1, q) == pytest.approx(1.0)

    def test_horizon_past_end(self, coin):
        with pytest.raises(ModelError):
            reachable_states(coin, 0, 0, 0, 2)

    @settings(max_examples=60, deadline=None)
    @given(models(), st.data())
    def test_set_propagation_matches_bruteforce(self, m, data):
        z = data.draw(st.sampled_from(m.support.tolist()))
        t0 = data.draw(st.integers(0, m.horizon - 1))
        x = data.draw(st.integers(0, m.n_states[t0] - 1))
        h = data.draw(st.integers(1, m.horizon - t0))
        for q in (Quotient.state(np.arange(m.n_states[t0 + h])), Quotient.observation(np.arange(m.n_obs[t0 + h]))):
            assert reach_set(m, (z, x, t0), h, q) == reach_set_bruteforce(m, (z, x, t0), h, q)

    @settings(max_examples=40, deadline=None)
    @given(models(), st.data())
    def test_empowerment_is_log_of_reachable_count(self, m, data):
        z = data.draw(st.sampled_from(m.support.tolist()))
        x = int(m.init_state[z])
        q = Quotient.state(np.arange(m.n_states[m.horizon]))
        ch = induced_channel(m, (z, x, 0), m.horizon, q)
        assert empowerment_det(m, (z, x, 0), m.horizon, q) == pytest.approx(
            math.log2(np.count_nonzero(ch.sum(0))), abs=1e-12
        )


class TestChannelCapacity:
    def test_noiseless_channel(self):
        assert channel_capacity(np.eye(4)).capacity == pytest.approx(2.0, abs=1e-9)

    def test_useless_channel(self):
        assert channel_capacity(np.full((3, 2), 0.5)).capacity == pytest.approx(0.0, abs=1e-9)

    def test_binary_erasure(self):
        e = 0.3
        w = [[1 - e, e, 0.0], [0.0, e, 1 - e]]
        assert channel_capacity(w).capacity == pytest.approx(1 - e, abs=1e-6)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            channel_capacity([[0.5, 0.4]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounds_bracket_and_lower_bounds_increase(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.random((rng.integers(2, 5), rng.integers(2, 5)))
        w /= w.sum(1, keepdims=True)
        res = channel_capacity(w, tolerance=1e-8)
        assert res.converged
        assert res.capacity <= res.upper_bound + 1e-12
        assert np.all(np.diff(res.lower_bounds) >= -1e-12)
        assert res.capacity <= math.log2(min(w.shape)) + 1e-9


class TestDirectedInformation:
    def test_open_loop_has_no_inward_flow(self, nibble):
        rows = enumerate_closed_loop(nibble, Policy.open_loop([0]))
        j = closed_loop_joint(rows, {"A0": lambda tr: tr.actions[0], "O1": lambda tr: tr.observations[1]})
        out, inward, total = directed_information(j, ["A0"], ["O1"])
        assert (out, inward, total) == (0.0, 0.0, 0.0)

    @settings(max_examples=40, deadline=None)
    @given(models(caps=(6, 3, 3, 3)), st.integers(0, 10**6))
    def test_conservation(self, m, salt):
        pol = Policy.from_function(lambda h: hash((salt, h)) % m.n_actions[len(h) // 2])
        T = m.horizon
        axes = {f"A{t}": (lambda tr, t=t: tr.actions[t]) for t in range(T)}
        axes.update({f"O{t + 1}": (lambda tr, t=t: tr.observations[t + 1]) for t in range(T)})
        j = closed_loop_joint(enumerate_closed_loop(m, pol), axes)
        out, inward, total = directed_information(j, [f"A{t}" for t in range(T)], [f"O{t + 1}" for t in range(T)])
        assert out >= -1e-12 and inward >= -1e-12
        assert out + inward == pytest.approx(total, abs=1e-9)

    def test_requires_matching_axes(self):
        j = JointTable(["A", "O"], [(0, 0)], [1.0])
        with pytest.raises(ValueError):
            directed_information(j, ["A"], [])


class TestLatentSpaceIntegration:
    def test_zero_prior_latents_are_invisible(self):
        m = look_or_skip(1, prior=np.array([1.0, 0.0]))
        assert information_gain(m, (0,), 0) == 0.0
        assert isinstance(m.latent, LatentSpace)
