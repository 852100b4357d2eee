import math

import numpy as np
import pytest
import torch

from sdlm.corpus import TokenSequence, build_vocabulary, corpus_from_sequences, tokenize
from sdlm.importance import NoiseStrategy, assign_buckets, bucketize, importance
from sdlm.schedule import (
    MaskState,
    forward_step,
    make_schedule,
    masked_sentence,
    q_sample,
    q_sample_batch,
    t_start,
)

DEFAULT = dict(T=500, s=1e-4, eps=1e-5)


class TestMakeSchedule:
    def test_alpha0_exact(self):
        sched = make_schedule(**DEFAULT)
        assert sched.alpha_bar[0] == 0.99

    def test_alpha_at_125_matches_direct_evaluation(self):
        sched = make_schedule(**DEFAULT)
        # Independent evaluation of the formula at t = 125.
        expected = 1.0 - math.sqrt(125 / 500 + 1e-4)
        assert sched.alpha_bar[125] == pytest.approx(expected, abs=0.0)
        assert sched.alpha_bar[125] == pytest.approx(0.49990, abs=5e-5)

    def test_terminal_step_clamps_to_eps(self):
        sched = make_schedule(**DEFAULT)
        assert 1.0 - math.sqrt(500 / 500 + 1e-4) < 0
        assert sched.alpha_bar[500] == sched.eps

    def test_strictly_decreasing_before_clamp(self):
        sched = make_schedule(**DEFAULT)
        raw_clamped = np.nonzero(sched.alpha_bar == sched.eps)[0]
        first_clamped = int(raw_clamped[0]) if len(raw_clamped) else sched.T + 1
        pre = sched.alpha_bar[:first_clamped]
        assert np.all(np.diff(pre) < 0)

    def test_beta_in_unit_interval(self):
        sched = make_schedule(**DEFAULT)
        assert np.all(sched.beta[1:] > 0.0)
        assert np.all(sched.beta[1:] < 1.0)

    def test_telescoping_identity(self):
        sched = make_schedule(**DEFAULT)
        rng = np.random.default_rng(0)
        for _ in range(25):
            a = int(rng.integers(0, sched.T))
            t = int(rng.integers(a + 1, sched.T + 1))
            prod = np.prod(1.0 - sched.beta[a + 1 : t + 1])
            assert prod == pytest.approx(
                sched.alpha_bar[t] / sched.alpha_bar[a], abs=1e-10
            )

    def test_beta_u_shape(self):
        # Under the cumulative-retention reading, the per-step beta derived
        # from the sqrt curve is U-shaped with its minimum near T/4, and is
        # increasing over the late region where the hard-noising happens.
        sched = make_schedule(**DEFAULT)
        betas = sched.beta[1:500]  # exclude the clamped terminal step
        argmin = int(np.argmin(betas)) + 1
        assert abs(argmin - 125) <= 5
        tail = sched.beta[130:500]
        assert np.all(np.diff(tail) > 0)
        head = sched.beta[1:120]
        assert np.all(np.diff(head) < 0)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(T=0, s=1e-4, eps=1e-5), dict(T=10, s=0.0, eps=1e-5),
         dict(T=10, s=1.5, eps=1e-5), dict(T=10, s=1e-4, eps=0.0),
         dict(T=10, s=0.25, eps=0.6)],
    )
    def test_invalid_parameters_raise(self, kwargs):
        with pytest.raises(ValueError):
            make_schedule(**kwargs)

    def test_degenerate_beta_rejected(self):
        # s large enough that several steps clamp, which would force beta=0.
        with pytest.raises(ValueError, match="degenerate"):
            make_schedule(T=500, s=0.01, eps=1e-5)

    def test_retention_helper(self):
        sched = make_schedule(T=20, s=1e-4, eps=1e-5)
        assert sched.retention(5, 5) == 1.0
        assert sched.retention(3, 7) == 1.0
        expected = sched.alpha_bar[9] / sched.alpha_bar[4]
        assert sched.retention(9, 4) == pytest.approx(expected, abs=0.0)


class TestMaskState:
    def test_t_start_formula(self):
        # floor((b-1) * T / m) + 1 for T=500, m=3
        assert t_start(1, 500, 3) == 1
        assert t_start(2, 500, 3) == 167
        assert t_start(3, 500, 3) == 334

    def test_bucket1_activates_at_step_one(self, toy3_corpus):
        sent = tokenize("the dog sat", toy3_corpus.vocab)
        assignment = bucketize(importance(sent, toy3_corpus), 3)
        state = MaskState.from_buckets(assignment, 500)
        for a, b in zip(state.activation, assignment.buckets):
            assert a == t_start(b, 500, 3) - 1
            if b == 1:
                assert a == 0

    def test_every_token_corrupted_before_terminal(self, toy_corpus):
        for sent in toy_corpus.sentences[:10]:
            assignment = assign_buckets(
                NoiseStrategy.MASK_ENTROPY_REL, sent, toy_corpus, m=3
            )
            state = MaskState.from_buckets(assignment, 500)
            assert all(a < 500 for a in state.activation)

    def test_windowed_deactivation_steps(self):
        assignment_buckets = (1, 2, 3)
        from sdlm.importance import BucketAssignment

        state = MaskState.from_buckets(
            BucketAssignment(buckets=assignment_buckets, m=3), 500, windowed=True
        )
        assert state.deactivation == (166, 333, 500)


class TestMaskedSentence:
    def _state(self, buckets, T, m):
        from sdlm.importance import BucketAssignment

        return MaskState.from_buckets(BucketAssignment(buckets=buckets, m=m), T)

    def test_t0_identity(self):
        d = TokenSequence(ids=(5, 6, 7))
        state = self._state((1, 2, 3), 500, 3)
        assert masked_sentence(d, 0, state, mask_id=1).ids == d.ids

    def test_terminal_all_mask(self):
        d = TokenSequence(ids=(5, 6, 7))
        state = self._state((1, 2, 3), 500, 3)
        assert masked_sentence(d, 500, state, mask_id=1).ids == (1, 1, 1)

    def test_midpoint_masks_first_two_buckets(self):
        # l=6, m=3, T=500, t=200: t_start(2)=167 <= 200 < t_start(3)=334.
        d = TokenSequence(ids=(10, 11, 12, 13, 14, 15))
        state = self._state((1, 1, 2, 2, 3, 3), 500, 3)
        out = masked_sentence(d, 200, state, mask_id=1)
        assert out.ids == (1, 1, 1, 1, 14, 15)

    def test_staging_monotone(self):
        d = TokenSequence(ids=tuple(range(10, 16)))
        state = self._state((1, 2, 3, 1, 2, 3), 60, 3)
        previous = set()
        for t in range(0, 61):
            current = set(state.masked_positions(t))
            assert previous <= current
            previous = current

    def test_out_of_range_raises(self):
        d = TokenSequence(ids=(5,))
        state = self._state((1,), 10, 1)
        with pytest.raises(ValueError):
            masked_sentence(d, 11, state, mask_id=1)


class TestForwardStep:
    def _simple_state(self, activations, T):
        return MaskState(activation=tuple(activations), T=T)

    def test_inactive_tokens_pass_through(self):
        sched = make_schedule(T=20, s=1e-4, eps=1e-5)
        state = self._simple_state([5, 8], 20)
        x = torch.randn(2, 4, generator=torch.Generator().manual_seed(0))
        out = forward_step(x, 2, state, sched, torch.Generator().manual_seed(1))
        assert torch.equal(out, x)

    def test_single_active_token_matches_scalar_oracle(self):
        sched = make_schedule(T=20, s=1e-4, eps=1e-5)
        state = self._simple_state([0, 10], 20)
        gen = torch.Generator().manual_seed(3)
        x = torch.randn(2, 4, generator=gen)
        out = forward_step(x, 4, state, sched, torch.Generator().manual_seed(9))
        # Scalar re-implementation with the same noise stream.
        noise = torch.randn((2, 4), generator=torch.Generator().manual_seed(9))
        beta = float(sched.beta[5])
        for j in range(4):
            expected = math.sqrt(1 - beta) * float(x[0, j]) + math.sqrt(beta) * float(noise[0, j])
            assert float(out[0, j]) == pytest.approx(expected, rel=1e-6)
            assert float(out[1, j]) == float(x[1, j])

    def test_step_out_of_range(self):
        sched = make_schedule(T=10, s=1e-4, eps=1e-5)
        state = self._simple_state([0], 10)
        x = torch.zeros(1, 2)
        with pytest.raises(ValueError):
            forward_step(x, 10, state, sched)

    def test_windowed_token_stops_diffusing(self):
        sched = make_schedule(T=20, s=1e-4, eps=1e-5)
        state = MaskState(activation=(0,), T=20, deactivation=(5,))
        x = torch.ones(1, 3)
        out = forward_step(x, 7, state, sched, torch.Generator().manual_seed(0))
        assert torch.equal(out, x)


class TestQSample:
    def _state(self, activations, T, deactivations=None):
        return MaskState(activation=tuple(activations), T=T,
                         deactivation=deactivations)

    def test_clean_at_activation_step(self):
        sched = make_schedule(T=20, s=1e-4, eps=1e-5)
        state = self._state([6], 20)
        x0 = torch.randn(1, 5, generator=torch.Generator().manual_seed(2))
        out = q_sample(x0, 6, state, sched, torch.Generator().manual_seed(4))
        assert torch.equal(out, x0)

    def test_terminal_is_nearly_pure_noise(self):
        sched = make_schedule(**DEFAULT)
        state = self._state([0], 500)
        retention = sched.retention(500, 0)
        assert retention == pytest.approx(sched.eps / sched.alpha_bar[0], abs=0.0)
        assert retention < 2e-5

    def test_moments_match_within_three_standard_errors(self):
        sched = make_schedule(T=50, s=1e-4, eps=1e-5)
        state = self._state([4], 50)
        n = 100_000
        x0_row = torch.tensor([1.5, -0.5, 2.0, 0.25])
        gen = torch.Generator().manual_seed(42)
        # Vectorized draw: batch the trajectories as a (n, 1, 4) block.
        big_x0 = x0_row.view(1, 1, 4).expand(n, 1, 4)
        act = torch.full((n, 1), 4, dtype=torch.long)
        t = torch.full((n,), 30, dtype=torch.long)
        out = q_sample_batch(big_x0, t, act, sched, gen).squeeze(1)
        r = sched.retention(30, 4)
        mean_se = math.sqrt((1 - r) / n)
        var_se = (1 - r) * math.sqrt(2.0 / (n - 1))
        sample_mean = out.mean(dim=0)
        sample_var = out.var(dim=0)
        for j in range(4):
            expected_mean = math.sqrt(r) * float(x0_row[j])
            assert abs(float(sample_mean[j]) - expected_mean) <= 3 * mean_se
            assert abs(float(sample_var[j]) - (1 - r)) <= 3 * var_se

    def test_iterated_forward_matches_closed_form_moments(self):
        # Distributional equivalence at one probe; the acceptance suite
        # repeats this over five random probes.
        sched = make_schedule(T=40, s=1e-4, eps=1e-5)
        a, t_probe, n, h = 3, 25, 20_000, 4
        state_batch = MaskState(activation=(a,), T=40)
        gen = torch.Generator().manual_seed(7)
        x0_row = torch.tensor([0.8, -1.2, 0.3, 1.9])

        x = x0_row.view(1, 4).repeat(n, 1)
        beta = torch.as_tensor(sched.beta, dtype=x.dtype)
        for u in range(a, t_probe):
            z = torch.randn(x.shape, generator=gen)
            x = torch.sqrt(1 - beta[u + 1]) * x + torch.sqrt(beta[u + 1]) * z

        r = sched.retention(t_probe, a)
        mean_se = math.sqrt((1 - r) / n)
        var_se = (1 - r) * math.sqrt(2.0 / (n - 1))
        for j in range(h):
            assert abs(float(x.mean(dim=0)[j]) - math.sqrt(r) * float(x0_row[j])) <= 3 * mean_se
            assert abs(float(x.var(dim=0)[j]) - (1 - r)) <= 3.5 * var_se

    def test_windowed_retention_freezes_after_window(self):
        sched = make_schedule(T=40, s=1e-4, eps=1e-5)
        state = self._state([0], 40, deactivations=(10,))
        x0 = torch.full((1, 3), 2.0)
        gen_a = torch.Generator().manual_seed(5)
        gen_b = torch.Generator().manual_seed(5)
        at_end = q_sample(x0, 10, state, sched, gen_a)
        later = q_sample(x0, 30, state, sched, gen_b)
        assert torch.equal(at_end, later)

    def test_batch_padding_rows_stay_clean(self):
        sched = make_schedule(T=30, s=1e-4, eps=1e-5)
        x0 = torch.randn(2, 3, 4, generator=torch.Generator().manual_seed(0))
        act = torch.tensor([[0, 0, 30], [0, 30, 30]])
        t = torch.tensor([15, 15])
        out = q_sample_batch(x0, t, act, sched, torch.Generator().manual_seed(1))
        assert torch.equal(out[0, 2], x0[0, 2])
        assert torch.equal(out[1, 1], x0[1, 1])
        assert not torch.equal(out[0, 0], x0[0, 0])


def test_easy_first_structure(toy_corpus):
    # Higher importance implies earlier activation (smaller a_i).
    for sent in toy_corpus.sentences[:10]:
        profile = importance(sent, toy_corpus)
        assignment = bucketize(profile, min(3, len(sent)))
        state = MaskState.from_buckets(assignment, 500)
        for i in range(len(sent)):
            for j in range(len(sent)):
                if profile.importance[i] > profile.importance[j]:
                    assert state.activation[i] <= state.activation[j]
