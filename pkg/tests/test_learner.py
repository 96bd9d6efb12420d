"""Unit tests for the weight-conditioned vector Q-learner."""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from learner import (
    EmptyBuffer, EpsilonSchedule, InvalidAlpha, InvalidSchedule, LearnerError, QTable,
    ReplayBuffer, act_epsilon, greedy_action, policy_set_values, policy_value, train_batch,
    update, weight_key,
)
from mo_core import WeightVector, make_value, make_weight
from momdp_envs import MomdpEnv, MomdpSpec, Transition, lock_env

GAMMA = 0.99
W_O1 = make_weight([1, 0])
W_O2 = make_weight([0, 1])


def transition(state, action, next_state, reward, terminal, step=0):
    return Transition(state, action, next_state, make_value(reward), terminal, step)


class TestWeightKey(unittest.TestCase):

    def test_nearby_weights_share_a_key(self):
        a = WeightVector((0.3, 0.7))
        b = WeightVector((0.3 + 1e-9, 0.7 - 1e-9))
        self.assertEqual(weight_key(a), weight_key(b))

    def test_distinct_weights(self):
        self.assertNotEqual(weight_key(make_weight([0.3, 0.7])), weight_key(make_weight([0.31, 0.69])))


class TestQTable(unittest.TestCase):

    def test_unseen_entry_is_zero(self):
        q = QTable(3, 2)
        row = q.get('s', weight_key(W_O1))
        self.assertEqual(row.shape, (3, 2))
        self.assertFalse(row.any())
        self.assertFalse(row.flags.writeable)

    def test_greedy_ties_to_lowest_action(self):
        self.assertEqual(greedy_action(QTable(3, 2), 's', W_O1), 0)

    def test_trained_weights_in_first_seen_order(self):
        q = QTable(3, 2)
        update(q, transition('s', 1, 't', [1, 0], True), W_O2, 0.5, GAMMA)
        update(q, transition('s', 1, 't', [1, 0], True), W_O1, 0.5, GAMMA)
        self.assertEqual(q.trained_weights(), [W_O2, W_O1])

    def test_dump(self):
        q = QTable(2, 2)
        update(q, transition('s', 1, 't', [1, 0], True), W_O1, 1.0, GAMMA)
        lines = q.dump().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].endswith('\t1\t1\t0'))


class TestUpdate(unittest.TestCase):
    """Vector TD step"""

    def test_terminal_target_is_the_reward(self):
        q = QTable(3, 2)
        td = update(q, transition('s', 1, 't', [1, 0], True), W_O1, 0.5, GAMMA)
        self.assertEqual(td, 1.0)
        np.testing.assert_array_equal(q.get('s', weight_key(W_O1))[1], [0.5, 0.0])

    def test_bootstraps_from_greedy_next_action(self):
        q = QTable(3, 2)
        update(q, transition('t', 2, 'end', [0, 1], True), W_O2, 1.0, GAMMA)
        update(q, transition('t', 0, 'end', [1, 0], True), W_O2, 1.0, GAMMA)
        update(q, transition('s', 0, 't', [0, 0], False), W_O2, 1.0, GAMMA)
        np.testing.assert_array_equal(q.get('s', weight_key(W_O2))[0], [0.0, GAMMA])

    def test_version_advances(self):
        q = QTable(3, 2)
        update(q, transition('s', 1, 't', [1, 0], True), W_O1, 0.5, GAMMA)
        self.assertEqual(q.version, 1)

    def test_invalid_alpha(self):
        q = QTable(3, 2)
        for alpha in (0.0, 1.5):
            with self.assertRaises(InvalidAlpha):
                update(q, transition('s', 1, 't', [1, 0], True), W_O1, alpha, GAMMA)


class TestGreedyScaling(unittest.TestCase):
    """Positive reward scaling leaves every greedy choice unchanged"""

    def random_transitions(self, rng, count):
        items = []
        for _ in range(count):
            state = int(rng.integers(6))
            terminal = bool(rng.random() < 0.3)
            items.append((state, int(rng.integers(3)), int(rng.integers(6)), rng.normal(size=2), terminal))
        return items

    def test_scaled_rewards_same_policy(self):
        rng = np.random.default_rng(3)
        items = self.random_transitions(rng, 400)
        w = make_weight([0.35, 0.65])
        base = QTable(3, 2)
        for state, action, next_state, reward, terminal in items:
            update(base, transition(state, action, next_state, reward, terminal), w, 0.5, GAMMA)
        # powers of two scale every float operation exactly
        for c in (0.5, 2.0, 4.0):
            scaled = QTable(3, 2)
            for state, action, next_state, reward, terminal in items:
                update(scaled, transition(state, action, next_state, c * reward, terminal), w, 0.5, GAMMA)
            for state in range(6):
                np.testing.assert_array_equal(scaled.get(state, weight_key(w)), c * base.get(state, weight_key(w)))
                self.assertEqual(greedy_action(scaled, state, w), greedy_action(base, state, w))

    def test_scaled_row_same_action(self):
        rng = np.random.default_rng(8)
        q = QTable(4, 3)
        w = make_weight([0.2, 0.5, 0.3])
        for state in range(20):
            q._row(state, w)[:] = rng.normal(size=(4, 3))
        for state in range(20):
            before = greedy_action(q, state, w)
            q._row(state, w)[:] *= rng.uniform(0.01, 100.0)
            self.assertEqual(greedy_action(q, state, w), before)


class TestConditioningIsolation(unittest.TestCase):

    def test_other_weight_rows_untouched(self):
        rng = np.random.default_rng(5)
        w1 = make_weight([0.8, 0.2])
        w2 = make_weight([0.1, 0.9])
        q = QTable(3, 2)
        for state in range(5):
            update(q, transition(state, state % 3, state + 1, [0.0, 1.0], state == 4), w2, 1.0, GAMMA)
        snapshot = {state: q.get(state, weight_key(w2)).copy() for state in range(6)}
        actions = {state: greedy_action(q, state, w2) for state in range(6)}

        for _ in range(300):
            state = int(rng.integers(6))
            update(q, transition(state, int(rng.integers(3)), int(rng.integers(6)), rng.normal(size=2),
                                 bool(rng.random() < 0.2)), w1, 0.7, GAMMA)

        for state in range(6):
            np.testing.assert_array_equal(q.get(state, weight_key(w2)), snapshot[state])
            self.assertEqual(greedy_action(q, state, w2), actions[state])
        self.assertEqual(q.trained_weights(), [w2, w1])


# per-state rewards of the two actions on a three-step chain
CHAIN_REWARDS = {
    0: ([1.0, 0.0], [0.0, 0.5]),
    1: ([0.0, 2.0], [1.5, 0.0]),
    2: ([0.2, 0.0], [0.0, 3.0]),
}
CHAIN_GAMMA = 0.9


class ChainEnv(MomdpEnv):
    """0 -> 1 -> 2 -> end whatever the action; the action only picks the reward"""

    env_id = 'chain'

    def __init__(self):
        super().__init__(MomdpSpec('step', 2, 2, 3, CHAIN_GAMMA, 0))

    def _transition(self, state, action):
        return state + 1, CHAIN_REWARDS[state][action], state == 2


def chain_optimum(w):
    """Backward induction over the chain, greedy ties to the lowest action"""
    q_star = {}
    following = np.zeros(2)
    for state in (2, 1, 0):
        rows = np.array(CHAIN_REWARDS[state], dtype=float) + CHAIN_GAMMA * following
        q_star[state] = rows
        following = rows[int(np.argmax(rows @ np.array(w.components)))]
    return q_star


class TestChainConvergence(unittest.TestCase):
    """alpha = 1 sweeps reach the exact fixed point in H sweeps"""

    def setUp(self):
        self.w = make_weight([0.3, 0.7])
        self.q = QTable(2, 2)
        self.q_star = chain_optimum(self.w)

    def sweep(self):
        errors = []
        for state in (0, 1, 2):
            for action in (0, 1):
                tr = transition(state, action, state + 1, CHAIN_REWARDS[state][action], state == 2, state)
                errors.append(update(self.q, tr, self.w, 1.0, CHAIN_GAMMA))
        return max(errors)

    def test_matches_backward_induction(self):
        for _ in range(3):
            self.sweep()
        for state in (0, 1, 2):
            np.testing.assert_allclose(self.q.get(state, weight_key(self.w)), self.q_star[state], rtol=0, atol=1e-10)
        self.assertLessEqual(self.sweep(), 1e-10)

    def test_greedy_value_matches(self):
        for _ in range(3):
            self.sweep()
        best = self.q_star[0][int(np.argmax(self.q_star[0] @ np.array(self.w.components)))]
        value = policy_value(self.q, ChainEnv(), self.w)
        np.testing.assert_allclose(list(value), best, rtol=0, atol=1e-10)


class TestReplayBuffer(unittest.TestCase):

    def test_ring_overwrites_oldest(self):
        buffer = ReplayBuffer(2)
        items = [transition(i, 0, i + 1, [0, 0], False) for i in range(3)]
        for tr in items:
            buffer.push(tr, W_O1)
        self.assertEqual(len(buffer), 2)
        sampled = {tr.state for tr, _ in buffer.sample(2, np.random.default_rng(0))}
        self.assertEqual(sampled, {1, 2})

    def test_sample_with_replacement_when_small(self):
        buffer = ReplayBuffer(10)
        buffer.push(transition(0, 0, 1, [0, 0], False), W_O1)
        self.assertEqual(len(buffer.sample(5, np.random.default_rng(0))), 5)

    def test_empty(self):
        with self.assertRaises(EmptyBuffer):
            ReplayBuffer(4).sample(1, np.random.default_rng(0))

    def test_bad_capacity(self):
        with self.assertRaises(LearnerError):
            ReplayBuffer(0)


class TestEpsilonSchedule(unittest.TestCase):

    def test_linear_anneal(self):
        schedule = EpsilonSchedule(1.0, 0.0, 50000)
        self.assertEqual(schedule.value(0), 1.0)
        self.assertEqual(schedule.value(25000), 0.5)
        self.assertEqual(schedule.value(60000), 0.0)

    def test_no_anneal(self):
        self.assertEqual(EpsilonSchedule(1.0, 0.1, 0).value(0), 0.1)

    def test_invalid(self):
        with self.assertRaises(InvalidSchedule):
            EpsilonSchedule(0.1, 0.5, 100)

    def test_zero_epsilon_is_greedy(self):
        q = QTable(3, 2)
        update(q, transition('s', 2, 't', [1, 0], True), W_O1, 1.0, GAMMA)
        rng = np.random.default_rng(1)
        schedule = EpsilonSchedule(0.0, 0.0, 0)
        self.assertEqual(act_epsilon(q, 's', W_O1, 10, rng, schedule), 2)


class TestTrainBatch(unittest.TestCase):

    def setUp(self):
        self.buffer = ReplayBuffer(100)
        self.buffer.push(transition('s', 1, 't', [1, 0], True), W_O1)
        self.rng = np.random.default_rng(0)

    def test_zero_batch_skips(self):
        q = QTable(3, 2)
        self.assertEqual(train_batch(q, self.buffer, W_O1, 0.5, GAMMA, 0, self.rng), 0.0)
        self.assertEqual(q.version, 0)

    def test_empty_buffer(self):
        with self.assertRaises(EmptyBuffer):
            train_batch(QTable(3, 2), ReplayBuffer(4), W_O1, 0.5, GAMMA, 8, self.rng)

    def test_trains_stored_and_current_weight(self):
        q = QTable(3, 2)
        train_batch(q, self.buffer, W_O2, 0.5, GAMMA, 4, self.rng)
        self.assertEqual(q.trained_weights(), [W_O1, W_O2])
        self.assertEqual(q.version, 8)

    def test_same_weight_trained_once(self):
        q = QTable(3, 2)
        train_batch(q, self.buffer, W_O1, 0.5, GAMMA, 4, self.rng)
        self.assertEqual(q.version, 4)


class TestPolicyValue(unittest.TestCase):
    """Greedy evaluation on the combination lock"""

    def setUp(self):
        self.env = lock_env(3, GAMMA)
        self.q = QTable(3, 2)
        path = [((0, 'start'), (1, 'o2')), ((1, 'o2'), (2, 'o2')), ((2, 'o2'), (3, 'o2'))]
        for _ in range(3):
            for step, (state, next_state) in enumerate(reversed(path)):
                last = step == 0
                update(self.q, transition(state, 2, next_state, [0, 1] if last else [0, 0], last),
                       W_O2, 1.0, GAMMA)

    def test_learned_path(self):
        self.assertEqual(tuple(policy_value(self.q, self.env, W_O2)), (0.0, GAMMA * GAMMA))

    def test_untrained_weight_derails(self):
        self.assertEqual(tuple(policy_value(self.q, self.env, W_O1)), (0.0, 0.0))

    def test_cache_invalidated_by_updates(self):
        before = policy_value(self.q, self.env, W_O1)
        update(self.q, transition((0, 'start'), 2, (1, 'o2'), [0, 0], False), W_O1, 1.0, GAMMA)
        self.assertEqual(tuple(before), (0.0, 0.0))
        self.assertEqual(self.q.cached_value((weight_key(W_O1), GAMMA)), None)

    def test_policy_set_values(self):
        values = policy_set_values(self.q, self.env, [W_O1, W_O2])
        self.assertEqual(len(values), 2)
        with self.assertRaises(LearnerError):
            policy_set_values(self.q, self.env, [])


if __name__ == '__main__':
    unittest.main()
