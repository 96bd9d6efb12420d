"""
Exploration policy: tabular weight-conditioned vector Q-learning.

Each conditioning weight (quantized to a WeightKey) owns its own table of
per-action Q-vectors. Unseen entries read as zero (0-initialization).
Action choice scalarizes the Q-vectors with the conditioning weight.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mo_core import ValueVector, WeightVector, format_float
from momdp_envs import MomdpEnv, Transition, rollout

logger = logging.getLogger(__name__)

WEIGHT_KEY_RESOLUTION = 1e-6

DEFAULT_ALPHA = 0.1
DEFAULT_BATCH = 128
DEFAULT_CAPACITY = 100000
DEFAULT_TRAIN_EVERY = 1


class LearnerError(ValueError):
    """Base class for learner errors"""


class InvalidAlpha(LearnerError):
    pass


class EmptyBuffer(LearnerError):
    pass


class InvalidSchedule(LearnerError):
    pass


@lru_cache(maxsize=65536)
def _quantize(components: Tuple[float, ...]) -> Tuple[int, ...]:
    return tuple(int(round(c / WEIGHT_KEY_RESOLUTION)) for c in components)


def weight_key(w: WeightVector) -> Tuple[int, ...]:
    """Components rounded to the 1e-6 grid, as integers"""
    return _quantize(tuple(w.components))


class QTable:
    """
    (state, weight key) -> A x d array of Q-vectors.

    `version` increases on every write; cached policy values are keyed
    on it.
    """

    def __init__(self, action_count: int, objective_count: int):
        self.action_count = action_count
        self.objective_count = objective_count
        self.version = 0
        self._tables: Dict[Tuple[int, ...], Dict[object, np.ndarray]] = {}
        self._weights: Dict[Tuple[int, ...], WeightVector] = {}
        self._zero = np.zeros((action_count, objective_count))
        self._zero.flags.writeable = False
        self._value_cache: Dict[Tuple[int, ...], ValueVector] = {}
        self._cache_version = 0

    def __repr__(self):
        entries = sum(len(t) for t in self._tables.values())
        return f"QTable(weights={len(self._weights)}, entries={entries}, version={self.version})"

    def get(self, state, key: Tuple[int, ...]) -> np.ndarray:
        table = self._tables.get(key)
        if table is None:
            return self._zero
        return table.get(state, self._zero)

    def _row(self, state, w: WeightVector) -> np.ndarray:
        key = weight_key(w)
        table = self._tables.get(key)
        if table is None:
            table = self._tables[key] = {}
            self._weights[key] = w
        row = table.get(state)
        if row is None:
            row = table[state] = np.zeros((self.action_count, self.objective_count))
        return row

    def trained_weights(self) -> List[WeightVector]:
        """Conditioning weights with at least one update, in first-seen order"""
        return list(self._weights.values())

    def cached_value(self, key):
        if self._cache_version != self.version:
            self._value_cache.clear()
            self._cache_version = self.version
        return self._value_cache.get(key)

    def store_value(self, key, value: ValueVector):
        self.cached_value(key)
        self._value_cache[key] = value

    def dump(self) -> str:
        """Debug dump: state, weight key, action, Q components (tab separated)"""
        lines = []
        for key, table in self._tables.items():
            for state, row in table.items():
                for action in range(self.action_count):
                    values = '\t'.join(format_float(x) for x in row[action])
                    lines.append(f"{state}\t{key}\t{action}\t{values}")
        return '\n'.join(lines) + ('\n' if lines else '')


class ReplayBuffer:
    """Fixed-capacity FIFO of (Transition, conditioning weight)"""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise LearnerError(f"Replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: List[Tuple[Transition, WeightVector]] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, tr: Transition, w: WeightVector):
        if len(self._items) < self.capacity:
            self._items.append((tr, w))
        else:
            self._items[self._next] = (tr, w)
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> List[Tuple[Transition, WeightVector]]:
        """Uniform sample, with replacement only when the buffer is smaller than the batch"""
        if not self._items:
            raise EmptyBuffer("Cannot sample from an empty replay buffer")
        if len(self._items) >= batch:
            indices = rng.choice(len(self._items), size=batch, replace=False)
        else:
            indices = rng.integers(0, len(self._items), size=batch)
        return [self._items[i] for i in indices]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear anneal from start to end over anneal_steps"""
    start: float = 1.0
    end: float = 0.0
    anneal_steps: int = 50000

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise InvalidSchedule(f"Need 0 <= end <= start <= 1, got start={self.start} end={self.end}")
        if self.anneal_steps < 0:
            raise InvalidSchedule(f"anneal_steps must be >= 0, got {self.anneal_steps}")

    def value(self, global_step: int) -> float:
        if self.anneal_steps == 0 or global_step >= self.anneal_steps:
            return self.end
        return max(self.end, self.start - (self.start - self.end) * global_step / self.anneal_steps)


def greedy_action(q: QTable, state, w: WeightVector) -> int:
    """argmax_a Q(s, a, w) . w, ties to the lowest action"""
    scores = q.get(state, weight_key(w)) @ w.as_array()
    return int(np.argmax(scores))


def act_epsilon(q: QTable, state, w: WeightVector, global_step: int,
                rng: np.random.Generator, schedule: EpsilonSchedule) -> int:
    if rng.random() < schedule.value(global_step):
        return int(rng.integers(q.action_count))
    return greedy_action(q, state, w)


def update(q: QTable, tr: Transition, w: WeightVector, alpha: float, gamma: float) -> float:
    """
    One vector TD step under conditioning weight w.

    Bootstraps from the scalarized-greedy next action; terminal transitions
    bootstrap zero. Returns the max-norm of the TD vector.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidAlpha(f"Learning rate must be in (0, 1], got {alpha}")
    row = q._row(tr.state, w)
    target = np.array(tr.reward.components)
    if not tr.terminal:
        next_q = q.get(tr.next_state, weight_key(w))
        target = target + gamma * next_q[greedy_action(q, tr.next_state, w)]
    td = target - row[tr.action]
    row[tr.action] += alpha * td
    q.version += 1
    return float(np.max(np.abs(td)))


def train_batch(q: QTable, buffer: ReplayBuffer, w: WeightVector, alpha: float, gamma: float,
                batch: int, rng: np.random.Generator) -> float:
    """
    Replay `batch` transitions.

    Each sample trains its stored conditioning weight, and w as well when
    w quantizes to a different key. Returns the mean TD magnitude.
    """
    if batch <= 0:
        return 0.0
    if len(buffer) == 0:
        raise EmptyBuffer("Cannot train from an empty replay buffer")
    key = weight_key(w)
    errors = []
    for tr, stored in buffer.sample(batch, rng):
        errors.append(update(q, tr, stored, alpha, gamma))
        if weight_key(stored) != key:
            errors.append(update(q, tr, w, alpha, gamma))
    return float(np.mean(errors))


def policy_value(q: QTable, env: MomdpEnv, w: WeightVector, gamma: Optional[float] = None) -> ValueVector:
    """Exact value of the greedy policy conditioned on w (cached per table version)"""
    gamma = env.gamma if gamma is None else gamma
    cache_key = (weight_key(w), gamma)
    value = q.cached_value(cache_key)
    if value is None:
        _, value = rollout(env, lambda state, _t: greedy_action(q, state, w), gamma)
        q.store_value(cache_key, value)
    return value


def policy_set_values(q: QTable, env: MomdpEnv, weights: Sequence[WeightVector],
                      gamma: Optional[float] = None) -> List[ValueVector]:
    if not weights:
        raise LearnerError("policy_set_values needs at least one weight")
    return [policy_value(q, env, w, gamma) for w in weights]
