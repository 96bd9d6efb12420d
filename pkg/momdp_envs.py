"""
Deterministic multi-objective MDPs for the DG-MORL lab.

Two benchmarks share one small contract (reset/step returning Transition
records):

- Deep Sea Treasure: a submarine gridworld, reward [treasure, -1 per step].
  The layout is data (a YAML map file), see static/maps/dst_convex.yaml.
- MO combination lock: three rewarded action sequences, every other action
  derails into an absorbing zero-reward chain.

Also provides rollout/replay helpers computing exact discounted returns.
"""

import logging
import math
import operator
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import yaml

from mo_core import ValueVector, make_value

logger = logging.getLogger(__name__)

BUNDLED_MAP_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'static', 'maps')
DEFAULT_DST_MAP = os.path.join(BUNDLED_MAP_DIR, 'dst_convex.yaml')

# DST actions: (row delta, col delta)
DST_MOVES = {
    0: (-1, 0),   # up
    1: (1, 0),    # down
    2: (0, -1),   # left
    3: (0, 1),    # right
}
DST_ACTION_NAMES = ('up', 'down', 'left', 'right')
DST_STEP_PENALTY = -1.0

# Lock tracks
TRACK_START = 'start'
TRACK_O1 = 'o1'
TRACK_O2 = 'o2'
TRACK_BALANCE = 'bal'
TRACK_DEAD = 'dead'

LOCK_OUTCOMES = {
    TRACK_O1: (1.0, 0.0),
    TRACK_O2: (0.0, 1.0),
    TRACK_BALANCE: (0.5, 0.5),
}


class EnvError(ValueError):
    """Base class for environment errors"""


class EpisodeFinished(EnvError):
    pass


class InvalidAction(EnvError):
    pass


class InvalidMap(EnvError):
    pass


class HorizonTooSmall(EnvError):
    pass


# =============================================================================
# CONTRACT
# =============================================================================

@dataclass(frozen=True)
class MomdpSpec:
    """Static description of a deterministic MOMDP"""
    state_description: str
    action_count: int
    objective_count: int
    horizon: int
    gamma: float
    initial_state: Any

    def __post_init__(self):
        if self.horizon < 1:
            raise HorizonTooSmall(f"Horizon must be >= 1, got {self.horizon}")
        if not 0.0 <= self.gamma < 1.0:
            raise EnvError(f"Discount must be in [0, 1), got {self.gamma}")
        if self.objective_count < 2:
            raise EnvError(f"Need at least 2 objectives, got {self.objective_count}")
        if self.action_count < 2:
            raise EnvError(f"Need at least 2 actions, got {self.action_count}")


@dataclass(frozen=True)
class Transition:
    state: Any
    action: int
    next_state: Any
    reward: ValueVector
    terminal: bool
    step_index: int


class MomdpEnv:
    """
    Deterministic episodic environment.

    Subclasses implement _transition(state, action) -> (next_state, reward,
    done); the base class owns the step counter and the horizon cut-off.
    """

    env_id = 'momdp'

    def __init__(self, spec: MomdpSpec):
        self.spec = spec
        self._state = spec.initial_state
        self._step = 0
        self._done = False
        # every step() ever taken on this instance
        self.total_steps = 0

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    @property
    def objective_count(self) -> int:
        return self.spec.objective_count

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    @property
    def state(self):
        return self._state

    def reset(self):
        self._state = self.spec.initial_state
        self._step = 0
        self._done = False
        return self._state

    def step(self, action: int) -> Transition:
        if self._done:
            raise EpisodeFinished(f"{self.env_id}: step() called on a finished episode")
        try:
            action = operator.index(action)
        except TypeError:
            raise InvalidAction(f"{self.env_id}: action must be an integer, got {action!r}")
        if not 0 <= action < self.spec.action_count:
            raise InvalidAction(f"{self.env_id}: action {action} outside [0, {self.spec.action_count})")

        state = self._state
        next_state, reward, done = self._transition(state, action)
        step_index = self._step
        self._step += 1
        self.total_steps += 1
        terminal = done or self._step >= self.spec.horizon
        self._state = next_state
        self._done = terminal
        return Transition(state, action, next_state, make_value(reward), terminal, step_index)

    def _transition(self, state, action: int):
        raise NotImplementedError

    def in_place_action(self, state) -> Optional[int]:
        """An action that leaves `state` unchanged at zero treasure, if any"""
        return None

    def __repr__(self):
        return f"{type(self).__name__}(env_id={self.env_id!r}, H={self.spec.horizon}, gamma={self.spec.gamma})"


# =============================================================================
# DEEP SEA TREASURE
# =============================================================================

@dataclass(frozen=True)
class DstMap:
    """Grid layout: rows x cols, blocked cells, treasures, start"""
    name: str
    rows: int
    cols: int
    start: Tuple[int, int]
    blocked: frozenset
    treasures: Tuple[Tuple[int, int, float], ...]

    @property
    def treasure_values(self) -> Dict[Tuple[int, int], float]:
        return {(r, c): v for r, c, v in self.treasures}

    def is_open(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols and (row, col) not in self.blocked

    @property
    def cell_count(self) -> int:
        return self.rows * self.cols

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DstMap':
        if not isinstance(data, dict):
            raise InvalidMap("DST map must be a mapping with 'rows' and 'treasures'")
        grid = data.get('rows')
        if not grid or not isinstance(grid, list):
            raise InvalidMap("DST map needs a non-empty 'rows' list")

        width = len(grid[0])
        start = None
        blocked = set()
        for r, line in enumerate(grid):
            if not isinstance(line, str):
                raise InvalidMap(f"Row {r} is not a string")
            if len(line) != width:
                raise InvalidMap(f"Row {r} has width {len(line)}, expected {width}")
            for c, ch in enumerate(line):
                if ch == '#':
                    blocked.add((r, c))
                elif ch == 'S':
                    if start is not None:
                        raise InvalidMap(f"Second start cell at ({r}, {c})")
                    start = (r, c)
                elif ch != '.':
                    raise InvalidMap(f"Unknown cell {ch!r} at ({r}, {c})")
        if start is None:
            raise InvalidMap("DST map has no start cell 'S'")

        treasures = []
        seen = set()
        for entry in data.get('treasures') or []:
            try:
                r, c, v = entry
                r, c, v = int(r), int(c), float(v)
            except (TypeError, ValueError):
                raise InvalidMap(f"Treasure entry must be [row, col, value], got {entry!r}")
            if not (0 <= r < len(grid) and 0 <= c < width):
                raise InvalidMap(f"Treasure at ({r}, {c}) is outside the grid")
            if (r, c) in blocked:
                raise InvalidMap(f"Treasure at ({r}, {c}) sits on a blocked cell")
            if (r, c) == start:
                raise InvalidMap(f"Start cell ({r}, {c}) cannot hold a treasure")
            if (r, c) in seen:
                raise InvalidMap(f"Duplicate treasure at ({r}, {c})")
            if not math.isfinite(v):
                raise InvalidMap(f"Treasure value at ({r}, {c}) is not finite")
            seen.add((r, c))
            treasures.append((r, c, v))
        if not treasures:
            raise InvalidMap("DST map has no treasures")

        return cls(
            name=str(data.get('name', 'custom')),
            rows=len(grid),
            cols=width,
            start=start,
            blocked=frozenset(blocked),
            treasures=tuple(treasures),
        )

    @classmethod
    def from_yaml(cls, yaml_content: str) -> 'DstMap':
        try:
            data = yaml.safe_load(yaml_content)
        except yaml.YAMLError as e:
            raise InvalidMap(f"Map YAML parse error: {e}")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> 'DstMap':
        try:
            with open(path, 'r') as f:
                text = f.read()
        except OSError as e:
            raise InvalidMap(f"Cannot read map file {path}: {e}")
        return cls.from_yaml(text)

    def to_dict(self) -> Dict[str, Any]:
        grid = []
        for r in range(self.rows):
            line = ''
            for c in range(self.cols):
                if (r, c) == self.start:
                    line += 'S'
                elif (r, c) in self.blocked:
                    line += '#'
                else:
                    line += '.'
            grid.append(line)
        return {
            'name': self.name,
            'rows': grid,
            'treasures': [[r, c, repr(v)] for r, c, v in self.treasures],
        }

    def shortest_distances(self) -> Dict[Tuple[int, int], int]:
        """BFS step counts from the start; treasure cells end a path"""
        treasure_cells = self.treasure_values
        dist = {self.start: 0}
        queue = deque([self.start])
        while queue:
            cell = queue.popleft()
            if cell in treasure_cells:
                continue
            for dr, dc in DST_MOVES.values():
                nxt = (cell[0] + dr, cell[1] + dc)
                if self.is_open(*nxt) and nxt not in dist:
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return dist

    def is_depth_monotone(self) -> bool:
        """True when treasure values strictly increase with shortest-path distance"""
        dist = self.shortest_distances()
        reachable = sorted((dist[(r, c)], v) for r, c, v in self.treasures if (r, c) in dist)
        return all(b[0] > a[0] and b[1] > a[1] for a, b in zip(reachable, reachable[1:]))


class DeepSeaTreasure(MomdpEnv):
    """
    Submarine gridworld, state = (row, col).

    Moving off-grid or into seabed keeps the submarine in place and still
    costs the step penalty. Entering a treasure cell pays the treasure and
    ends the episode.
    """

    def __init__(self, dst_map: DstMap, horizon: int = 100, gamma: float = 0.99):
        self.map = dst_map
        self._treasures = dst_map.treasure_values
        super().__init__(MomdpSpec(
            state_description='(row, col)',
            action_count=4,
            objective_count=2,
            horizon=horizon,
            gamma=gamma,
            initial_state=dst_map.start,
        ))
        self.env_id = f"dst-{dst_map.name}"

    def _transition(self, state, action):
        dr, dc = DST_MOVES[action]
        nxt = (state[0] + dr, state[1] + dc)
        if not self.map.is_open(*nxt):
            nxt = state
        treasure = self._treasures.get(nxt)
        if treasure is not None:
            return nxt, (treasure, DST_STEP_PENALTY), True
        return nxt, (0.0, DST_STEP_PENALTY), False

    def in_place_action(self, state) -> Optional[int]:
        for action in sorted(DST_MOVES):
            dr, dc = DST_MOVES[action]
            if not self.map.is_open(state[0] + dr, state[1] + dc):
                return action
        return None


def dst_from_config(dst_map: DstMap, horizon: int, gamma: float) -> DeepSeaTreasure:
    if not isinstance(dst_map, DstMap):
        raise InvalidMap(f"Expected a DstMap, got {type(dst_map).__name__}")
    return DeepSeaTreasure(dst_map, horizon, gamma)


# =============================================================================
# MO COMBINATION LOCK
# =============================================================================

@dataclass(frozen=True)
class LockSpec:
    """
    Lock construction.

    Objective-1 path repeats a_o1 for all H steps, objective-2 path repeats
    a_o2. The balanced path follows a_o1 and switches to a_balance at the
    last step (step H-1).
    """
    horizon: int
    a_o1: int = 1
    a_o2: int = 2
    a_balance: int = 0
    outcomes: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(LOCK_OUTCOMES))

    def __post_init__(self):
        if self.horizon < 2:
            raise HorizonTooSmall(f"Combination lock needs H >= 2, got {self.horizon}")
        actions = {self.a_o1, self.a_o2, self.a_balance}
        if len(actions) != 3 or not actions <= {0, 1, 2}:
            raise EnvError(f"Lock actions must be distinct values in 0..2: "
                           f"o1={self.a_o1} o2={self.a_o2} balance={self.a_balance}")

    def good_sequences(self) -> Dict[str, List[int]]:
        H = self.horizon
        return {
            TRACK_O1: [self.a_o1] * H,
            TRACK_O2: [self.a_o2] * H,
            TRACK_BALANCE: [self.a_o1] * (H - 1) + [self.a_balance],
        }


class CombinationLock(MomdpEnv):
    """State = (depth, track); reward only on the last step of a good path"""

    def __init__(self, lock: LockSpec, gamma: float = 0.99):
        self.lock = lock
        super().__init__(MomdpSpec(
            state_description='(depth, track)',
            action_count=3,
            objective_count=2,
            horizon=lock.horizon,
            gamma=gamma,
            initial_state=(0, TRACK_START),
        ))
        self.env_id = f"lock-H{lock.horizon}"

    def _next_track(self, depth: int, track: str, action: int) -> str:
        lock = self.lock
        last = depth == lock.horizon - 1
        if track == TRACK_START:
            if action == lock.a_o1:
                return TRACK_O1
            if action == lock.a_o2:
                return TRACK_O2
            if last and action == lock.a_balance:
                return TRACK_BALANCE
            return TRACK_DEAD
        if track == TRACK_O1:
            if action == lock.a_o1:
                return TRACK_O1
            if last and action == lock.a_balance:
                return TRACK_BALANCE
            return TRACK_DEAD
        if track == TRACK_O2 and action == lock.a_o2:
            return TRACK_O2
        return TRACK_DEAD

    def _transition(self, state, action):
        depth, track = state
        track = self._next_track(depth, track, action)
        depth += 1
        if depth == self.lock.horizon and track in self.lock.outcomes:
            return (depth, track), self.lock.outcomes[track], True
        return (depth, track), (0.0, 0.0), depth >= self.lock.horizon


def lock_env(horizon: int, gamma: float = 0.99, **actions) -> CombinationLock:
    return CombinationLock(LockSpec(horizon, **actions), gamma)


def make_env(kind: str, horizon: int, gamma: float, map_path: Optional[str] = None,
             lock_actions: Optional[Dict[str, int]] = None) -> MomdpEnv:
    """Build an environment from config-level parameters"""
    if kind == 'dst':
        dst_map = DstMap.load(map_path or DEFAULT_DST_MAP)
        return dst_from_config(dst_map, horizon, gamma)
    if kind == 'lock':
        return lock_env(horizon, gamma, **(lock_actions or {}))
    raise EnvError(f"Unknown environment kind {kind!r} (expected 'dst' or 'lock')")


# =============================================================================
# ROLLOUTS
# =============================================================================

def discounted_return(rewards: Sequence[Sequence[float]], gamma: float, d: int) -> ValueVector:
    """Fold sum_t gamma^t r_t with t starting at 0"""
    value = [0.0] * d
    discount = 1.0
    for r in rewards:
        for i in range(d):
            value[i] += discount * r[i]
        discount *= gamma
    return make_value(value)


def rollout(env: MomdpEnv, policy: Callable[[Any, int], int],
            gamma: Optional[float] = None) -> Tuple[List[Transition], ValueVector]:
    """
    Run one episode from reset until terminal.

    `policy(state, step_index)` returns the action to take.
    """
    gamma = env.gamma if gamma is None else gamma
    state = env.reset()
    trajectory = []
    while True:
        tr = env.step(policy(state, len(trajectory)))
        trajectory.append(tr)
        state = tr.next_state
        if tr.terminal:
            break
    value = discounted_return([tr.reward for tr in trajectory], gamma, env.objective_count)
    return trajectory, value


def replay_actions(env: MomdpEnv, actions: Sequence[int],
                   gamma: Optional[float] = None) -> Tuple[List[Transition], ValueVector]:
    """
    Replay a fixed action sequence, stopping at terminal or when the actions
    run out.
    """
    gamma = env.gamma if gamma is None else gamma
    env.reset()
    trajectory = []
    for action in actions:
        tr = env.step(action)
        trajectory.append(tr)
        if tr.terminal:
            break
    value = discounted_return([tr.reward for tr in trajectory], gamma, env.objective_count)
    return trajectory, value
