"""
Brute-force ground truth for the bundled environments.

The oracle enumerates outcomes directly (breadth-first shortest paths to
every treasure in Deep Sea Treasure, the three good sequences of the
combination lock), evaluates them by replay, and derives the CCS, its
corner weights and the expected utility over the evaluation grid. It never
touches the learner.

It also generates demonstration sets of chosen size and quality.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from demo_store import DemoRepository, init_repository
from mo_core import (
    ValueVector, WeightVector, ccs_prune, corner_weights, equidistant_weights,
    expected_utility, format_float,
)
from momdp_envs import DST_MOVES, CombinationLock, DeepSeaTreasure, MomdpEnv, replay_actions

logger = logging.getLogger(__name__)

MAX_ORACLE_CELLS = 15 * 15
MAX_ORACLE_LOCK_HORIZON = 12

QUALITY_OPTIMAL = 'optimal'
QUALITY_MEDIUM = 'medium'
QUALITY_LOW = 'low'
QUALITIES = (QUALITY_OPTIMAL, QUALITY_MEDIUM, QUALITY_LOW)

# Wasted steps prepended per quality tier
DEFAULT_QUALITY_PADS = {
    QUALITY_OPTIMAL: 0,
    QUALITY_MEDIUM: 2,
    QUALITY_LOW: 6,
}


class OracleError(RuntimeError):
    """Base class for oracle errors"""


class TooLargeForOracle(OracleError):
    pass


class CountExceedsAvailable(OracleError):
    pass


class QualityNotSupported(OracleError):
    pass


@dataclass
class OracleResult:
    """Exhaustive-enumeration ground truth for one environment"""
    success: bool
    env_id: str = ''
    ccs: List[ValueVector] = field(default_factory=list)
    ccs_actions: List[Tuple[int, ...]] = field(default_factory=list)
    corner_weights: List[WeightVector] = field(default_factory=list)
    eu: Optional[float] = None
    eval_weight_count: int = 0
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'success': self.success,
            'env_id': self.env_id,
            'ccs': [[format_float(c) for c in v] for v in self.ccs],
            'ccs_actions': [list(a) for a in self.ccs_actions],
            'corner_weights': [[format_float(c) for c in w] for w in self.corner_weights],
            'eu': format_float(self.eu) if self.eu is not None else None,
            'eval_weight_count': self.eval_weight_count,
            'errors': self.errors,
            'warnings': self.warnings,
            'stats': self.stats,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=None, sort_keys=False, width=1000)


def _check_size(env: MomdpEnv):
    if isinstance(env, DeepSeaTreasure):
        if env.map.cell_count > MAX_ORACLE_CELLS:
            raise TooLargeForOracle(
                f"DST map {env.map.rows}x{env.map.cols} exceeds the oracle limit of {MAX_ORACLE_CELLS} cells")
    elif isinstance(env, CombinationLock):
        if env.horizon > MAX_ORACLE_LOCK_HORIZON:
            raise TooLargeForOracle(
                f"Lock horizon {env.horizon} exceeds the oracle limit of {MAX_ORACLE_LOCK_HORIZON}")
    else:
        raise TooLargeForOracle(f"No oracle for {type(env).__name__}")


def _dst_paths(env: DeepSeaTreasure) -> List[Tuple[int, ...]]:
    """Shortest action sequence to every treasure reachable within the horizon"""
    dst_map = env.map
    treasures = dst_map.treasure_values
    parents: Dict[Tuple[int, int], Optional[Tuple[Tuple[int, int], int]]] = {dst_map.start: None}
    queue = deque([dst_map.start])
    while queue:
        cell = queue.popleft()
        if cell in treasures:
            continue
        for action in sorted(DST_MOVES):
            dr, dc = DST_MOVES[action]
            nxt = (cell[0] + dr, cell[1] + dc)
            if dst_map.is_open(*nxt) and nxt not in parents:
                parents[nxt] = (cell, action)
                queue.append(nxt)

    paths = []
    for r, c, _ in dst_map.treasures:
        if (r, c) not in parents:
            logger.warning(f"[ORACLE] treasure at ({r}, {c}) is unreachable")
            continue
        actions = []
        cell = (r, c)
        while parents[cell] is not None:
            cell, action = parents[cell]
            actions.append(action)
        actions.reverse()
        if len(actions) > env.horizon:
            logger.warning(f"[ORACLE] treasure at ({r}, {c}) needs {len(actions)} steps > H={env.horizon}")
            continue
        paths.append(tuple(actions))

    # Never collecting a treasure: wait at the start for the whole horizon
    wait = env.in_place_action(dst_map.start)
    if wait is not None:
        paths.append((wait,) * env.horizon)
    return paths


def enumerate_outcomes(env: MomdpEnv) -> List[Tuple[ValueVector, Tuple[int, ...]]]:
    """Every candidate outcome as (value, action sequence)"""
    _check_size(env)
    if isinstance(env, DeepSeaTreasure):
        sequences = _dst_paths(env)
    else:
        sequences = [tuple(s) for s in env.lock.good_sequences().values()]
    outcomes = []
    for actions in sequences:
        _, value = replay_actions(env, actions)
        outcomes.append((value, actions))
    return outcomes


def compute_oracle(env: MomdpEnv, eval_weight_count: int = 100) -> OracleResult:
    """Exact CCS, corner weights and EU of the environment"""
    outcomes = enumerate_outcomes(env)
    ccs = ccs_prune(outcomes)
    values = ccs.values
    eval_weights = equidistant_weights(env.objective_count, eval_weight_count)
    eu = expected_utility(values, eval_weights)
    result = OracleResult(
        success=True,
        env_id=env.env_id,
        ccs=values,
        ccs_actions=list(ccs.handles),
        corner_weights=list(corner_weights(values).weights),
        eu=eu,
        eval_weight_count=len(eval_weights),
        stats={'outcomes': len(outcomes), 'ccs_size': len(values)},
    )
    logger.info(f"[ORACLE] {env.env_id}: {len(outcomes)} outcomes, CCS size {len(values)}, EU={eu!r}")
    return result


def spread_indices(available: int, count: int) -> List[int]:
    """count indices spread evenly over range(available), both ends included"""
    if count == 1:
        return [0]
    return [int(i * (available - 1) / (count - 1) + 0.5) for i in range(count)]


def gen_demos(env: MomdpEnv, quality: str = QUALITY_OPTIMAL, count: Optional[int] = None,
              pads: Optional[Dict[str, int]] = None) -> List[Tuple[int, ...]]:
    """
    Demonstrations realizing the oracle CCS.

    Entries are ordered lexicographically by value and `count` of them are
    picked evenly spread. Medium and low quality prepend wasted in-place
    steps at the start cell.
    """
    if quality not in QUALITIES:
        raise OracleError(f"Unknown demo quality {quality!r} (expected one of {QUALITIES})")
    pads = dict(DEFAULT_QUALITY_PADS, **(pads or {}))
    oracle = compute_oracle(env)
    entries = sorted(zip(oracle.ccs, oracle.ccs_actions), key=lambda e: tuple(e[0]))
    if count is None:
        count = len(entries)
    if count < 1:
        raise OracleError(f"Demo count must be >= 1, got {count}")
    if count > len(entries):
        raise CountExceedsAvailable(f"Asked for {count} demos, the oracle CCS has {len(entries)}")

    chosen = [entries[i][1] for i in spread_indices(len(entries), count)]
    pad = pads[quality]
    if pad == 0:
        return [tuple(a) for a in chosen]

    wait = env.in_place_action(env.spec.initial_state)
    if wait is None:
        raise QualityNotSupported(f"{env.env_id} has no in-place action to pad demonstrations with")
    demos = []
    for actions in chosen:
        padded = (wait,) * pad + tuple(actions)
        if len(padded) > env.horizon:
            raise OracleError(f"Padded demo needs {len(padded)} steps > H={env.horizon}")
        demos.append(padded)
    return demos


def demo_repository(env: MomdpEnv, quality: str = QUALITY_OPTIMAL, count: Optional[int] = None,
                    pads: Optional[Dict[str, int]] = None) -> DemoRepository:
    """gen_demos, evaluated into a repository ready to save"""
    return init_repository(env, gen_demos(env, quality, count, pads))


def oracle_eu_or_none(env: MomdpEnv, eval_weight_count: int = 100) -> Optional[float]:
    try:
        return compute_oracle(env, eval_weight_count).eu
    except TooLargeForOracle as e:
        logger.debug(f"[ORACLE] skipped: {e}")
        return None
