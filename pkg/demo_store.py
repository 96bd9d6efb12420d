"""
Guide-policy repository for DG-MORL.

Demonstrations are action sequences replayed in a deterministic
environment, stored with their exact discounted value. The repository
keeps every demonstration it has ever seen (inactive ones included, as an
audit trail) and tracks which ones sit on the convex coverage set of all
stored values. Only active demonstrations are offered as guides.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from mo_core import (
    CcsSet, ValueVector, WeightVector, ccs_prune, format_float, make_value, utility,
)
from momdp_envs import MomdpEnv, replay_actions

logger = logging.getLogger(__name__)

ORIGIN_PRIOR = 'prior'
ORIGIN_SELF_EVOLVED = 'self_evolved'
ORIGINS = (ORIGIN_PRIOR, ORIGIN_SELF_EVOLVED)

DEMO_ID_LENGTH = 16


class DemoStoreError(ValueError):
    """Base class for demonstration repository errors"""


class EmptyActionList(DemoStoreError):
    pass


class TooFewDemos(DemoStoreError):
    pass


class EmptyRepository(DemoStoreError):
    pass


class RepositoryIoError(DemoStoreError):
    pass


class RepositoryFormatError(DemoStoreError):
    pass


class ValueMismatch(DemoStoreError):
    pass


def demo_id(env_id: str, actions: Sequence[int]) -> str:
    """Stable digest of (env_id, actions)"""
    text = env_id + '|' + ','.join(str(int(a)) for a in actions)
    return hashlib.sha1(text.encode('utf-8')).hexdigest()[:DEMO_ID_LENGTH]


@dataclass
class Demonstration:
    env_id: str
    actions: Tuple[int, ...]
    value: ValueVector
    origin: str = ORIGIN_PRIOR
    created_round: int = 0
    active: bool = True
    id: str = ''

    def __post_init__(self):
        self.actions = tuple(int(a) for a in self.actions)
        if not self.actions:
            raise EmptyActionList("Demonstration needs at least one action")
        if self.origin not in ORIGINS:
            raise RepositoryFormatError(f"Unknown demonstration origin {self.origin!r}")
        if not self.id:
            self.id = demo_id(self.env_id, self.actions)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'origin': self.origin,
            'round': self.created_round,
            'active': self.active,
            'actions': list(self.actions),
            'value': [format_float(c) for c in self.value],
        }


def evaluate_demo(env: MomdpEnv, actions: Sequence[int], gamma: Optional[float] = None) -> ValueVector:
    """Exact discounted return of replaying `actions` (truncated at terminal or H)"""
    if len(actions) == 0:
        raise EmptyActionList("Cannot evaluate an empty action list")
    _, value = replay_actions(env, actions, gamma)
    return value


def executed_actions(env: MomdpEnv, actions: Sequence[int],
                     gamma: Optional[float] = None) -> Tuple[Tuple[int, ...], ValueVector]:
    """The actions that actually ran before the episode ended, and their value"""
    if len(actions) == 0:
        raise EmptyActionList("Cannot evaluate an empty action list")
    trajectory, value = replay_actions(env, actions, gamma)
    return tuple(tr.action for tr in trajectory), value


class DemoRepository:
    """
    The guide set: demonstrations plus the CCS over their values.

    A demonstration is active iff its value equals a CCS entry value, so
    demonstrations that tie on value are active together.
    """

    def __init__(self, env_id: str, gamma: float, objective_count: int):
        self.env_id = env_id
        self.gamma = gamma
        self.objective_count = objective_count
        self.demos: List[Demonstration] = []
        self.ccs: Optional[CcsSet] = None
        self._ids = set()

    def __len__(self):
        return len(self.demos)

    def __repr__(self):
        return (f"DemoRepository(env_id={self.env_id!r}, demos={len(self.demos)}, "
                f"active={len(self.active_demos())}, ccs={len(self.ccs) if self.ccs else 0})")

    def __eq__(self, other):
        if not isinstance(other, DemoRepository):
            return NotImplemented
        return (self.env_id == other.env_id and self.gamma == other.gamma
                and self.objective_count == other.objective_count
                and [d.to_dict() for d in self.demos] == [d.to_dict() for d in other.demos])

    def get(self, id: str) -> Optional[Demonstration]:
        for demo in self.demos:
            if demo.id == id:
                return demo
        return None

    def active_demos(self) -> List[Demonstration]:
        return [demo for demo in self.demos if demo.active]

    def active_values(self) -> List[ValueVector]:
        return [demo.value for demo in self.demos if demo.active]

    def ccs_values(self) -> List[ValueVector]:
        return self.ccs.values if self.ccs else []

    def _insert(self, demo: Demonstration) -> bool:
        if demo.id in self._ids:
            return False
        self._ids.add(demo.id)
        self.demos.append(demo)
        return True

    def refresh_ccs(self) -> CcsSet:
        if not self.demos:
            raise EmptyRepository("Repository holds no demonstrations")
        self.ccs = ccs_prune([(demo.value, demo.id) for demo in self.demos])
        return self.ccs

    def _on_ccs(self, value: ValueVector) -> bool:
        return any(tuple(value) == tuple(v) for v in self.ccs_values())

    def select_guide(self, w: WeightVector, u_e: float) -> Demonstration:
        """Active demo with the largest improvement utility(value, w) - u_e"""
        best = None
        best_gain = None
        for demo in self.demos:
            if not demo.active:
                continue
            gain = utility(demo.value, w) - u_e
            if best is None or gain > best_gain:
                best, best_gain = demo, gain
        if best is None:
            raise EmptyRepository("No active demonstration to guide with")
        return best

    def max_active_utility(self, w: WeightVector) -> float:
        values = self.active_values()
        if not values:
            raise EmptyRepository("No active demonstration")
        return max(utility(v, w) for v in values)

    def absorb(self, actions: Sequence[int], value: ValueVector, round: int,
               env: Optional[MomdpEnv] = None) -> bool:
        """
        Add a self-generated trajectory as a demonstration.

        Returns True iff the new value is on the updated CCS. Previously
        active demos keep their flag until prune(). With `env` the value is
        checked against a replay of the actions first.
        """
        if env is not None:
            replayed = evaluate_demo(env, actions, self.gamma)
            if tuple(replayed) != tuple(value):
                raise ValueMismatch(f"Absorbed value {list(value)} != replayed {list(replayed)}")
        demo = Demonstration(self.env_id, tuple(actions), value,
                             origin=ORIGIN_SELF_EVOLVED, created_round=round)
        if not self._insert(demo):
            logger.debug(f"[REPO] duplicate trajectory {demo.id} ignored")
            return False
        self.refresh_ccs()
        demo.active = self._on_ccs(value)
        logger.debug(f"[REPO] absorbed {demo.id} value={list(value)} active={demo.active}")
        return demo.active

    def prune(self) -> int:
        """Deactivate demos whose values fell off the CCS; returns the count"""
        if not self.demos:
            return 0
        self.refresh_ccs()
        count = 0
        for demo in self.demos:
            if demo.active and not self._on_ccs(demo.value):
                demo.active = False
                count += 1
        if count:
            logger.debug(f"[REPO] pruned {count} dominated demonstration(s)")
        return count

    # -------------------------------------------------------------------------
    # Persistence
    # -------------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            'env_id': self.env_id,
            'gamma': format_float(self.gamma),
            'objective_count': self.objective_count,
            'demos': [demo.to_dict() for demo in self.demos],
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=None, sort_keys=False, width=1000)

    def save(self, path: str):
        try:
            with open(path, 'w') as f:
                f.write(self.to_yaml())
        except OSError as e:
            raise RepositoryIoError(f"Cannot write repository {path}: {e}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], env: Optional[MomdpEnv] = None) -> 'DemoRepository':
        if not isinstance(data, dict):
            raise RepositoryFormatError("Repository file must be a mapping")
        try:
            repo = cls(str(data['env_id']), float(data['gamma']), int(data['objective_count']))
            items = data.get('demos') or []
            for item in items:
                value = make_value(float(c) for c in item['value'])
                if len(value) != repo.objective_count:
                    raise RepositoryFormatError(
                        f"Demo {item.get('id')} has {len(value)} objectives, expected {repo.objective_count}")
                demo = Demonstration(
                    env_id=repo.env_id,
                    actions=tuple(int(a) for a in item['actions']),
                    value=value,
                    origin=str(item.get('origin', ORIGIN_PRIOR)),
                    created_round=int(item.get('round', 0)),
                    active=bool(item.get('active', True)),
                    id=str(item['id']),
                )
                if not repo._insert(demo):
                    raise RepositoryFormatError(f"Duplicate demo id {demo.id}")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DemoStoreError):
                raise
            raise RepositoryFormatError(f"Malformed repository: {e}")

        if env is not None:
            if env.env_id != repo.env_id:
                raise RepositoryFormatError(f"Repository is for {repo.env_id}, not {env.env_id}")
            for demo in repo.demos:
                replayed = evaluate_demo(env, demo.actions, repo.gamma)
                if tuple(replayed) != tuple(demo.value):
                    raise ValueMismatch(
                        f"Demo {demo.id}: stored {list(demo.value)} != replayed {list(replayed)}")
        if repo.demos:
            repo.refresh_ccs()
        return repo

    @classmethod
    def load(cls, path: str, env: Optional[MomdpEnv] = None) -> 'DemoRepository':
        try:
            with open(path, 'r') as f:
                text = f.read()
        except OSError as e:
            raise RepositoryIoError(f"Cannot read repository {path}: {e}")
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise RepositoryFormatError(f"Repository YAML parse error: {e}")
        return cls.from_dict(data, env)


def init_repository(env: MomdpEnv, demo_actions: Sequence[Sequence[int]],
                    gamma: Optional[float] = None) -> DemoRepository:
    """
    Evaluate prior demonstrations and build the initial guide set.

    Actions beyond the end of an episode are dropped, so each stored demo
    is exactly what ran. Identical sequences collapse to one demo.
    """
    gamma = env.gamma if gamma is None else gamma
    if len(demo_actions) < 1:
        raise TooFewDemos("At least one demonstration is required")
    if len(demo_actions) < env.objective_count:
        logger.warning(f"[REPO] {len(demo_actions)} demonstration(s) for "
                       f"{env.objective_count} objectives; at least one per objective is recommended")

    repo = DemoRepository(env.env_id, gamma, env.objective_count)
    for actions in demo_actions:
        executed, value = executed_actions(env, actions, gamma)
        repo._insert(Demonstration(env.env_id, executed, value, origin=ORIGIN_PRIOR, created_round=0))

    repo.refresh_ccs()
    for demo in repo.demos:
        demo.active = repo._on_ccs(demo.value)
    logger.info(f"[REPO] {len(repo.demos)} demonstration(s), {len(repo.active_demos())} on the CCS")
    return repo
