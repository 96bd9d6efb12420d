"""
DG-MORL driver.

Each round picks the corner weight where the agent trails the guide set
the most, hands the first h steps of the best guide demonstration to the
episode, and lets the exploration policy finish it. Whenever the greedy
mixed policy keeps at least beta of the guide's utility, h rolls back by
the rollback span, until the exploration policy runs the whole episode on
its own. Trajectories that pass are offered to the guide set, which keeps
only what lies on the convex coverage set.

Also hosts the 0-initialized epsilon-greedy baseline, which trains the same
learner without demonstrations.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from demo_store import DemoRepository, Demonstration, EmptyRepository, init_repository
from learner import (
    DEFAULT_ALPHA, DEFAULT_BATCH, DEFAULT_CAPACITY, DEFAULT_TRAIN_EVERY,
    EpsilonSchedule, QTable, ReplayBuffer, act_epsilon, greedy_action,
    policy_set_values, policy_value, train_batch, weight_key,
)
from metrics import EVENT_EVAL, EVENT_ROUND, EVENT_SUMMARY, MetricsLog, eval_record
from mo_core import (
    TOLERANCE, CcsSet, ValueVector, WeightVector, corner_weights, equidistant_weights,
    expected_utility, max_utility_over_set, utility,
)
from momdp_envs import MomdpEnv, Transition, discounted_return

logger = logging.getLogger(__name__)

MODE_DG_MORL = 'dg_morl'
MODE_BASELINE = 'epsilon_greedy_0init'
MODES = (MODE_DG_MORL, MODE_BASELINE)

PASS_INCLUSIVE = 'inclusive'
PASS_STRICT = 'strict'
PASS_RULES = (PASS_INCLUSIVE, PASS_STRICT)


class CurriculumError(RuntimeError):
    """Base class for curriculum errors"""


class EmptyCcs(CurriculumError):
    pass


class BudgetExhausted(CurriculumError):
    pass


class EmptyPolicySet(CurriculumError):
    pass


class InvalidCurriculumConfig(CurriculumError, ValueError):
    pass


# =============================================================================
# CONFIGURATION AND STATE
# =============================================================================

@dataclass(frozen=True)
class BetaSchedule:
    start: float = 1.0
    end: float = 1.0
    ramp_rounds: int = 0


@dataclass
class CurriculumConfig:
    max_steps: int = 40000
    rollback_span: int = 2
    beta_start: float = 1.0
    beta_end: float = 1.0
    beta_ramp_rounds: int = 0
    eval_period: int = 4000
    rollouts_per_h: int = 2
    max_attempts_per_h: int = 50
    eval_weight_count: int = 100
    seed: int = 0
    self_evolving: bool = True
    pass_rule: str = PASS_STRICT
    agent_corners: bool = True
    stop_when_converged: bool = False

    def __post_init__(self):
        if self.rollback_span < 1:
            raise InvalidCurriculumConfig(f"rollback_span must be >= 1, got {self.rollback_span}")
        if not 0.0 < self.beta_start <= self.beta_end <= 1.0:
            raise InvalidCurriculumConfig(
                f"Need 0 < beta_start <= beta_end <= 1, got {self.beta_start} / {self.beta_end}")
        if self.beta_ramp_rounds < 0:
            raise InvalidCurriculumConfig(f"beta_ramp_rounds must be >= 0, got {self.beta_ramp_rounds}")
        if self.max_steps < 0:
            raise InvalidCurriculumConfig(f"max_steps must be >= 0, got {self.max_steps}")
        if self.eval_period < 1:
            raise InvalidCurriculumConfig(f"eval_period must be >= 1, got {self.eval_period}")
        if self.rollouts_per_h < 1 or self.max_attempts_per_h < 1:
            raise InvalidCurriculumConfig("rollouts_per_h and max_attempts_per_h must be >= 1")
        if self.eval_weight_count < 2:
            raise InvalidCurriculumConfig(f"eval_weight_count must be >= 2, got {self.eval_weight_count}")
        if self.pass_rule not in PASS_RULES:
            raise InvalidCurriculumConfig(f"pass_rule must be one of {PASS_RULES}, got {self.pass_rule!r}")

    @property
    def beta_schedule(self) -> BetaSchedule:
        return BetaSchedule(self.beta_start, self.beta_end, self.beta_ramp_rounds)


@dataclass
class LearnerConfig:
    alpha: float = DEFAULT_ALPHA
    batch: int = DEFAULT_BATCH
    capacity: int = DEFAULT_CAPACITY
    train_every: int = DEFAULT_TRAIN_EVERY
    epsilon_start: float = 1.0
    epsilon_end: float = 0.0
    epsilon_anneal_steps: int = 50000

    def __post_init__(self):
        if self.train_every < 1:
            raise InvalidCurriculumConfig(f"train_every must be >= 1, got {self.train_every}")
        if self.batch < 0:
            raise InvalidCurriculumConfig(f"batch must be >= 0, got {self.batch}")

    @property
    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.epsilon_start, self.epsilon_end, self.epsilon_anneal_steps)


@dataclass
class CurriculumState:
    round: int = 0
    h: int = 0
    w_c: Optional[WeightVector] = None
    u_theta: float = 0.0
    beta: float = 1.0
    global_step: int = 0
    eval_step: int = 0
    ccs: Optional[CcsSet] = None
    log: Optional[MetricsLog] = None
    pending_train_steps: int = 0
    converged_at: Optional[int] = None
    # weight key -> (weight, last max active-demo utility)
    tracked: Dict[Tuple[int, ...], Tuple[WeightVector, float]] = field(default_factory=dict)
    monotonicity_violations: int = 0


@dataclass
class TrainResult:
    """Outcome of a training run"""
    success: bool
    log: MetricsLog
    q: Optional[QTable] = None
    repo: Optional[DemoRepository] = None
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        return {
            'success': self.success,
            'errors': self.errors,
            'warnings': self.warnings,
            'stats': self.stats,
        }


def _weight_list(w: Optional[WeightVector]):
    return list(w.components) if w is not None else None


# =============================================================================
# CORNER-WEIGHT CANDIDATES
# =============================================================================

def corner_gaps(ccs_values: Sequence[ValueVector], agent_values: Sequence[ValueVector],
                agent_corners: bool = True) -> List[Tuple[WeightVector, float]]:
    """
    Utility gap Delta(w) = max over the CCS - max over the agent at every
    candidate weight, in enumeration order.

    Candidates are the CCS corner weights, then (when agent_corners is set)
    the agent's own corner weights not already listed. An empty agent set
    counts as utility 0.
    """
    if not ccs_values:
        raise EmptyCcs("Candidate weights need a non-empty CCS")
    candidates = list(corner_weights(ccs_values).weights)
    if agent_corners and agent_values:
        for w in corner_weights(agent_values).weights:
            if not any(_same_weight(w, c) for c in candidates):
                candidates.append(w)

    gaps = []
    for w in candidates:
        best, _ = max_utility_over_set(ccs_values, w)
        agent_best = max_utility_over_set(agent_values, w)[0] if agent_values else 0.0
        gaps.append((w, best - agent_best))
    return gaps


def _same_weight(a: WeightVector, b: WeightVector) -> bool:
    return all(abs(x - y) <= TOLERANCE for x, y in zip(a, b))


def candidate_weight(ccs_values: Sequence[ValueVector], agent_values: Sequence[ValueVector],
                     agent_corners: bool = True) -> WeightVector:
    """Candidate weight with the largest gap, ties to the first enumerated"""
    gaps = corner_gaps(ccs_values, agent_values, agent_corners)
    best_w, best_gap = gaps[0]
    for w, gap in gaps[1:]:
        if gap > best_gap:
            best_w, best_gap = w, gap
    return best_w


def update_beta(schedule: BetaSchedule, round: int) -> float:
    """Linear passing-percentage ramp, clamped at the end value"""
    if schedule.ramp_rounds <= 0:
        return schedule.end
    return min(schedule.end, schedule.start + (schedule.end - schedule.start) * round / schedule.ramp_rounds)


def passes(u: float, u_theta: float, beta: float, rule: str = PASS_STRICT) -> bool:
    threshold = u_theta * beta
    if rule == PASS_STRICT:
        return u > threshold
    return u >= threshold


# =============================================================================
# MIXED POLICY
# =============================================================================

def _guide_prefix(guide: Optional[Demonstration], h: int) -> Sequence[int]:
    if guide is None or h <= 0:
        return ()
    return guide.actions[:h]


def mixed_rollout(env: MomdpEnv, guide: Optional[Demonstration], q: QTable, h: int,
                  w_c: WeightVector, schedule: EpsilonSchedule, buffer: ReplayBuffer,
                  rng: np.random.Generator, global_step: int = 0,
                  gamma: Optional[float] = None) -> Tuple[List[Transition], ValueVector, int]:
    """
    Guide actions for the first h steps (fewer if the guide is shorter),
    then epsilon-greedy exploration conditioned on w_c.

    Every transition goes into the buffer tagged with w_c. Epsilon follows
    the global step counter, advancing per environment step.
    """
    gamma = env.gamma if gamma is None else gamma
    prefix = _guide_prefix(guide, h)
    state = env.reset()
    trajectory = []
    while True:
        t = len(trajectory)
        if t < len(prefix):
            action = prefix[t]
        else:
            action = act_epsilon(q, state, w_c, global_step + t, rng, schedule)
        tr = env.step(action)
        trajectory.append(tr)
        buffer.push(tr, w_c)
        state = tr.next_state
        if tr.terminal:
            break
    value = discounted_return([tr.reward for tr in trajectory], gamma, env.objective_count)
    return trajectory, value, len(trajectory)


def greedy_mixed_rollout(env: MomdpEnv, guide: Optional[Demonstration], q: QTable, h: int,
                         w_c: WeightVector, gamma: Optional[float] = None) -> Tuple[List[Transition], ValueVector]:
    """Mixed policy with epsilon = 0; touches no buffer"""
    gamma = env.gamma if gamma is None else gamma
    prefix = _guide_prefix(guide, h)
    state = env.reset()
    trajectory = []
    while True:
        t = len(trajectory)
        action = prefix[t] if t < len(prefix) else greedy_action(q, state, w_c)
        tr = env.step(action)
        trajectory.append(tr)
        state = tr.next_state
        if tr.terminal:
            break
    value = discounted_return([tr.reward for tr in trajectory], gamma, env.objective_count)
    return trajectory, value


def evaluate_mixed(env: MomdpEnv, guide: Optional[Demonstration], q: QTable, h: int,
                   w_c: WeightVector, gamma: Optional[float] = None) -> float:
    _, value = greedy_mixed_rollout(env, guide, q, h, w_c, gamma)
    return utility(value, w_c)


# =============================================================================
# EVALUATION
# =============================================================================

def agent_policy_values(q: QTable, env: MomdpEnv, gamma: Optional[float] = None) -> List[ValueVector]:
    """Greedy value of every trained conditioning weight (empty if untrained)"""
    weights = q.trained_weights()
    if not weights:
        return []
    return policy_set_values(q, env, weights, gamma)


def evaluate_eu(q: QTable, env: MomdpEnv, eval_weights: Sequence[WeightVector],
                gamma: Optional[float] = None) -> float:
    """
    Expected utility of the exploration policy set alone.

    An untrained learner counts as the single zero-initialized policy.
    """
    if not eval_weights:
        raise EmptyPolicySet("Expected utility needs evaluation weights")
    values = agent_policy_values(q, env, gamma)
    if not values:
        values = [policy_value(q, env, eval_weights[0], gamma)]
    return expected_utility(values, eval_weights)


class CheckpointEvaluator:
    """Emits an eval record at every k * eval_period <= max_steps once training reaches it"""

    def __init__(self, cfg: CurriculumConfig, eval_env: MomdpEnv, eval_weights: Sequence[WeightVector],
                 repo: Optional[DemoRepository], log: MetricsLog):
        self.cfg = cfg
        self.eval_env = eval_env
        self.eval_weights = list(eval_weights)
        self.repo = repo
        self.log = log
        self.next_checkpoint = cfg.eval_period
        self.last_eu: Optional[float] = None

    def _emit(self, checkpoint: int, state: CurriculumState, q: QTable):
        eu = evaluate_eu(q, self.eval_env, self.eval_weights)
        state.eval_step = self.eval_env.total_steps
        self.last_eu = eu
        self.log.log_event(EVENT_EVAL, eval_record(
            global_step=checkpoint,
            eval_step=state.eval_step,
            env_steps=state.global_step,
            eu=eu,
            ccs_size=len(self.repo.ccs) if self.repo is not None and self.repo.ccs else 0,
            active_demos=len(self.repo.active_demos()) if self.repo is not None else 0,
            w_c=_weight_list(state.w_c),
            h_final=state.h,
            beta=state.beta,
            round=state.round,
        ))

    def baseline(self, state: CurriculumState, q: QTable):
        self._emit(0, state, q)

    def maybe_evaluate(self, state: CurriculumState, q: QTable):
        while self.next_checkpoint <= self.cfg.max_steps and state.global_step >= self.next_checkpoint:
            self._emit(self.next_checkpoint, state, q)
            self.next_checkpoint += self.cfg.eval_period

    def flush(self, state: CurriculumState, q: QTable):
        """Emit every remaining checkpoint with the current table"""
        while self.next_checkpoint <= self.cfg.max_steps:
            self._emit(self.next_checkpoint, state, q)
            self.next_checkpoint += self.cfg.eval_period
        if self.last_eu is None:
            self._emit(self.cfg.max_steps, state, q)


# =============================================================================
# ONE ROUND
# =============================================================================

@dataclass
class Learner:
    """The exploration policy bundle handed between rounds"""
    q: QTable
    buffer: ReplayBuffer
    cfg: LearnerConfig
    rng: np.random.Generator

    @property
    def schedule(self) -> EpsilonSchedule:
        return self.cfg.schedule


def _collect(env: MomdpEnv, guide: Optional[Demonstration], h: int, w_c: WeightVector,
             state: CurriculumState, learner: Learner, cfg: CurriculumConfig,
             evaluator: Optional[CheckpointEvaluator]) -> ValueVector:
    """One training rollout followed by its replay batches"""
    if state.global_step >= cfg.max_steps:
        raise BudgetExhausted(f"Training budget of {cfg.max_steps} steps used")
    _, value, steps = mixed_rollout(env, guide, learner.q, h, w_c, learner.schedule,
                                    learner.buffer, learner.rng, state.global_step)
    state.global_step += steps
    state.pending_train_steps += steps
    batches, state.pending_train_steps = divmod(state.pending_train_steps, learner.cfg.train_every)
    for _ in range(batches):
        train_batch(learner.q, learner.buffer, w_c, learner.cfg.alpha, env.gamma,
                    learner.cfg.batch, learner.rng)
    if evaluator is not None:
        evaluator.maybe_evaluate(state, learner.q)
    return value


def _track_monotonicity(state: CurriculumState, repo: DemoRepository):
    for key, (w, previous) in list(state.tracked.items()):
        current = repo.max_active_utility(w)
        if current < previous:
            state.monotonicity_violations += 1
            logger.warning(f"[CURRICULUM] guide utility at w={list(w)} dropped {previous!r} -> {current!r}")
        state.tracked[key] = (w, current)


def run_round(state: CurriculumState, env: MomdpEnv, repo: DemoRepository, learner: Learner,
              cfg: CurriculumConfig, eval_env: Optional[MomdpEnv] = None,
              evaluator: Optional[CheckpointEvaluator] = None) -> CurriculumState:
    """
    One outer iteration: pick w_c and a guide, roll h back while the mixed
    policy keeps passing, prune the guide set and advance beta.

    Raises BudgetExhausted after the round's bookkeeping when the training
    budget ran out mid-round.
    """
    eval_env = eval_env or env
    if not repo.active_demos():
        raise EmptyRepository("Demonstration repository has no active guide")

    agent_values = agent_policy_values(learner.q, eval_env)
    ccs_values = repo.ccs_values()
    state.ccs = repo.ccs
    w_c = candidate_weight(ccs_values, agent_values, cfg.agent_corners)
    u_e = max_utility_over_set(agent_values, w_c)[0] if agent_values else 0.0
    guide = repo.select_guide(w_c, u_e)
    u_theta = utility(guide.value, w_c)

    key = weight_key(w_c)
    if key not in state.tracked:
        state.tracked[key] = (w_c, repo.max_active_utility(w_c))

    state.w_c = w_c
    state.u_theta = u_theta
    state.h = min(env.horizon, len(guide.actions))
    h_start = state.h
    rollbacks = 0
    absorbed = 0
    # [h, u] of every evaluation that let h drop
    pass_trace = []
    exhausted = None
    # absorbed values are re-checked on a private copy so no counter moves
    replay_env = copy.copy(eval_env)
    logger.debug(f"[CURRICULUM] round {state.round}: w_c={list(w_c)} guide={guide.id} "
                 f"u_theta={u_theta!r} beta={state.beta!r} h={state.h}")

    try:
        while state.h >= 0:
            passed = False
            for _ in range(cfg.max_attempts_per_h):
                for _ in range(cfg.rollouts_per_h):
                    _collect(env, guide, state.h, w_c, state, learner, cfg, evaluator)
                trajectory, value = greedy_mixed_rollout(eval_env, guide, learner.q, state.h, w_c)
                u = utility(value, w_c)
                if passes(u, u_theta, state.beta, cfg.pass_rule):
                    passed = True
                    break
            if not passed:
                logger.debug(f"[CURRICULUM] h={state.h}: attempts exhausted")
                break
            logger.debug(f"[CURRICULUM] h={state.h}: u={u!r} passed threshold {u_theta * state.beta!r}")
            pass_trace.append([state.h, u])
            if cfg.self_evolving and repo.absorb([tr.action for tr in trajectory], value, state.round,
                                                 env=replay_env):
                absorbed += 1
            rollbacks += 1
            state.h -= cfg.rollback_span
    except BudgetExhausted as e:
        exhausted = e

    deactivated = repo.prune()
    state.ccs = repo.ccs
    state.eval_step = eval_env.total_steps
    _track_monotonicity(state, repo)

    if state.log is not None:
        state.log.log_event(EVENT_ROUND, {
            'round': state.round,
            'w_c': _weight_list(w_c),
            'guide': guide.id,
            'u_theta': u_theta,
            'h_start': h_start,
            'h_final': state.h,
            'rollbacks': rollbacks,
            'passes': pass_trace,
            'absorbed': absorbed,
            'deactivated': deactivated,
            'beta': state.beta,
            'global_step': state.global_step,
            'eval_step': state.eval_step,
            'tracked': [[list(w.components), u] for w, u in state.tracked.values()],
        })

    state.round += 1
    state.beta = update_beta(cfg.beta_schedule, state.round)
    if exhausted is not None:
        raise exhausted
    return state


# =============================================================================
# TRAINING LOOPS
# =============================================================================

def _new_learner(env: MomdpEnv, lcfg: LearnerConfig, seed: int) -> Learner:
    return Learner(
        q=QTable(env.action_count, env.objective_count),
        buffer=ReplayBuffer(lcfg.capacity),
        cfg=lcfg,
        rng=np.random.default_rng(seed),
    )


def _summary(state: CurriculumState, evaluator: CheckpointEvaluator, mode: str,
             initial_demo_eu: Optional[float], oracle_eu: Optional[float]) -> Dict[str, Any]:
    return {
        'mode': mode,
        'final_eu': evaluator.last_eu,
        'initial_demo_eu': initial_demo_eu,
        'oracle_eu': oracle_eu,
        'monotonicity_violations': state.monotonicity_violations,
        'rounds': state.round,
        'env_steps': state.global_step,
        'eval_steps': state.eval_step,
        'eval_weight_count': len(evaluator.eval_weights),
        'converged_at': state.converged_at,
    }


def train(env: MomdpEnv, demos: Sequence[Sequence[int]], cfg: CurriculumConfig,
          lcfg: Optional[LearnerConfig] = None, log: Optional[MetricsLog] = None,
          eval_env: Optional[MomdpEnv] = None, oracle_eu: Optional[float] = None,
          repo: Optional[DemoRepository] = None) -> TrainResult:
    """
    Run DG-MORL until the step budget is used.

    `eval_env` should be a separate instance of the same environment so
    evaluation rollouts are counted apart from the training budget.
    """
    lcfg = lcfg or LearnerConfig()
    log = log if log is not None else MetricsLog()
    eval_env = eval_env or env
    if repo is None:
        repo = init_repository(env, demos)

    eval_weights = equidistant_weights(env.objective_count, cfg.eval_weight_count)
    initial_demo_eu = expected_utility(repo.active_values(), eval_weights)
    learner = _new_learner(env, lcfg, cfg.seed)
    state = CurriculumState(beta=update_beta(cfg.beta_schedule, 0), log=log)
    evaluator = CheckpointEvaluator(cfg, eval_env, eval_weights, repo, log)
    logger.info(f"[CURRICULUM] {env.env_id}: {len(repo.active_demos())} guide(s), "
                f"initial demo EU={initial_demo_eu:.6g}, budget={cfg.max_steps}")

    if cfg.max_steps == 0:
        evaluator.baseline(state, learner.q)
    else:
        while state.global_step < cfg.max_steps:
            if cfg.stop_when_converged:
                gaps = corner_gaps(repo.ccs_values(), agent_policy_values(learner.q, eval_env),
                                   cfg.agent_corners)
                if max(gap for _, gap in gaps) <= TOLERANCE:
                    state.converged_at = state.global_step
                    logger.info(f"[CURRICULUM] agent matches the guide set at every candidate weight "
                                f"(step {state.global_step}); training stops")
                    break
            try:
                run_round(state, env, repo, learner, cfg, eval_env, evaluator)
            except BudgetExhausted:
                break
        evaluator.flush(state, learner.q)

    state.eval_step = eval_env.total_steps
    summary = _summary(state, evaluator, MODE_DG_MORL, initial_demo_eu, oracle_eu)
    log.log_event(EVENT_SUMMARY, summary)
    return TrainResult(success=True, log=log, q=learner.q, repo=repo, stats=summary)


def train_baseline(env: MomdpEnv, cfg: CurriculumConfig, lcfg: Optional[LearnerConfig] = None,
                   log: Optional[MetricsLog] = None, eval_env: Optional[MomdpEnv] = None,
                   oracle_eu: Optional[float] = None) -> TrainResult:
    """
    0-initialized epsilon-greedy learner, no demonstrations.

    Each episode conditions on one weight drawn uniformly from the
    evaluation grid.
    """
    lcfg = lcfg or LearnerConfig()
    log = log if log is not None else MetricsLog()
    eval_env = eval_env or env
    eval_weights = equidistant_weights(env.objective_count, cfg.eval_weight_count)
    learner = _new_learner(env, lcfg, cfg.seed)
    state = CurriculumState(beta=update_beta(cfg.beta_schedule, 0), log=log)
    evaluator = CheckpointEvaluator(cfg, eval_env, eval_weights, None, log)

    if cfg.max_steps == 0:
        evaluator.baseline(state, learner.q)
    else:
        try:
            while True:
                w = eval_weights[int(learner.rng.integers(len(eval_weights)))]
                state.w_c = w
                _collect(env, None, 0, w, state, learner, cfg, evaluator)
        except BudgetExhausted:
            pass
        evaluator.flush(state, learner.q)

    state.eval_step = eval_env.total_steps
    summary = _summary(state, evaluator, MODE_BASELINE, None, oracle_eu)
    log.log_event(EVENT_SUMMARY, summary)
    return TrainResult(success=True, log=log, q=learner.q, stats=summary)
