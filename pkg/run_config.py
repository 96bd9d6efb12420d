"""
Run configuration for DG-MORL experiments.

Loads a sectioned YAML config (env / demos / curriculum / learner / run).
Any missing value falls back to RUN_DEFAULTS, unknown keys are rejected,
and DGMORL__<SECTION>__<KEY> environment variables override file values.
The fully explicit result is written next to every run as config.yaml.
"""

import copy
import logging
import os
from typing import Any, Dict, List, Mapping, Optional

import yaml

from curriculum import MODES, PASS_RULES, CurriculumConfig, InvalidCurriculumConfig, LearnerConfig
from demo_store import ORIGIN_PRIOR, DemoRepository
from momdp_envs import DEFAULT_DST_MAP, EnvError, MomdpEnv, make_env
from oracle import QUALITIES, OracleError, gen_demos

logger = logging.getLogger(__name__)

ENV_OVERRIDE_PREFIX = 'DGMORL__'

# Seeds used by the bundled experiment configs
DEFAULT_SEEDS = [2, 7, 15, 42, 78]


# =============================================================================
# DEFAULTS
# These are used as fallbacks when config values are missing
# =============================================================================

RUN_DEFAULTS = {
    'env': {
        'kind': 'dst',              # dst | lock
        'horizon': 100,
        'gamma': 0.99,
        'map': None,                # DST map file; None = bundled default map
        'lock_actions': {'a_o1': 1, 'a_o2': 2, 'a_balance': 0},
    },
    'demos': {
        'source': 'generate',       # generate (oracle) | file
        'path': None,               # demonstration file when source = file
        'quality': 'optimal',       # optimal | medium | low
        'count': None,              # None = one per oracle CCS entry
        'pads': {'medium': 2, 'low': 6},
    },
    'curriculum': {
        'max_steps': 40000,
        'rollback_span': 2,
        'beta_start': 1.0,
        'beta_end': 1.0,
        'beta_ramp_rounds': 0,
        'eval_period': 4000,
        'rollouts_per_h': 2,
        'max_attempts_per_h': 50,
        'eval_weight_count': 100,
        'self_evolving': True,
        'pass_rule': 'strict',   # strict (u > beta*u_theta) | inclusive (u >= beta*u_theta)
        'agent_corners': True,
        'stop_when_converged': False,
    },
    'learner': {
        'alpha': 0.1,
        'batch': 128,
        'capacity': 100000,
        'train_every': 1,
        'epsilon_start': 1.0,
        'epsilon_end': 0.0,
        'epsilon_anneal_steps': 50000,
    },
    'run': {
        'mode': 'dg_morl',          # dg_morl | epsilon_greedy_0init
        'seeds': list(DEFAULT_SEEDS),
        'output_dir': 'runs/dgmorl',
        'workers': 1,
    },
}

# Keys whose value is a mapping merged key by key
_NESTED_KEYS = {('env', 'lock_actions'), ('demos', 'pads')}
# Keys that may legitimately be None
_OPTIONAL_KEYS = {('env', 'map'), ('demos', 'path'), ('demos', 'count')}


class ConfigError(ValueError):
    """Invalid configuration; carries the YAML line when known"""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = ''
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        elif source:
            where = f"{source}: "
        super().__init__(where + message)


def _key_lines(text: str) -> Dict[tuple, int]:
    """Line number of every section/key in the YAML text"""
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            for key_node, value_node in n.value:
                key_path = path + (key_node.value,)
                lines[key_path] = key_node.start_mark.line + 1
                walk(value_node, key_path)

    if node is not None:
        walk(node, ())
    return lines


def _parse_scalar(text: str) -> Any:
    """Environment override values are YAML scalars ('0.5', 'true', '[2, 7]')"""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse override value {text!r}: {e}")


def _type_ok(default: Any, value: Any) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return True


class RunConfig:
    """
    Experiment configuration with layered defaults.

    Values given in the file win; anything missing comes from
    RUN_DEFAULTS.
    """

    def __init__(self, config_data: Optional[Dict[str, Any]] = None, source: Optional[str] = None,
                 key_lines: Optional[Dict[tuple, int]] = None):
        self.source = source
        self._lines = key_lines or {}
        self._data = self._validate(config_data or {})
        self.overrides: Dict[str, Any] = {}

    def _error(self, message: str, path: tuple = ()) -> ConfigError:
        return ConfigError(message, self._lines.get(path), self.source)

    def _validate(self, data: Any) -> Dict[str, Any]:
        if not isinstance(data, dict):
            raise self._error("Config must be a mapping of sections")
        for section, body in data.items():
            if section not in RUN_DEFAULTS:
                raise self._error(f"Unknown section '{section}' (expected one of {sorted(RUN_DEFAULTS)})",
                                  (section,))
            if body is None:
                continue
            if not isinstance(body, dict):
                raise self._error(f"Section '{section}' must be a mapping", (section,))
            for key, value in body.items():
                path = (section, key)
                if key not in RUN_DEFAULTS[section]:
                    raise self._error(f"Unknown key '{section}.{key}'", path)
                self._check_value(path, value)
        return copy.deepcopy(data)

    def _check_value(self, path: tuple, value: Any):
        section, key = path
        default = RUN_DEFAULTS[section][key]
        if value is None:
            if path in _OPTIONAL_KEYS:
                return
            raise self._error(f"'{section}.{key}' needs a value", path)
        if path in _NESTED_KEYS:
            if not isinstance(value, dict):
                raise self._error(f"'{section}.{key}' must be a mapping", path)
            for sub in value:
                if sub not in default:
                    raise self._error(f"Unknown key '{section}.{key}.{sub}'", path + (sub,))
            return
        if path in _OPTIONAL_KEYS:
            expected = int if key == 'count' else str
            if not isinstance(value, expected) or isinstance(value, bool):
                raise self._error(f"'{section}.{key}' must be {expected.__name__} or null", path)
            return
        if not _type_ok(default, value):
            raise self._error(f"'{section}.{key}' must be {type(default).__name__}, got {value!r}", path)

    def _get(self, *keys, default=None):
        """
        Nested lookup with fallback to RUN_DEFAULTS.

        Args:
            *keys: Path to the value (e.g., 'curriculum', 'max_steps')
            default: Returned when neither the config nor RUN_DEFAULTS has it
        """
        value = self._data
        for key in keys:
            if isinstance(value, dict):
                value = value.get(key)
                if value is None:
                    break
            else:
                value = None
                break
        if value is not None:
            return value

        default_value = RUN_DEFAULTS
        for key in keys:
            if isinstance(default_value, dict):
                default_value = default_value.get(key)
                if default_value is None:
                    break
            else:
                default_value = None
                break
        return copy.deepcopy(default_value) if default_value is not None else default

    def _section(self, section: str) -> Dict[str, Any]:
        resolved = {}
        for key in RUN_DEFAULTS[section]:
            path = (section, key)
            if path in _NESTED_KEYS:
                merged = dict(RUN_DEFAULTS[section][key])
                merged.update(self._get(section, key) or {})
                resolved[key] = merged
            else:
                resolved[key] = self._get(section, key)
        return resolved

    # ========================================================================
    # Environment overrides
    # ========================================================================

    def apply_env_overrides(self, environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
        """
        Apply DGMORL__<SECTION>__<KEY>=<yaml scalar> variables.

        Returns the overrides applied (also kept in the snapshot).
        """
        environ = os.environ if environ is None else environ
        applied = {}
        for name in sorted(environ):
            if not name.startswith(ENV_OVERRIDE_PREFIX):
                continue
            parts = name[len(ENV_OVERRIDE_PREFIX):].lower().split('__')
            if len(parts) != 2:
                raise ConfigError(f"Override {name} must look like {ENV_OVERRIDE_PREFIX}<SECTION>__<KEY>")
            section, key = parts
            if section not in RUN_DEFAULTS or key not in RUN_DEFAULTS[section]:
                raise ConfigError(f"Override {name} names unknown key '{section}.{key}'")
            value = _parse_scalar(environ[name])
            self._check_value((section, key), value)
            self._data.setdefault(section, {})
            if self._data[section] is None:
                self._data[section] = {}
            self._data[section][key] = value
            applied[f"{section}.{key}"] = value
            logger.info(f"[CONFIG] override {section}.{key} = {value!r}")
        self.overrides.update(applied)
        return applied

    # ========================================================================
    # Typed views
    # ========================================================================

    @property
    def env_kind(self) -> str:
        return self._get('env', 'kind')

    @property
    def horizon(self) -> int:
        return int(self._get('env', 'horizon'))

    @property
    def gamma(self) -> float:
        return float(self._get('env', 'gamma'))

    @property
    def map_path(self) -> str:
        return self._get('env', 'map') or DEFAULT_DST_MAP

    @property
    def mode(self) -> str:
        return self._get('run', 'mode')

    @property
    def seeds(self) -> List[int]:
        return [int(s) for s in self._get('run', 'seeds')]

    @property
    def output_dir(self) -> str:
        return self._get('run', 'output_dir')

    @property
    def workers(self) -> int:
        return max(1, int(self._get('run', 'workers')))

    @property
    def demo_quality(self) -> str:
        return self._get('demos', 'quality')

    @property
    def demo_count(self) -> Optional[int]:
        return self._get('demos', 'count')

    def check(self):
        """Cross-field validation; raises ConfigError"""
        if self.env_kind not in ('dst', 'lock'):
            raise self._error(f"env.kind must be 'dst' or 'lock', got {self.env_kind!r}", ('env', 'kind'))
        if self.mode not in MODES:
            raise self._error(f"run.mode must be one of {MODES}, got {self.mode!r}", ('run', 'mode'))
        if self._get('curriculum', 'pass_rule') not in PASS_RULES:
            raise self._error(f"curriculum.pass_rule must be one of {PASS_RULES}", ('curriculum', 'pass_rule'))
        source = self._get('demos', 'source')
        if source not in ('generate', 'file'):
            raise self._error(f"demos.source must be 'generate' or 'file', got {source!r}", ('demos', 'source'))
        if source == 'file' and not self._get('demos', 'path'):
            raise self._error("demos.path is required when demos.source is 'file'", ('demos', 'path'))
        if self.demo_quality not in QUALITIES:
            raise self._error(f"demos.quality must be one of {QUALITIES}", ('demos', 'quality'))
        if not self.seeds:
            raise self._error("run.seeds must list at least one seed", ('run', 'seeds'))
        try:
            self.curriculum_config(self.seeds[0])
            self.learner_config().schedule
        except (InvalidCurriculumConfig, ValueError) as e:
            raise self._error(str(e))
        return self

    def curriculum_config(self, seed: int) -> CurriculumConfig:
        return CurriculumConfig(seed=seed, **self._section('curriculum'))

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(**self._section('learner'))

    def build_env(self) -> MomdpEnv:
        try:
            return make_env(self.env_kind, self.horizon, self.gamma,
                            map_path=self.map_path, lock_actions=self._section('env')['lock_actions'])
        except EnvError as e:
            raise self._error(f"Invalid environment: {e}", ('env',))

    def demo_actions(self, env: MomdpEnv) -> List[List[int]]:
        """The prior demonstrations for a run, generated or loaded"""
        demos = self._section('demos')
        if demos['source'] == 'file':
            repo = DemoRepository.load(demos['path'], env)
            return [list(d.actions) for d in repo.demos if d.origin == ORIGIN_PRIOR]
        try:
            return [list(a) for a in gen_demos(env, demos['quality'], demos['count'], demos['pads'])]
        except OracleError as e:
            raise self._error(f"Cannot generate demonstrations: {e}", ('demos',))

    # ========================================================================
    # Helpers
    # ========================================================================

    def to_dict(self) -> Dict[str, Any]:
        """Fully explicit snapshot (every key resolved)"""
        snapshot = {section: self._section(section) for section in RUN_DEFAULTS}
        snapshot['env']['map'] = self.map_path if self.env_kind == 'dst' else None
        snapshot['overrides'] = dict(self.overrides)
        return snapshot

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=None, sort_keys=False)

    @classmethod
    def from_yaml(cls, yaml_content: str, source: Optional[str] = None) -> 'RunConfig':
        try:
            data = yaml.safe_load(yaml_content)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"YAML parse error: {getattr(e, 'problem', e)}", line, source)
        return cls(data, source, _key_lines(yaml_content))

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'RunConfig':
        return cls(config_dict)

    @classmethod
    def load(cls, path: str) -> 'RunConfig':
        try:
            with open(path, 'r') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config: {e}", source=path)
        return cls.from_yaml(text, source=path)

    def __repr__(self):
        return f"RunConfig(env={self.env_kind}, mode={self.mode}, seeds={self.seeds})"
