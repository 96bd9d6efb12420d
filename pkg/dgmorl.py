#!/usr/bin/env python3
"""
DG-MORL command line.

    dgmorl.py run CONFIG [--seeds 2 7] [--output-dir DIR] [--dump-table]
    dgmorl.py oracle CONFIG [--out FILE]
    dgmorl.py gen-demos CONFIG [--quality optimal|medium|low] [--count N] [--out FILE]
    dgmorl.py report RUN_DIR [RUN_DIR ...] [--out DIR]

Exit codes: 0 success, 1 runtime error, 2 configuration or argument error.
"""

import argparse
import copy
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml

from curriculum import MODE_BASELINE, CurriculumError, train, train_baseline
from demo_store import DemoStoreError
from learner import LearnerError
from metrics import METRICS_FILENAME, MetricsError, MetricsLog
from mo_core import MOError
from momdp_envs import EnvError
from oracle import QUALITIES, OracleError, compute_oracle, demo_repository, oracle_eu_or_none
from report import ReportError, write_report
from run_config import ConfigError, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

MODULE_ERRORS = (MOError, EnvError, DemoStoreError, LearnerError, CurriculumError,
                 OracleError, ReportError, MetricsError)

CONFIG_SNAPSHOT = 'config.yaml'
DEMOS_FILENAME = 'demos.yaml'
SUMMARY_FILENAME = 'summary.yaml'
TABLE_DUMP_FILENAME = 'qtable.tsv'
ORACLE_FILENAME = 'oracle.yaml'


def setup_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(message)s', stream=sys.stderr, force=True)


@dataclass
class RunResult:
    """Outcome of one seed"""
    success: bool
    seed: int
    output_dir: str
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        return {
            'success': self.success,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'errors': self.errors,
            'warnings': self.warnings,
            'stats': self.stats,
        }


def _load_config(path: str) -> RunConfig:
    cfg = RunConfig.load(path)
    cfg.apply_env_overrides()
    return cfg.check()


def _seed_snapshot(snapshot: Dict[str, Any], seed: int) -> Dict[str, Any]:
    seed_snapshot = copy.deepcopy(snapshot)
    seed_snapshot['run']['seeds'] = [seed]
    return seed_snapshot


def run_seed(snapshot: Dict[str, Any], seed: int, seed_dir: str,
             oracle_eu: Optional[float] = None, dump_table: bool = False) -> RunResult:
    """
    Train one seed from a config snapshot and write its artifacts.

    Top-level so it can run in a worker process.
    """
    result = RunResult(success=False, seed=seed, output_dir=seed_dir)
    try:
        cfg = RunConfig.from_dict({k: v for k, v in snapshot.items() if k != 'overrides'})
        env = cfg.build_env()
        eval_env = cfg.build_env()
        os.makedirs(seed_dir, exist_ok=True)
        with open(os.path.join(seed_dir, CONFIG_SNAPSHOT), 'w') as f:
            yaml.safe_dump(_seed_snapshot(snapshot, seed), f, default_flow_style=None, sort_keys=False)

        metrics_log = MetricsLog(os.path.join(seed_dir, METRICS_FILENAME))
        curriculum_cfg = cfg.curriculum_config(seed)
        learner_cfg = cfg.learner_config()
        if cfg.mode == MODE_BASELINE:
            outcome = train_baseline(env, curriculum_cfg, learner_cfg, metrics_log, eval_env, oracle_eu)
        else:
            outcome = train(env, cfg.demo_actions(env), curriculum_cfg, learner_cfg, metrics_log,
                            eval_env, oracle_eu)
            outcome.repo.save(os.path.join(seed_dir, DEMOS_FILENAME))

        with open(os.path.join(seed_dir, SUMMARY_FILENAME), 'w') as f:
            yaml.safe_dump(outcome.stats, f, sort_keys=False)
        if dump_table:
            with open(os.path.join(seed_dir, TABLE_DUMP_FILENAME), 'w') as f:
                f.write(outcome.q.dump())

        result.success = True
        result.stats = outcome.stats
        if outcome.stats.get('monotonicity_violations'):
            result.warnings.append(f"{outcome.stats['monotonicity_violations']} guide-utility drop(s)")
    except (ConfigError,) + MODULE_ERRORS as e:
        result.errors.append(f"{type(e).__name__}: {e}")
    return result


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_run(config_path: str, seeds: Optional[List[int]] = None, output_dir: Optional[str] = None,
            dump_table: bool = False) -> int:
    try:
        cfg = _load_config(config_path)
        env = cfg.build_env()
        if cfg.mode != MODE_BASELINE:
            cfg.demo_actions(env)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MODULE_ERRORS as e:
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    seeds = seeds or cfg.seeds
    output_dir = output_dir or cfg.output_dir
    snapshot = cfg.to_dict()
    oracle_eu = oracle_eu_or_none(env, snapshot['curriculum']['eval_weight_count'])
    jobs = [(seed, os.path.join(output_dir, f"seed_{seed}")) for seed in seeds]
    logger.info(f"Running {cfg.env_kind} / {cfg.mode} for seeds {seeds} -> {output_dir}")

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_seed, snapshot, seed, seed_dir, oracle_eu, dump_table)
                       for seed, seed_dir in jobs]
            results = [future.result() for future in futures]
    else:
        results = [run_seed(snapshot, seed, seed_dir, oracle_eu, dump_table) for seed, seed_dir in jobs]

    failed = 0
    for r in results:
        if r.success:
            final_eu = r.stats.get('final_eu')
            oracle_text = f" (oracle {oracle_eu:.6g})" if oracle_eu is not None else ''
            print(f"✓ seed {r.seed}: final EU {final_eu:.6g}{oracle_text}, "
                  f"{r.stats.get('rounds')} round(s), {r.stats.get('env_steps')} steps -> {r.output_dir}")
            for warning in r.warnings:
                print(f"  ⚠️  {warning}")
        else:
            failed += 1
            print(f"✗ seed {r.seed}: FAILED")
            for error in r.errors:
                print(f"  - {error}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_oracle(config_path: str, out: Optional[str] = None) -> int:
    try:
        cfg = _load_config(config_path)
        env = cfg.build_env()
        result = compute_oracle(env, cfg.curriculum_config(cfg.seeds[0]).eval_weight_count)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MODULE_ERRORS as e:
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    out = out or os.path.join(cfg.output_dir, ORACLE_FILENAME)
    os.makedirs(os.path.dirname(out) or '.', exist_ok=True)
    with open(out, 'w') as f:
        f.write(result.to_yaml())
    print(f"✓ {result.env_id}: CCS size {len(result.ccs)}, "
          f"{len(result.corner_weights)} corner weight(s), EU {result.eu:.10g}")
    print(f"OUTPUT_FILE:{out}")
    return EXIT_OK


def cmd_gen_demos(config_path: str, quality: Optional[str] = None, count: Optional[int] = None,
                  out: Optional[str] = None) -> int:
    try:
        cfg = _load_config(config_path)
        env = cfg.build_env()
        pads = cfg.to_dict()['demos']['pads']
        quality = quality or cfg.demo_quality
        count = count if count is not None else cfg.demo_count
        repo = demo_repository(env, quality, count, pads)
        out = out or os.path.join(cfg.output_dir, DEMOS_FILENAME)
        os.makedirs(os.path.dirname(out) or '.', exist_ok=True)
        repo.save(out)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MODULE_ERRORS as e:
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"✓ {len(repo.demos)} {quality} demonstration(s) for {env.env_id}")
    print(f"OUTPUT_FILE:{out}")
    return EXIT_OK


def cmd_report(run_dirs: List[str], out: Optional[str] = None) -> int:
    out = out or (run_dirs[0] if len(run_dirs) == 1 else 'report')
    try:
        result = write_report(run_dirs, out)
    except MODULE_ERRORS as e:
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"✓ {result.runs['run'].nunique()} run(s), {len(result.summary)} evaluation step(s)")
    for path in result.files.values():
        print(f"OUTPUT_FILE:{path}")
    return EXIT_OK


# =============================================================================
# ENTRY POINT
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='DG-MORL - demonstration-guided multi-objective RL lab')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='Warnings and errors only')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Train DG-MORL (or the epsilon-greedy baseline) for each seed')
    run.add_argument('config', help='Run config YAML')
    run.add_argument('--seeds', type=int, nargs='+', help='Override run.seeds')
    run.add_argument('--output-dir', help='Override run.output_dir')
    run.add_argument('--dump-table', action='store_true', help='Write the final Q-table as text per seed')

    oracle = sub.add_parser('oracle', help='Exhaustive CCS / corner weights / EU for the configured env')
    oracle.add_argument('config', help='Run config YAML')
    oracle.add_argument('--out', help='Output YAML (default: <output_dir>/oracle.yaml)')

    demos = sub.add_parser('gen-demos', help='Generate a demonstration file from the oracle')
    demos.add_argument('config', help='Run config YAML')
    demos.add_argument('--quality', choices=QUALITIES, help='Override demos.quality')
    demos.add_argument('--count', type=int, help='Override demos.count')
    demos.add_argument('--out', help='Output YAML (default: <output_dir>/demos.yaml)')

    report = sub.add_parser('report', help='Aggregate metrics of finished runs into CSV')
    report.add_argument('run_dirs', nargs='+', help='Run directories (searched recursively)')
    report.add_argument('--out', help='Output directory (default: the run directory)')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    if args.command == 'run':
        return cmd_run(args.config, args.seeds, args.output_dir, args.dump_table)
    elif args.command == 'oracle':
        return cmd_oracle(args.config, args.out)
    elif args.command == 'gen-demos':
        return cmd_gen_demos(args.config, args.quality, args.count, args.out)
    else:
        return cmd_report(args.run_dirs, args.out)


if __name__ == '__main__':
    sys.exit(main())
