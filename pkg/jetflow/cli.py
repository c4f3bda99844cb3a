#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
jetflow 命令行入口

子命令：simulate、convergence、table1、list-problems
退出码：0 成功，2 配置错误，3 数值发散
"""

import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional

from .errors import ConfigurationError, JetflowError
from .experiments import (TABLE1_STEP_LENGTHS, cmd_convergence, cmd_simulate, cmd_table1, format_table1,
                          problem_summaries)
from .utils.config_manager import (SCHEME_DESCRIPTORS, STUDIES, ExperimentConfig, build_config,
                                   load_config_file, save_config)
from .utils.logging_system import get_logger, get_performance_stats, init_logging, load_logging_config
from .utils.performance import ResourceMonitor

LOG_CONFIG_ENV_VAR = "JETFLOW_LOG_CONFIG"
LOG_LEVEL_ENV_VAR = "JETFLOW_LOG_LEVEL"


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file (flags override its values)')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='log level')
    common.add_argument('--debug', action='store_true', help='shortcut for --log-level DEBUG')
    common.add_argument('--log-dir', help='write rotating log files into this directory')
    common.add_argument('--workers', type=int, help='Monte Carlo worker threads (capped by JETFLOW_THREADS)')
    common.add_argument('--output-dir', help='directory for output files')
    common.add_argument('--save-config', metavar='PATH', help='write the effective experiment config as JSON')
    common.add_argument('--format', dest='output_format', choices=['csv', 'json', 'both'],
                        help='trajectory output format')
    return common


def _problem_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--problem', help='registered problem name (see list-problems)')
    parser.add_argument('--modulated', action='store_true', default=None,
                        help='use the modulated noise amplitudes (kepler only)')
    parser.add_argument('--param', action='append', default=[], metavar='KEY=VALUE',
                        help='problem parameter, VALUE parsed as JSON when possible')


def _run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--scheme', dest='schemes', nargs='+', choices=SCHEME_DESCRIPTORS,
                        help='one or more schemes')
    parser.add_argument('--ode', choices=['exact', 'rk4', 'adams8', 'euler'], help='ODE solver for jet schemes')
    parser.add_argument('--substeps', type=int, help='ODE substeps per jet step')
    parser.add_argument('--T', type=float, help='final time')
    parser.add_argument('--steps', type=int, nargs='+', help='number of steps N (one or more; all grids share one Brownian path)')
    parser.add_argument('--seed', type=int, help='Brownian path seed')


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog='jetflow', description='Jet schemes for SDEs: simulation and convergence studies')
    subparsers = parser.add_subparsers(dest='command', help='available commands')
    subparsers.required = True

    simulate_parser = subparsers.add_parser('simulate', parents=[common], help='simulate trajectories on one path')
    _problem_options(simulate_parser)
    _run_options(simulate_parser)

    convergence_parser = subparsers.add_parser('convergence', parents=[common], help='strong/weak/drift order study')
    _problem_options(convergence_parser)
    _run_options(convergence_parser)
    convergence_parser.add_argument('--study', choices=STUDIES, help='quantity to measure')
    convergence_parser.add_argument('--n-paths', type=int, help='Monte Carlo sample count')
    convergence_parser.add_argument('--reference', choices=['analytic', 'fine'], help='strong/weak reference solution')
    convergence_parser.add_argument('--test-function', choices=['first', 'norm2', 'invariant'],
                                    help='weak-error test function')
    convergence_parser.add_argument('--reference-expectation', type=float,
                                    help='known E[g(X_T)]; omit for the pathwise coupled estimator')

    table_parser = subparsers.add_parser('table1', parents=[common], help='angular momentum table for the Kepler problem')
    table_parser.add_argument('--seed', type=int, help='first seed')
    table_parser.add_argument('--n-seeds', type=int, help='number of Brownian paths')
    table_parser.add_argument('--modulated', action='store_true', default=None, help='modulated noise amplitudes')
    table_parser.add_argument('--trajectories-dir', help='also write the trajectories of the first path here')
    table_parser.add_argument('--step-lengths', type=float, nargs='+', metavar='DT',
                              help='step lengths dividing T=10 (default: 1 0.4 0.1 0.01)')

    subparsers.add_parser('list-problems', parents=[common], help='list registered problems')
    return parser


def _parse_params(items: List[str]) -> Dict[str, Any]:
    params = {}
    for item in items:
        if '=' not in item:
            raise ConfigurationError(f"--param expects KEY=VALUE, got '{item}'")
        key, value = item.split('=', 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def _setup_logging(args: argparse.Namespace) -> None:
    """命令行参数 > 环境变量 > 配置文件 > 默认值"""
    config = load_logging_config(os.environ.get(LOG_CONFIG_ENV_VAR, 'logging_config.json'))
    level = args.log_level or ('DEBUG' if args.debug else None) or os.environ.get(LOG_LEVEL_ENV_VAR)
    if level:
        config['level'] = level.upper()
    if args.debug:
        config['console_level'] = 'DEBUG'
    if args.log_dir:
        config['log_dir'] = args.log_dir
    init_logging(config)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    file_data = load_config_file(args.config) if args.config else {}
    overrides = {key: value for key, value in vars(args).items()
                 if key not in ('command', 'config', 'save_config', 'log_level', 'debug', 'log_dir', 'param')}
    params = _parse_params(getattr(args, 'param', []) or [])
    if params:
        overrides['problem_params'] = {**file_data.get('problem_params', {}), **params}
    return build_config(file_data, overrides)


def _print_simulate(outputs) -> None:
    print("📊 jetflow simulate")
    print("=" * 60)
    for out in outputs:
        invariants = ", ".join(f"{name}={value:.9g}" for name, value in out.final_invariants.items())
        print(f"✅ {out.scheme} N={out.N}: {invariants or 'no invariants'}")
        if out.max_error_vs_exact is not None:
            print(f"   max |Y - X_exact| = {out.max_error_vs_exact:.3e}")
        for file in out.files:
            print(f"   📄 {file}")


def _print_reports(reports) -> None:
    print("📊 jetflow convergence")
    print("=" * 60)
    for report in reports:
        slope = "n/a" if report.fitted_slope is None else f"{report.fitted_slope:.3f}"
        print(f"✅ {report.quantity} / {report.scheme.get('name')}: slope {slope} [{report.status.value}]")
        for step, error, se, used in zip(report.step_sizes, report.errors, report.standard_errors,
                                         report.used_in_fit):
            marker = "*" if used else " "
            print(f"   {marker} dt={step:<10.4g} error={error:.4e} ± {se:.1e}")


def _log_performance_summary(logger) -> None:
    stats = get_performance_stats()
    if not stats:
        return
    logger.info(f"性能统计: {stats['total_operations']} 个操作, 总耗时 {stats['total_duration']:.3f}s, "
                f"慢操作 {stats['slow_operations']} 个")
    for operation, entry in stats['operations_breakdown'].items():
        logger.debug(f"  {operation}: {entry['count']} 次, 平均 {entry['avg_duration']:.3f}s, "
                     f"最长 {entry['max_duration']:.3f}s")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    logger = get_logger('cli')
    monitor = ResourceMonitor()

    try:
        config = _experiment_config(args)
        if args.save_config:
            print(f"💾 配置已保存: {save_config(config, args.save_config)}")
        if args.command == 'simulate':
            _print_simulate(cmd_simulate(config))
        elif args.command == 'convergence':
            _print_reports(cmd_convergence(config))
        elif args.command == 'table1':
            problem_name = "kepler-modulated" if config.modulated else "kepler"
            result = cmd_table1(seed=config.seed, n_seeds=config.n_seeds, problem_name=problem_name,
                                trajectories_dir=config.trajectories_dir, output_dir=config.output_dir,
                                step_lengths=args.step_lengths or TABLE1_STEP_LENGTHS)
            print("📊 Kepler 角动量 h 在 t=10 时的取值")
            print("=" * 60)
            print(format_table1(result))
        else:
            for info in problem_summaries():
                invariants = ", ".join(info['invariants']) or "-"
                print(f"📋 {info['name']}: n={info['dim_state']}, k={info['dim_noise']}, "
                      f"invariants: {invariants}")
                print(f"     {info['description']}")
    except JetflowError as e:
        logger.error(f"{args.command} 失败: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    finally:
        logger.info(f"资源使用: {monitor.snapshot()}")
        _log_performance_summary(logger)
    return 0


if __name__ == "__main__":
    sys.exit(main())
