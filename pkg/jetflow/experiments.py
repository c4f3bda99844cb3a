# -*- coding: utf-8 -*-
"""
实验命令：simulate、convergence、table1、list-problems

命令函数只负责计算和写文件，输出到终端的摘要由 cli 负责。
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .analysis import OrderReport, manifold_drift, strong_error, weak_error, weak_manifold_drift
from .brownian import (RNG_IDENTIFIER, BrownianPath, nested_uniform_grids, refine, restrict,
                       sample_path, uniform_grid)
from .errors import DivergenceError, GridError
from .ode_flow import NEAR_EXACT_SOLVER
from .problems import angular_momentum
from .schemes import JetVariant, SchemeSpec, Trajectory, simulate
from .sde_model import SdeProblem, get_problem, list_problems
from .utils.config_manager import ExperimentConfig, require_valid
from .utils.logging_system import get_logger, log_performance, log_run_context

logger = get_logger('experiments')

# 角动量实验：T = 10，步长 1, 0.4, 0.1, 0.01
TABLE1_T = 10.0
TABLE1_STEP_LENGTHS = (1.0, 0.4, 0.1, 0.01)
TABLE1_H0 = 1.2

# 公共细网格步数上限（各步数的最小公倍数）
MAX_COMMON_STEPS = 1_000_000


def _slug(scheme: SchemeSpec) -> str:
    return scheme.name.replace("[", "_").replace("]", "")


def _problem(config: ExperimentConfig) -> SdeProblem:
    return get_problem(config.problem_name, **config.problem_params)


@dataclass
class SimulationOutput:
    """一条轨迹的输出文件与摘要"""
    scheme: str
    N: int
    files: List[Path]
    final_state: List[float]
    final_invariants: Dict[str, float]
    max_error_vs_exact: Optional[float] = None


def _exact_columns(problem: SdeProblem, path: BrownianPath) -> Dict[str, np.ndarray]:
    if problem.exact_solution is None:
        return {}
    exact = np.asarray(problem.exact_solution(problem.initial_state, path.grid.points, path.values))
    return {f"exact_{name}": exact[:, i] for i, name in enumerate(problem.state_names)}


def shared_paths(T: float, counts: Sequence[int], dim_noise: int, seed: int,
                 n_paths: Optional[int] = None) -> List[BrownianPath]:
    """各步数共用一条布朗路径

    在最粗网格上采样，布朗桥加密到公共细网格（步数的最小公倍数）后再限制到各网格，
    因此步数之间不必互相整除。
    """
    common = math.lcm(*counts)
    if common > MAX_COMMON_STEPS:
        raise GridError(f"step counts {list(counts)} need a common grid of {common} steps "
                        f"(limit {MAX_COMMON_STEPS})")
    base = sample_path(uniform_grid(T, min(counts)), dim_noise, seed, n_paths=n_paths)
    fine = refine(base, uniform_grid(T, common))
    return [restrict(fine, uniform_grid(T, n)) for n in counts]


def _write_trajectory_json(trajectory: Trajectory, file: Path, seed: int) -> Path:
    data = {
        'problem': trajectory.problem_name,
        'scheme': trajectory.scheme,
        'seed': seed,
        'rng': RNG_IDENTIFIER,
        'grid': trajectory.grid.describe(),
        't': trajectory.grid.points.tolist(),
        'state_names': list(trajectory.state_names),
        'states': trajectory.states.tolist(),
        'invariant_names': list(trajectory.invariant_names),
        'invariants': trajectory.invariant_log.tolist(),
    }
    file.parent.mkdir(parents=True, exist_ok=True)
    with open(file, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return file


def _write_outputs(trajectory: Trajectory, stem: Path, config: ExperimentConfig,
                   extra: Dict[str, np.ndarray]) -> List[Path]:
    files = []
    if config.output_format in ("csv", "both"):
        files.append(trajectory.write_csv(stem.with_suffix(".csv"), extra_columns=extra))
    if config.output_format in ("json", "both"):
        files.append(_write_trajectory_json(trajectory, stem.with_suffix(".json"), config.seed))
    return files


def cmd_simulate(config: ExperimentConfig) -> List[SimulationOutput]:
    """每个 (格式, 步数) 写一条轨迹；所有步数共用同一条布朗路径，步数不必嵌套

    发散时先写出部分轨迹，再抛出 DivergenceError。
    """
    require_valid(config)
    problem = _problem(config)
    counts = sorted(set(int(n) for n in config.steps))
    paths = shared_paths(config.T, counts, problem.dim_noise, config.seed)
    grids = [path.grid for path in paths]
    schemes = config.scheme_specs()
    out_dir = Path(config.output_dir)

    log_run_context('simulate', {
        'problem': problem.name,
        'schemes': [s.describe() for s in schemes],
        'grids': [g.N for g in grids],
        'T': config.T,
        'seed': config.seed,
        'rng': RNG_IDENTIFIER,
    })

    outputs = []
    for scheme in schemes:
        for grid, path in zip(grids, paths):
            stem = out_dir / f"{problem.name}_{_slug(scheme)}_N{grid.N}_seed{config.seed}"
            extra = _exact_columns(problem, path)
            with log_performance(f"simulate {scheme.name} N={grid.N}", logger_name='experiments'):
                try:
                    trajectory = simulate(problem, scheme, path)
                except DivergenceError as e:
                    if isinstance(e.partial, Trajectory):
                        files = _write_outputs(e.partial, stem, config, extra)
                        logger.error(f"{scheme.name} N={grid.N} 发散，部分轨迹已写入 {files}")
                    raise
            files = _write_outputs(trajectory, stem, config, extra)
            max_err = None
            if extra:
                exact = np.stack(list(extra.values()), axis=-1)
                max_err = float(np.max(np.abs(trajectory.states - exact)))
            outputs.append(SimulationOutput(
                scheme=scheme.name,
                N=grid.N,
                files=files,
                final_state=trajectory.final_state.tolist(),
                final_invariants={name: float(value) for name, value
                                  in zip(problem.invariant_names, trajectory.invariant_log[-1])},
                max_error_vs_exact=max_err,
            ))
            logger.info(f"已写入 {scheme.name} N={grid.N}: {files}")
    return outputs


def cmd_convergence(config: ExperimentConfig) -> List[OrderReport]:
    """按配置运行强/弱/漂移研究，每个格式输出 JSON 与 CSV 报告"""
    require_valid(config)
    problem = _problem(config)
    grids = nested_uniform_grids(config.T, config.steps)
    out_dir = Path(config.output_dir)

    reference = config.reference
    if reference == 'analytic' and problem.exact_solution is None and config.study in ('strong', 'weak'):
        logger.info(f"{problem.name} 没有解析解，改用细网格参考解")
        reference = 'fine'

    reports = []
    for scheme in config.scheme_specs():
        if config.study == 'strong':
            report = strong_error(problem, scheme, reference, grids, config.n_paths, config.seed, config.workers)
        elif config.study == 'weak':
            report = weak_error(problem, scheme, config.test_function, config.reference_expectation,
                                grids, config.n_paths, config.seed, reference, config.workers)
        elif config.study == 'drift':
            report = manifold_drift(problem, scheme, grids, config.n_paths, config.seed, config.workers)
        else:
            report = weak_manifold_drift(problem, scheme, grids, config.n_paths, config.seed, config.workers)
        stem = out_dir / f"{config.study}_{problem.name}_{_slug(scheme)}_seed{config.seed}"
        report.write_json(stem.with_suffix(".json"))
        report.write_csv(stem.with_suffix(".csv"))
        reports.append(report)
    return reports


@dataclass
class Table1Row:
    step_length: float
    N: int
    scheme: str
    mean_h: float
    mean_abs_deviation: float
    sd_abs_deviation: float
    n_diverged: int
    n_seeds: int


@dataclass
class Table1Result:
    problem: str
    seed: int
    n_seeds: int
    rows: List[Table1Row] = field(default_factory=list)
    rng: str = RNG_IDENTIFIER

    def row(self, scheme: str, step_length: float) -> Table1Row:
        for row in self.rows:
            if row.scheme == scheme and abs(row.step_length - step_length) < 1e-12:
                return row
        raise KeyError((scheme, step_length))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write_json(self, file: Path) -> Path:
        file.parent.mkdir(parents=True, exist_ok=True)
        with open(file, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")
        return file

    def write_csv(self, file: Path) -> Path:
        file.parent.mkdir(parents=True, exist_ok=True)
        fieldnames = [f.name for f in fields(Table1Row)]
        with open(file, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                data = asdict(row)
                writer.writerow({key: repr(value) if isinstance(value, float) else value
                                 for key, value in data.items()})
        return file


TABLE1_SCHEMES = (
    ("em", SchemeSpec.em()),
    ("jet", SchemeSpec.jet(JetVariant.dt(), NEAR_EXACT_SOLVER)),
)


def cmd_table1(seed: int = 0, n_seeds: int = 10, problem_name: str = "kepler",
               trajectories_dir: Optional[str] = None, output_dir: Optional[str] = None,
               step_lengths: Sequence[float] = TABLE1_STEP_LENGTHS) -> Table1Result:
    """T=10 时各步长下 EM 与 jet 格式的 |h − 1.2|，按 n_seeds 条路径汇总

    所有步长共用同一条路径，见 shared_paths。
    """
    problem = get_problem(problem_name)
    counts = [int(round(TABLE1_T / dt)) for dt in step_lengths]
    for dt, n in zip(step_lengths, counts):
        if n < 1 or abs(n * dt - TABLE1_T) > 1e-9 * TABLE1_T:
            raise GridError(f"step length {dt} does not divide T={TABLE1_T:g}")
    paths = shared_paths(TABLE1_T, counts, problem.dim_noise, seed, n_paths=n_seeds)

    log_run_context('table1', {'problem': problem.name, 'seed': seed, 'n_seeds': n_seeds,
                               'steps': counts, 'rng': RNG_IDENTIFIER})

    result = Table1Result(problem=problem.name, seed=seed, n_seeds=n_seeds)

    for dt, path in zip(step_lengths, paths):
        grid = path.grid
        for label, scheme in TABLE1_SCHEMES:
            with log_performance(f"table1 {label} dt={dt}", logger_name='experiments', n_seeds=n_seeds):
                trajectory = simulate(problem, scheme, path)
            h = angular_momentum(trajectory.final_state)
            finite = np.isfinite(h)
            deviation = np.abs(h[finite] - TABLE1_H0)
            result.rows.append(Table1Row(
                step_length=dt,
                N=grid.N,
                scheme=label,
                mean_h=float(np.mean(h[finite])) if finite.any() else float('nan'),
                mean_abs_deviation=float(np.mean(deviation)) if finite.any() else float('nan'),
                sd_abs_deviation=float(np.std(deviation, ddof=1)) if deviation.size > 1 else 0.0,
                n_diverged=int(np.sum(~finite)),
                n_seeds=n_seeds,
            ))
            if trajectories_dir:
                trajectory.write_csv(Path(trajectories_dir) / f"table1_{label}_dt{dt:g}_seed{seed}.csv")

    if output_dir:
        stem = Path(output_dir) / f"table1_{problem.name}_seed{seed}"
        result.write_json(stem.with_suffix(".json"))
        result.write_csv(stem.with_suffix(".csv"))
    return result


def format_table1(result: Table1Result) -> str:
    """终端表格：步长、格式、h 均值、|h − 1.2| 均值 ± 标准差、发散数"""
    lines = [f"{'step':>6}  {'scheme':<6}  {'mean h':>12}  {'mean |h-1.2|':>14}  {'sd':>10}  {'diverged':>8}"]
    for row in result.rows:
        lines.append(f"{row.step_length:>6g}  {row.scheme:<6}  {row.mean_h:>12.6f}  "
                     f"{row.mean_abs_deviation:>14.3e}  {row.sd_abs_deviation:>10.2e}  "
                     f"{row.n_diverged:>5}/{row.n_seeds}")
    return "\n".join(lines)


def problem_summaries() -> List[Dict[str, Any]]:
    """list-problems 的内容"""
    summaries = []
    for entry in list_problems():
        problem = entry.factory()
        summaries.append({
            'name': entry.name,
            'dim_state': problem.dim_state,
            'dim_noise': problem.dim_noise,
            'invariants': list(problem.invariant_names),
            'exact_jet_flow': problem.exact_jet_flow is not None,
            'exact_solution': problem.exact_solution is not None,
            'description': entry.description or problem.description,
        })
    return summaries
