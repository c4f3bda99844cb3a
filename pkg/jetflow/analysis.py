# -*- coding: utf-8 -*-
"""
Monte Carlo 收敛分析：强误差、弱误差、流形漂移以及 log-log 阶数拟合

同一样本在所有网格上使用同一条布朗路径（布朗桥加密，公共随机数）。
样本按序号分块并行，结果按序号拼接后再归约，与线程数无关。
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .brownian import RNG_IDENTIFIER, BrownianPath, TimeGrid, refine, sample_path
from .errors import ConfigurationError, DivergenceError, GridError
from .ode_flow import NEAR_EXACT_SOLVER
from .schemes import JetVariant, SchemeSpec, Trajectory, simulate
from .sde_model import SdeProblem, finite_difference_gradient
from .utils.logging_system import get_logger, log_performance, log_run_context
from .utils.performance import resolve_worker_count

logger = get_logger('analysis')

Array = np.ndarray

# 噪声地板：强误差（RMS，相对于解的尺度）与平方漂移
STRONG_FLOOR = 1e-10
DRIFT_FLOOR = 1e-20
FLOOR_MARGIN = 10.0
SIGNAL_TO_NOISE = 3.0
DIVERGENCE_LIMIT = 0.01
MIN_FIT_POINTS = 3
CHUNK_SIZE = 256
REFERENCE_REFINEMENT = 8

FINE_REFERENCE_SCHEME = SchemeSpec.jet(JetVariant.dt(), NEAR_EXACT_SOLVER)

Reference = Union[str, SchemeSpec]


class ReportStatus(str, Enum):
    OK = "ok"
    FLOOR = "floor"
    INCONCLUSIVE = "inconclusive"


@dataclass
class OrderReport:
    """一组网格上的误差估计及拟合斜率"""
    quantity: str
    problem: str
    scheme: Dict[str, Any]
    step_sizes: List[float]
    errors: List[float]
    standard_errors: List[float]
    fitted_slope: Optional[float]
    fit_residual: Optional[float]
    n_paths: int
    status: ReportStatus = ReportStatus.OK
    scale: str = "rms"
    n_diverged: List[int] = field(default_factory=list)
    used_in_fit: List[bool] = field(default_factory=list)
    seed: Optional[int] = None
    rng: str = RNG_IDENTIFIER
    grids: List[Dict[str, Any]] = field(default_factory=list)
    reference: str = ""
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.step_sizes)
        if len(self.errors) != n or len(self.standard_errors) != n:
            raise ConfigurationError("step sizes, errors and standard errors must have equal lengths")
        if any(b >= a for a, b in zip(self.step_sizes, self.step_sizes[1:])):
            raise ConfigurationError("step sizes must be strictly decreasing")
        self.status = ReportStatus(self.status)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['status'] = self.status.value
        return data

    def write_json(self, file: Union[str, Path]) -> Path:
        file = Path(file)
        file.parent.mkdir(parents=True, exist_ok=True)
        with open(file, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")
        return file

    def write_csv(self, file: Union[str, Path]) -> Path:
        file = Path(file)
        file.parent.mkdir(parents=True, exist_ok=True)
        fieldnames = ['quantity', 'scheme', 'step_size', 'N', 'error', 'standard_error',
                      'n_diverged', 'used_in_fit', 'seed', 'rng']
        with open(file, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for i, step in enumerate(self.step_sizes):
                writer.writerow({
                    'quantity': self.quantity,
                    'scheme': self.scheme.get('name', ''),
                    'step_size': repr(float(step)),
                    'N': self.grids[i]['N'] if i < len(self.grids) else '',
                    'error': repr(float(self.errors[i])),
                    'standard_error': repr(float(self.standard_errors[i])),
                    'n_diverged': self.n_diverged[i] if i < len(self.n_diverged) else 0,
                    'used_in_fit': int(self.used_in_fit[i]) if i < len(self.used_in_fit) else 0,
                    'seed': self.seed,
                    'rng': self.rng,
                })
        return file


def fit_order(step_sizes: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """log(error) 对 log(δt) 的最小二乘斜率及残差（对数尺度 RMS）

    非正误差被排除并记录警告。
    """
    h = np.asarray(step_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = (e > 0.0) & np.isfinite(e) & (h > 0.0)
    if not np.all(keep):
        logger.warning(f"拟合阶数时排除了 {int(np.sum(~keep))} 个非正误差点")
    if int(np.sum(keep)) < MIN_FIT_POINTS:
        raise ConfigurationError(f"order fit needs at least {MIN_FIT_POINTS} positive points, got {int(np.sum(keep))}")
    x, y = np.log(h[keep]), np.log(e[keep])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), residual


# ---- 测试函数 ----

TEST_FUNCTIONS: Dict[str, Callable[[SdeProblem], Callable[[Array], Array]]] = {
    'first': lambda problem: (lambda x: np.asarray(x)[..., 0]),
    'norm2': lambda problem: (lambda x: np.sum(np.asarray(x) ** 2, axis=-1)),
    'invariant': lambda problem: _first_invariant(problem),
}


def _first_invariant(problem: SdeProblem) -> Callable[[Array], Array]:
    if not problem.invariants:
        raise ConfigurationError(f"{problem.name} registers no invariants")
    return problem.invariants[0]


def get_test_function(name: str, problem: SdeProblem) -> Callable[[Array], Array]:
    if name not in TEST_FUNCTIONS:
        raise ConfigurationError(f"unknown test function '{name}' (known: {', '.join(TEST_FUNCTIONS)})")
    return TEST_FUNCTIONS[name](problem)


def invariant_deviation(problem: SdeProblem, trajectory: Trajectory) -> Array:
    """|g_j(Y_i) − g_j(x₀)|，形状 (N+1, [P,] m)"""
    reference = problem.evaluate_invariants(problem.initial_state)
    return np.abs(trajectory.invariant_log - reference)


def manifold_distance(problem: SdeProblem, states: Array) -> Array:
    """到 M 的一阶距离估计 max_j |g_j(Y) − g_j(x₀)| / max(1, |∇g_j(Y)|)"""
    if not problem.invariants:
        raise ConfigurationError(f"{problem.name} registers no invariants")
    states = np.asarray(states, dtype=float)
    x0 = problem.initial_state
    distances = []
    for g in problem.invariants:
        gradient = finite_difference_gradient(g, states)
        scale = np.maximum(1.0, np.linalg.norm(gradient, axis=-1))
        distances.append(np.abs(g(states) - g(x0)) / scale)
    return np.max(np.stack(distances, axis=-1), axis=-1)


# ---- Monte Carlo 驱动 ----

def _subdivide(grid: TimeGrid, factor: int) -> TimeGrid:
    """每个区间等分为 factor 段"""
    t = grid.points
    inner = t[:-1, None] + (t[1:] - t[:-1])[:, None] * np.arange(factor)[None, :] / factor
    return TimeGrid(np.append(inner.reshape(-1), t[-1]))


def _check_nested(grids: Sequence[TimeGrid]) -> List[TimeGrid]:
    if len(grids) == 0:
        raise ConfigurationError("at least one grid is required")
    grids = sorted(grids, key=lambda g: g.N)
    for coarse, fine in zip(grids, grids[1:]):
        if not fine.contains(coarse):
            raise GridError(f"grids with N={coarse.N} and N={fine.N} are not nested")
    return grids


def _paths_for_chunk(grids: Sequence[TimeGrid], dim_noise: int, seed: int,
                     first: int, count: int) -> List[BrownianPath]:
    """在最粗网格上采样，再逐级加密"""
    path = sample_path(grids[0], dim_noise, seed, n_paths=count, first_index=first)
    paths = [path]
    for grid in grids[1:]:
        path = refine(path, grid)
        paths.append(path)
    return paths


def _run_chunks(task: Callable[[int, int], Dict[str, Array]], n_paths: int,
                workers: Optional[int]) -> Dict[str, Array]:
    """按样本序号分块执行，结果按序号拼接"""
    if n_paths < 2:
        raise ConfigurationError(f"n_paths must be >= 2, got {n_paths}")
    chunks = [(first, min(CHUNK_SIZE, n_paths - first)) for first in range(0, n_paths, CHUNK_SIZE)]
    n_workers = min(resolve_worker_count(workers), len(chunks))
    if n_workers == 1:
        results = [task(first, count) for first, count in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as executor:
            results = list(executor.map(lambda chunk: task(*chunk), chunks))
    return {key: np.concatenate([r[key] for r in results], axis=0) for key in results[0]}


def _reference_states(problem: SdeProblem, reference: Reference, grid: TimeGrid, path: BrownianPath,
                      fine: Optional[Tuple[TimeGrid, Array]]) -> Array:
    """参考解在网格点上的值，形状 (N+1, P, n)"""
    if isinstance(reference, SchemeSpec):
        return simulate(problem, reference, path).states
    if reference == 'analytic':
        if problem.exact_solution is None:
            raise ConfigurationError(f"{problem.name} has no analytic solution; use reference 'fine'")
        return np.asarray(problem.exact_solution(problem.initial_state, grid.points[:, None], path.values))
    fine_grid, fine_states = fine
    return fine_states[fine_grid.locate(grid.points)]


def _describe_reference(reference: Reference) -> str:
    if isinstance(reference, SchemeSpec):
        return f"scheme:{reference.name}"
    if reference == 'fine':
        return f"fine:{FINE_REFERENCE_SCHEME.name}x{REFERENCE_REFINEMENT}"
    return str(reference)


def _validate_reference(reference: Reference) -> None:
    if not isinstance(reference, SchemeSpec) and reference not in ('analytic', 'fine'):
        raise ConfigurationError(f"unknown reference '{reference}' (use 'analytic', 'fine' or a scheme)")


def _monte_carlo(problem: SdeProblem, scheme: SchemeSpec, grids: Sequence[TimeGrid], n_paths: int,
                 seed: int, reference: Optional[Reference], measure, workers: Optional[int],
                 per_sample_shape: Tuple[int, ...] = ()) -> Tuple[Array, Array]:
    """返回 (values[P, G, ...], diverged[P, G])"""

    def task(first: int, count: int) -> Dict[str, Array]:
        paths = _paths_for_chunk(grids, problem.dim_noise, seed, first, count)
        fine = None
        if reference == 'fine':
            fine_grid = _subdivide(grids[-1], REFERENCE_REFINEMENT)
            fine_traj = simulate(problem, FINE_REFERENCE_SCHEME, refine(paths[-1], fine_grid))
            fine = (fine_grid, fine_traj.states)
        values, diverged = [], []
        for grid, path in zip(grids, paths):
            states = simulate(problem, scheme, path).states
            ref = None if reference is None else _reference_states(problem, reference, grid, path, fine)
            bad = ~np.all(np.isfinite(states), axis=(0, 2))
            if ref is not None:
                bad |= ~np.all(np.isfinite(ref), axis=(0, 2))
            value = np.full((count,) + per_sample_shape, np.nan)
            good = np.flatnonzero(~bad)
            if good.size:
                value[good] = measure(states[:, good], None if ref is None else ref[:, good])
            values.append(value)
            diverged.append(bad)
        return {'values': np.stack(values, axis=1), 'diverged': np.stack(diverged, axis=1)}

    result = _run_chunks(task, n_paths, workers)
    return result['values'], result['diverged']


def _moments(values: Array, diverged: Array, grids: Sequence[TimeGrid], n_paths: int,
             label: str) -> Tuple[Array, Array, List[int]]:
    """逐网格均值与标准误；发散超过 1% 时中止"""
    means, ses, counts = [], [], []
    for g, grid in enumerate(grids):
        bad = diverged[:, g]
        n_bad = int(np.sum(bad))
        counts.append(n_bad)
        if n_bad > DIVERGENCE_LIMIT * n_paths:
            raise DivergenceError(
                f"{label}: {n_bad}/{n_paths} paths diverged on grid N={grid.N} (limit {DIVERGENCE_LIMIT:.0%})")
        if n_bad:
            logger.warning(f"{label}: 网格 N={grid.N} 上排除了 {n_bad} 条发散路径")
        good = values[~bad, g]
        means.append(np.mean(good, axis=0))
        ses.append(np.std(good, axis=0, ddof=1) / np.sqrt(good.shape[0]) if good.shape[0] > 1
                   else np.zeros_like(means[-1]))
    return np.array(means), np.array(ses), counts


def _fit(step_sizes: Sequence[float], errors: Array, usable: Array, floor_hit: bool,
         label: str) -> Tuple[Optional[float], Optional[float], ReportStatus, List[str]]:
    notes = []
    if int(np.sum(usable)) >= MIN_FIT_POINTS:
        slope, residual = fit_order(np.asarray(step_sizes)[usable], errors[usable])
        if not np.all(usable):
            notes.append(f"{int(np.sum(~usable))} grid point(s) excluded from the fit")
        return slope, residual, ReportStatus.OK, notes
    if floor_hit:
        notes.append("errors at the numerical noise floor")
        logger.info(f"{label}: 误差处于噪声地板")
        return None, None, ReportStatus.FLOOR, notes
    notes.append(f"fewer than {MIN_FIT_POINTS} signal-dominated grid points")
    logger.warning(f"{label}: 信号不足，无法拟合阶数")
    return None, None, ReportStatus.INCONCLUSIVE, notes


def _solution_scale(problem: SdeProblem) -> float:
    return max(1.0, float(np.max(np.abs(problem.initial_state))))


def _study_context(kind: str, problem: SdeProblem, scheme: SchemeSpec, grids: Sequence[TimeGrid],
                   n_paths: int, seed: int, reference: str) -> None:
    log_run_context(kind, {
        'problem': problem.name,
        'scheme': scheme.describe(),
        'grids': [g.N for g in grids],
        'T': grids[-1].T,
        'n_paths': n_paths,
        'seed': seed,
        'rng': RNG_IDENTIFIER,
        'reference': reference,
    })


# ---- 误差研究 ----

def strong_error(problem: SdeProblem, scheme: SchemeSpec, reference: Reference,
                 grids: Sequence[TimeGrid], n_paths: int, seed: int,
                 workers: Optional[int] = None) -> OrderReport:
    """E[max_i |Y_i − X_i|²] 的 Monte Carlo 估计，斜率在 RMS 尺度上报告"""
    _validate_reference(reference)
    grids = _check_nested(grids)
    label = f"strong/{problem.name}/{scheme.name}"
    ref_name = _describe_reference(reference)
    _study_context('strong_error', problem, scheme, grids, n_paths, seed, ref_name)

    def measure(states: Array, ref: Array) -> Array:
        return np.max(np.sum((states - ref) ** 2, axis=-1), axis=0)

    with log_performance(label, logger_name='analysis', n_paths=n_paths):
        values, diverged = _monte_carlo(problem, scheme, grids, n_paths, seed, reference, measure, workers)
    mean_sq, se_sq, counts = _moments(values, diverged, grids, n_paths, label)

    rms = np.sqrt(mean_sq)
    with np.errstate(divide='ignore', invalid='ignore'):
        se_rms = np.where(rms > 0.0, se_sq / (2.0 * rms), 0.0)
    floor = STRONG_FLOOR * _solution_scale(problem)
    usable = rms > FLOOR_MARGIN * floor
    slope, residual, status, notes = _fit([g.max_step for g in grids], rms, usable,
                                          bool(np.all(rms <= FLOOR_MARGIN * floor)), label)
    return OrderReport(
        quantity='strong', problem=problem.name, scheme=scheme.describe(),
        step_sizes=[g.max_step for g in grids], errors=rms.tolist(), standard_errors=se_rms.tolist(),
        fitted_slope=slope, fit_residual=residual, n_paths=n_paths, status=status, scale='rms',
        n_diverged=counts, used_in_fit=usable.tolist(), seed=seed,
        grids=[g.describe() for g in grids], reference=ref_name, notes=notes)


def weak_error(problem: SdeProblem, scheme: SchemeSpec, g: Union[str, Callable[[Array], Array]],
               reference_expectation: Optional[Union[float, Callable[[float], float]]],
               grids: Sequence[TimeGrid], n_paths: int, seed: int, reference: Reference = 'analytic',
               workers: Optional[int] = None) -> OrderReport:
    """|E[g(Y_N)] − E[g(X_T)]| 及其 Monte Carlo 标准误

    reference_expectation 为标量（或 T 的函数）时直接比较均值；
    为 None 时在同一路径上与参考解逐样本配对（reference 指定解析解或细网格解）。
    只在偏差超过 3 倍标准误的点上拟合斜率。
    """
    test = get_test_function(g, problem) if isinstance(g, str) else g
    grids = _check_nested(grids)
    coupled = reference_expectation is None
    if coupled:
        _validate_reference(reference)
    label = f"weak/{problem.name}/{scheme.name}"
    ref_name = _describe_reference(reference) if coupled else "expectation"
    _study_context('weak_error', problem, scheme, grids, n_paths, seed, ref_name)

    def measure(states: Array, ref: Optional[Array]) -> Array:
        value = np.asarray(test(states[-1]), dtype=float)
        return value - np.asarray(test(ref[-1]), dtype=float) if coupled else value

    with log_performance(label, logger_name='analysis', n_paths=n_paths):
        values, diverged = _monte_carlo(problem, scheme, grids, n_paths, seed,
                                        reference if coupled else None, measure, workers)
    means, ses, counts = _moments(values, diverged, grids, n_paths, label)

    if coupled:
        bias = np.abs(means)
    else:
        target = reference_expectation(grids[-1].T) if callable(reference_expectation) else reference_expectation
        bias = np.abs(means - float(target))
    floor = STRONG_FLOOR * _solution_scale(problem)
    usable = (bias > SIGNAL_TO_NOISE * ses) & (bias > FLOOR_MARGIN * floor)
    slope, residual, status, notes = _fit([gr.max_step for gr in grids], bias, usable,
                                          bool(np.all(bias <= FLOOR_MARGIN * floor)), label)
    return OrderReport(
        quantity='weak', problem=problem.name, scheme=scheme.describe(),
        step_sizes=[gr.max_step for gr in grids], errors=bias.tolist(), standard_errors=ses.tolist(),
        fitted_slope=slope, fit_residual=residual, n_paths=n_paths, status=status, scale='absolute',
        n_diverged=counts, used_in_fit=usable.tolist(), seed=seed,
        grids=[gr.describe() for gr in grids], reference=ref_name, notes=notes)


def manifold_drift(problem: SdeProblem, scheme: SchemeSpec, grids: Sequence[TimeGrid], n_paths: int,
                   seed: int, workers: Optional[int] = None) -> OrderReport:
    """E[max_i d(Y_i)²]，d 为到 M 的一阶距离估计；斜率在平方尺度上报告"""
    if not problem.invariants:
        raise ConfigurationError(f"{problem.name} registers no invariants")
    grids = _check_nested(grids)
    label = f"drift/{problem.name}/{scheme.name}"
    _study_context('manifold_drift', problem, scheme, grids, n_paths, seed, 'invariants')

    def measure(states: Array, ref: Optional[Array]) -> Array:
        return np.max(manifold_distance(problem, states) ** 2, axis=0)

    with log_performance(label, logger_name='analysis', n_paths=n_paths):
        values, diverged = _monte_carlo(problem, scheme, grids, n_paths, seed, None, measure, workers)
    means, ses, counts = _moments(values, diverged, grids, n_paths, label)

    usable = means > FLOOR_MARGIN * DRIFT_FLOOR
    slope, residual, status, notes = _fit([g.max_step for g in grids], means, usable,
                                          bool(np.all(means <= FLOOR_MARGIN * DRIFT_FLOOR)), label)
    return OrderReport(
        quantity='drift', problem=problem.name, scheme=scheme.describe(),
        step_sizes=[g.max_step for g in grids], errors=means.tolist(), standard_errors=ses.tolist(),
        fitted_slope=slope, fit_residual=residual, n_paths=n_paths, status=status, scale='squared',
        n_diverged=counts, used_in_fit=usable.tolist(), seed=seed,
        grids=[g.describe() for g in grids], reference='invariants', notes=notes)


def weak_manifold_drift(problem: SdeProblem, scheme: SchemeSpec, grids: Sequence[TimeGrid], n_paths: int,
                        seed: int, workers: Optional[int] = None) -> OrderReport:
    """max_j |E[g_j(Y_N) − g_j(x₀)]| 及其标准误"""
    if not problem.invariants:
        raise ConfigurationError(f"{problem.name} registers no invariants")
    grids = _check_nested(grids)
    label = f"weak-drift/{problem.name}/{scheme.name}"
    _study_context('weak_manifold_drift', problem, scheme, grids, n_paths, seed, 'invariants')
    origin = problem.evaluate_invariants(problem.initial_state)
    m = len(problem.invariants)

    def measure(states: Array, ref: Optional[Array]) -> Array:
        return problem.evaluate_invariants(states[-1]) - origin

    with log_performance(label, logger_name='analysis', n_paths=n_paths):
        values, diverged = _monte_carlo(problem, scheme, grids, n_paths, seed, None, measure, workers,
                                        per_sample_shape=(m,))
    means, ses, counts = _moments(values, diverged, grids, n_paths, label)

    worst = np.argmax(np.abs(means), axis=1)
    rows = np.arange(len(grids))
    bias = np.abs(means[rows, worst])
    se = ses[rows, worst]
    floor = STRONG_FLOOR * _solution_scale(problem)
    usable = (bias > SIGNAL_TO_NOISE * se) & (bias > FLOOR_MARGIN * floor)
    slope, residual, status, notes = _fit([g.max_step for g in grids], bias, usable,
                                          bool(np.all(bias <= FLOOR_MARGIN * floor)), label)
    return OrderReport(
        quantity='weak-drift', problem=problem.name, scheme=scheme.describe(),
        step_sizes=[g.max_step for g in grids], errors=bias.tolist(), standard_errors=se.tolist(),
        fitted_slope=slope, fit_residual=residual, n_paths=n_paths, status=status, scale='absolute',
        n_diverged=counts, used_in_fit=usable.tolist(), seed=seed,
        grids=[g.describe() for g in grids], reference='invariants', notes=notes)
