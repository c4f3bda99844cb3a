# -*- coding: utf-8 -*-
"""
步进格式：Euler-Maruyama、(δt)-jet、(δW)²-jet 以及 2/3 阶展开 jet 格式

jet 向量场 X(x; t, v) = Σ_α v^α b_α(x,t) + c(v)·ā(x,t)，
c(v) = v⁰（dt_jet）或 (1/k)Σ_α (v^α)²（dw2_jet）；一步为 X 的时间 1 流，
系数时间冻结在步长左端点。v = (δt, δW¹, ..., δW^k)。
"""

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .brownian import BrownianPath, TimeGrid
from .errors import ConfigurationError, DivergenceError, NumericalDomainError, UsageError
from .ode_flow import DEFAULT_SOLVER, NEAR_EXACT_SOLVER, OdeMethod, OdeSolverSpec, flow
from .sde_model import SdeProblem, StratonovichDrift, drift_strat_jacobian_at, stratonovich_drift
from .utils.logging_system import get_logger

logger = get_logger('schemes')

Array = np.ndarray


class JetKind(str, Enum):
    DT_JET = "dt_jet"
    DW2_JET = "dw2_jet"
    EXPANSION = "expansion"


@dataclass(frozen=True)
class JetVariant:
    """jet 变体：dt_jet、dw2_jet，或基于其中之一的 r 阶展开（r ∈ {2, 3}）"""
    kind: JetKind = JetKind.DT_JET
    order: Optional[int] = None
    base: JetKind = JetKind.DT_JET

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', JetKind(self.kind))
            object.__setattr__(self, 'base', JetKind(self.base))
        except ValueError as e:
            raise ConfigurationError(f"unknown jet variant: {e}") from e
        if self.kind == JetKind.EXPANSION:
            if self.order not in (2, 3):
                raise ConfigurationError(f"expansion order must be 2 or 3, got {self.order}")
            if self.base == JetKind.EXPANSION:
                raise ConfigurationError("expansion base must be dt_jet or dw2_jet")
        elif self.order is not None:
            raise ConfigurationError("only expansion variants carry an order")
        else:
            object.__setattr__(self, 'base', self.kind)

    @classmethod
    def dt(cls) -> 'JetVariant':
        return cls(JetKind.DT_JET)

    @classmethod
    def dw2(cls) -> 'JetVariant':
        return cls(JetKind.DW2_JET)

    @classmethod
    def expansion(cls, order: int, base: Union[JetKind, str] = JetKind.DT_JET) -> 'JetVariant':
        return cls(JetKind.EXPANSION, order, JetKind(base))

    @property
    def is_expansion(self) -> bool:
        return self.kind == JetKind.EXPANSION

    def __str__(self) -> str:
        if self.is_expansion:
            return f"expansion{self.order}-{self.base.value}"
        return self.kind.value


@dataclass(frozen=True)
class StepInput:
    """一步的输入：Y_i、左端点 t_i、步长 δt_i、增量 δW_i"""
    state: Array
    t: float
    dt: float
    dW: Array

    def __post_init__(self):
        if not self.dt >= 0.0:
            raise ConfigurationError(f"step length must be non-negative, got {self.dt}")
        object.__setattr__(self, 'state', np.asarray(self.state, dtype=float))
        object.__setattr__(self, 'dW', np.asarray(self.dW, dtype=float))

    @property
    def v(self) -> Array:
        """(δt, δW¹, ..., δW^k)，带与 dW 相同的批量维度"""
        dt = np.full(self.dW.shape[:-1] + (1,), float(self.dt))
        return np.concatenate([dt, self.dW], axis=-1)


class SchemeKind(str, Enum):
    EM = "em"
    JET = "jet"


@dataclass(frozen=True)
class SchemeSpec:
    """格式规格：Euler-Maruyama，或 jet 变体 + ODE 求解器"""
    kind: SchemeKind = SchemeKind.JET
    variant: Optional[JetVariant] = None
    solver: OdeSolverSpec = DEFAULT_SOLVER

    def __post_init__(self):
        object.__setattr__(self, 'kind', SchemeKind(self.kind))
        if self.kind == SchemeKind.JET and self.variant is None:
            object.__setattr__(self, 'variant', JetVariant.dt())
        if self.kind == SchemeKind.EM and self.variant is not None:
            raise ConfigurationError("Euler-Maruyama takes no jet variant")

    @classmethod
    def em(cls) -> 'SchemeSpec':
        return cls(SchemeKind.EM)

    @classmethod
    def jet(cls, variant: Optional[JetVariant] = None,
            solver: OdeSolverSpec = DEFAULT_SOLVER) -> 'SchemeSpec':
        return cls(SchemeKind.JET, variant or JetVariant.dt(), solver)

    @property
    def name(self) -> str:
        if self.kind == SchemeKind.EM:
            return "em"
        if self.variant.is_expansion:
            return str(self.variant)
        return f"{self.variant}[{self.solver}]"

    def describe(self) -> Dict[str, Any]:
        info: Dict[str, Any] = {'kind': self.kind.value, 'name': self.name}
        if self.kind == SchemeKind.JET:
            info['variant'] = str(self.variant)
            if not self.variant.is_expansion:
                info['solver'] = self.solver.describe()
        return info


# ---- 步进规则 ----

def euler_maruyama_step(problem: SdeProblem, inp: StepInput) -> Array:
    """Y + a(Y,t)·δt + Σ_α b_α(Y,t)·δW^α"""
    x = inp.state
    out = x + np.asarray(problem.drift_ito(x, inp.t), dtype=float) * inp.dt
    for alpha in range(problem.dim_noise):
        out = out + np.asarray(problem.diffusion(x, inp.t, alpha), dtype=float) * inp.dW[..., alpha:alpha + 1]
    if not np.all(np.isfinite(out)):
        raise DivergenceError("Euler-Maruyama step produced non-finite values")
    return out


def _ito_weight(kind: JetKind, v: Array, k: int) -> Array:
    """ā 的系数 c(v)"""
    if kind == JetKind.DT_JET:
        return v[..., 0]
    return np.sum(v[..., 1:] ** 2, axis=-1) / k


def _check_v(problem: SdeProblem, v: Array) -> Array:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != problem.dim_noise + 1:
        raise ConfigurationError(
            f"{problem.name}: v must have {problem.dim_noise + 1} components, got {v.shape[-1]}")
    return v


def jet_vector_field(problem: SdeProblem, variant: JetVariant, t: float, v: Array,
                     strat: Optional[StratonovichDrift] = None) -> Callable[[Array], Array]:
    """x ↦ Σ_α v^α b_α(x,t) + c(v)·ā(x,t)，t 冻结"""
    if variant.is_expansion:
        raise UsageError("jet_vector_field takes dt_jet or dw2_jet, not an expansion variant")
    v = _check_v(problem, v)
    strat = strat or stratonovich_drift(problem)
    weights = v[..., 1:]
    c = _ito_weight(variant.kind, v, problem.dim_noise)[..., None]

    def field(x: Array) -> Array:
        out = c * np.asarray(strat(x, t), dtype=float)
        for alpha in range(problem.dim_noise):
            out = out + weights[..., alpha:alpha + 1] * np.asarray(problem.diffusion(x, t, alpha), dtype=float)
        return out

    return field


def jet_map(problem: SdeProblem, variant: JetVariant, spec: OdeSolverSpec, x: Array, t: float,
            v: Array, strat: Optional[StratonovichDrift] = None) -> Array:
    """γ̃(x, t, v)：jet 向量场的时间 1 流，v 可取任意实数分量"""
    v = _check_v(problem, v)
    if spec.method == OdeMethod.EXACT:
        if problem.exact_jet_flow is None:
            raise ConfigurationError(f"{problem.name}: no closed-form jet flow; choose rk4 or adams8")
        out = np.asarray(problem.exact_jet_flow(x, t, v, variant.kind.value), dtype=float)
        if not np.all(np.isfinite(out)):
            raise DivergenceError("closed-form jet flow returned non-finite values")
        return out
    return flow(jet_vector_field(problem, variant, t, v, strat), x, spec)


def jet_step(problem: SdeProblem, variant: JetVariant, spec: OdeSolverSpec, inp: StepInput,
             strat: Optional[StratonovichDrift] = None) -> Array:
    """flow(jet_vector_field(problem, variant, t, (δt, δW)), Y, spec)"""
    if variant.is_expansion:
        raise UsageError("jet_step takes dt_jet or dw2_jet; use expansion_jet_step for expansions")
    return jet_map(problem, variant, spec, inp.state, inp.t, inp.v, strat)


# 三阶展开：在 s ∈ {0, ±0.1, ±0.2} 处对 s ↦ γ(x, t, s·v) 做 4 次插值
_INTERPOLATION_NODES = np.array([-0.2, -0.1, 0.0, 0.1, 0.2])
_INVERSE_VANDERMONDE = np.linalg.inv(np.vander(_INTERPOLATION_NODES, 5, increasing=True))


def _second_order_expansion(problem: SdeProblem, base: JetKind, x: Array, t: float, v: Array,
                            strat: StratonovichDrift) -> Array:
    """x + X + ½(DX)X，其中 DX = Σ_α v^α ∂b_α/∂x (+ v⁰ ∂ā/∂x 对 dt_jet)"""
    k = problem.dim_noise
    abar = np.asarray(strat(x, t), dtype=float)
    columns = [np.asarray(problem.diffusion(x, t, alpha), dtype=float) for alpha in range(k)]
    c = _ito_weight(base, v, k)[..., None]

    diffusion_part = sum(v[..., 1 + alpha:2 + alpha] * columns[alpha] for alpha in range(k))
    X = diffusion_part + c * abar

    if base == JetKind.DT_JET:
        # dt_jet 下 ā 项关于 v 是一次的，二阶项为 (DX)X
        target = X
    else:
        # dw2_jet 下 c(v)ā 已是二次项，二阶项只剩 (DB)B
        target = diffusion_part

    second = np.zeros_like(X)
    for alpha in range(k):
        jac = problem.diffusion_jacobian_at(x, t, alpha)
        second = second + v[..., 1 + alpha:2 + alpha] * np.einsum('...ij,...j->...i', jac, target)
    if base == JetKind.DT_JET:
        jac_abar = drift_strat_jacobian_at(problem, strat, x, t)
        second = second + v[..., 0:1] * np.einsum('...ij,...j->...i', jac_abar, target)
    return x + X + 0.5 * second


def _third_order_expansion(problem: SdeProblem, base: JetKind, x: Array, t: float, v: Array,
                           strat: StratonovichDrift, oracle: OdeSolverSpec) -> Array:
    """s ↦ γ(x, t, s·v) 的前四个 Taylor 系数之和（插值求得）"""
    variant = JetVariant(base)
    samples = []
    for s in _INTERPOLATION_NODES:
        if s == 0.0:
            samples.append(np.asarray(x, dtype=float))
        else:
            samples.append(jet_map(problem, variant, oracle, x, t, s * v, strat))
    samples = np.stack(samples, axis=0)
    coefficients = np.einsum('mi,i...->m...', _INVERSE_VANDERMONDE, samples)
    return x + coefficients[1] + coefficients[2] + coefficients[3]


def expansion_jet_step(problem: SdeProblem, order: int, base: Union[JetKind, str], inp: StepInput,
                       strat: Optional[StratonovichDrift] = None,
                       oracle: Optional[OdeSolverSpec] = None) -> Array:
    """r 阶展开 jet 格式：γ 关于 v 的 r 次 Taylor 多项式在 v = (δt, δW) 处的值

    r=2 用解析系数；r=3 对精确流（没有时用 adams8）做插值求系数。
    """
    base = JetKind(base)
    if base == JetKind.EXPANSION:
        raise UsageError("expansion base must be dt_jet or dw2_jet")
    if order not in (2, 3):
        raise ConfigurationError(f"expansion order must be 2 or 3, got {order}")
    strat = strat or stratonovich_drift(problem)
    v = _check_v(problem, inp.v)
    if order == 2:
        out = _second_order_expansion(problem, base, inp.state, inp.t, v, strat)
    else:
        if oracle is None:
            oracle = OdeSolverSpec(OdeMethod.EXACT) if problem.exact_jet_flow is not None else NEAR_EXACT_SOLVER
        out = _third_order_expansion(problem, base, inp.state, inp.t, v, strat, oracle)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("expansion step produced non-finite values")
    return out


Stepper = Callable[[StepInput], Array]


def make_stepper(problem: SdeProblem, scheme: SchemeSpec) -> Stepper:
    """为问题和格式构造步进函数；ā 只构造一次"""
    if scheme.kind == SchemeKind.EM:
        return lambda inp: euler_maruyama_step(problem, inp)

    strat = stratonovich_drift(problem)
    variant = scheme.variant
    if variant.is_expansion:
        return lambda inp: expansion_jet_step(problem, variant.order, variant.base, inp, strat)
    if scheme.solver.method == OdeMethod.EXACT and problem.exact_jet_flow is None:
        raise ConfigurationError(f"{problem.name}: no closed-form jet flow; choose rk4 or adams8")
    return lambda inp: jet_step(problem, variant, scheme.solver, inp, strat)


# ---- 轨迹 ----

@dataclass
class Trajectory:
    """迭代值 Y_i 及各不变量 g_j(Y_i)

    states 形状 (N+1, n) 或批量 (N+1, P, n)；invariant_log 形状 (N+1, [P,] m)。
    批量时 diverged 标记发散的样本，其后续状态为 NaN。
    """
    grid: TimeGrid
    states: Array
    invariant_log: Array
    problem_name: str = ""
    scheme: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    diverged: Optional[Array] = None
    state_names: Sequence[str] = ()
    invariant_names: Sequence[str] = ()

    @property
    def batched(self) -> bool:
        return self.states.ndim == 3

    @property
    def final_state(self) -> Array:
        return self.states[-1]

    @property
    def n_diverged(self) -> int:
        return 0 if self.diverged is None else int(np.sum(self.diverged))

    @property
    def last_finite_index(self) -> int:
        finite = np.all(np.isfinite(self.states.reshape(self.states.shape[0], -1)), axis=-1)
        return int(np.flatnonzero(finite)[-1]) if np.any(finite) else -1

    def invariant_deviation(self) -> Array:
        """|g_j(Y_i) − g_j(Y_0)|"""
        return np.abs(self.invariant_log - self.invariant_log[0])

    def sample(self, p: int) -> 'Trajectory':
        if not self.batched:
            return self
        return Trajectory(self.grid, self.states[:, p], self.invariant_log[:, p], self.problem_name,
                          self.scheme, self.seed, None, self.state_names, self.invariant_names)

    def write_csv(self, file: Union[str, Path], sample: int = 0,
                  extra_columns: Optional[Dict[str, Array]] = None) -> Path:
        """导出 CSV：t, 状态分量, 不变量（以及可选的附加列）；只写到最后一个有限行"""
        single = self.sample(sample)
        rows = single.last_finite_index + 1
        names = list(self.state_names) or [f"x{i + 1}" for i in range(single.states.shape[-1])]
        inv_names = list(self.invariant_names) or [f"g{j + 1}" for j in range(single.invariant_log.shape[-1])]
        extra = extra_columns or {}
        file = Path(file)
        file.parent.mkdir(parents=True, exist_ok=True)
        with open(file, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(['t'] + names + inv_names + list(extra))
            for i, t in enumerate(self.grid.points[:rows]):
                row = [t, *single.states[i], *single.invariant_log[i], *(col[i] for col in extra.values())]
                writer.writerow([repr(float(value)) for value in row])
        return file


def _step_rows_individually(stepper: Stepper, x: Array, t: float, dt: float, dW: Array):
    """批量步进失败时逐行重试，返回 (新状态, 失败行掩码)"""
    out = np.full_like(x, np.nan)
    failed = np.zeros(x.shape[0], dtype=bool)
    for row in range(x.shape[0]):
        try:
            out[row] = stepper(StepInput(x[row], t, dt, dW[row]))
        except NumericalDomainError:
            failed[row] = True
    failed |= ~np.all(np.isfinite(out), axis=-1)
    return out, failed


def simulate(problem: SdeProblem, scheme: SchemeSpec, path: BrownianPath,
             x0: Optional[Array] = None) -> Trajectory:
    """在路径网格上迭代步进规则

    单条路径发散时抛出 DivergenceError（附最后有限下标与部分轨迹）；
    批量路径中的发散样本被隔离、置为 NaN 并计数。
    """
    if path.dim_noise != problem.dim_noise:
        raise ConfigurationError(
            f"{problem.name}: path has {path.dim_noise} noise components, problem needs {problem.dim_noise}")
    stepper = make_stepper(problem, scheme)
    grid = path.grid
    dW = path.increments()
    start = np.asarray(problem.initial_state if x0 is None else x0, dtype=float)

    if path.batched:
        states = np.empty((grid.N + 1, path.n_paths, problem.dim_state))
        states[0] = np.broadcast_to(start, (path.n_paths, problem.dim_state))
        active = np.ones(path.n_paths, dtype=bool)
    else:
        states = np.empty((grid.N + 1, problem.dim_state))
        states[0] = start
        active = None

    for i in range(grid.N):
        t, dt = float(grid.points[i]), float(grid.points[i + 1] - grid.points[i])
        if active is None:
            try:
                nxt = stepper(StepInput(states[i], t, dt, dW[i]))
                if not np.all(np.isfinite(nxt)):
                    raise DivergenceError("non-finite state")
            except NumericalDomainError as e:
                partial = _trajectory(problem, scheme, grid, states, path.seed, last=i)
                raise DivergenceError(f"{problem.name} / {scheme.name}: diverged at step {i + 1}: {e}",
                                      last_finite_index=i, partial=partial) from e
            states[i + 1] = nxt
            continue

        states[i + 1] = np.nan
        rows = np.flatnonzero(active)
        if rows.size == 0:
            continue
        x, w = states[i, rows], dW[i, rows]
        try:
            nxt = stepper(StepInput(x, t, dt, w))
            failed = ~np.all(np.isfinite(nxt), axis=-1)
        except NumericalDomainError:
            nxt, failed = _step_rows_individually(stepper, x, t, dt, w)
        if np.any(failed):
            logger.warning(f"{problem.name} / {scheme.name}: {int(failed.sum())} 条路径在第 {i + 1} 步发散")
            active[rows[failed]] = False
        states[i + 1, rows[~failed]] = nxt[~failed]

    trajectory = _trajectory(problem, scheme, grid, states, path.seed)
    if active is not None:
        trajectory.diverged = ~active
    return trajectory


def _trajectory(problem: SdeProblem, scheme: SchemeSpec, grid: TimeGrid, states: Array,
                seed: Optional[int], last: Optional[int] = None) -> Trajectory:
    if last is not None:
        # 最后一个有限下标之后记为 NaN
        states = np.array(states)
        states[last + 1:] = np.nan
    with np.errstate(invalid='ignore'):
        invariants = _safe_invariants(problem, states)
    return Trajectory(grid, np.array(states), invariants, problem.name, scheme.describe(), seed,
                      None, problem.state_names, problem.invariant_names)


def _safe_invariants(problem: SdeProblem, states: Array) -> Array:
    """发散样本为 NaN 时不变量同样记为 NaN"""
    finite = np.all(np.isfinite(states), axis=-1)
    out = np.full(states.shape[:-1] + (len(problem.invariants),), np.nan)
    if np.any(finite):
        out[finite] = problem.evaluate_invariants(states[finite])
    return out
