# -*- coding: utf-8 -*-
"""
SDE 模型：Itô / Stratonovich 形式的问题定义与相互转换

    dX = a(X,t) dt + Σ_α b_α(X,t) dW^α          (Itô)
    dX = ā(X,t) dt + Σ_α b_α(X,t) ∘ dW^α        (Stratonovich)
    ā = a − ½ Σ_α (∂b_α/∂x) b_α

所有向量场都接受带批量前缀维度的状态 (..., n)。
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, NumericalDomainError

Array = np.ndarray
VectorField = Callable[[Array, float], Array]
DiffusionField = Callable[[Array, float, int], Array]
MatrixField = Callable[[Array, float], Array]
DiffusionJacobian = Callable[[Array, float, int], Array]
Invariant = Callable[[Array], Array]

# 中心差分步长 h = cbrt(eps)·max(1, |x_j|)
_CBRT_EPS = float(np.cbrt(np.finfo(float).eps))


def _central_differences(func: Callable[[Array], Array], x: Array) -> Array:
    """对 func 逐分量做中心差分，导数方向放在最后一维"""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    steps = _CBRT_EPS * np.maximum(1.0, np.abs(x))
    columns = []
    for j in range(n):
        offset = np.zeros_like(x)
        offset[..., j] = steps[..., j]
        x_plus = x + offset
        x_minus = x - offset
        width = (x_plus - x_minus)[..., j]
        f_plus = np.asarray(func(x_plus), dtype=float)
        f_minus = np.asarray(func(x_minus), dtype=float)
        extra = f_plus.ndim - width.ndim
        columns.append((f_plus - f_minus) / width.reshape(width.shape + (1,) * extra))
    result = np.stack(columns, axis=-1)
    if not np.all(np.isfinite(result)):
        raise NumericalDomainError("finite-difference derivative produced non-finite values")
    return result


def finite_difference_jacobian(f: VectorField, x: Array, t: float = 0.0) -> Array:
    """中心差分 Jacobian，返回 (..., m, n)，J[..., i, j] = ∂f^i/∂x^j"""
    return _central_differences(lambda y: f(y, t), x)


def finite_difference_gradient(g: Invariant, x: Array) -> Array:
    """标量函数的中心差分梯度，返回 (..., n)"""
    return _central_differences(g, x)


@dataclass(frozen=True)
class SdeProblem:
    """Itô 形式的 SDE 问题

    diffusion_jacobian 为 None 时使用有限差分（除非关闭 finite_difference_fallback）。
    drift_strat 可选：已知的解析 Stratonovich 漂移，必须与转换公式一致。
    exact_jet_flow(x, t, v, kind) 为 jet 向量场的闭式时间 1 流；
    exact_solution(x0, t, W_t) 为按路径的解析解。
    """
    name: str
    dim_state: int
    dim_noise: int
    drift_ito: VectorField
    diffusion: DiffusionField
    initial_state: Array
    diffusion_jacobian: Optional[DiffusionJacobian] = None
    drift_strat: Optional[VectorField] = None
    drift_strat_jacobian: Optional[MatrixField] = None
    invariants: Tuple[Invariant, ...] = ()
    invariant_names: Tuple[str, ...] = ()
    state_names: Tuple[str, ...] = ()
    exact_jet_flow: Optional[Callable[[Array, float, Array, str], Array]] = None
    exact_solution: Optional[Callable[[Array, Array, Array], Array]] = None
    finite_difference_fallback: bool = True
    description: str = ""
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ConfigurationError(
                f"{self.name}: dim_state and dim_noise must be >= 1 "
                f"(got {self.dim_state}, {self.dim_noise})")

        x0 = np.array(self.initial_state, dtype=float).reshape(-1)
        if x0.shape != (self.dim_state,):
            raise ConfigurationError(
                f"{self.name}: initial_state has length {x0.size}, expected {self.dim_state}")
        x0.setflags(write=False)
        object.__setattr__(self, 'initial_state', x0)

        invariants = tuple(self.invariants)
        names = tuple(self.invariant_names) or tuple(f"g{j + 1}" for j in range(len(invariants)))
        if len(names) != len(invariants):
            raise ConfigurationError(f"{self.name}: {len(invariants)} invariants but {len(names)} names")
        object.__setattr__(self, 'invariants', invariants)
        object.__setattr__(self, 'invariant_names', names)

        state_names = tuple(self.state_names) or tuple(f"x{i + 1}" for i in range(self.dim_state))
        if len(state_names) != self.dim_state:
            raise ConfigurationError(f"{self.name}: state_names must have {self.dim_state} entries")
        object.__setattr__(self, 'state_names', state_names)
        object.__setattr__(self, 'parameters', dict(self.parameters))

        self._check_shapes()

    def _check_shapes(self):
        """在初始状态处检查漂移与扩散列的维度"""
        x0 = np.array(self.initial_state)
        drift = np.asarray(self.drift_ito(x0, 0.0))
        if drift.shape != (self.dim_state,):
            raise ConfigurationError(f"{self.name}: drift returned shape {drift.shape}, expected ({self.dim_state},)")
        for alpha in range(self.dim_noise):
            column = np.asarray(self.diffusion(x0, 0.0, alpha))
            if column.shape != (self.dim_state,):
                raise ConfigurationError(
                    f"{self.name}: diffusion column {alpha} returned shape {column.shape}, "
                    f"expected ({self.dim_state},)")

    def diffusion_columns(self, x: Array, t: float) -> Array:
        """全部扩散列，形状 (..., k, n)"""
        return np.stack([np.asarray(self.diffusion(x, t, alpha), dtype=float)
                         for alpha in range(self.dim_noise)], axis=-2)

    def diffusion_jacobian_at(self, x: Array, t: float, alpha: int) -> Array:
        """∂b_α/∂x，解析优先，否则有限差分"""
        if self.diffusion_jacobian is not None:
            jac = np.asarray(self.diffusion_jacobian(x, t, alpha), dtype=float)
        elif self.finite_difference_fallback:
            jac = finite_difference_jacobian(lambda y, s: self.diffusion(y, s, alpha), x, t)
        else:
            raise ConfigurationError(f"{self.name}: no diffusion Jacobian and finite differences disabled")
        expected = np.shape(x)[:-1] + (self.dim_state, self.dim_state)
        if jac.shape != expected:
            raise ConfigurationError(
                f"{self.name}: diffusion Jacobian {alpha} has shape {jac.shape}, expected {expected}")
        return jac

    def evaluate_invariants(self, x: Array) -> Array:
        """所有不变量的取值，形状 (..., m)"""
        x = np.asarray(x, dtype=float)
        if not self.invariants:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([np.asarray(g(x), dtype=float) for g in self.invariants], axis=-1)

    def check_jacobian(self, n_points: int = 20, seed: int = 0, rtol: float = 1e-5,
                       scale: float = 0.5) -> List[str]:
        """在初始状态附近的随机采样点上比较解析 Jacobian 与中心差分，返回问题列表"""
        issues: List[str] = []
        if self.diffusion_jacobian is None:
            return issues
        rng = np.random.default_rng(seed)
        points = self.initial_state + scale * rng.standard_normal((n_points, self.dim_state))
        for alpha in range(self.dim_noise):
            analytic = self.diffusion_jacobian_at(points, 0.0, alpha)
            numeric = finite_difference_jacobian(lambda y, s: self.diffusion(y, s, alpha), points, 0.0)
            tolerance = rtol * np.maximum(1.0, np.abs(numeric))
            if np.any(np.abs(analytic - numeric) > tolerance):
                worst = float(np.max(np.abs(analytic - numeric)))
                issues.append(f"diffusion Jacobian {alpha} differs from finite differences by {worst:.3e}")
        return issues


@dataclass(frozen=True)
class StratonovichDrift:
    """Stratonovich 漂移 ā(x,t)"""
    value: VectorField

    def __call__(self, x: Array, t: float) -> Array:
        return self.value(x, t)


def ito_correction(problem: SdeProblem, x: Array, t: float) -> Array:
    """½ Σ_α (∂b_α/∂x) b_α"""
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1] + (problem.dim_state,))
    for alpha in range(problem.dim_noise):
        jac = problem.diffusion_jacobian_at(x, t, alpha)
        column = np.asarray(problem.diffusion(x, t, alpha), dtype=float)
        if column.shape[-1] != jac.shape[-1]:
            raise ConfigurationError(
                f"{problem.name}: Jacobian of column {alpha} does not match the diffusion dimension")
        total = total + np.einsum('...ij,...j->...i', jac, column)
    return 0.5 * total


def stratonovich_drift(problem: SdeProblem, use_supplied: bool = True) -> StratonovichDrift:
    """ā = a − ½ Σ_α (∂b_α/∂x) b_α

    use_supplied=True 时若问题自带解析 ā 则直接使用。
    """
    if use_supplied and problem.drift_strat is not None:
        return StratonovichDrift(problem.drift_strat)

    def value(x: Array, t: float) -> Array:
        return np.asarray(problem.drift_ito(x, t), dtype=float) - ito_correction(problem, x, t)

    return StratonovichDrift(value)


def ito_drift_from_stratonovich(strat: StratonovichDrift, problem: SdeProblem) -> VectorField:
    """a = ā + ½ Σ_α (∂b_α/∂x) b_α"""

    def drift(x: Array, t: float) -> Array:
        return np.asarray(strat(x, t), dtype=float) + ito_correction(problem, x, t)

    return drift


def drift_strat_jacobian_at(problem: SdeProblem, strat: StratonovichDrift, x: Array, t: float) -> Array:
    """∂ā/∂x，解析优先，否则对 ā 做有限差分"""
    if problem.drift_strat_jacobian is not None:
        return np.asarray(problem.drift_strat_jacobian(x, t), dtype=float)
    if not problem.finite_difference_fallback:
        raise ConfigurationError(f"{problem.name}: no Stratonovich drift Jacobian and finite differences disabled")
    return finite_difference_jacobian(strat, x, t)


# ---- 问题注册表 ----

@dataclass(frozen=True)
class ProblemEntry:
    name: str
    factory: Callable[..., SdeProblem]
    description: str = ""


_REGISTRY: Dict[str, ProblemEntry] = {}


def register_problem(name: str, factory: Callable[..., SdeProblem], description: str = "",
                     replace: bool = False) -> None:
    """以字符串名称注册问题工厂"""
    if name in _REGISTRY and not replace:
        raise ConfigurationError(f"problem '{name}' is already registered")
    _REGISTRY[name] = ProblemEntry(name, factory, description)


def _ensure_builtin_problems():
    # problems 模块在导入时注册内置问题
    from . import problems  # noqa: F401


def list_problems() -> List[ProblemEntry]:
    _ensure_builtin_problems()
    return [_REGISTRY[name] for name in sorted(_REGISTRY)]


def get_problem(name: str, **params: Any) -> SdeProblem:
    """按名称构造问题；未知名称或参数抛出 ConfigurationError"""
    _ensure_builtin_problems()
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise ConfigurationError(f"unknown problem '{name}' (known: {known})")
    try:
        return _REGISTRY[name].factory(**params)
    except TypeError as e:
        raise ConfigurationError(f"invalid parameters for problem '{name}': {e}") from e
