# -*- coding: utf-8 -*-
"""
冻结系数 ODE dΦ/ds = X(Φ) 在 s ∈ [0, duration] 上的定步长积分

方法：exact（问题提供的闭式流）、euler、rk4、adams8（AB8 预测 + AM8 校正，
起步历史由 Gragg-Bulirsch-Stoer 外推向后积分 7 步得到）。所有方法对带批量维度的状态 (..., n) 逐行独立。
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, DivergenceError

Array = np.ndarray
AutonomousField = Callable[[Array], Array]
ExactFlow = Callable[[Array, float], Array]


class OdeMethod(str, Enum):
    """ODE 求解方法"""
    EXACT = "exact"
    RK4 = "rk4"
    ADAMS8 = "adams8"
    EULER = "euler"


# 局部截断阶 p
_METHOD_ORDER = {
    OdeMethod.EULER: 1,
    OdeMethod.RK4: 4,
    OdeMethod.ADAMS8: 8,
}

# Adams-Bashforth 8 步系数（/120960），依次对应 f_n, f_{n-1}, ..., f_{n-7}
AB8_COEFFICIENTS = np.array([434241, -1152169, 2183877, -2664477,
                             2102243, -1041723, 295767, -36799], dtype=float) / 120960.0
# Adams-Moulton 8 阶系数（/120960），依次对应 f_{n+1}, f_n, ..., f_{n-6}
AM8_COEFFICIENTS = np.array([36799, 139849, -121797, 123133,
                             -88547, 41499, -11351, 1375], dtype=float) / 120960.0

ADAMS8_STARTER_STEPS = 7
# 中点法子步序列；对 h² 外推 4 层后局部误差为 O(h⁹)
GBS_SEQUENCE = (2, 4, 6, 8)


@dataclass(frozen=True)
class OdeSolverSpec:
    """ODE 求解器规格：方法 + 子步数"""
    method: OdeMethod = OdeMethod.RK4
    substeps: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, 'method', OdeMethod(self.method))
        except ValueError as e:
            known = ", ".join(m.value for m in OdeMethod)
            raise ConfigurationError(f"unknown ODE method '{self.method}' (known: {known})") from e
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigurationError(f"substeps must be a positive integer, got {self.substeps}")
        object.__setattr__(self, 'substeps', int(self.substeps))

    @property
    def order(self) -> float:
        """局部截断阶 p；exact 为无穷"""
        return _METHOD_ORDER.get(self.method, float('inf'))

    @property
    def goodness(self) -> float:
        """固定子步数下 γ̃ 为 (p+1)-good"""
        return self.order + 1

    def describe(self) -> dict:
        return {'method': self.method.value, 'substeps': self.substeps}

    def __str__(self) -> str:
        return f"{self.method.value}x{self.substeps}"


DEFAULT_SOLVER = OdeSolverSpec(OdeMethod.RK4, 1)
NEAR_EXACT_SOLVER = OdeSolverSpec(OdeMethod.ADAMS8, 4)


def _evaluate(field: AutonomousField, y: Array, history: List[Array], step: int) -> Array:
    dy = np.asarray(field(y), dtype=float)
    if not np.all(np.isfinite(dy)):
        raise DivergenceError(f"vector field is non-finite after {step} substeps",
                              last_finite_index=step, partial=np.array(history))
    return dy


def _accept(y: Array, history: List[Array], step: int) -> None:
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"flow state became non-finite at substep {step}",
                              last_finite_index=step - 1, partial=np.array(history))
    history.append(y)


def euler_flow(field: AutonomousField, x0: Array, substeps: int, duration: float = 1.0) -> Array:
    """显式 Euler"""
    y = np.array(x0, dtype=float)
    h = duration / substeps
    history = [y]
    for step in range(substeps):
        y = y + h * _evaluate(field, y, history, step)
        _accept(y, history, step + 1)
    return y


def _rk4_step(field: AutonomousField, y: Array, h: float, history: List[Array], step: int) -> Array:
    k1 = _evaluate(field, y, history, step)
    k2 = _evaluate(field, y + 0.5 * h * k1, history, step)
    k3 = _evaluate(field, y + 0.5 * h * k2, history, step)
    k4 = _evaluate(field, y + h * k3, history, step)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_flow(field: AutonomousField, x0: Array, substeps: int, duration: float = 1.0) -> Array:
    """经典四阶 Runge-Kutta"""
    y = np.array(x0, dtype=float)
    h = duration / substeps
    history = [y]
    for step in range(substeps):
        y = _rk4_step(field, y, h, history, step)
        _accept(y, history, step + 1)
    return y


def _gbs_step(field: AutonomousField, y: Array, h: float, history: List[Array], step: int) -> Array:
    """一步 Gragg 修正中点法 + 对 h² 的 Neville 外推，8 阶单步格式"""
    f0 = _evaluate(field, y, history, step)
    previous_row: List[Array] = []
    for i, n in enumerate(GBS_SEQUENCE):
        sub = h / n
        z_prev, z = y, y + sub * f0
        for _ in range(n - 1):
            z_prev, z = z, z_prev + 2.0 * sub * _evaluate(field, z, history, step)
        row = [0.5 * (z + z_prev + sub * _evaluate(field, z, history, step))]
        for j in range(1, i + 1):
            ratio = (n / GBS_SEQUENCE[i - j]) ** 2
            row.append(row[j - 1] + (row[j - 1] - previous_row[j - 1]) / (ratio - 1.0))
        previous_row = row
    return previous_row[-1]


def adams8_flow(field: AutonomousField, x0: Array, substeps: int, duration: float = 1.0) -> Array:
    """8 阶 Adams PECE

    先用 8 阶外推单步格式从 x0 向后积分 7 步，得到 s = −h, ..., −7h 处的导数作为起步历史，
    之后全部 substeps 步都是 Adams 步，误差常数与子步数无关。
    """
    y = np.array(x0, dtype=float)
    h = duration / substeps
    history = [y]
    derivatives = [_evaluate(field, y, history, 0)]

    z = y
    for _ in range(ADAMS8_STARTER_STEPS):
        z = _gbs_step(field, z, -h, history, 0)
        if not np.all(np.isfinite(z)):
            raise DivergenceError("adams8 starter history became non-finite",
                                  last_finite_index=0, partial=np.array(history))
        derivatives.insert(0, _evaluate(field, z, history, 0))

    for step in range(substeps):
        # derivatives[-1] = f_n，倒序取最近 8 个
        recent = derivatives[-1:-9:-1]
        predictor = y + h * sum(c * f for c, f in zip(AB8_COEFFICIENTS, recent))
        f_pred = _evaluate(field, predictor, history, step)
        y = y + h * (AM8_COEFFICIENTS[0] * f_pred
                     + sum(c * f for c, f in zip(AM8_COEFFICIENTS[1:], recent[:7])))
        _accept(y, history, step + 1)
        derivatives.append(_evaluate(field, y, history, step + 1))
        del derivatives[:-8]
    return y


def linear_exact_flow(matrix: Array) -> ExactFlow:
    """线性场 X(y) = A y 的闭式流 Φ_s(y) = exp(sA) y"""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"linear flow needs a square matrix, got shape {A.shape}")

    def exact(y: Array, s: float) -> Array:
        return np.einsum('ij,...j->...i', expm(s * A), np.asarray(y, dtype=float))

    return exact


def flow(field: AutonomousField, x0: Array, spec: OdeSolverSpec = DEFAULT_SOLVER,
         duration: float = 1.0, exact_flow: Optional[ExactFlow] = None) -> Array:
    """近似时间 duration 流映射 Φ_duration(x0)

    method=exact 时必须提供 exact_flow(x, s)。非有限状态抛出携带部分轨迹的 DivergenceError。
    """
    if spec.method == OdeMethod.EXACT:
        if exact_flow is None:
            raise ConfigurationError("exact ODE method requested but no closed-form flow is available")
        y = np.asarray(exact_flow(np.asarray(x0, dtype=float), duration), dtype=float)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("closed-form flow returned non-finite values",
                                  last_finite_index=0, partial=np.array([x0]))
        return y
    if spec.method == OdeMethod.RK4:
        return rk4_flow(field, x0, spec.substeps, duration)
    if spec.method == OdeMethod.ADAMS8:
        return adams8_flow(field, x0, spec.substeps, duration)
    return euler_flow(field, x0, spec.substeps, duration)
