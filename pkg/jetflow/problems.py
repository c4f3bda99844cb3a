# -*- coding: utf-8 -*-
"""
内置 SDE 问题与微分同胚前推

- kepler / kepler-modulated：带噪声的 Kepler 问题，坐标 (r, p, θ, φ)，角动量 h = r²φ 守恒
- disguised-linear / gbm / multiplicative：Y = F(X)，X 为加性噪声 SDE，jet 格式对其精确
- circle：单位圆上的旋转扩散
- pushforward：按 Itô 引理把问题搬到新坐标
"""

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericalDomainError
from .sde_model import (SdeProblem, finite_difference_jacobian, register_problem,
                        stratonovich_drift)

Array = np.ndarray
ScalarFunction = Callable[[Array], Array]


def _constant(value: float) -> ScalarFunction:
    return lambda r: np.full(np.shape(r), float(value))


def _zero(r: Array) -> Array:
    return np.zeros(np.shape(r))


# ---- Kepler ----

@dataclass(frozen=True)
class KeplerParams:
    """Kepler 问题参数

    xi1、xi2 为噪声幅度 ξ(r)，导数用于 Itô 修正；势函数默认 V(r) = −1/r。
    """
    xi1: ScalarFunction = field(default_factory=lambda: _constant(0.05))
    xi2: ScalarFunction = field(default_factory=lambda: _constant(0.25))
    xi1_deriv: ScalarFunction = _zero
    xi2_deriv: ScalarFunction = _zero
    potential: ScalarFunction = lambda r: -1.0 / r
    potential_deriv: ScalarFunction = lambda r: 1.0 / r ** 2
    potential_second_deriv: ScalarFunction = lambda r: -2.0 / r ** 3
    initial: Tuple[float, float, float, float] = (1.0, 0.2, 1.0, 1.2)
    noiseless: bool = False
    label: str = "constant"

    @classmethod
    def constant(cls, xi1: float = 0.05, xi2: float = 0.25,
                 initial: Sequence[float] = (1.0, 0.2, 1.0, 1.2)) -> 'KeplerParams':
        """ξ 为常数"""
        return cls(xi1=_constant(xi1), xi2=_constant(xi2), initial=tuple(initial),
                   noiseless=(xi1 == 0.0 and xi2 == 0.0),
                   label="noiseless" if xi1 == 0.0 and xi2 == 0.0 else "constant")

    @classmethod
    def modulated(cls, xi1: float = 0.05, xi2: float = 0.25,
                  initial: Sequence[float] = (1.0, 0.2, 1.0, 1.2)) -> 'KeplerParams':
        """ξ_i(r) = c_i(1 + sin²r)，ξ_i'(r) = c_i·sin 2r"""
        return cls(
            xi1=lambda r: xi1 * (1.0 + np.sin(r) ** 2),
            xi2=lambda r: xi2 * (1.0 + np.sin(r) ** 2),
            xi1_deriv=lambda r: xi1 * np.sin(2.0 * r),
            xi2_deriv=lambda r: xi2 * np.sin(2.0 * r),
            initial=tuple(initial),
            label="modulated",
        )


def _split(x: Array):
    x = np.asarray(x, dtype=float)
    r = x[..., 0]
    if np.any(~(r > 0.0)):
        raise NumericalDomainError("Kepler radius must stay positive")
    return x, r, x[..., 1], x[..., 2], x[..., 3]


def angular_momentum(x: Array) -> Array:
    """h = r²φ"""
    x = np.asarray(x, dtype=float)
    return x[..., 0] ** 2 * x[..., 3]


def kepler_problem(params: Optional[KeplerParams] = None, name: str = "kepler") -> SdeProblem:
    """带噪声的 Kepler 问题，n=4，k=2"""
    params = params or KeplerParams.constant()
    if not params.initial[0] > 0.0:
        raise ConfigurationError(f"initial radius must be positive, got {params.initial[0]}")

    def drift_strat(x: Array, t: float) -> Array:
        x, r, p, theta, phi = _split(x)
        return np.stack([p, -params.potential_deriv(r) + r * phi ** 2, phi, -2.0 * phi * p / r], axis=-1)

    def drift_ito(x: Array, t: float) -> Array:
        x, r, p, theta, phi = _split(x)
        xi1, dxi1 = params.xi1(r), params.xi1_deriv(r)
        return np.stack([
            p + 0.5 * xi1 * dxi1,
            -params.potential_deriv(r) + r * phi ** 2,
            phi,
            (-2.0 * phi * p - phi * xi1 * dxi1) / r + 3.0 * phi * xi1 ** 2 / r ** 2,
        ], axis=-1)

    def diffusion(x: Array, t: float, alpha: int) -> Array:
        x, r, p, theta, phi = _split(x)
        zero = np.zeros_like(r)
        if alpha == 0:
            xi1 = params.xi1(r)
            return np.stack([xi1, zero, zero, -2.0 * phi * xi1 / r], axis=-1)
        if alpha == 1:
            return np.stack([zero, zero, params.xi2(r), zero], axis=-1)
        raise ConfigurationError(f"kepler has 2 noise columns, got index {alpha}")

    def diffusion_jacobian(x: Array, t: float, alpha: int) -> Array:
        x, r, p, theta, phi = _split(x)
        jac = np.zeros(x.shape[:-1] + (4, 4))
        if alpha == 0:
            xi1, dxi1 = params.xi1(r), params.xi1_deriv(r)
            jac[..., 0, 0] = dxi1
            jac[..., 3, 0] = -2.0 * phi * (dxi1 * r - xi1) / r ** 2
            jac[..., 3, 3] = -2.0 * xi1 / r
        elif alpha == 1:
            jac[..., 2, 0] = params.xi2_deriv(r)
        else:
            raise ConfigurationError(f"kepler has 2 noise columns, got index {alpha}")
        return jac

    def drift_strat_jacobian(x: Array, t: float) -> Array:
        x, r, p, theta, phi = _split(x)
        jac = np.zeros(x.shape[:-1] + (4, 4))
        jac[..., 0, 1] = 1.0
        jac[..., 1, 0] = -params.potential_second_deriv(r) + phi ** 2
        jac[..., 1, 3] = 2.0 * r * phi
        jac[..., 2, 3] = 1.0
        jac[..., 3, 0] = 2.0 * phi * p / r ** 2
        jac[..., 3, 1] = -2.0 * phi / r
        jac[..., 3, 3] = -2.0 * p / r
        return jac

    invariants = [angular_momentum]
    invariant_names = ["h"]
    if params.noiseless:
        def energy(x: Array) -> Array:
            x = np.asarray(x, dtype=float)
            r, p, phi = x[..., 0], x[..., 1], x[..., 3]
            return 0.5 * (p ** 2 + r ** 2 * phi ** 2) + params.potential(r)
        invariants.append(energy)
        invariant_names.append("energy")

    return SdeProblem(
        name=name,
        dim_state=4,
        dim_noise=2,
        drift_ito=drift_ito,
        diffusion=diffusion,
        initial_state=np.array(params.initial, dtype=float),
        diffusion_jacobian=diffusion_jacobian,
        drift_strat=drift_strat,
        drift_strat_jacobian=drift_strat_jacobian,
        invariants=tuple(invariants),
        invariant_names=tuple(invariant_names),
        state_names=("r", "p", "theta", "phi"),
        description=f"stochastic Kepler problem, {params.label} noise amplitudes",
        parameters={'noise': params.label, 'initial': list(params.initial)},
    )


# ---- 伪装的线性问题 Y = F(X) ----

@dataclass(frozen=True)
class Transform1D:
    """一维可逆变换 F 及其逆 G、导数 F'、F''"""
    name: str
    forward: ScalarFunction
    inverse: ScalarFunction
    d1: ScalarFunction
    d2: ScalarFunction


def _log_inverse(y: Array) -> Array:
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0.0)):
        raise NumericalDomainError("log transform needs positive values")
    return np.log(y)


TRANSFORMS: Dict[str, Transform1D] = {
    'identity': Transform1D('identity', lambda x: np.asarray(x, dtype=float), lambda y: np.asarray(y, dtype=float),
                            lambda x: np.ones(np.shape(x)), lambda x: np.zeros(np.shape(x))),
    'exp': Transform1D('exp', np.exp, _log_inverse, np.exp, np.exp),
    'sinh': Transform1D('sinh', np.sinh, np.arcsinh, np.cosh, np.sinh),
}


def _transform(transform) -> Transform1D:
    if isinstance(transform, Transform1D):
        return transform
    if transform not in TRANSFORMS:
        raise ConfigurationError(f"unknown transform '{transform}' (known: {', '.join(TRANSFORMS)})")
    return TRANSFORMS[transform]


def disguised_linear_problem(transform='sinh', mu: float = 0.1, sigma: float = 0.25,
                             x0: float = 1.0, name: Optional[str] = None) -> SdeProblem:
    """dY = (μF'(G(Y)) + ½σ²F''(G(Y))) dt + σF'(G(Y)) dW

    Y_t = F(μt + σW_t + G(Y_0))；jet 流为 F(G(y) + σw + μc(v))。
    """
    F = _transform(transform)

    def drift_ito(y: Array, t: float) -> Array:
        g = F.inverse(y)
        return mu * F.d1(g) + 0.5 * sigma ** 2 * F.d2(g)

    def diffusion(y: Array, t: float, alpha: int) -> Array:
        return sigma * F.d1(F.inverse(y))

    def diffusion_jacobian(y: Array, t: float, alpha: int) -> Array:
        g = F.inverse(y)
        return (sigma * F.d2(g) / F.d1(g))[..., None]

    def drift_strat(y: Array, t: float) -> Array:
        return mu * F.d1(F.inverse(y))

    def drift_strat_jacobian(y: Array, t: float) -> Array:
        g = F.inverse(y)
        return (mu * F.d2(g) / F.d1(g))[..., None]

    def exact_jet_flow(y: Array, t: float, v: Array, kind: str) -> Array:
        v = np.asarray(v, dtype=float)
        c = v[..., 0:1] if kind == 'dt_jet' else v[..., 1:2] ** 2
        return F.forward(F.inverse(y) + sigma * v[..., 1:2] + mu * c)

    def exact_solution(y0: Array, t: Array, W: Array) -> Array:
        t = np.asarray(t, dtype=float)
        return F.forward(mu * t[..., None] + sigma * np.asarray(W)[..., 0:1] + F.inverse(y0))

    return SdeProblem(
        name=name or f"disguised-linear[{F.name}]",
        dim_state=1,
        dim_noise=1,
        drift_ito=drift_ito,
        diffusion=diffusion,
        initial_state=np.array([x0], dtype=float),
        diffusion_jacobian=diffusion_jacobian,
        drift_strat=drift_strat,
        drift_strat_jacobian=drift_strat_jacobian,
        state_names=("y",),
        exact_jet_flow=exact_jet_flow,
        exact_solution=exact_solution,
        description=f"Y = {F.name}(X) with dX = mu dt + sigma dW",
        parameters={'transform': F.name, 'mu': mu, 'sigma': sigma, 'x0': x0},
    )


def gbm_problem(mu_ito: float = 0.13125, sigma: float = 0.25, x0: float = 1.0) -> SdeProblem:
    """几何布朗运动 dX = μ'X dt + σX dW，即 F = exp、μ = μ' − σ²/2"""
    problem = disguised_linear_problem('exp', mu=mu_ito - 0.5 * sigma ** 2, sigma=sigma, x0=x0, name="gbm")
    return _with(problem, description="geometric Brownian motion",
                 parameters={**problem.parameters, 'mu_ito': mu_ito})


def multiplicative_noise_problem(x0: float = 1.0) -> SdeProblem:
    """dX = X dW（F = exp，μ = −½，σ = 1）"""
    problem = disguised_linear_problem('exp', mu=-0.5, sigma=1.0, x0=x0, name="multiplicative")
    return _with(problem, description="driftless multiplicative noise dX = X dW")


def _with(problem: SdeProblem, **changes: Any) -> SdeProblem:
    return replace(problem, **changes)


# ---- 圆 ----

_ROTATION_GENERATOR = np.array([[0.0, -1.0], [1.0, 0.0]])


def _rotate(x: Array, angle: Array) -> Array:
    x = np.asarray(x, dtype=float)
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1]], axis=-1)


def circle_problem(x0: Sequence[float] = (1.0, 0.0)) -> SdeProblem:
    """dX = −½X dt + JX dW，J 为 90° 旋转；不变量 x² + y²"""

    def drift_ito(x: Array, t: float) -> Array:
        return -0.5 * np.asarray(x, dtype=float)

    def diffusion(x: Array, t: float, alpha: int) -> Array:
        return np.einsum('ij,...j->...i', _ROTATION_GENERATOR, np.asarray(x, dtype=float))

    def diffusion_jacobian(x: Array, t: float, alpha: int) -> Array:
        return np.broadcast_to(_ROTATION_GENERATOR, np.shape(x)[:-1] + (2, 2)).copy()

    def drift_strat(x: Array, t: float) -> Array:
        return np.zeros(np.shape(x))

    def drift_strat_jacobian(x: Array, t: float) -> Array:
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    def exact_jet_flow(x: Array, t: float, v: Array, kind: str) -> Array:
        # ā = 0，两种变体都是旋转 w 角
        return _rotate(x, np.asarray(v)[..., 1])

    def exact_solution(x: Array, t: Array, W: Array) -> Array:
        return _rotate(x, np.asarray(W)[..., 0])

    def radius2(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** 2 + x[..., 1] ** 2

    return SdeProblem(
        name="circle",
        dim_state=2,
        dim_noise=1,
        drift_ito=drift_ito,
        diffusion=diffusion,
        initial_state=np.array(x0, dtype=float),
        diffusion_jacobian=diffusion_jacobian,
        drift_strat=drift_strat,
        drift_strat_jacobian=drift_strat_jacobian,
        invariants=(radius2,),
        invariant_names=("radius2",),
        state_names=("x", "y"),
        exact_jet_flow=exact_jet_flow,
        exact_solution=exact_solution,
        description="rotational diffusion on the unit circle",
        parameters={'x0': list(x0)},
    )


# ---- 微分同胚与前推 ----

@dataclass(frozen=True)
class Diffeomorphism:
    """f: ℝⁿ → ℝⁿ 及其逆、Jacobian、Hessian H[..., i, j, l] = ∂²f^i/∂x^j∂x^l

    hessian 为 None 时对 jacobian 做有限差分（除非关闭 finite_difference_fallback）。
    """
    name: str
    forward: Callable[[Array], Array]
    inverse: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    hessian: Optional[Callable[[Array], Array]] = None
    finite_difference_fallback: bool = True

    def hessian_at(self, x: Array) -> Array:
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        if not self.finite_difference_fallback:
            raise ConfigurationError(f"diffeomorphism '{self.name}' has no Hessian and finite differences are disabled")
        return finite_difference_jacobian(lambda y, t: self.jacobian(y), x)

    def check_inverse(self, points: Array, atol: float = 1e-9) -> float:
        """在给定点上返回 |f(f⁻¹(y)) − y| 的最大值，超出 atol 时抛出 ConfigurationError"""
        points = np.asarray(points, dtype=float)
        worst = float(np.max(np.abs(self.forward(self.inverse(points)) - points)))
        if worst > atol:
            raise ConfigurationError(f"diffeomorphism '{self.name}': forward∘inverse deviates by {worst:.3e}")
        return worst


def identity_map(n: int) -> Diffeomorphism:
    eye = np.eye(n)
    return Diffeomorphism(
        name="identity",
        forward=lambda x: np.array(x, dtype=float),
        inverse=lambda y: np.array(y, dtype=float),
        jacobian=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (n, n)).copy(),
        hessian=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)),
    )


def affine_map(matrix: Array, offset: Array) -> Diffeomorphism:
    """f(x) = A x + c"""
    A = np.asarray(matrix, dtype=float)
    c = np.asarray(offset, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or c.shape != (n,):
        raise ConfigurationError(f"affine map needs an n×n matrix and an n-vector, got {A.shape}, {c.shape}")
    if abs(np.linalg.det(A)) < 1e-12:
        raise ConfigurationError("affine map matrix is singular")
    A_inv = np.linalg.inv(A)
    return Diffeomorphism(
        name="affine",
        forward=lambda x: np.einsum('ij,...j->...i', A, np.asarray(x, dtype=float)) + c,
        inverse=lambda y: np.einsum('ij,...j->...i', A_inv, np.asarray(y, dtype=float) - c),
        jacobian=lambda x: np.broadcast_to(A, np.shape(x)[:-1] + (n, n)).copy(),
        hessian=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)),
    )


def log_map() -> Diffeomorphism:
    """一维 f(x) = log x（x > 0）"""
    return Diffeomorphism(
        name="log",
        forward=_log_inverse,
        inverse=lambda y: np.exp(np.asarray(y, dtype=float)),
        jacobian=lambda x: (1.0 / np.asarray(x, dtype=float))[..., None],
        hessian=lambda x: (-1.0 / np.asarray(x, dtype=float) ** 2)[..., None, None],
    )


def kepler_momentum_chart() -> Diffeomorphism:
    """(r, p, θ, φ) ↦ (r, p, θ, h = r²φ)"""

    def forward(x: Array) -> Array:
        x = np.array(x, dtype=float)
        x[..., 3] = x[..., 0] ** 2 * x[..., 3]
        return x

    def inverse(y: Array) -> Array:
        y = np.array(y, dtype=float)
        if np.any(~(y[..., 0] > 0.0)):
            raise NumericalDomainError("Kepler radius must stay positive")
        y[..., 3] = y[..., 3] / y[..., 0] ** 2
        return y

    def jacobian(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        jac = np.broadcast_to(np.eye(4), x.shape[:-1] + (4, 4)).copy()
        jac[..., 3, 0] = 2.0 * x[..., 0] * x[..., 3]
        jac[..., 3, 3] = x[..., 0] ** 2
        return jac

    def hessian(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        hess = np.zeros(x.shape[:-1] + (4, 4, 4))
        hess[..., 3, 0, 0] = 2.0 * x[..., 3]
        hess[..., 3, 0, 3] = 2.0 * x[..., 0]
        hess[..., 3, 3, 0] = 2.0 * x[..., 0]
        return hess

    return Diffeomorphism("kepler-momentum", forward, inverse, jacobian, hessian)


def pushforward(problem: SdeProblem, f: Diffeomorphism, name: Optional[str] = None) -> SdeProblem:
    """Itô 引理下的前推 f_*：

        (f_*a)^i = ∂_j f^i a^j + ½ ∂_j∂_l f^i Σ_α b_α^j b_α^l
        (f_*b_α)^i = ∂_j f^i b_α^j

    ā 按链式法则变换；扩散 Jacobian 用有限差分。
    """
    if f.hessian is None and not f.finite_difference_fallback:
        raise ConfigurationError(f"diffeomorphism '{f.name}' has no Hessian and finite differences are disabled")
    base_strat = stratonovich_drift(problem)

    def drift_ito(y: Array, t: float) -> Array:
        x = f.inverse(y)
        jac = f.jacobian(x)
        hess = f.hessian_at(x)
        columns = problem.diffusion_columns(x, t)
        return (np.einsum('...ij,...j->...i', jac, problem.drift_ito(x, t))
                + 0.5 * np.einsum('...ijl,...aj,...al->...i', hess, columns, columns))

    def diffusion(y: Array, t: float, alpha: int) -> Array:
        x = f.inverse(y)
        return np.einsum('...ij,...j->...i', f.jacobian(x), problem.diffusion(x, t, alpha))

    def drift_strat(y: Array, t: float) -> Array:
        x = f.inverse(y)
        return np.einsum('...ij,...j->...i', f.jacobian(x), base_strat(x, t))

    exact_solution = None
    if problem.exact_solution is not None:
        def exact_solution(y0: Array, t: Array, W: Array) -> Array:
            return f.forward(problem.exact_solution(f.inverse(y0), t, W))

    invariants = tuple((lambda g: (lambda y: g(f.inverse(y))))(g) for g in problem.invariants)

    return SdeProblem(
        name=name or f"{problem.name}@{f.name}",
        dim_state=problem.dim_state,
        dim_noise=problem.dim_noise,
        drift_ito=drift_ito,
        diffusion=diffusion,
        initial_state=f.forward(problem.initial_state),
        drift_strat=drift_strat,
        invariants=invariants,
        invariant_names=problem.invariant_names,
        exact_solution=exact_solution,
        description=f"{problem.name} pushed forward by {f.name}",
        parameters={**problem.parameters, 'diffeomorphism': f.name},
    )


# ---- 注册表 ----

def _kepler_factory(xi1: float = 0.05, xi2: float = 0.25,
                    initial: Sequence[float] = (1.0, 0.2, 1.0, 1.2)) -> SdeProblem:
    return kepler_problem(KeplerParams.constant(xi1, xi2, initial), name="kepler")


def _kepler_modulated_factory(xi1: float = 0.05, xi2: float = 0.25,
                              initial: Sequence[float] = (1.0, 0.2, 1.0, 1.2)) -> SdeProblem:
    return kepler_problem(KeplerParams.modulated(xi1, xi2, initial), name="kepler-modulated")


def _disguised_linear_factory(transform: str = 'sinh', mu: float = 0.1, sigma: float = 0.25,
                              x0: float = 1.0) -> SdeProblem:
    return disguised_linear_problem(transform, mu, sigma, x0, name="disguised-linear")


register_problem("kepler", _kepler_factory, "stochastic Kepler problem, constant noise amplitudes")
register_problem("kepler-modulated", _kepler_modulated_factory,
                 "stochastic Kepler problem, amplitudes modulated by 1 + sin^2 r")
register_problem("gbm", gbm_problem, "geometric Brownian motion")
register_problem("disguised-linear", _disguised_linear_factory, "Y = F(X) with additive-noise X (F = sinh)")
register_problem("multiplicative", multiplicative_noise_problem, "dX = X dW")
register_problem("circle", circle_problem, "rotational diffusion on the unit circle")
