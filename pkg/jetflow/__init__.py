# -*- coding: utf-8 -*-
"""
jetflow - 随机微分方程的 jet 格式
Stratonovich jet 积分器、Euler–Maruyama 与展开式基线、收敛阶测试框架
"""

from .analysis import (OrderReport, ReportStatus, fit_order, manifold_drift, strong_error, weak_error,
                       weak_manifold_drift)
from .brownian import BrownianPath, TimeGrid, nested_uniform_grids, refine, restrict, sample_path, uniform_grid
from .errors import (ConfigurationError, DivergenceError, GridError, JetflowError, NumericalDomainError,
                     UsageError)
from .ode_flow import OdeMethod, OdeSolverSpec, flow
from .schemes import (JetKind, JetVariant, SchemeSpec, StepInput, Trajectory, euler_maruyama_step,
                      expansion_jet_step, jet_step, jet_vector_field, simulate)
from .sde_model import SdeProblem, get_problem, list_problems, register_problem, stratonovich_drift

__version__ = "0.1.0"

__all__ = [
    'OrderReport', 'ReportStatus', 'fit_order', 'manifold_drift', 'strong_error', 'weak_error',
    'weak_manifold_drift',
    'BrownianPath', 'TimeGrid', 'nested_uniform_grids', 'refine', 'restrict', 'sample_path', 'uniform_grid',
    'ConfigurationError', 'DivergenceError', 'GridError', 'JetflowError', 'NumericalDomainError', 'UsageError',
    'OdeMethod', 'OdeSolverSpec', 'flow',
    'JetKind', 'JetVariant', 'SchemeSpec', 'StepInput', 'Trajectory', 'euler_maruyama_step',
    'expansion_jet_step', 'jet_step', 'jet_vector_field', 'simulate',
    'SdeProblem', 'get_problem', 'list_problems', 'register_problem', 'stratonovich_drift',
]
