#!/usr/bin/env python3
"""
Acceptance Test Suite
端到端验收测试：精确性、流形保持、强/弱收敛阶、漂移阶、Kepler 角动量表、坐标不变性与 2-jet 一致性

单独运行：python tests/test_acceptance.py
"""

import os
import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from jetflow.analysis import ReportStatus, manifold_drift, strong_error, weak_error
from jetflow.brownian import nested_uniform_grids, sample_path, uniform_grid
from jetflow.experiments import cmd_table1
from jetflow.ode_flow import NEAR_EXACT_SOLVER, OdeSolverSpec
from jetflow.problems import log_map, pushforward
from jetflow.schemes import (JetVariant, SchemeSpec, StepInput, euler_maruyama_step, jet_map, jet_step,
                             simulate)
from jetflow.sde_model import get_problem, list_problems


class TestExactness(unittest.TestCase):
    """GBM 上精确流 dt_jet 逐路径重现解析解"""

    def test_gbm_exact_for_many_seeds(self):
        problem = get_problem("gbm")
        scheme = SchemeSpec.jet(JetVariant.dt(), OdeSolverSpec("exact"))
        grid = uniform_grid(1.0, 10)
        for seed in range(100):
            path = sample_path(grid, 1, seed)
            trajectory = simulate(problem, scheme, path)
            exact = problem.exact_solution(problem.initial_state, grid.points, path.values)
            assert_allclose(trajectory.states, exact, rtol=1e-10, err_msg=f"seed {seed}")


class TestManifoldPreservation(unittest.TestCase):
    """圆上 adams8 dt_jet 保持 |Y|² = 1"""

    def test_circle_radius(self):
        problem = get_problem("circle")
        scheme = SchemeSpec.jet(JetVariant.dt(), NEAR_EXACT_SOLVER)
        grid = uniform_grid(1.0, 1000)
        for seed in (0, 1, 2):
            trajectory = simulate(problem, scheme, sample_path(grid, 1, seed))
            radius2 = np.sum(trajectory.states ** 2, axis=-1)
            self.assertLessEqual(float(np.max(np.abs(radius2 - 1.0))), 1e-9)


class TestConvergenceOrders(unittest.TestCase):
    """强 1/2 阶、弱 1 阶与流形漂移阶"""

    def setUp(self):
        self.gbm = get_problem("gbm")
        self.circle = get_problem("circle")
        self.grids = nested_uniform_grids(1.0, [16, 32, 64, 128, 256])

    def test_strong_order_half(self):
        em = strong_error(self.gbm, SchemeSpec.em(), 'analytic', self.grids, n_paths=2000, seed=0)
        self.assertEqual(em.status, ReportStatus.OK)
        self.assertGreaterEqual(em.fitted_slope, 0.35)
        self.assertLessEqual(em.fitted_slope, 0.65)

        # 单步 rk4 的 jet 格式误差远小于 EM，可能已贴近舍入底
        jet = strong_error(self.gbm, SchemeSpec.jet(JetVariant.dt(), OdeSolverSpec("rk4", 1)), 'analytic',
                           self.grids, n_paths=2000, seed=0)
        if jet.status == ReportStatus.OK:
            self.assertGreaterEqual(jet.fitted_slope, 0.35)
        else:
            self.assertIn(jet.status, (ReportStatus.FLOOR, ReportStatus.INCONCLUSIVE))
        for jet_error, em_error in zip(jet.errors, em.errors):
            self.assertLess(jet_error, 0.1 * em_error)

    def test_weak_order_one(self):
        grids = nested_uniform_grids(1.0, [2, 4, 8, 16, 32])
        report = weak_error(self.gbm, SchemeSpec.em(), 'first', None, grids, n_paths=100_000, seed=0)
        self.assertEqual(report.status, ReportStatus.OK)
        self.assertGreaterEqual(sum(report.used_in_fit), 3)
        self.assertGreaterEqual(report.fitted_slope, 0.7)
        self.assertLessEqual(report.fitted_slope, 1.3)

    def test_manifold_drift_of_expansions(self):
        second = manifold_drift(self.circle, SchemeSpec.jet(JetVariant.expansion(2)), self.grids,
                                n_paths=2000, seed=0)
        self.assertEqual(second.status, ReportStatus.OK)
        self.assertGreaterEqual(second.fitted_slope, 0.7)

        third = manifold_drift(self.circle, SchemeSpec.jet(JetVariant.expansion(3)), self.grids,
                               n_paths=2000, seed=0)
        self.assertEqual(third.status, ReportStatus.OK)
        self.assertGreaterEqual(third.fitted_slope, 1.6)
        self.assertLessEqual(third.fitted_slope, 2.4)

    def test_manifold_drift_on_kepler(self):
        """Kepler 上二阶展开的三次项不与 h 的水平集相切，漂移至少按 m−2 = 1 阶收敛"""
        problem = get_problem("kepler-modulated")
        report = manifold_drift(problem, SchemeSpec.jet(JetVariant.expansion(2)),
                                nested_uniform_grids(1.0, [16, 32, 64, 128]), n_paths=500, seed=0)
        self.assertEqual(report.status, ReportStatus.OK)
        self.assertGreaterEqual(report.fitted_slope, 0.7)


class TestKeplerTable(unittest.TestCase):
    """T=10 时 jet 格式保持 h，EM 不保持"""

    def test_angular_momentum_table(self):
        result = cmd_table1(seed=0, n_seeds=10)
        for dt in (1.0, 0.4, 0.1, 0.01):
            jet = result.row("jet", dt)
            self.assertEqual(jet.n_diverged, 0)
            self.assertLessEqual(jet.mean_abs_deviation, 0.01, f"jet at step {dt}")
        em = result.row("em", 0.4)
        self.assertGreaterEqual(em.mean_abs_deviation, 10.0 * result.row("jet", 0.4).mean_abs_deviation)


class TestCoordinateInvariance(unittest.TestCase):
    """jet 步与微分同胚前推可交换，EM 步不可交换"""

    def setUp(self):
        self.spec = OdeSolverSpec("adams8", 8)
        self.f = log_map()

    def _commutation_gap(self, problem, x, dt, dW, use_em=False):
        pushed = pushforward(problem, self.f)
        original_in = StepInput(np.array([x]), 0.0, dt, np.array([dW]))
        pushed_in = StepInput(self.f.forward(np.array([x])), 0.0, dt, np.array([dW]))
        if use_em:
            original, mapped = euler_maruyama_step(problem, original_in), euler_maruyama_step(pushed, pushed_in)
        else:
            original = jet_step(problem, JetVariant.dt(), self.spec, original_in)
            mapped = jet_step(pushed, JetVariant.dt(), self.spec, pushed_in)
        return float(np.max(np.abs(self.f.forward(original) - mapped)))

    def test_multiplicative_noise_under_log(self):
        """dX = X dW 在 log 坐标下变成 dY = −½dt + dW"""
        problem = get_problem("multiplicative")
        for dW in (-0.5, 0.1, 0.5):
            self.assertLessEqual(self._commutation_gap(problem, 1.0, 0.01, dW), 1e-8)
        self.assertGreater(self._commutation_gap(problem, 1.0, 0.01, 0.5, use_em=True), 1e-3)

    def test_gbm_under_log(self):
        problem = get_problem("gbm")
        for x, dW in ((1.0, 0.5), (1.3, -0.2), (0.7, 0.05)):
            self.assertLessEqual(self._commutation_gap(problem, x, 0.05, dW), 1e-8)
        self.assertGreater(self._commutation_gap(problem, 1.0, 0.05, 0.5, use_em=True), 1e-3)


def _sample_states(name: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if name.startswith("kepler"):
        states = np.array([1.0, 0.2, 1.0, 1.2]) + 0.3 * rng.standard_normal((count, 4))
        states[:, 0] = np.abs(states[:, 0]) + 0.8
        return states
    if name == "circle":
        angle = rng.uniform(0.0, 2.0 * np.pi, count)
        radius = rng.uniform(0.5, 1.5, count)
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    # 一维问题：log/exp 变换要求正状态
    return np.exp(0.3 * rng.standard_normal((count, 1)))


class TestTwoJetConsistency(unittest.TestCase):
    """γ(0)=x，∂_{v^α}γ = b_α，∂_{v⁰}γ + ½Σ∂²_{v^α v^α}γ = a"""

    EPS = 1e-3
    TIME_EPS = 1e-4

    def _check(self, problem, variant, x):
        k = problem.dim_noise
        eps = self.EPS

        def gamma(v):
            return jet_map(problem, variant, NEAR_EXACT_SOLVER, x, 0.0, np.asarray(v, dtype=float))

        def unit(index, scale):
            v = np.zeros(k + 1)
            v[index] = scale
            return v

        center = gamma(np.zeros(k + 1))
        assert_allclose(center, x, rtol=0, atol=1e-14)

        generator = (gamma(unit(0, self.TIME_EPS)) - gamma(unit(0, -self.TIME_EPS))) / (2.0 * self.TIME_EPS)
        for alpha in range(k):
            plus, minus = gamma(unit(alpha + 1, eps)), gamma(unit(alpha + 1, -eps))
            b = problem.diffusion(x, 0.0, alpha)
            assert_allclose((plus - minus) / (2.0 * eps), b, rtol=1e-5, atol=1e-5,
                            err_msg=f"{problem.name} {variant} b_{alpha}")
            generator = generator + 0.5 * (plus - 2.0 * center + minus) / eps ** 2
        assert_allclose(generator, problem.drift_ito(x, 0.0), rtol=1e-5, atol=1e-5,
                        err_msg=f"{problem.name} {variant} drift")

    def test_all_registered_problems(self):
        rng = np.random.default_rng(20)
        for entry in list_problems():
            problem = entry.factory()
            x = _sample_states(entry.name, 20, rng)
            for variant in (JetVariant.dt(), JetVariant.dw2()):
                self._check(problem, variant, x)


def run_acceptance_tests():
    """运行验收测试套件"""
    print("🧪 开始运行验收测试...")

    test_suite = unittest.TestSuite()
    test_classes = [
        TestExactness,
        TestManifoldPreservation,
        TestConvergenceOrders,
        TestKeplerTable,
        TestCoordinateInvariance,
        TestTwoJetConsistency,
    ]
    for test_class in test_classes:
        test_suite.addTests(unittest.TestLoader().loadTestsFromTestCase(test_class))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(test_suite)

    print(f"\n📊 测试结果:")
    print(f"  • 运行测试: {result.testsRun}")
    print(f"  • 成功: {result.testsRun - len(result.failures) - len(result.errors)}")
    print(f"  • 失败: {len(result.failures)}")
    print(f"  • 错误: {len(result.errors)}")

    if result.failures:
        print(f"\n❌ 失败的测试:")
        for test, traceback in result.failures:
            print(f"  • {test}: {traceback.split('AssertionError:')[-1].strip()}")

    if result.errors:
        print(f"\n💥 错误的测试:")
        for test, traceback in result.errors:
            print(f"  • {test}: {traceback.strip().splitlines()[-1]}")

    success_rate = (result.testsRun - len(result.failures) - len(result.errors)) / result.testsRun * 100
    print(f"\n✅ 测试通过率: {success_rate:.1f}%")

    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_acceptance_tests()
    sys.exit(0 if success else 1)
