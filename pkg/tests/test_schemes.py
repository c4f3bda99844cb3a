#!/usr/bin/env python3
"""
Scheme tests
Euler-Maruyama、jet 格式、展开式 jet 格式与轨迹模拟测试
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from jetflow.brownian import sample_path, uniform_grid
from jetflow.errors import ConfigurationError, DivergenceError, UsageError
from jetflow.ode_flow import OdeSolverSpec
from jetflow.schemes import (JetKind, JetVariant, SchemeSpec, StepInput, Trajectory, euler_maruyama_step,
                             expansion_jet_step, jet_step, jet_vector_field, make_stepper, simulate)
from jetflow.sde_model import SdeProblem, get_problem

EXACT = OdeSolverSpec("exact")


def _blowup_problem(threshold: float = 1.5, noise: float = 1.0) -> SdeProblem:
    """扩散在 |x| > threshold 时为 NaN，用于发散处理"""
    def diffusion(x, t, alpha):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) > threshold, np.nan, noise * np.ones_like(x))

    return SdeProblem(
        name="blowup",
        dim_state=1,
        dim_noise=1,
        drift_ito=lambda x, t: np.zeros(np.shape(x)),
        diffusion=diffusion,
        initial_state=[0.0],
    )


class TestStepRules(unittest.TestCase):
    """单步规则"""

    def setUp(self):
        self.problem = get_problem("gbm")
        self.mu_ito, self.sigma = 0.13125, 0.25
        self.mu = self.mu_ito - 0.5 * self.sigma ** 2
        self.y = np.array([1.3])
        self.inp = StepInput(self.y, 0.0, 0.01, np.array([0.08]))

    def test_euler_maruyama(self):
        expected = self.y * (1.0 + self.mu_ito * 0.01 + self.sigma * 0.08)
        assert_allclose(euler_maruyama_step(self.problem, self.inp), expected, rtol=1e-15)

    def test_step_input(self):
        assert_allclose(self.inp.v, [0.01, 0.08])
        with self.assertRaises(ConfigurationError):
            StepInput(self.y, 0.0, -0.1, np.array([0.0]))

    def test_jet_vector_field_weights(self):
        """c(v) = v⁰（dt_jet）或 (1/k)Σ(v^α)²（dw2_jet）"""
        v = np.array([0.1, 0.3])
        x = np.array([2.0])
        dt_field = jet_vector_field(self.problem, JetVariant.dt(), 0.0, v)
        dw2_field = jet_vector_field(self.problem, JetVariant.dw2(), 0.0, v)
        assert_allclose(dt_field(x), 0.3 * self.sigma * x + 0.1 * self.mu * x, rtol=1e-14)
        assert_allclose(dw2_field(x), 0.3 * self.sigma * x + 0.09 * self.mu * x, rtol=1e-14)

    def test_vector_field_rejects_expansion(self):
        with self.assertRaises(UsageError):
            jet_vector_field(self.problem, JetVariant.expansion(2), 0.0, np.zeros(2))
        with self.assertRaises(UsageError):
            jet_step(self.problem, JetVariant.expansion(3), EXACT, self.inp)

    def test_wrong_v_length(self):
        with self.assertRaises(ConfigurationError):
            jet_vector_field(self.problem, JetVariant.dt(), 0.0, np.zeros(3))

    def test_exact_jet_step(self):
        """GBM 的 dt_jet 一步就是 y·exp(μδt + σδW)"""
        expected = self.y * np.exp(self.mu * 0.01 + self.sigma * 0.08)
        assert_allclose(jet_step(self.problem, JetVariant.dt(), EXACT, self.inp), expected, rtol=1e-14)
        expected_dw2 = self.y * np.exp(self.mu * 0.08 ** 2 + self.sigma * 0.08)
        assert_allclose(jet_step(self.problem, JetVariant.dw2(), EXACT, self.inp), expected_dw2, rtol=1e-14)

    def test_ode_jet_step_close_to_exact(self):
        exact = jet_step(self.problem, JetVariant.dt(), EXACT, self.inp)
        approx = jet_step(self.problem, JetVariant.dt(), OdeSolverSpec("rk4", 1), self.inp)
        assert_allclose(approx, exact, rtol=1e-8)
        near = jet_step(self.problem, JetVariant.dt(), OdeSolverSpec("adams8", 4), self.inp)
        assert_allclose(near, exact, rtol=1e-13)


class TestExpansionSchemes(unittest.TestCase):
    """展开式 jet 格式等于 γ 的 Taylor 多项式"""

    def setUp(self):
        self.problem = get_problem("gbm")
        self.mu = 0.13125 - 0.5 * 0.25 ** 2
        self.y = np.array([[1.3], [0.7]])
        dW = np.array([[0.1], [-0.05]])
        self.inp = StepInput(self.y, 0.0, 0.02, dW)
        self.z = self.mu * 0.02 + 0.25 * dW

    def test_second_order(self):
        expected = self.y * (1.0 + self.z + 0.5 * self.z ** 2)
        assert_allclose(expansion_jet_step(self.problem, 2, JetKind.DT_JET, self.inp), expected, rtol=1e-14)

    def test_second_order_dw2(self):
        """dw2_jet 下 ā 项已是二次项"""
        w = self.inp.dW
        expected = self.y * (1.0 + 0.25 * w + self.mu * w ** 2 + 0.5 * (0.25 * w) ** 2)
        assert_allclose(expansion_jet_step(self.problem, 2, "dw2_jet", self.inp), expected, rtol=1e-14)

    def test_third_order(self):
        expected = self.y * (1.0 + self.z + 0.5 * self.z ** 2 + self.z ** 3 / 6.0)
        out = expansion_jet_step(self.problem, 3, JetKind.DT_JET, self.inp)
        assert_allclose(out, expected, rtol=1e-8)

    def test_third_order_with_ode_oracle(self):
        exact = expansion_jet_step(self.problem, 3, JetKind.DT_JET, self.inp)
        ode = expansion_jet_step(self.problem, 3, JetKind.DT_JET, self.inp, oracle=OdeSolverSpec("adams8", 4))
        assert_allclose(ode, exact, rtol=1e-9)

    def test_expansion_truncation_on_circle(self):
        """截断旋转：二阶 |Y|² = 1 + w⁴/4，三阶 |Y|² = 1 − w⁴/12 + w⁶/36"""
        circle = get_problem("circle")
        w = 0.2
        inp = StepInput(np.array([1.0, 0.0]), 0.0, 0.01, np.array([w]))
        second = expansion_jet_step(circle, 2, JetKind.DT_JET, inp)
        third = expansion_jet_step(circle, 3, JetKind.DT_JET, inp)
        self.assertAlmostEqual(float(np.sum(second ** 2)), 1.0 + w ** 4 / 4.0, places=13)
        # 插值误差来自 w⁵ 项，约 1e-7
        self.assertAlmostEqual(float(np.sum(third ** 2)), 1.0 - w ** 4 / 12.0 + w ** 6 / 36.0, delta=1e-6)

    def test_invalid_orders(self):
        with self.assertRaises(ConfigurationError):
            expansion_jet_step(self.problem, 4, JetKind.DT_JET, self.inp)
        with self.assertRaises(UsageError):
            expansion_jet_step(self.problem, 2, JetKind.EXPANSION, self.inp)
        with self.assertRaises(ConfigurationError):
            JetVariant.expansion(1)


def _log_slope(scales, errors) -> float:
    slope, _ = np.polyfit(np.log(scales), np.log(errors), 1)
    return slope


class TestExpansionAgainstFlow(unittest.TestCase):
    """v 整体缩小 λ 倍时 |展开 − γ(v)| 按 λ^{r+1} 衰减"""

    SCALES = [0.4, 0.2, 0.1, 0.05]

    def _slope(self, problem, order, base, x, v_hat):
        errors = []
        for scale in self.SCALES:
            v = scale * np.asarray(v_hat, dtype=float)
            inp = StepInput(x, 0.0, v[0], v[1:])
            truncated = expansion_jet_step(problem, order, base, inp)
            exact = jet_step(problem, JetVariant(JetKind(base)), EXACT, inp)
            errors.append(float(np.linalg.norm(truncated - exact)))
        return _log_slope(self.SCALES, errors)

    def test_gbm(self):
        gbm = get_problem("gbm")
        for base in (JetKind.DT_JET, JetKind.DW2_JET):
            for order in (2, 3):
                slope = self._slope(gbm, order, base, np.array([1.3]), [0.5, 0.8])
                self.assertAlmostEqual(slope, order + 1, delta=0.3, msg=f"{base.value} r={order}")

    def test_circle(self):
        circle = get_problem("circle")
        for order in (2, 3):
            slope = self._slope(circle, order, JetKind.DT_JET, np.array([0.6, 0.8]), [0.5, 0.8])
            self.assertAlmostEqual(slope, order + 1, delta=0.3, msg=f"r={order}")


class TestEulerMaruyamaProximity(unittest.TestCase):
    """单步 jet 与 EM 之差：均值 O(δt^{3/2})，L² 范数 O(δt)

    对 δW ~ N(0, δt) 的期望用 Gauss–Hermite 求积计算，结果没有 Monte Carlo 噪声。
    """

    STEPS = [0.04, 0.02, 0.01, 0.005]

    def setUp(self):
        nodes, weights = hermegauss(24)
        self.nodes = nodes
        self.weights = weights / np.sqrt(2.0 * np.pi)

    def _moments(self, problem, x):
        means, norms = [], []
        for dt in self.STEPS:
            dW = np.sqrt(dt) * self.nodes[:, None]
            inp = StepInput(np.repeat(x[None, :], self.nodes.size, axis=0), 0.0, dt, dW)
            diff = jet_step(problem, JetVariant.dt(), EXACT, inp) - euler_maruyama_step(problem, inp)
            means.append(float(np.linalg.norm(self.weights @ diff)))
            norms.append(float(np.sqrt(self.weights @ np.sum(diff ** 2, axis=-1))))
        return _log_slope(self.STEPS, means), _log_slope(self.STEPS, norms)

    def test_gbm(self):
        mean_slope, l2_slope = self._moments(get_problem("gbm"), np.array([1.3]))
        self.assertGreaterEqual(mean_slope, 1.4)
        self.assertAlmostEqual(l2_slope, 1.0, delta=0.1)

    def test_circle(self):
        mean_slope, l2_slope = self._moments(get_problem("circle"), np.array([1.0, 0.0]))
        self.assertGreaterEqual(mean_slope, 1.4)
        self.assertAlmostEqual(l2_slope, 1.0, delta=0.1)


class TestSchemeSpec(unittest.TestCase):
    """格式规格"""

    def test_names(self):
        self.assertEqual(SchemeSpec.em().name, "em")
        self.assertEqual(SchemeSpec.jet().name, "dt_jet[rk4x1]")
        self.assertEqual(SchemeSpec.jet(JetVariant.dw2(), OdeSolverSpec("adams8", 4)).name, "dw2_jet[adams8x4]")
        self.assertEqual(SchemeSpec.jet(JetVariant.expansion(3, "dw2_jet")).name, "expansion3-dw2_jet")

    def test_describe(self):
        info = SchemeSpec.jet(JetVariant.dt(), OdeSolverSpec("adams8", 4)).describe()
        self.assertEqual(info['solver'], {'method': 'adams8', 'substeps': 4})
        self.assertNotIn('solver', SchemeSpec.jet(JetVariant.expansion(2)).describe())

    def test_em_rejects_variant(self):
        with self.assertRaises(ConfigurationError):
            SchemeSpec("em", JetVariant.dt())

    def test_exact_requires_closed_form(self):
        with self.assertRaises(ConfigurationError):
            make_stepper(get_problem("kepler"), SchemeSpec.jet(JetVariant.dt(), EXACT))


class TestSimulate(unittest.TestCase):
    """轨迹模拟"""

    def setUp(self):
        self.grid = uniform_grid(1.0, 50)
        self.tmpdir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmpdir.cleanup()

    def test_exact_jet_reproduces_solution(self):
        problem = get_problem("disguised-linear")
        path = sample_path(self.grid, 1, seed=3)
        trajectory = simulate(problem, SchemeSpec.jet(JetVariant.dt(), EXACT), path)
        exact = problem.exact_solution(problem.initial_state, self.grid.points, path.values)
        assert_allclose(trajectory.states, exact, rtol=1e-12)
        self.assertEqual(trajectory.states.shape, (51, 1))

    def test_batch_matches_single_runs(self):
        problem = get_problem("circle")
        scheme = SchemeSpec.jet(JetVariant.dt(), OdeSolverSpec("rk4", 2))
        batch = sample_path(self.grid, 1, seed=7, n_paths=4)
        batched = simulate(problem, scheme, batch)
        self.assertEqual(batched.states.shape, (51, 4, 2))
        self.assertEqual(batched.n_diverged, 0)
        for p in range(4):
            single = simulate(problem, scheme, batch.sample(p))
            assert_allclose(batched.states[:, p], single.states, rtol=1e-13, atol=1e-15)

    def test_invariant_log(self):
        problem = get_problem("circle")
        trajectory = simulate(problem, SchemeSpec.em(), sample_path(self.grid, 1, seed=0))
        self.assertEqual(trajectory.invariant_log.shape, (51, 1))
        self.assertEqual(trajectory.invariant_log[0, 0], 1.0)
        self.assertGreater(float(np.max(trajectory.invariant_deviation())), 0.0)

    def test_noise_dimension_mismatch(self):
        with self.assertRaises(ConfigurationError):
            simulate(get_problem("kepler"), SchemeSpec.em(), sample_path(self.grid, 1, seed=0))

    def test_single_path_divergence(self):
        """单条路径发散：DivergenceError 附带部分轨迹"""
        problem = _blowup_problem(threshold=0.5, noise=1.0)
        grid = uniform_grid(10.0, 10)
        with self.assertRaises(DivergenceError) as ctx:
            simulate(problem, SchemeSpec.em(), sample_path(grid, 1, seed=1))
        error = ctx.exception
        partial = error.partial
        self.assertIsInstance(partial, Trajectory)
        last = error.last_finite_index
        self.assertEqual(partial.last_finite_index, last)
        self.assertTrue(np.all(np.isfinite(partial.states[:last + 1])))
        self.assertTrue(np.all(np.isnan(partial.states[last + 1:])))
        file = partial.write_csv(Path(self.tmpdir.name) / "partial.csv")
        self.assertEqual(len(file.read_text(encoding='utf-8').splitlines()), last + 2)

    def test_batched_divergence_isolated(self):
        """批量中的发散样本被置为 NaN 并计数，其余样本不受影响"""
        problem = _blowup_problem(threshold=1.5)
        grid = uniform_grid(4.0, 8)
        path = sample_path(grid, 1, seed=2, n_paths=40)
        trajectory = simulate(problem, SchemeSpec.em(), path)
        final = trajectory.final_state[:, 0]
        self.assertEqual(trajectory.n_diverged, int(np.sum(np.isnan(final))))
        self.assertGreater(trajectory.n_diverged, 0)
        self.assertLess(trajectory.n_diverged, 40)
        survivors = ~trajectory.diverged
        assert_allclose(final[survivors], path.values[-1, survivors, 0], rtol=1e-13, atol=1e-14)

    def test_trajectory_csv(self):
        problem = get_problem("circle")
        trajectory = simulate(problem, SchemeSpec.em(), sample_path(uniform_grid(1.0, 4), 1, seed=0))
        file = trajectory.write_csv(Path(self.tmpdir.name) / "circle.csv")
        lines = file.read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], "t,x,y,radius2")
        self.assertEqual(len(lines), 6)
        self.assertTrue(file.read_bytes().endswith(b"\n"))


if __name__ == '__main__':
    unittest.main()
