# -*- coding: utf-8 -*-
"""
布朗路径：时间网格、路径采样、布朗桥加密与限制

随机数流按 (seed, 样本序号, 用途, 网格摘要) 派生，使用 numpy 的 Philox
计数器型生成器；高斯变量由开区间均匀数经逆 CDF (scipy.special.ndtri) 得到。
因此批量中第 i 个样本与 first_index=i 的单条路径逐位相同，
与批次划分和线程数无关。
"""

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, GridError
from .utils.logging_system import get_logger

logger = get_logger('brownian')

RNG_IDENTIFIER = "philox4x64-seedseq/inverse-cdf"

# 随机流用途标签
_PURPOSE_SAMPLE = 0
_PURPOSE_REFINE = 1

_UNIFORM_BITS = 53
_UNIFORM_SCALE = float(2 ** _UNIFORM_BITS)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """严格递增的时间网格 0 = t_0 < t_1 < ... < t_N = T"""
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1)
        if points.size < 2:
            raise GridError("a time grid needs at least two points")
        if points[0] != 0.0:
            raise GridError(f"a time grid must start at 0, got {points[0]}")
        if not np.all(np.isfinite(points)):
            raise GridError("time grid contains non-finite points")
        if np.any(np.diff(points) <= 0.0):
            raise GridError("time grid points must be strictly increasing")
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def N(self) -> int:
        return self.points.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def max_step(self) -> float:
        """δt = max_i (t_{i+1} − t_i)"""
        return float(np.max(self.steps))

    @property
    def is_uniform(self) -> bool:
        steps = self.steps
        return bool(np.allclose(steps, steps[0], rtol=1e-12, atol=0.0))

    @property
    def tolerance(self) -> float:
        return 1e-12 * max(1.0, self.T)

    @property
    def digest(self) -> int:
        """网格点的 64 位摘要，用于派生随机流"""
        return int.from_bytes(hashlib.sha256(self.points.tobytes()).digest()[:8], 'little')

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def __hash__(self) -> int:
        return self.digest

    def locate(self, times: Sequence[float]) -> np.ndarray:
        """返回 times 中各点在本网格中的下标；有不在网格上的点时抛出 GridError"""
        times = np.asarray(times, dtype=float)
        idx = np.clip(np.searchsorted(self.points, times), 0, self.N)
        left = np.clip(idx - 1, 0, self.N)
        nearest = np.where(np.abs(self.points[left] - times) < np.abs(self.points[idx] - times), left, idx)
        missing = np.abs(self.points[nearest] - times) > self.tolerance
        if np.any(missing):
            bad = times[missing][:5]
            raise GridError(f"times {bad.tolist()} are not points of the grid")
        return nearest

    def contains(self, other: 'TimeGrid') -> bool:
        try:
            self.locate(other.points)
        except GridError:
            return False
        return True

    def describe(self) -> dict:
        return {
            'T': self.T,
            'N': self.N,
            'max_step': self.max_step,
            'uniform': self.is_uniform,
        }


def uniform_grid(T: float, N: int) -> TimeGrid:
    """N+1 个等距点，t_i = T·i/N"""
    if not T > 0:
        raise GridError(f"T must be positive, got {T}")
    if int(N) != N or N < 1:
        raise GridError(f"N must be a positive integer, got {N}")
    N = int(N)
    points = T * np.arange(N + 1, dtype=float) / N
    points[-1] = T
    return TimeGrid(points)


def nested_uniform_grids(T: float, steps: Sequence[int]) -> List[TimeGrid]:
    """按从粗到细排列的嵌套均匀网格，每个网格都包含在下一个之中"""
    if len(steps) == 0:
        raise GridError("at least one step count is required")
    counts = sorted(set(int(n) for n in steps))
    for coarse, fine in zip(counts, counts[1:]):
        if fine % coarse != 0:
            raise GridError(f"grids with N={coarse} and N={fine} are not nested")
    return [uniform_grid(T, n) for n in counts]


def stream(seed: int, sample_index: int, purpose: int, *digests: int) -> np.random.Generator:
    """由 (seed, 样本序号, 用途, 网格摘要...) 派生独立的 Philox 随机流"""
    if seed < 0 or sample_index < 0:
        raise ConfigurationError(f"seed and sample index must be non-negative, got {seed}, {sample_index}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, sample_index, purpose, *digests])))


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    """逆 CDF 法生成标准正态变量，均匀数取在开区间 (0, 1) 内"""
    u = (rng.integers(0, 2 ** _UNIFORM_BITS, size=size).astype(float) + 0.5) / _UNIFORM_SCALE
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """离散的 k 维布朗路径

    values 形状为 (N+1, k)；批量路径为 (N+1, P, k)，第 p 列对应样本序号 first_index + p。
    """
    grid: TimeGrid
    values: np.ndarray
    seed: int
    first_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim not in (2, 3):
            raise ConfigurationError(f"path values must have shape (N+1, k) or (N+1, P, k), got {values.shape}")
        if values.shape[0] != self.grid.N + 1:
            raise ConfigurationError(
                f"path has {values.shape[0]} values for a grid with {self.grid.N + 1} points")
        if np.any(values[0] != 0.0):
            raise ConfigurationError("a Brownian path must start at 0")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def dim_noise(self) -> int:
        return self.values.shape[-1]

    @property
    def batched(self) -> bool:
        return self.values.ndim == 3

    @property
    def n_paths(self) -> int:
        return self.values.shape[1] if self.batched else 1

    @property
    def sample_indices(self) -> np.ndarray:
        return self.first_index + np.arange(self.n_paths)

    def increments(self) -> np.ndarray:
        """δW_i = W(t_{i+1}) − W(t_i)"""
        return np.diff(self.values, axis=0)

    def sample(self, p: int) -> 'BrownianPath':
        """批量中的第 p 条路径"""
        if not self.batched:
            if p != 0:
                raise IndexError(p)
            return self
        return BrownianPath(self.grid, self.values[:, p, :], self.seed, self.first_index + p)

    def at(self, times: Sequence[float]) -> np.ndarray:
        return self.values[self.grid.locate(times)]


def _sample_values(grid: TimeGrid, k: int, seed: int, index: int) -> np.ndarray:
    rng = stream(seed, index, _PURPOSE_SAMPLE, grid.digest)
    z = standard_normals(rng, (grid.N, k))
    increments = z * np.sqrt(grid.steps)[:, None]
    return np.concatenate([np.zeros((1, k)), np.cumsum(increments, axis=0)], axis=0)


def sample_path(grid: TimeGrid, dim_noise: int, seed: int,
                n_paths: Optional[int] = None, first_index: int = 0) -> BrownianPath:
    """在网格上采样布朗路径

    n_paths 为 None 时返回单条路径 (N+1, k)；否则返回批量 (N+1, P, k)。
    结果只由 (grid, k, seed, 样本序号) 决定。
    """
    if dim_noise < 1:
        raise ConfigurationError(f"dim_noise must be >= 1, got {dim_noise}")
    if n_paths is None:
        return BrownianPath(grid, _sample_values(grid, dim_noise, seed, first_index), seed, first_index)
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    values = np.stack([_sample_values(grid, dim_noise, seed, first_index + p)
                       for p in range(n_paths)], axis=1)
    return BrownianPath(grid, values, seed, first_index)


def refine(path: BrownianPath, new_grid: TimeGrid) -> BrownianPath:
    """布朗桥加密：共享点上的取值逐位保持，新点按条件分布依次抽取

    区间 (l, b) 内的点 s：W(s) = W(l) + (s−l)/(b−l)·(W(b)−W(l)) + sqrt((s−l)(b−s)/(b−l))·z，
    其中 l 为左侧最近的已知点（旧点或刚生成的新点）。超出旧网格末端的点使用独立增量。
    """
    old_grid = path.grid
    try:
        old_idx = new_grid.locate(old_grid.points)
    except GridError as e:
        raise GridError(f"new grid does not contain the path grid: {e}") from e
    if new_grid == old_grid:
        return path

    is_old = np.zeros(new_grid.N + 1, dtype=bool)
    is_old[old_idx] = True
    new_points = np.flatnonzero(~is_old)

    values = path.values
    batch_shape = values.shape[1:]
    out = np.empty((new_grid.N + 1,) + batch_shape)
    out[old_idx] = values

    # 每个样本一条独立的加密随机流
    k = path.dim_noise
    indices = path.sample_indices
    normals = np.stack([
        standard_normals(stream(path.seed, int(i), _PURPOSE_REFINE, old_grid.digest, new_grid.digest),
                         (new_points.size, k))
        for i in indices], axis=1)
    if not path.batched:
        normals = normals[:, 0, :]

    # 每个新点右侧最近的旧点下标
    old_positions = np.searchsorted(old_idx, new_points)
    times = new_grid.points
    for m, j in enumerate(new_points):
        left = j - 1
        s, l = times[j], times[left]
        if old_positions[m] < old_idx.size:
            right = old_idx[old_positions[m]]
            b = times[right]
            weight = (s - l) / (b - l)
            scale = np.sqrt((s - l) * (b - s) / (b - l))
            out[j] = out[left] + weight * (out[right] - out[left]) + scale * normals[m]
        else:
            out[j] = out[left] + np.sqrt(s - l) * normals[m]

    logger.debug(f"布朗桥加密: N={old_grid.N} -> N={new_grid.N}, 样本数={path.n_paths}")
    return BrownianPath(new_grid, out, path.seed, path.first_index)


def restrict(path: BrownianPath, grid: TimeGrid) -> BrownianPath:
    """把路径限制到子网格上，取值逐位相同"""
    try:
        idx = path.grid.locate(grid.points)
    except GridError as e:
        raise GridError(f"grid is not a subset of the path grid: {e}") from e
    return BrownianPath(grid, path.values[idx], path.seed, path.first_index)


def write_path_csv(path: BrownianPath, file: Union[str, Path], sample: int = 0) -> Path:
    """导出路径为 CSV：t, W1..Wk"""
    single = path.sample(sample)
    file = Path(file)
    file.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = ['t'] + [f"W{alpha + 1}" for alpha in range(single.dim_noise)]
    with open(file, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fieldnames)
        for t, w in zip(single.grid.points, single.values):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in w])
    return file
