# Performance / resource utilities
# 资源监控与并行度控制

import os
import time
from typing import Dict, Any, Optional

import psutil

from ..errors import ConfigurationError

THREADS_ENV_VAR = "JETFLOW_THREADS"


def resolve_worker_count(requested: Optional[int] = None) -> int:
    """确定 Monte Carlo 工作线程数

    优先级：显式参数 > CPU 数；JETFLOW_THREADS 始终作为上限。
    """
    workers = requested if requested is not None else (psutil.cpu_count(logical=True) or 1)
    if workers < 1:
        raise ConfigurationError(f"worker count must be >= 1, got {workers}")

    cap = os.environ.get(THREADS_ENV_VAR)
    if cap:
        try:
            cap_value = int(cap)
        except ValueError as e:
            raise ConfigurationError(f"{THREADS_ENV_VAR} must be an integer, got {cap!r}") from e
        if cap_value < 1:
            raise ConfigurationError(f"{THREADS_ENV_VAR} must be >= 1, got {cap_value}")
        workers = min(workers, cap_value)
    return workers


class ResourceMonitor:
    """进程资源快照：墙钟时间、常驻内存、CPU 时间"""

    def __init__(self):
        self.start_time = time.perf_counter()
        self.process = psutil.Process(os.getpid())
        self.start_cpu = self._cpu_seconds()

    def _cpu_seconds(self) -> float:
        times = self.process.cpu_times()
        return times.user + times.system

    def snapshot(self) -> Dict[str, Any]:
        """当前资源使用情况"""
        memory_mb = self.process.memory_info().rss / 1024 / 1024
        return {
            'wall_seconds': round(time.perf_counter() - self.start_time, 3),
            'cpu_seconds': round(self._cpu_seconds() - self.start_cpu, 3),
            'memory_mb': round(memory_mb, 2),
            'thread_count': self.process.num_threads(),
        }
