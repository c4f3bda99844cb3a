#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
jetflow - 日志系统
多级别日志、文件轮转、性能记录和运行上下文记录

库代码默认只挂控制台处理器；CLI 通过 init_logging 指定 log_dir 后才写文件。
"""

import os
import sys
import json
import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Dict, Any, Optional, List
from dataclasses import dataclass, fields
from contextlib import contextmanager
import threading
import time
import traceback


@dataclass
class LogConfig:
    """日志配置类"""
    # 基础配置
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    date_format: str = "%Y-%m-%d %H:%M:%S"

    # 文件配置（log_dir 为 None 时不写文件）
    log_dir: Optional[str] = None
    log_filename: str = "jetflow.log"
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5

    # 控制台配置
    console_enabled: bool = True
    console_level: str = "WARNING"
    console_format: str = "%(levelname)s - %(name)s - %(message)s"

    # 性能记录
    performance_enabled: bool = True
    performance_filename: str = "performance.log"
    slow_operation_threshold: float = 30.0  # 秒

    # 错误追踪
    error_filename: str = "errors.log"
    error_detail_enabled: bool = True

    # 运行上下文（种子、RNG、求解器、网格）
    run_context_enabled: bool = True
    run_context_filename: str = "run_context.log"


class LoggerManager:
    """日志管理器 - 单例模式"""
    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super(LoggerManager, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        if not hasattr(self, 'initialized'):
            self.config = LogConfig()
            env_level = os.environ.get('JETFLOW_LOG_LEVEL')
            if env_level:
                self.config.level = env_level.upper()
            self.loggers: Dict[str, logging.Logger] = {}
            self.handlers: Dict[str, logging.Handler] = {}
            self.performance_data: List[Dict[str, Any]] = []
            self.error_count = 0
            self._data_lock = threading.Lock()
            self.initialized = True
            self._setup_logging()

    def _setup_logging(self):
        """设置日志系统"""
        for handler in self.handlers.values():
            handler.close()
        self.handlers = {}

        self.formatter = logging.Formatter(
            self.config.format,
            datefmt=self.config.date_format
        )
        self.console_formatter = logging.Formatter(
            self.config.console_format,
            datefmt=self.config.date_format
        )

        if self.config.console_enabled:
            self._setup_console_handler()

        if self.config.log_dir:
            Path(self.config.log_dir).mkdir(parents=True, exist_ok=True)
            self._setup_main_handler()
            self._setup_error_handler()
            if self.config.performance_enabled:
                self._setup_performance_handler()
            if self.config.run_context_enabled:
                self._setup_run_context_handler()

    def _rotating_handler(self, filename: str) -> logging.Handler:
        return logging.handlers.RotatingFileHandler(
            Path(self.config.log_dir) / filename,
            maxBytes=self.config.max_file_size,
            backupCount=self.config.backup_count,
            encoding='utf-8'
        )

    def _setup_main_handler(self):
        """主日志文件处理器"""
        handler = self._rotating_handler(self.config.log_filename)
        handler.setFormatter(self.formatter)
        handler.setLevel(getattr(logging, self.config.level.upper()))
        self.handlers['main'] = handler

    def _setup_console_handler(self):
        """控制台处理器（stderr，stdout 留给表格输出）"""
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(self.console_formatter)
        handler.setLevel(getattr(logging, self.config.console_level.upper()))
        self.handlers['console'] = handler

    def _setup_performance_handler(self):
        """性能日志处理器，只接收 performance 记录器的消息"""
        handler = self._rotating_handler(self.config.performance_filename)
        handler.setFormatter(logging.Formatter(
            "%(asctime)s - PERF - %(message)s",
            datefmt=self.config.date_format
        ))
        handler.setLevel(logging.INFO)
        handler.addFilter(lambda record: record.name == 'performance')
        self.handlers['performance'] = handler

    def _setup_error_handler(self):
        """错误日志处理器"""
        handler = self._rotating_handler(self.config.error_filename)
        handler.setFormatter(logging.Formatter(
            "%(asctime)s - %(name)s - ERROR - %(message)s\n%(pathname)s:%(lineno)d in %(funcName)s\n",
            datefmt=self.config.date_format
        ))
        handler.setLevel(logging.ERROR)
        self.handlers['error'] = handler

    def _setup_run_context_handler(self):
        """运行上下文处理器，每行一个 JSON 对象"""
        handler = self._rotating_handler(self.config.run_context_filename)
        handler.setFormatter(logging.Formatter(
            "%(asctime)s - CONTEXT - %(message)s",
            datefmt=self.config.date_format
        ))
        handler.setLevel(logging.INFO)
        handler.addFilter(lambda record: record.name == 'run_context')
        self.handlers['run_context'] = handler

    def _attach(self, logger: logging.Logger):
        logger.handlers.clear()
        for handler in self.handlers.values():
            logger.addHandler(handler)
        logger.setLevel(getattr(logging, self.config.level.upper()))
        logger.propagate = False

    def get_logger(self, name: str) -> logging.Logger:
        """获取指定名称的日志记录器"""
        if name not in self.loggers:
            logger = logging.getLogger(f"jetflow.{name}" if name not in ('performance', 'run_context') else name)
            self._attach(logger)
            self.loggers[name] = logger
        return self.loggers[name]

    def log_performance(self, operation: str, duration: float, details: Optional[Dict[str, Any]] = None):
        """记录一次耗时"""
        if not self.config.performance_enabled:
            return

        with self._data_lock:
            self.performance_data.append({
                'timestamp': datetime.now().isoformat(),
                'operation': operation,
                'duration': duration,
                'details': details or {}
            })
            if len(self.performance_data) > 1000:
                self.performance_data = self.performance_data[-500:]

        perf_logger = self.get_logger('performance')
        message = f"{operation} took {duration:.3f}s - {json.dumps(details or {}, ensure_ascii=False, default=str)}"
        if duration > self.config.slow_operation_threshold:
            perf_logger.warning(f"Slow operation: {message}")
        else:
            perf_logger.info(message)

    def log_run_context(self, context_type: str, context_data: Dict[str, Any]):
        """记录运行上下文（种子、RNG 标识、求解器、网格等）"""
        if not self.config.run_context_enabled:
            return
        self.get_logger('run_context').info(json.dumps({
            'type': context_type,
            'timestamp': datetime.now().isoformat(),
            'data': context_data
        }, ensure_ascii=False, default=str))

    def log_error_with_context(self, logger_name: str, error: Exception, context: Optional[Dict[str, Any]] = None):
        """记录错误及其上下文"""
        self.error_count += 1
        error_msg = f"Error: {error}"
        if context:
            error_msg += f" | Context: {json.dumps(context, ensure_ascii=False, default=str)}"
        if self.config.error_detail_enabled:
            error_msg += f" | Traceback: {traceback.format_exc()}"
        self.get_logger(logger_name).error(error_msg)

    def get_performance_stats(self) -> Dict[str, Any]:
        """按操作汇总耗时"""
        with self._data_lock:
            data = list(self.performance_data)
        if not data:
            return {}

        durations = [item['duration'] for item in data]
        operations: Dict[str, List[float]] = {}
        for item in data:
            operations.setdefault(item['operation'], []).append(item['duration'])

        return {
            'total_operations': len(data),
            'total_duration': sum(durations),
            'max_duration': max(durations),
            'slow_operations': len([d for d in durations if d > self.config.slow_operation_threshold]),
            'operations_breakdown': {
                op: {'count': len(times), 'avg_duration': sum(times) / len(times), 'max_duration': max(times)}
                for op, times in operations.items()
            }
        }

    def update_config(self, new_config: Dict[str, Any]):
        """更新日志配置并重建处理器"""
        for key, value in new_config.items():
            if hasattr(self.config, key):
                setattr(self.config, key, value)
        self._setup_logging()
        for logger in self.loggers.values():
            self._attach(logger)


# 便利函数
_manager: Optional[LoggerManager] = None


def _get_manager() -> LoggerManager:
    global _manager
    if _manager is None:
        _manager = LoggerManager()
    return _manager


def get_logger(name: str) -> logging.Logger:
    """获取日志记录器"""
    return _get_manager().get_logger(name)


@contextmanager
def log_performance(operation: str, logger_name: str = 'performance', **context):
    """性能监控上下文管理器"""
    manager = _get_manager()
    logger = manager.get_logger(logger_name)
    start_time = time.perf_counter()

    try:
        logger.debug(f"Starting operation: {operation}")
        yield
        duration = time.perf_counter() - start_time
        manager.log_performance(operation, duration, context)
        logger.debug(f"Completed operation: {operation} in {duration:.3f}s")
    except Exception as e:
        duration = time.perf_counter() - start_time
        logger.error(f"Failed operation: {operation} after {duration:.3f}s - {e}")
        manager.log_error_with_context(logger_name, e, {
            'operation': operation,
            'duration': duration,
            **context
        })
        raise


def log_run_context(context_type: str, context_data: Dict[str, Any]):
    """记录运行上下文"""
    _get_manager().log_run_context(context_type, context_data)


def get_performance_stats() -> Dict[str, Any]:
    """获取性能统计"""
    return _get_manager().get_performance_stats()


def configure_logging(config: Dict[str, Any]):
    """配置日志系统"""
    _get_manager().update_config(config)


def load_logging_config(path: str) -> Dict[str, Any]:
    """读取 logging_config.json 的 log_config 段；文件不存在时返回空字典"""
    config_path = Path(path)
    if not config_path.exists():
        return {}
    with open(config_path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    known = {f.name for f in fields(LogConfig)}
    return {key: value for key, value in data.get('log_config', {}).items() if key in known}


def init_logging(config: Optional[Dict[str, Any]] = None) -> LoggerManager:
    """初始化日志系统"""
    manager = _get_manager()
    if config:
        manager.update_config(config)

    logger = manager.get_logger('system')
    logger.info("jetflow 日志系统已初始化")
    logger.info(f"日志目录: {manager.config.log_dir}")
    logger.info(f"日志级别: {manager.config.level}")
    return manager
