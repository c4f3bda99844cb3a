# -*- coding: utf-8 -*-
"""
jetflow 异常体系
每个异常类都带有 exit_code，CLI 据此决定进程退出码
"""

from typing import Any, Optional


class JetflowError(Exception):
    """所有 jetflow 异常的基类"""

    exit_code = 1


class ConfigurationError(JetflowError):
    """配置错误：维度不匹配、未知注册名、缺少导数信息等"""

    exit_code = 2


class UsageError(ConfigurationError):
    """操作被以不支持的方式调用（例如把 expansion 变体交给 jet_vector_field）"""


class GridError(ConfigurationError):
    """时间网格不合法，或网格之间不满足包含/嵌套关系"""


class NumericalDomainError(JetflowError):
    """数值域错误：出现非有限值，或系数在定义域之外被求值"""

    exit_code = 3


class DivergenceError(NumericalDomainError):
    """迭代发散，附带最后一个有限值的下标和部分结果"""

    def __init__(self, message: str, last_finite_index: Optional[int] = None,
                 partial: Any = None):
        super().__init__(message)
        self.last_finite_index = last_finite_index
        self.partial = partial
