"""
Experiment configuration for jetflow
实验配置 - JSON 配置文件与命令行参数合并、校验、保存
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from ..errors import ConfigurationError
from ..ode_flow import OdeMethod, OdeSolverSpec
from ..schemes import JetKind, JetVariant, SchemeSpec

# 格式描述符
SCHEME_DESCRIPTORS = (
    "em", "jet-dt", "jet-dw2",
    "expansion2-dt", "expansion3-dt", "expansion2-dw2", "expansion3-dw2",
)
STUDIES = ("strong", "weak", "drift", "weak-drift")
OUTPUT_FORMATS = ("csv", "json", "both")
REFERENCES = ("analytic", "fine")

# 各 ODE 方法的默认子步数
DEFAULT_SUBSTEPS = {
    OdeMethod.EXACT.value: 1,
    OdeMethod.RK4.value: 1,
    OdeMethod.ADAMS8.value: 4,
    OdeMethod.EULER.value: 1,
}


@dataclass
class ExperimentConfig:
    """一次实验的完整配置"""
    problem: str = "kepler"
    problem_params: Dict[str, Any] = field(default_factory=dict)
    modulated: bool = False
    schemes: List[str] = field(default_factory=lambda: ["jet-dt"])
    ode: str = OdeMethod.RK4.value
    substeps: Optional[int] = None
    T: float = 1.0
    steps: List[int] = field(default_factory=lambda: [100])
    n_paths: int = 1000
    seed: int = 0
    study: str = "strong"
    test_function: str = "first"
    reference: str = "analytic"
    reference_expectation: Optional[float] = None
    output_dir: str = "."
    output_format: str = "csv"
    workers: Optional[int] = None
    n_seeds: int = 10
    trajectories_dir: Optional[str] = None

    @property
    def problem_name(self) -> str:
        """--modulated 把 kepler 切换为 kepler-modulated"""
        if self.modulated and self.problem == "kepler":
            return "kepler-modulated"
        return self.problem

    @property
    def solver(self) -> OdeSolverSpec:
        substeps = self.substeps if self.substeps is not None else DEFAULT_SUBSTEPS.get(self.ode, 1)
        return OdeSolverSpec(self.ode, substeps)

    def scheme_specs(self) -> List[SchemeSpec]:
        return [scheme_from_descriptor(name, self.ode, self.substeps) for name in self.schemes]


def scheme_from_descriptor(name: str, ode: str = OdeMethod.RK4.value,
                           substeps: Optional[int] = None) -> SchemeSpec:
    """把 em / jet-dt / jet-dw2 / expansion{2,3}-{dt,dw2} 映射为 SchemeSpec"""
    if name not in SCHEME_DESCRIPTORS:
        raise ConfigurationError(f"unknown scheme '{name}' (known: {', '.join(SCHEME_DESCRIPTORS)})")
    if name == "em":
        return SchemeSpec.em()
    family, base = name.split("-")
    base_kind = JetKind.DT_JET if base == "dt" else JetKind.DW2_JET
    if family == "jet":
        if substeps is None:
            substeps = DEFAULT_SUBSTEPS.get(ode, 1)
        return SchemeSpec.jet(JetVariant(base_kind), OdeSolverSpec(ode, substeps))
    return SchemeSpec.jet(JetVariant.expansion(int(family[-1]), base_kind))


def load_config_file(path: str) -> Dict[str, Any]:
    """读取 JSON 配置文件"""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain a JSON object")
    return data


def build_config(file_data: Optional[Dict[str, Any]] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """默认值 < 配置文件 < 命令行参数；值为 None 的参数视为未给出"""
    known = {f.name for f in fields(ExperimentConfig)}
    merged: Dict[str, Any] = {}
    for source in (file_data or {}, overrides or {}):
        unknown = set(source) - known
        if unknown and source is file_data:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update({key: value for key, value in source.items() if key in known and value is not None})
    return ExperimentConfig(**merged)


def validate_config(config: ExperimentConfig) -> List[str]:
    """验证配置有效性，返回问题列表"""
    from ..sde_model import list_problems

    issues = []

    known_problems = [entry.name for entry in list_problems()]
    if config.problem_name not in known_problems:
        issues.append(f"unknown problem: {config.problem_name}")

    if not config.schemes:
        issues.append("no schemes given")
    for name in config.schemes:
        if name not in SCHEME_DESCRIPTORS:
            issues.append(f"unknown scheme: {name}")

    if config.ode not in [m.value for m in OdeMethod]:
        issues.append(f"unknown ODE method: {config.ode}")
    if config.substeps is not None and config.substeps < 1:
        issues.append(f"substeps must be >= 1: {config.substeps}")

    if not config.T > 0:
        issues.append(f"T must be positive: {config.T}")
    if not config.steps:
        issues.append("steps list is empty")
    elif any(int(n) != n or n < 1 for n in config.steps):
        issues.append(f"steps must be positive integers: {config.steps}")

    if config.n_paths < 2:
        issues.append(f"n_paths must be >= 2: {config.n_paths}")
    if config.n_seeds < 1:
        issues.append(f"n_seeds must be >= 1: {config.n_seeds}")
    if config.seed < 0:
        issues.append(f"seed must be non-negative: {config.seed}")
    if config.study not in STUDIES:
        issues.append(f"unknown study: {config.study}")
    if config.reference not in REFERENCES:
        issues.append(f"unknown reference: {config.reference}")
    if config.output_format not in OUTPUT_FORMATS:
        issues.append(f"unknown output format: {config.output_format}")
    if config.workers is not None and config.workers < 1:
        issues.append(f"workers must be >= 1: {config.workers}")

    return issues


def require_valid(config: ExperimentConfig) -> ExperimentConfig:
    issues = validate_config(config)
    if issues:
        raise ConfigurationError("invalid configuration: " + "; ".join(issues))
    return config


def save_config(config: ExperimentConfig, path: str) -> str:
    """保存配置为 JSON"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(asdict(config), f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path
