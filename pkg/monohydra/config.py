"""
配置文件
"""

import os
import json
import copy
from pathlib import Path
from typing import Dict, Optional, Any, List

from dotenv import load_dotenv
from pydantic import ValidationError

try:
    from .model_types import RunConfig, ConfigError
except ImportError:
    from monohydra.model_types import RunConfig, ConfigError

# 加载环境变量
load_dotenv()

# 加载配置文件
ROOT_DIR = Path(__file__).parent.parent
config_path = ROOT_DIR / "config.json"
with open(config_path, "r", encoding="utf-8") as f:
    config_json = json.load(f)

# 环境设置
env = {**config_json.get("env", {})}
for key in env:
    if os.getenv(key):
        env[key] = os.getenv(key) or env[key]

# 导出环境变量
DEBUG = str(env.get("MONOHYDRA_DEBUG", "")).lower() in ("1", "true", "yes")
OUTPUT_DIR = env.get("MONOHYDRA_OUTPUT_DIR") or config_json.get("output_dir", "runs")
SEED = int(env["MONOHYDRA_SEED"]) if env.get("MONOHYDRA_SEED") else config_json.get("seed", 7)

DEFAULTS: Dict[str, Any] = {k: v for k, v in config_json.items() if k != "env"}
DEFAULTS["output_dir"] = OUTPUT_DIR
DEFAULTS["seed"] = SEED


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并配置字典, override 优先

    Args:
        base: 基础配置
        override: 覆盖配置

    Returns:
        新的合并结果 (不修改输入)
    """
    result = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def parse_override(item: str) -> Dict[str, Any]:
    """解析 `a.b.c=value` 形式的命令行覆盖项

    Args:
        item: 覆盖项字符串; value 能按 JSON 解析时按 JSON, 否则作为字符串

    Returns:
        嵌套字典
    """
    if "=" not in item:
        raise ConfigError(f"override must look like key=value: {item!r}")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty override key: {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    # run.xxx 与顶层 xxx 等价
    if parts[0] == "run":
        parts = parts[1:]
    nested: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        nested = {part: nested}
    return nested


def load_config_file(path: str) -> Dict[str, Any]:
    """读取 JSON 配置文件

    Args:
        path: 文件路径

    Returns:
        配置字典 (去掉 env 段)
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    data.pop("env", None)
    if isinstance(data.get("run"), dict):
        data = deep_merge({k: v for k, v in data.items() if k != "run"}, data["run"])
    return data


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[List[str]] = None,
    base: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """加载运行配置: 默认值 ← 配置文件 ← 命令行覆盖

    Args:
        path: 可选的运行配置文件
        overrides: `--set key=value` 列表
        base: 可选的额外覆盖字典 (测试与消融使用)

    Returns:
        校验后的 RunConfig
    """
    merged = copy.deepcopy(DEFAULTS)
    if path:
        merged = deep_merge(merged, load_config_file(path))
    if base:
        merged = deep_merge(merged, base)
    for item in overrides or []:
        merged = deep_merge(merged, parse_override(item))
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def resolve_path(path: str) -> Path:
    """相对路径先按当前目录, 再按仓库根目录解析"""
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    candidate = ROOT_DIR / p
    return candidate if candidate.exists() else p


def config_summary(cfg: RunConfig) -> None:
    """调试模式下打印配置摘要"""
    if not DEBUG:
        return
    print("【配置】:", json.dumps(cfg.model_dump(), ensure_ascii=False, indent=2))


if __name__ == "__main__":
    cfg = load_run_config(overrides=["flags.depth_factors=true", "sim.duration=2"])
    print("【配置】:", cfg.flags, cfg.sim.duration, cfg.fusion.K)
