"""JSON run configuration: parsing, validation and snapshots.

Every problem in a document is collected and reported together, each tagged
with a JSON path such as ``$.predictor.learning_rate``. Unknown keys are
errors.
"""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import asdict, dataclass
from pathlib import Path

from .exceptions import ConfigError
from .flywheel import RunConfig

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
SCENARIOS = ("full", "semi", "both")


@dataclass
class CliConfig:
    run: RunConfig
    output_dir: str | None = None
    log_level: str = "INFO"
    scenario: str = "both"


class ConfigErrors(ConfigError):
    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))
        self.path = errors[0][0] if errors else None


def _check_scalar(value, kind, path, errors):
    if kind is bool:
        if not isinstance(value, bool):
            errors.append((path, f"expected boolean, got {json.dumps(value)}"))
            return None
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append((path, f"expected integer, got {json.dumps(value)}"))
            return None
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append((path, f"expected number, got {json.dumps(value)}"))
            return None
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            errors.append((path, f"expected string, got {json.dumps(value)}"))
            return None
        return value
    raise TypeError(kind)


def _resolve(hint):
    """Reduce ``X | None`` to ``(X, optional)``."""
    args = typing.get_args(hint)
    if type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0], True
    return hint, False


def _build(cls, obj, path, errors, overrides=None):
    if not isinstance(obj, dict):
        errors.append((path, "expected object"))
        return None
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in obj:
        if key not in names:
            errors.append((f"{path}.{key}", "unknown key"))
    kwargs = dict(overrides or {})
    for f in dataclasses.fields(cls):
        if f.name not in obj:
            continue
        fpath = f"{path}.{f.name}"
        kind, optional = _resolve(hints[f.name])
        value = obj[f.name]
        if value is None and optional:
            kwargs[f.name] = None
        elif dataclasses.is_dataclass(kind):
            kwargs[f.name] = _build(kind, value, fpath, errors)
        elif typing.get_origin(kind) is tuple:
            item_kinds = typing.get_args(kind)
            if not isinstance(value, list) or len(value) != len(item_kinds):
                errors.append((fpath, f"expected array of {len(item_kinds)} numbers"))
                continue
            items = [_check_scalar(v, k, f"{fpath}[{i}]", errors) for i, (v, k) in enumerate(zip(value, item_kinds))]
            kwargs[f.name] = tuple(items)
        else:
            kwargs[f.name] = _check_scalar(value, kind, fpath, errors)
    if any(v is None and not _resolve(hints[k])[1] for k, v in kwargs.items()):
        return None
    required = [f.name for f in dataclasses.fields(cls)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    missing = [n for n in required if n not in kwargs]
    for n in missing:
        errors.append((f"{path}.{n}", "required key missing"))
    if missing:
        return None
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        errors.append((f"{path}.{exc.path}" if exc.path else path, str(exc).split(": ", 1)[-1]))
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        field_name = msg.split(" ", 1)[0]
        if field_name in names:
            errors.append((f"{path}.{field_name}", msg.split(" ", 1)[1]))
        else:
            errors.append((path, msg))
    return None


CLI_KEYS = {"output_dir", "log_level", "scenario"}


def parse_config(obj: dict, base_dir=None, overrides: dict | None = None) -> CliConfig:
    """Validate a config document and build a :class:`CliConfig`.

    ``overrides`` replaces top-level scalar fields (command-line flags).
    ``dataset_path`` and ``external_pool_path`` are resolved relative to
    ``base_dir``.
    """
    errors = []
    if not isinstance(obj, dict):
        raise ConfigErrors([("$", "config must be a JSON object")])
    obj = {**obj, **{k: v for k, v in (overrides or {}).items() if v is not None}}

    cli = {k: obj.pop(k) for k in list(obj) if k in CLI_KEYS}
    log_level = cli.get("log_level", "INFO")
    if log_level not in LOG_LEVELS:
        errors.append(("$.log_level", f"must be one of {', '.join(LOG_LEVELS)}"))
    scenario = cli.get("scenario", "both")
    if scenario not in SCENARIOS:
        errors.append(("$.scenario", f"must be one of {', '.join(SCENARIOS)}"))
    output_dir = cli.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        errors.append(("$.output_dir", "expected string"))

    # generator.max_atoms follows the dataset unless given explicitly
    meta = obj.get("meta")
    gen = obj.get("generator", {})
    if isinstance(meta, dict) and isinstance(gen, dict) and "max_atoms" not in gen and "max_atoms" in meta:
        obj["generator"] = {**gen, "max_atoms": meta["max_atoms"]}

    for key in ("dataset_path", "external_pool_path"):
        if isinstance(obj.get(key), str) and base_dir is not None:
            obj[key] = str(Path(base_dir, obj[key]))

    run = _build(RunConfig, obj, "$", errors)
    if errors:
        raise ConfigErrors(errors)
    return CliConfig(run, output_dir, log_level, scenario)


def load_config(path, overrides: dict | None = None) -> CliConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigErrors([("$", f"cannot read config: {exc}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigErrors([("$", f"invalid JSON: {exc}")]) from None
    return parse_config(obj, Path(path).resolve().parent, overrides)


def config_to_dict(cfg: CliConfig) -> dict:
    run = asdict(cfg.run)
    run["meta"]["property_range"] = list(cfg.run.meta.property_range)
    run["split_ratios"] = list(cfg.run.split_ratios)
    return {**run, "output_dir": cfg.output_dir, "log_level": cfg.log_level, "scenario": cfg.scenario}


def resolve_output_dir(cfg: CliConfig, flag: str | None = None) -> str:
    out = flag or cfg.output_dir or os.environ.get("MATWHEEL_OUTPUT_DIR")
    if not out:
        raise ConfigErrors([("$.output_dir", "not set (use --output-dir, the config, or MATWHEEL_OUTPUT_DIR)")])
    return out

