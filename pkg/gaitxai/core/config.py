import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

from gaitxai.core.errors import ConfigError, MissingInput
from gaitxai.models.config import RunConfig

load_dotenv()


class Settings:
    # Logging Configuration
    LOG_LEVEL: str = os.getenv("GAITXAI_LOG_LEVEL", "info")
    LOG_FILE: str = os.getenv("GAITXAI_LOG_FILE", "")

    # Execution Configuration
    MAX_WORKERS: int = int(os.getenv("GAITXAI_MAX_WORKERS", "1"))
    OUTPUT_DIR: str = os.getenv("GAITXAI_OUTPUT_DIR", "outputs")
    DEFAULT_SEED: int = int(os.getenv("GAITXAI_DEFAULT_SEED", "42"))

    # Conservation residual (relative to the explained logit) above which a warning is raised
    CONSERVATION_WARN_RELATIVE: float = 1e-4


settings = Settings()


# Flat `section.key` names mapped onto the nested RunConfig structure
KEY_PATHS: Dict[str, Tuple[str, ...]] = {
    "data.path": ("data", "path"),
    "data.schema": ("data", "schema"),
    "data.mapping": ("data", "mapping"),
    "input.layout": ("input", "layout"),
    "input.channels": ("input", "channels"),
    "model.architecture": ("model", "architecture"),
    "train.epochs": ("train", "epochs"),
    "train.batch_size": ("train", "batch_size"),
    "train.init": ("train", "init"),
    "train.optimizer": ("train", "optimizer", "kind"),
    "train.lr": ("train", "optimizer", "lr"),
    "train.momentum": ("train", "optimizer", "momentum"),
    "train.beta1": ("train", "optimizer", "beta1"),
    "train.beta2": ("train", "optimizer", "beta2"),
    "train.eps": ("train", "optimizer", "eps"),
    "lrp.rule": ("lrp", "rule"),
    "lrp.epsilon": ("lrp", "epsilon"),
    "lrp.alpha": ("lrp", "alpha"),
    "lrp.beta": ("lrp", "beta"),
    "lrp.target": ("lrp", "target"),
    "lrp.grouping": ("lrp", "grouping"),
    "spm.alpha": ("spm", "alpha"),
    "spm.two_tailed": ("spm", "two_tailed"),
    "spm.unit": ("spm", "unit"),
    "spm.normalized": ("spm", "normalized"),
    "cv.k": ("cv", "k"),
    "regions.path": ("regions", "path"),
    "regions.mass_fraction": ("regions", "mass_fraction"),
    "synth.subjects_per_class": ("synth", "n_subjects_per_class"),
    "synth.female_subjects": ("synth", "n_female_subjects"),
    "synth.male_subjects": ("synth", "n_male_subjects"),
    "synth.trials": ("synth", "trials_per_subject"),
    "synth.length": ("synth", "T"),
    "synth.bump_center": ("synth", "bump_center"),
    "synth.bump_width": ("synth", "bump_width"),
    "synth.bump_amplitude": ("synth", "bump_amplitude"),
    "synth.noise_sd": ("synth", "noise_sd"),
    "seed": ("seed",),
    "out": ("out",),
}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse `key=value` lines; `#` starts a comment line"""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_PATHS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_override(text: str) -> Tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    key, value = (part.strip() for part in text.split("=", 1))
    if key not in KEY_PATHS:
        raise ConfigError(f"unknown key {key!r}")
    return key, value


def build_run_config(flat: Mapping[str, Any]) -> RunConfig:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        path = KEY_PATHS[key]
        node = nested
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = None if value == "" else value
    # The training RNG follows the run seed
    if "seed" in nested:
        nested.setdefault("train", {})["seed"] = nested["seed"]
    try:
        return RunConfig.model_validate(nested)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"invalid configuration at {location}: {first['msg']}")


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Load a config file (optional) and apply command-line overrides on top"""
    flat: Dict[str, Any] = {"seed": str(settings.DEFAULT_SEED), "out": settings.OUTPUT_DIR}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise MissingInput(f"config file not found: {path}")
        flat.update(parse_config_text(config_path.read_text(encoding="utf-8"), source=str(config_path)))
    for key, value in (overrides or {}).items():
        if key not in KEY_PATHS:
            raise ConfigError(f"unknown key {key!r}")
        flat[key] = value
    return build_run_config(flat)


def flatten_run_config(config: RunConfig) -> Dict[str, Any]:
    dumped = config.model_dump(mode="json", by_alias=True)
    flat: Dict[str, Any] = {}
    for key, path in KEY_PATHS.items():
        node: Any = dumped
        for part in path:
            node = node[part]
        flat[key] = node
    return flat


def dump_run_config(config: RunConfig) -> str:
    """Write the config back in the file format, sorted by key"""
    lines = []
    for key, value in sorted(flatten_run_config(config).items()):
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
