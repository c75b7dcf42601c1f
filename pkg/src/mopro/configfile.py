"""Flat ``key = value`` config files with [sections], plus run manifests.

Parsing reports file/line for every error.  Values are coerced from the
target dataclass field's default: int, float, bool, str, or a
comma-separated tuple.  A run's manifest (JSON, timestamp-free) plus the
echoed resolved config are enough to reproduce it bitwise.
"""

import dataclasses
import hashlib
import json
import os

from .datagen import GenConfig
from .errors import ConfigError
from .trainer import TrainConfig

#: which TrainConfig fields each section may set
TRAIN_SECTIONS = {
    "model": ("hidden_dims", "embed_dim", "proj_hidden_dim", "proj_dim"),
    "train": (
        "temperature", "alpha", "threshold", "momentum", "queue_size",
        "lambda_pro", "lambda_ins", "warmup_epochs", "epochs", "batch_size",
        "lr", "lr_decay", "lr_milestones", "sgd_momentum", "weight_decay",
        "seed", "disable_pro", "disable_ins", "force_alpha_1",
        "keep_original_labels",
    ),
    "augment": ("weak_sigma", "strong_sigma", "strong_dropout", "strong_scale"),
    "rebalance": ("rebalance_enabled", "rebalance_epochs", "rebalance_lr",
                  "rebalance_decay", "rebalance_milestones"),
    "eval": ("probe_k",),
}

#: GenConfig fields live under [data]; test_per_class is consumed by the CLI
DATA_FIELDS = ("num_classes", "dim", "per_class", "cluster_sep", "cluster_std",
               "noise_rate", "ood_rate", "noise_mode", "ood_mode", "ood_clusters",
               "ood_tilt", "ood_scale", "seed")
SPECIAL_KEYS = {("data", "test_per_class")}


def parse_config_file(path):
    """Return {section: {key: (raw_value, line_number)}}."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    sections = {}
    current = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = (value, lineno)
    return sections


def _coerce(raw, default, where):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from exc
    if isinstance(default, tuple):
        if not raw:
            return ()
        items = []
        for part in raw.split(","):
            part = part.strip()
            try:
                items.append(int(part))
            except ValueError:
                try:
                    items.append(float(part))
                except ValueError as exc:
                    raise ConfigError(f"{where}: bad tuple element {part!r}") from exc
        return tuple(items)
    return raw  # str


def _apply(sections, path, section_map, defaults, ignore=()):
    values = {}
    extras = {}
    for section, entries in sections.items():
        if section in ignore:
            continue  # the other command's sections in a shared config file
        if section not in section_map:
            some = sorted(set(section_map) | set(ignore))
            raise ConfigError(f"{path}: unknown section [{section}]; expected one of {some}")
        for key, (raw, lineno) in entries.items():
            where = f"{path}:{lineno}"
            if (section, key) in SPECIAL_KEYS:
                extras[key] = _coerce(raw, _SPECIAL_DEFAULTS[key], where)
                continue
            if key not in section_map[section]:
                raise ConfigError(
                    f"{where}: unknown key {key!r} in [{section}] "
                    f"(valid: {', '.join(section_map[section])})"
                )
            values[key] = _coerce(raw, defaults[key], where)
    return values, extras


_SPECIAL_DEFAULTS = {"test_per_class": 0}


def build_gen_config(sections, path, seed_override=None):
    """GenConfig (plus CLI extras) from the [data] section."""
    defaults = {f.name: f.default for f in dataclasses.fields(GenConfig)}
    values, extras = _apply(sections, path, {"data": DATA_FIELDS}, defaults,
                            ignore=tuple(TRAIN_SECTIONS))
    if seed_override is not None:
        values["seed"] = int(seed_override)
    cfg = GenConfig(**values)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg, extras


def build_train_config(sections, path, num_classes, input_dim, seed_override=None):
    """TrainConfig with model dims pinned to the dataset's."""
    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    values, extras = _apply(sections, path, TRAIN_SECTIONS, defaults, ignore=("data",))
    values["num_classes"] = int(num_classes)
    values["input_dim"] = int(input_dim)
    if seed_override is not None:
        values["seed"] = int(seed_override)
    cfg = TrainConfig(**values)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg, extras


def render_config(config, section_map):
    """Echo a dataclass back as config-file text with every value resolved."""
    payload = dataclasses.asdict(config)
    lines = []
    for section, keys in section_map.items():
        lines.append(f"[{section}]")
        for key in keys:
            if key not in payload:
                continue
            value = payload[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


GEN_SECTIONS = {"data": DATA_FIELDS + ("split",)}


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, payload):
    """Deterministic manifest.json (sorted keys, no timestamps)."""
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
