"""INI-style run configuration with strict key checking.

Example file (every key optional; the values shown are the defaults)::

    [dataset]
    seed = 1
    samples = 5000
    atoms_min = 2
    atoms_max = 8
    path = none

    [grid]
    bins = 128
    sigma_mult = 0.75
    lo = none
    hi = none
    margin = 3.0

    [loss]
    temperature = 2.0
    energy_weight = 0.7
    force_weight = 0.3
    normalize = true

    [optimizer]
    lr = 0.001
    weight_decay = 0.01
    warmup_steps = 100
    total_steps = 5000
    floor = 0.01
    batch_size = 32
    clip_norm = 1.0

    [run]
    mode = hl_gauss
    seed = 0
    hidden = 128
    eval_interval = 100
    eval_batch = 256
    out_dir = none
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

from .experiment import DatasetSpec, GridSpec, RunConfig
from .losses import LossConfig
from .model import OptimizerConfig


class ConfigError(ValueError):
    pass


# section -> key -> (default, type); None defaults take the type given
SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "seed": (1, int),
        "samples": (5000, int),
        "atoms_min": (2, int),
        "atoms_max": (8, int),
        "path": (None, str),
    },
    "grid": {
        "bins": (128, int),
        "sigma_mult": (0.75, float),
        "lo": (None, float),
        "hi": (None, float),
        "margin": (3.0, float),
    },
    "loss": {
        "temperature": (2.0, float),
        "energy_weight": (0.7, float),
        "force_weight": (0.3, float),
        "normalize": (True, bool),
    },
    "optimizer": {
        "lr": (1e-3, float),
        "weight_decay": (1e-2, float),
        "warmup_steps": (100, int),
        "total_steps": (5000, int),
        "floor": (0.01, float),
        "batch_size": (32, int),
        "clip_norm": (1.0, float),
    },
    "run": {
        "mode": ("hl_gauss", str),
        "seed": (0, int),
        "hidden": (128, int),
        "eval_interval": (100, int),
        "eval_batch": (256, int),
        "out_dir": (None, str),
    },
}

_BOOLS = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _convert(section: str, key: str, raw: str):
    default, kind = SCHEMA[section][key]
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        if default is not None and kind is not float:
            raise ConfigError(f"[{section}] {key} cannot be empty")
        return None
    try:
        if kind is bool:
            return _BOOLS[text.lower()]
        return kind(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc


def defaults() -> dict[str, dict]:
    return {sec: {k: d for k, (d, _) in keys.items()} for sec, keys in SCHEMA.items()}


def read_config_file(path) -> dict[str, dict]:
    """Parse ``path`` into a full settings dict (defaults filled in).

    Raises:
        ConfigError: on unknown sections or keys, or unparsable values.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, default_section="__no_defaults__")
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    settings = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {path}; expected one of {sorted(SCHEMA)}")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}; expected one of {sorted(SCHEMA[section])}")
            settings[section][key] = _convert(section, key, raw)
    return settings


def to_run_config(settings: dict[str, dict]) -> RunConfig:
    d, g, lo, o, r = (settings[s] for s in ("dataset", "grid", "loss", "optimizer", "run"))
    try:
        return RunConfig(
            mode=r["mode"],
            dataset=DatasetSpec(d["seed"], d["samples"], d["atoms_min"], d["atoms_max"], d["path"]),
            grid=GridSpec(g["bins"], g["sigma_mult"], g["lo"], g["hi"], g["margin"]),
            loss=LossConfig(lo["temperature"], lo["energy_weight"], lo["force_weight"]),
            optimizer=OptimizerConfig(
                lr=o["lr"],
                weight_decay=o["weight_decay"],
                warmup_steps=o["warmup_steps"],
                total_steps=o["total_steps"],
                floor=o["floor"],
                batch_size=o["batch_size"],
                clip_norm=o["clip_norm"],
            ),
            hidden=r["hidden"],
            seed=r["seed"],
            eval_interval=r["eval_interval"],
            eval_batch=r["eval_batch"],
            normalize_losses=lo["normalize"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path=None, overrides: dict[str, dict] | None = None) -> tuple[RunConfig, dict]:
    """Defaults, then the file at ``path``, then ``overrides`` (e.g. CLI flags)."""
    settings = read_config_file(path) if path is not None else defaults()
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if key not in SCHEMA.get(section, {}):
                raise ConfigError(f"unknown setting {section}.{key}")
            if value is not None:
                settings[section][key] = value
    return to_run_config(settings), settings


def dump_settings(settings: dict[str, dict]) -> str:
    """Render settings back to INI text (round-trips through :func:`read_config_file`)."""
    lines = []
    for section, keys in settings.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def settings_json(settings: dict[str, dict]) -> str:
    return json.dumps(settings, indent=2, sort_keys=True)


def settings_from_run_config(cfg: RunConfig, out_dir=None) -> dict[str, dict]:
    d, g, lo, o = cfg.dataset, cfg.grid, cfg.loss, cfg.optimizer
    return {
        "dataset": {"seed": d.seed, "samples": d.n_samples, "atoms_min": d.atoms_min, "atoms_max": d.atoms_max, "path": d.path},
        "grid": {"bins": g.bins, "sigma_mult": g.sigma_mult, "lo": g.lo, "hi": g.hi, "margin": g.margin},
        "loss": {
            "temperature": lo.temperature,
            "energy_weight": lo.energy_weight,
            "force_weight": lo.force_weight,
            "normalize": cfg.normalize_losses,
        },
        "optimizer": {
            "lr": o.lr,
            "weight_decay": o.weight_decay,
            "warmup_steps": o.warmup_steps,
            "total_steps": o.total_steps,
            "floor": o.floor,
            "batch_size": o.batch_size,
            "clip_norm": o.clip_norm,
        },
        "run": {
            "mode": cfg.mode,
            "seed": cfg.seed,
            "hidden": cfg.hidden,
            "eval_interval": cfg.eval_interval,
            "eval_batch": cfg.eval_batch,
            "out_dir": None if out_dir is None else str(out_dir),
        },
    }


def echo_text(cfg: RunConfig, grid=None, digest: str | None = None, out_dir=None) -> str:
    """Resolved configuration as loadable INI, with the derived grid and
    dataset hash appended as comments."""
    text = dump_settings(settings_from_run_config(cfg, out_dir))
    notes = []
    if grid is not None:
        notes.append(f"# resolved grid: lo = {grid.lo!r}, hi = {grid.hi!r}, k = {grid.k}, w = {grid.w!r}")
    if digest is not None:
        notes.append(f"# dataset sha256: {digest}")
    return text + "\n".join(notes) + ("\n" if notes else "")
