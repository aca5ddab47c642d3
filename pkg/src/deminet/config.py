"""Experiment configuration: flat key=value files, flag overrides, validation.

Every key in ``ExperimentConfig`` can appear in a config file (one
``key = value`` per line, ``#`` comments) and as a command-line flag of the
same name; flags win over the file, the file over defaults.
"""

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ModelConfig

AGGREGATION_MODES = ("deminet", "multi_avg", "hard_routing", "moe")


@dataclass
class ExperimentConfig:
    # reproducibility
    seed: int = 7
    # model
    d: int = 16
    heads: int = 4
    gnn_layers: int = 2
    num_interests: int = 4
    epsilon: int = 3
    sim_threshold: float = 0.7
    n_max: int = 20
    interest_hidden: int = 16
    expert_hidden: str = "64,32"
    confinet_hidden: str = "64,32"
    leaky_slope: float = 0.01
    summary_pool: str = "mean"
    normalize_interest_weights: bool = True
    # training
    lr: float = 0.001
    batch_size: int = 256
    beta: float = 0.1
    rho: float = 0.6
    clip_norm: float = 5.0
    steps: int = 1500
    eval_interval: int = 250
    # ablations / aggregation
    aggregation: str = "deminet"
    dha_off: bool = False
    ssl_off: bool = False
    single_expert: bool = False
    # data
    data_path: str = ""
    delimiter: str = "tab"
    click_events: str = ""
    train_fraction: float = 0.8
    min_interactions: int = 5
    neg_per_pos: int = 1
    # synthetic scenario (used when data_path is empty)
    synth_users: int = 2000
    synth_items: int = 500
    synth_interests: int = 8
    synth_seq_len: int = 50
    synth_noise: float = 0.1
    # output
    out_dir: str = "runs/exp"


def _parse_value(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def load_config_file(path) -> dict:
    """Parse a flat key=value file into raw string values."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    types = {name: type(getattr(cfg, name)) for name in known}
    problems = []
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in types:
                problems.append(f"unknown config key {key!r}")
                continue
            if value is None:
                continue
            try:
                parsed = value if isinstance(value, types[key]) and not isinstance(value, str) \
                    else _parse_value(str(value), types[key])
            except ValueError as exc:
                problems.append(f"bad value for {key}: {exc}")
                continue
            setattr(cfg, key, parsed)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def parse_hidden(spec: str, key: str) -> tuple:
    try:
        dims = tuple(int(part) for part in spec.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key} must be comma-separated ints, got {spec!r}")
    if len(dims) != 2 or any(d < 1 for d in dims):
        raise ConfigError(f"{key} must name two positive hidden widths, got {spec!r}")
    return dims


def delimiter_char(cfg: ExperimentConfig) -> str:
    named = {"tab": "\t", "comma": ",", "space": " ", "semicolon": ";"}
    return named.get(cfg.delimiter, cfg.delimiter)


def validate(cfg: ExperimentConfig) -> None:
    """Collect every violation and raise once with the full list."""
    v = []
    if cfg.d < 1:
        v.append(f"d must be positive, got {cfg.d}")
    if cfg.heads < 1 or cfg.d % cfg.heads != 0:
        v.append(f"d={cfg.d} must be divisible by heads={cfg.heads}")
    if cfg.gnn_layers < 0:
        v.append(f"gnn_layers must be >= 0, got {cfg.gnn_layers}")
    if cfg.num_interests < 1:
        v.append(f"num_interests must be >= 1, got {cfg.num_interests}")
    if cfg.epsilon < 1:
        v.append(f"epsilon must be >= 1, got {cfg.epsilon}")
    if not (-1.0 <= cfg.sim_threshold <= 1.0):
        v.append(f"sim_threshold must be in [-1,1], got {cfg.sim_threshold}")
    if not (0.0 <= cfg.rho <= 1.0):
        v.append(f"rho must be in [0,1], got {cfg.rho}")
    if cfg.beta < 0:
        v.append(f"beta must be >= 0, got {cfg.beta}")
    if not (0.0 < cfg.leaky_slope < 1.0):
        v.append(f"leaky_slope must be in (0,1), got {cfg.leaky_slope}")
    if cfg.lr <= 0:
        v.append(f"lr must be positive, got {cfg.lr}")
    if cfg.clip_norm <= 0:
        v.append(f"clip_norm must be positive, got {cfg.clip_norm}")
    if cfg.batch_size < 1:
        v.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.steps < 1:
        v.append(f"steps must be >= 1, got {cfg.steps}")
    if cfg.eval_interval < 1:
        v.append(f"eval_interval must be >= 1, got {cfg.eval_interval}")
    if cfg.n_max < 1:
        v.append(f"n_max must be >= 1, got {cfg.n_max}")
    if cfg.summary_pool not in ("mean", "last"):
        v.append(f"summary_pool must be mean|last, got {cfg.summary_pool!r}")
    if cfg.aggregation not in AGGREGATION_MODES:
        v.append(f"aggregation must be one of {AGGREGATION_MODES}, got {cfg.aggregation!r}")
    if not (0.0 < cfg.train_fraction < 1.0):
        v.append(f"train_fraction must be in (0,1), got {cfg.train_fraction}")
    if cfg.min_interactions < 2:
        v.append(f"min_interactions must be >= 2, got {cfg.min_interactions}")
    if cfg.neg_per_pos < 1:
        v.append(f"neg_per_pos must be >= 1, got {cfg.neg_per_pos}")
    if cfg.synth_interests < 2:
        v.append(f"synth_interests must be >= 2, got {cfg.synth_interests}")
    if cfg.synth_items < cfg.synth_interests:
        v.append(f"synth_items={cfg.synth_items} < synth_interests={cfg.synth_interests}")
    if not (0.0 <= cfg.synth_noise <= 1.0):
        v.append(f"synth_noise must be in [0,1], got {cfg.synth_noise}")
    try:
        parse_hidden(cfg.expert_hidden, "expert_hidden")
        parse_hidden(cfg.confinet_hidden, "confinet_hidden")
    except ConfigError as exc:
        v.append(str(exc))
    if v:
        raise ConfigError("config validation failed: " + "; ".join(v))


def config_hash(cfg: ExperimentConfig) -> str:
    canon = "\n".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(ExperimentConfig))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def config_lines(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{f.name} = {getattr(cfg, f.name)}" for f in fields(ExperimentConfig))


def to_model_config(cfg: ExperimentConfig, num_items: int, num_categories: int) -> ModelConfig:
    return ModelConfig(
        num_items=num_items,
        num_categories=num_categories,
        d=cfg.d,
        heads=cfg.heads,
        gnn_layers=cfg.gnn_layers,
        num_interests=cfg.num_interests,
        epsilon=cfg.epsilon,
        sim_threshold=cfg.sim_threshold,
        n_max=cfg.n_max,
        interest_hidden=cfg.interest_hidden,
        expert_hidden=parse_hidden(cfg.expert_hidden, "expert_hidden"),
        confinet_hidden=parse_hidden(cfg.confinet_hidden, "confinet_hidden"),
        leaky_slope=cfg.leaky_slope,
        summary_pool=cfg.summary_pool,
        normalize_interest_weights=cfg.normalize_interest_weights,
        aggregation=cfg.aggregation,
        dha_off=cfg.dha_off,
        single_expert=cfg.single_expert,
    )
