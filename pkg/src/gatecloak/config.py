"""Flat key=value run configuration.

One option per line, `#` comments, no sections. CLI flags override file values;
the GATECLOAK_OUTPUT_ROOT environment variable overrides the output directory.
Unknown keys are rejected so typos surface immediately.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .attacks import DeepfoolConfig, JsmaConfig, SquareConfig
from .geometry import TechRules
from .recognet import TrainConfig

OUTPUT_ROOT_ENV = "GATECLOAK_OUTPUT_ROOT"

SCENARIOS = ("whitebox", "transfer_gen_recog", "transfer_eval_recog")
METHODS = ("jsma", "deepfool", "square")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus_dir: str = "runs/corpus"
    model_dir: str = "runs/models"
    output_dir: str = "runs/out"
    scenario: str = "whitebox"
    layer_tag: str = "metal1"
    seed: int = 0
    accuracy_threshold: float = 0.5
    fab_sim: bool = True
    # per-category sample count override; 0 keeps the full standard corpus
    corpus_count: int = 0
    # attack evaluation runs on this many held-out samples (0 = all of them)
    eval_subset: int = 32
    methods: tuple = METHODS
    # small epsilons waste schedule steps on binary rasters: the raw attack
    # stays weak while the squarified version is already strong, which can
    # invert the expected raw <= constrained ordering
    sweep_epsilons: tuple = (0.5, 1.0)
    sweep_filter_sides: tuple = (4, 2)
    rules: TechRules = field(default_factory=TechRules)
    train: TrainConfig = field(default_factory=TrainConfig)
    jsma: JsmaConfig = field(default_factory=JsmaConfig)
    # run-level budgets favor wall-clock over exhaustive search; the class
    # defaults keep the published budgets for direct use
    deepfool: DeepfoolConfig = field(
        default_factory=lambda: DeepfoolConfig(max_iter=20))
    square: SquareConfig = field(
        default_factory=lambda: SquareConfig(max_iter=150, nb_restarts=1))

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, "
                              f"got {self.scenario!r}")
        # 1.0 makes the sweep exit on its first step, 0.0 always exhausts it;
        # both boundary behaviors are legitimate, so the interval is closed
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ConfigError("accuracy_threshold must lie in [0, 1]")
        if self.eval_subset < 0:
            raise ConfigError("eval_subset must be >= 0")
        if self.corpus_count < 0:
            raise ConfigError("corpus_count must be >= 0")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for s in self.sweep_filter_sides:
            if s < 1:
                raise ConfigError("sweep filter sides must be >= 1")
        for e in self.sweep_epsilons:
            if not 0.0 < e <= 1.0:
                raise ConfigError("sweep epsilons must lie in (0, 1]")


def parse_kv_text(text: str) -> dict:
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected KEY=VALUE, got {raw!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = val
    return out


def load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_kv_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _coerce(key: str, val, target_type):
    if not isinstance(val, str):
        return val
    try:
        if target_type is bool:
            low = val.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        if target_type is int:
            return int(val)
        if target_type is float:
            return float(val)
        if target_type is tuple:
            items = [v.strip() for v in val.split(",") if v.strip()]
            def num(v):
                return float(v) if ("." in v or "e" in v.lower()) else int(v)
            try:
                return tuple(num(v) for v in items)
            except ValueError:
                return tuple(items)
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as "
                          f"{target_type.__name__}") from None


# sub-config prefixes map flat keys like train_epochs onto nested dataclasses
_SUBS = {"rules": TechRules, "train": TrainConfig, "jsma": JsmaConfig,
         "deepfool": DeepfoolConfig, "square": SquareConfig}


def build_run_config(kv: dict, overrides: dict | None = None) -> RunConfig:
    merged = dict(kv)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    env_root = os.environ.get(OUTPUT_ROOT_ENV)
    if env_root and not (overrides or {}).get("output_dir"):
        merged["output_dir"] = env_root

    top_fields = {f.name: f.type for f in fields(RunConfig)}
    sub_kv = {name: {} for name in _SUBS}
    top_kv = {}
    for key, val in merged.items():
        head, _, rest = key.partition("_")
        if head in _SUBS and rest:
            sub_names = {f.name for f in fields(_SUBS[head])}
            if rest not in sub_names:
                raise ConfigError(f"unknown option {key!r}")
            sub_kv[head][rest] = val
        elif key in top_fields and key not in _SUBS:
            top_kv[key] = val
        else:
            raise ConfigError(f"unknown option {key!r}")

    run_fields = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for name, cls in _SUBS.items():
        if sub_kv[name]:
            typed = {f.name: f.type for f in fields(cls)}
            args = {k: _coerce(f"{name}_{k}", v, _PYTYPE.get(typed[k], str))
                    for k, v in sub_kv[name].items()}
            try:
                # overlay onto the run-level default so partial key sets keep
                # the remaining run-level values rather than class defaults
                kwargs[name] = replace(run_fields[name].default_factory(),
                                       **args)
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
    for key, val in top_kv.items():
        kwargs[key] = _coerce(key, val, _PYTYPE.get(top_fields[key], str))
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


# dataclass field annotations arrive as strings under future-import semantics
_PYTYPE = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple,
           int: int, float: float, str: str, bool: bool, tuple: tuple}
