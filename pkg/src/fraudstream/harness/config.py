"""Experiment configuration and its flat ``key = value`` file format.

The file holds one ``key = value`` per line (``#`` comments allowed). Keys
are the :class:`ExperimentConfig` fields plus the generator fields of
:class:`~fraudstream.stream.GenConfig`, whose ``seed`` is spelled
``data_seed``. Unknown keys are rejected.
"""

import configparser
import os
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from ..exceptions import ConfigError
from ..strategies import parse_strategy
from ..stream import GenConfig

SEED_ENV = "FRAUDSTREAM_SEED"


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"  # CSV path or "synthetic"
    generator: GenConfig = field(default_factory=GenConfig)
    pipeline: str = "transaction"  # or "card"
    strategies: tuple = ("HRQ", "SR")
    k: int = 100
    q: int = 5
    m: int = 1000
    delay: int = 7
    feedback_window: int = 7
    delayed_window: int = 15
    warmup: int = 7
    eval_days: Optional[int] = None  # None: every day after warmup
    repetitions: int = 20
    seed: int = 0
    # model
    n_trees: int = 20
    max_depth: int = 12
    min_leaf_size: int = 1
    max_features: str = "sqrt"
    smoothing: float = 0.0
    balanced: Optional[bool] = None  # None: plain forest for transactions, balanced for cards
    bootstrap: bool = True
    w_delayed: float = 0.5
    # strategy hyperparameters
    combiner: str = "MF"
    alpha: float = 1.0
    eps: float = 1e-3
    v: float = 0.05
    rho: float = 0.7
    k_neighbors: int = 5
    center: float = 0.5
    qfu_mode: str = "replace"  # or "complement"
    pseudo_labels_in: str = "feedback"  # card pipeline: "feedback", "delayed" or "both"
    pca_window: int = 1
    pca_variance: float = 0.9
    n_jobs: int = 1

    def validate(self):
        if self.pipeline not in ("transaction", "card"):
            raise ConfigError(f"pipeline must be 'transaction' or 'card', got {self.pipeline!r}")
        if self.warmup < 1:
            raise ConfigError("warmup must be >= 1")
        if self.delay < 1:
            raise ConfigError("delay must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.feedback_window < 1 or self.delayed_window < 1 or self.pca_window < 1:
            raise ConfigError("windows must be >= 1")
        if self.eval_days is not None and self.eval_days < 1:
            raise ConfigError("eval_days must be >= 1")
        if not 0.0 <= self.w_delayed <= 1.0:
            raise ConfigError("w_delayed must lie in [0, 1]")
        if self.qfu_mode not in ("replace", "complement"):
            raise ConfigError("qfu_mode must be 'replace' or 'complement'")
        if self.pseudo_labels_in not in ("feedback", "delayed", "both"):
            raise ConfigError("pseudo_labels_in must be 'feedback', 'delayed' or 'both'")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategy ids")
        for s in self.strategies:
            self.strategy_spec(s)
        if self.dataset == "synthetic":
            self.generator.validate()
        return self

    def strategy_spec(self, ident):
        return parse_strategy(
            ident, k=self.k, q=self.q, m=self.m, combiner=self.combiner, rho=self.rho,
            v=self.v, alpha=self.alpha, eps=self.eps, k_neighbors=self.k_neighbors,
            center=self.center,
        )

    def forest_params(self):
        mf = self.max_features
        if mf not in ("sqrt", "all"):
            mf = int(mf)
        balanced = self.balanced if self.balanced is not None else self.pipeline == "card"
        return dict(n_trees=self.n_trees, max_depth=self.max_depth, min_leaf_size=self.min_leaf_size,
                    max_features=mf, smoothing=self.smoothing, balanced=balanced,
                    bootstrap=self.bootstrap)

    def with_changes(self, **changes):
        return replace(self, **changes)


_EXP_FIELDS = {f.name: f for f in fields(ExperimentConfig) if f.name != "generator"}
_GEN_FIELDS = {("data_seed" if f.name == "seed" else f.name): f for f in fields(GenConfig)}
_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _convert(key, raw, annotation):
    raw = raw.strip()
    hints = typing.get_args(annotation) or (annotation,)
    optional = type(None) in hints
    if optional and raw.lower() in ("", "none", "null"):
        return None
    typ = next(h for h in hints if h is not type(None))
    try:
        if typ is bool:
            return _BOOL[raw.lower()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text):
    """Parse config text; unknown keys raise :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if cp.sections() != ["experiment"]:
        raise ConfigError("config must be flat (no [sections])")
    exp, gen = {}, {}
    hints = typing.get_type_hints(ExperimentConfig)
    gen_hints = typing.get_type_hints(GenConfig)
    for key, raw in cp["experiment"].items():
        if key in _EXP_FIELDS:
            exp[key] = _convert(key, raw, hints[key])
        elif key in _GEN_FIELDS:
            name = _GEN_FIELDS[key].name
            gen[name] = _convert(key, raw, gen_hints[name])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = ExperimentConfig(generator=GenConfig(**gen), **exp)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cfg.validate()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg):
    """Inverse of :func:`parse_config` (modulo the seed environment override)."""
    lines = []
    for name in _EXP_FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{name} = {'none' if v is None else v}")
    for key, f in _GEN_FIELDS.items():
        v = getattr(cfg.generator, f.name)
        lines.append(f"{key} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
