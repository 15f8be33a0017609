"""Flat dotted-key experiment configuration.

A config file holds one ``key = value`` assignment per line, for example::

    experiment = custom
    target.label = horseshoe
    family.kind = copula_rot
    train.learning_rate = 0.002
    emit.trace_csv = true

Values are read as JSON where possible (numbers, booleans, lists) and as
bare strings otherwise. ``#`` starts a comment.
"""
from dataclasses import dataclass, field, fields, asdict
import hashlib
import json
import os

from .elbo import TrainConfig
from .exceptions import ConfigurationError
from .families import KINDS
from .tables import TABLES

__all__ = ["ExperimentConfig", "parse_config_text", "load_config", "config_hash"]

EXPERIMENTS = ("table1", "table2", "custom")
TARGET_LABELS = ("logistic", "horseshoe", "gaussian", "tiny_bnn")
EMIT_KEYS = ("trace_csv", "samples_csv", "oracle_json", "summary_json")
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return text


def parse_config_text(text):
    """Parse dotted-key text into a nested dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        parts = key.split(".")
        if not all(parts):
            raise ConfigurationError(f"line {lineno}: malformed key {key!r}")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"line {lineno}: {key!r} conflicts with a scalar key")
        if parts[-1] in node and isinstance(node[parts[-1]], dict):
            raise ConfigurationError(f"line {lineno}: {key!r} conflicts with a section")
        node[parts[-1]] = _value(val)
    return out


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    target: dict = field(default_factory=dict)
    family: dict = field(default_factory=lambda: {"kind": "copula_rot"})
    train: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    emit: dict = field(default_factory=lambda: {k: True for k in EMIT_KEYS})

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}")
        setup = TABLES.get(self.experiment)
        if setup is not None:
            # table experiments start from the table's target and training settings
            self.target = {**setup.target, **self.target}
            self.train = {**setup.train, **self.train}
        elif not self.target:
            self.target = {"label": "horseshoe"}
        if self.target.get("label") not in TARGET_LABELS:
            raise ConfigurationError(f"target.label must be one of {TARGET_LABELS}")
        if self.family.get("kind") not in KINDS:
            raise ConfigurationError(f"family.kind must be one of {KINDS}")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
        bad = set(self.emit) - set(EMIT_KEYS)
        if bad:
            raise ConfigurationError(f"unknown emit flags: {sorted(bad)}")
        self.emit = {k: bool(self.emit.get(k, True)) for k in EMIT_KEYS}
        self.seed = int(self.seed)

    @property
    def init_overrides(self):
        return {k: v for k, v in self.family.items() if k != "kind"}

    def train_config(self, threads=None):
        kw = dict(self.train)
        kw["seed"] = self.seed
        if threads is not None:
            kw["threads"] = int(threads)
        try:
            return TrainConfig(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        return cls(**doc)


def load_config(path):
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(parse_config_text(fh.read()))


def config_hash(config):
    """Short stable hash of the resolved configuration (output location excluded)."""
    doc = config.as_dict() if isinstance(config, ExperimentConfig) else dict(config)
    doc.pop("output_dir", None)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
