"""Run configuration: ``section.key = value`` lines, flags override files.

The grammar is one assignment per line; ``#`` starts a comment; blank lines
are ignored.  Keys live in four sections (data, model, attention, training)
and unknown keys are hard errors so typos cannot silently fall back to
defaults.  ``resolved_text`` renders the fully merged configuration, which
every run directory receives a copy of.
"""

from __future__ import annotations

from .data import SpriteSceneSpec
from .model import ModelSpec
from .training import TrainSpec


class ConfigError(ValueError):
    """Unknown key, unparseable value, or inconsistent configuration."""


# published layout names -> internal mechanism order strings
LAYOUTS = {
    "temporal_first": "tsc",
    "spatial_first": "sct",
    "channel_first": "cts",
    "parallel": "parallel",
}

ABLATIONS = {"": "", "temporal": "t", "spatial": "s", "channel": "c"}

_SCHEMA = {
    "data.size": int,
    "data.frames": int,
    "data.num_sprites": int,
    "data.sprite_size": int,
    "data.v_min": float,
    "data.v_max": float,
    "data.seed": int,
    "data.n_train": int,
    "data.n_test": int,
    "model.frames_in": int,
    "model.frames_out": int,
    "model.channels": int,
    "model.height": int,
    "model.width": int,
    "model.patch": int,
    "model.embed_dim": int,
    "model.depth": int,
    "model.ffn_expansion": int,
    "model.drop_path": float,
    "model.order": str,
    "model.ablate": str,
    "model.causal": bool,
    "model.ar": bool,
    "model.seed": int,
    "attention.num_heads": int,
    "attention.window": int,
    "attention.reduction": int,
    "attention.num_groups": int,
    "attention.bias_shared": bool,
    "training.total_steps": int,
    "training.batch_size": int,
    "training.base_lr": float,
    "training.weight_decay": float,
    "training.warmup_frac": float,
    "training.beta1": float,
    "training.beta2": float,
    "training.eps": float,
    "training.grad_clip": float,
    "training.seed": int,
    "training.eval_every": int,
    "training.eval_subset": int,
}

# keys a model needs a value for even when the config file leaves them out;
# everything else falls back to the dataclass defaults
_DEFAULTS = {
    "data.n_train": 400,
    "data.n_test": 100,
    "model.frames_in": 10,
    "model.frames_out": 10,
    "model.channels": 1,
    "model.height": 32,
    "model.width": 32,
    "model.patch": 4,
    "model.embed_dim": 64,
    "model.depth": 4,
    "model.order": "temporal_first",
    "model.ablate": "",
    "model.seed": 0,
    "training.total_steps": 2000,
}


class RunConfig:
    """Validated flat key/value configuration."""

    def __init__(self):
        self.values = dict(_DEFAULTS)
        self.explicit = set()  # keys set by file or flag, not defaults

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            body = raw.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, value = body.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', "
                                  f"got {raw.strip()!r}")
            cfg.set(key.strip(), value.strip(), where=f"{source}:{lineno}")
        return cfg

    def set(self, key: str, raw: str, where: str = "<flag>"):
        if key not in _SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        want = _SCHEMA[key]
        try:
            if want is bool:
                if raw not in ("true", "false"):
                    raise ValueError
                value = raw == "true"
            else:
                value = want(raw)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {raw!r} as "
                              f"{want.__name__} for {key}") from None
        self.values[key] = value
        self.explicit.add(key)

    def get(self, key: str, default=None):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        return self.values.get(key, default)

    def resolved_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def _kwargs(self, section: str, fields: dict) -> dict:
        out = {}
        for name in fields:
            key = f"{section}.{name}"
            if key in _SCHEMA and key in self.values:
                out[name] = self.values[key]
        return out

    def scene_spec(self) -> SpriteSceneSpec:
        kw = self._kwargs("data", SpriteSceneSpec.__dataclass_fields__)
        try:
            return SpriteSceneSpec(**kw)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def model_spec(self) -> ModelSpec:
        order_name = self.values["model.order"]
        if order_name not in LAYOUTS:
            raise ConfigError(f"model.order must be one of "
                              f"{sorted(LAYOUTS)}, got {order_name!r}")
        ablate_name = self.values["model.ablate"]
        if ablate_name not in ABLATIONS:
            raise ConfigError(f"model.ablate must be one of "
                              f"{sorted(ABLATIONS)}, got {ablate_name!r}")
        kw = self._kwargs("model", ModelSpec.__dataclass_fields__)
        kw.update(self._kwargs("attention", ModelSpec.__dataclass_fields__))
        kw["order"] = LAYOUTS[order_name]
        kw["ablate"] = ABLATIONS[ablate_name]
        if self.values.get("model.ar"):
            kw["ar_mode"] = True
        try:
            return ModelSpec(**kw)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None

    def train_spec(self) -> TrainSpec:
        kw = self._kwargs("training", TrainSpec.__dataclass_fields__)
        try:
            return TrainSpec(**kw)
        except ValueError as e:
            raise ConfigError(str(e)) from None


def spec_conflicts(cfg: RunConfig, spec: ModelSpec) -> list:
    """Names of model fields where an explicitly configured value disagrees
    with a checkpoint's stored spec."""
    diffs = []
    for key in sorted(cfg.explicit):
        section, _, name = key.partition(".")
        if section not in ("model", "attention"):
            continue
        if name == "seed":
            continue  # affects initialization only, not the architecture
        if name == "order":
            want = LAYOUTS[cfg.values[key]]
        elif name == "ablate":
            want = ABLATIONS[cfg.values[key]]
        else:
            want = cfg.values[key]
        field = "ar_mode" if name == "ar" else name
        have = getattr(spec, field)
        if have != want:
            diffs.append(f"{key} ({want!r} configured, {have!r} in checkpoint)")
    return diffs


def load_config(path=None, overrides=()) -> RunConfig:
    """Config file (optional) merged with ``--set key=value`` overrides."""
    if path is not None:
        with open(path) as f:
            cfg = RunConfig.parse(f.read(), source=str(path))
    else:
        cfg = RunConfig()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        cfg.set(key.strip(), value.strip())
    return cfg
