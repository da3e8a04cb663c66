"""Run configuration: strict JSON document with materialized defaults.

A run config has five sections (geometry, dataset, model, train, bench)
plus a master seed and an output directory. Loading validates every key
against the schema and rejects unknown or mistyped entries with the full
dotted key path, so a typo fails fast instead of silently training with a
default. The resolved form (all defaults filled in) is what commands write
beside their outputs; its canonical-JSON sha256 is the config fingerprint
embedded in benchmark tables.
"""
import copy
import dataclasses
import hashlib
import json
import os

from . import channel, models, training
from .errors import ConfigError

_GEOMETRY = {
    "ris_n_h": 8,
    "ris_n_v": 8,
    "n_b": 16,
    "n_u": 8,
    "spacing_over_lambda": 0.5,
    "l_paths": 3,
    "k_users": 1,
    "tau": 0,
}

_DATASET = {
    "n_train": 2000,
    "n_val": 500,
    "n_test": 500,
    "snr_db_min": 10.0,
    "snr_db_max": 10.0,
    "normalize_power": True,
    "pathloss_scale": 1.0,
    "power_draws": 20000,
}

_TRAIN = {
    "learning_rate": None,
    "batch_size": 20,
    "epochs": 30,
    "alpha": 0.5,
    "beta": 3.0,
    "gan_mix": 0.01,
    "momentum": 0.0,
    "clip_norm": 10.0,
    "record_timing": False,
    "val_chunk": 100,
    "checkpoint_every": 0,    # epochs between mid-run checkpoints; 0 = off
}

_BENCH = {
    "snr_grid_db": [0.0, 5.0, 10.0, 15.0, 20.0],
    "record_timing": False,
    "timing_reps": 100,
    "curve_window": 1,        # moving-average window for convergence curves
}

_TOP = {
    "seed": 0,
    "out_dir": "run_out",
    "geometry": _GEOMETRY,
    "dataset": _DATASET,
    "model": {"kind": "mrdn", "spec": {}},
    "train": _TRAIN,
    "bench": _BENCH,
}


def _type_ok(value, default):
    if default is None:
        return value is None or isinstance(value, (int, float))
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _merge(user, schema, path):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got "
                          f"{type(user).__name__}")
    out = copy.deepcopy(schema)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(schema[key], dict) and key != "spec":
            out[key] = _merge(value, schema[key], here)
        elif key == "spec":
            out[key] = dict(value) if isinstance(value, dict) else value
        else:
            if not _type_ok(value, schema[key]):
                raise ConfigError(
                    f"config key {here!r}: expected "
                    f"{type(schema[key]).__name__}, got "
                    f"{type(value).__name__}")
            out[key] = copy.deepcopy(value)
    return out


def _resolve_spec(kind, user_spec, path="model.spec"):
    """Fill a model spec dict from the kind's defaults, strictly keyed."""
    if kind not in models.MODEL_KINDS:
        raise ConfigError(f"model.kind: unknown kind {kind!r} "
                          f"(have {models.MODEL_KINDS})")
    defaults = dataclasses.asdict(models.default_spec(kind))
    if not isinstance(user_spec, dict):
        raise ConfigError(f"{path}: expected an object")
    out = copy.deepcopy(defaults)
    for key, value in user_spec.items():
        here = f"{path}.{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict):
            out[key] = _resolve_spec("cbdnet", value, here)
        else:
            if not _type_ok(value, defaults[key]):
                raise ConfigError(f"config key {here!r}: expected "
                                  f"{type(defaults[key]).__name__}, got "
                                  f"{type(value).__name__}")
            out[key] = value
    return out


def resolve(doc):
    """Validate a raw config dict and materialize every default."""
    merged = _merge(doc, _TOP, "")
    merged["model"]["spec"] = _resolve_spec(merged["model"]["kind"],
                                            merged["model"]["spec"])
    return merged


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig(resolve(doc))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def fingerprint(resolved):
    """sha256 of the canonical resolved config, minus output placement.

    out_dir says where artifacts land, not what they contain; excluding it
    keeps the fingerprint (and everything embedding it, like dataset
    manifests and benchmark tables) identical across reruns into different
    directories.
    """
    doc = {k: v for k, v in resolved.items() if k != "out_dir"}
    blob = json.dumps(doc, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def resolved_text(resolved):
    return json.dumps(resolved, indent=2, sort_keys=True) + "\n"


def write_resolved(resolved, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(resolved_text(resolved))
    return path


class RunConfig:
    """Resolved config plus builders for the module-level config objects."""

    def __init__(self, resolved):
        self.doc = resolved

    @property
    def seed(self):
        return self.doc["seed"]

    @seed.setter
    def seed(self, value):
        self.doc["seed"] = int(value)

    @property
    def out_dir(self):
        return self.doc["out_dir"]

    @out_dir.setter
    def out_dir(self, value):
        self.doc["out_dir"] = str(value)

    @property
    def bench(self):
        return self.doc["bench"]

    @property
    def model_kind(self):
        return self.doc["model"]["kind"]

    def fingerprint(self):
        return fingerprint(self.doc)

    def dataset_config(self):
        g, d = self.doc["geometry"], self.doc["dataset"]
        return channel.DatasetConfig(seed=self.seed, **g, **d)

    def model_spec(self):
        from . import dataio

        # reuse the checkpoint-side strict constructors; translate their
        # error type since here the document is a config, not a file
        try:
            return dataio.spec_from_dict(self.model_kind,
                                         self.doc["model"]["spec"])
        except Exception as exc:
            raise ConfigError(f"model.spec: {exc}") from exc

    def build_model(self):
        return models.build_model(self.model_kind, spec=self.model_spec(),
                                  seed=self.seed)

    def train_config(self):
        t = {k: v for k, v in self.doc["train"].items()
             if k != "checkpoint_every"}
        return training.TrainConfig(model_kind=self.model_kind,
                                    seed=self.seed, **t)

    @property
    def checkpoint_every(self):
        return self.doc["train"]["checkpoint_every"]
