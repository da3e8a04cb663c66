"""File formats: dataset splits, parameter checkpoints, metrics CSV.

Binary files share one layout: a single JSON header line (utf-8, ends with
newline) followed by raw little-endian float64 array bytes in the order the
header declares. Rewriting the same in-memory objects produces identical
bytes, which the determinism tests rely on.
"""
import csv
import dataclasses
import io
import json
import os

import numpy as np

from . import models
from .channel import Dataset, Split
from .errors import CheckpointError, ConfigError

_F8 = np.dtype("<f8")


def _write_header(f, header):
    f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))


def _read_header(f, what):
    line = f.readline()
    if not line:
        raise CheckpointError(f"{what}: empty file")
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{what}: bad header ({exc})") from exc


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"{what}: truncated (wanted {n} bytes, "
                              f"got {len(buf)})")
    return buf


# ------------------------------------------------------------- datasets

def save_split(path, split):
    n = len(split)
    header = {
        "format": "riscade-split",
        "version": 1,
        "n": n,
        "image_shape": list(split.y.shape[1:]),
        "record": ["y_packed", "h_true_packed", "sigma_n"],
        "dtype": "<f8",
    }
    with open(path, "wb") as f:
        _write_header(f, header)
        for i in range(n):
            f.write(np.ascontiguousarray(split.y[i], dtype=_F8).tobytes())
            f.write(np.ascontiguousarray(split.h_true[i], dtype=_F8).tobytes())
            f.write(np.float64(split.sigma_n[i]).astype(_F8).tobytes())


def load_split(path):
    with open(path, "rb") as f:
        header = _read_header(f, path)
        if header.get("format") != "riscade-split":
            raise CheckpointError(f"{path}: not a dataset split file")
        n = header["n"]
        shape = tuple(header["image_shape"])
        per = int(np.prod(shape))
        y = np.empty((n,) + shape)
        h = np.empty((n,) + shape)
        sig = np.empty(n)
        for i in range(n):
            y[i] = np.frombuffer(_read_exact(f, per * 8, path),
                                 dtype=_F8).reshape(shape)
            h[i] = np.frombuffer(_read_exact(f, per * 8, path),
                                 dtype=_F8).reshape(shape)
            sig[i] = np.frombuffer(_read_exact(f, 8, path), dtype=_F8)[0]
    return Split(y=y, h_true=h, sigma_n=sig)


SPLIT_FILES = {"train": "train.bin", "val": "val.bin", "test": "test.bin"}


def save_dataset(out_dir, dataset, manifest_extra=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format": "riscade-dataset",
        "version": 1,
        "splits": {},
        "meta": dataset.meta,
    }
    for name, fname in SPLIT_FILES.items():
        split = getattr(dataset, name)
        save_split(os.path.join(out_dir, fname), split)
        manifest["splits"][name] = {"file": fname, "n": len(split)}
    if manifest_extra:
        manifest.update(manifest_extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_dataset(in_dir):
    mpath = os.path.join(in_dir, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as exc:
        raise CheckpointError(f"cannot read dataset manifest: {exc}") from exc
    splits = {}
    for name in SPLIT_FILES:
        entry = manifest["splits"][name]
        splits[name] = load_split(os.path.join(in_dir, entry["file"]))
        if len(splits[name]) != entry["n"]:
            raise CheckpointError(f"{name} split: manifest says {entry['n']} "
                                  f"samples, file has {len(splits[name])}")
    return Dataset(train=splits["train"], val=splits["val"],
                   test=splits["test"], meta=manifest.get("meta", {}))


# ----------------------------------------------------------- checkpoints

def spec_to_dict(spec):
    return dataclasses.asdict(spec)


def spec_from_dict(kind, d):
    try:
        if kind == "cbdnet":
            return models.CBDNetSpec(**d)
        if kind == "mrdn":
            return models.MRDNSpec(**d)
        if kind == "gan":
            gen = models.CBDNetSpec(**d["generator"])
            rest = {k: v for k, v in d.items() if k != "generator"}
            return models.GANSpec(generator=gen, **rest)
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad {kind} spec in checkpoint: {exc}") from exc
    raise CheckpointError(f"unknown model kind {kind!r} in checkpoint")


def save_checkpoint(path, model):
    from .nn import tree

    arrays = list(tree.iter_arrays(model.params))
    header = {
        "format": "riscade-checkpoint",
        "version": 1,
        "kind": model.kind,
        "spec": spec_to_dict(model.spec),
        "seed": model.seed,
        "arrays": [[p, list(a.shape)] for p, a in arrays],
        "dtype": "<f8",
    }
    with open(path, "wb") as f:
        _write_header(f, header)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype=_F8).tobytes())


def load_checkpoint(path):
    from .nn import tree

    with open(path, "rb") as f:
        header = _read_header(f, path)
        if header.get("format") != "riscade-checkpoint":
            raise CheckpointError(f"{path}: not a checkpoint file")
        kind = header["kind"]
        spec = spec_from_dict(kind, header["spec"])
        model = models.build_model(kind, spec=spec, seed=header["seed"])
        declared = header["arrays"]
        live = list(tree.iter_arrays(model.params))
        if len(declared) != len(live):
            raise CheckpointError(
                f"{path}: {len(declared)} arrays in file, spec builds "
                f"{len(live)}")
        for (dpath, dshape), (lpath, arr) in zip(declared, live):
            if dpath != lpath or tuple(dshape) != arr.shape:
                raise CheckpointError(
                    f"{path}: array mismatch {dpath}{dshape} vs "
                    f"{lpath}{list(arr.shape)}")
            raw = _read_exact(f, arr.size * 8, path)
            arr[...] = np.frombuffer(raw, dtype=_F8).reshape(arr.shape)
        extra = f.read(1)
        if extra:
            raise CheckpointError(f"{path}: trailing bytes after arrays")
    return model


# -------------------------------------------------------------- metrics

METRIC_FIELDS = ["iteration", "loss", "val_nmse_db", "sigma_hat_mean",
                 "ms_per_step"]


def metrics_to_csv_text(rows):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in METRIC_FIELDS])
    return out.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def save_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(metrics_to_csv_text(rows))
