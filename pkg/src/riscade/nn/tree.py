"""Walk nested parameter dataclasses as flat sequences of named arrays.

Parameter containers (ConvParams, RdnParams, model params, ...) are plain
dataclasses whose array-valued fields are the learnable leaves; ints,
floats and strings are static configuration and are skipped. Gradient
trees reuse the same dataclass types, so a single in-order walk drives the
optimizer, checkpointing and the finite-difference checker.
"""
import dataclasses

import numpy as np

from ..errors import ShapeError


def _children(tree):
    if dataclasses.is_dataclass(tree):
        return [(f.name, getattr(tree, f.name))
                for f in dataclasses.fields(tree)]
    if isinstance(tree, (list, tuple)):
        return [(str(i), v) for i, v in enumerate(tree)]
    return None


def iter_arrays(tree, prefix=""):
    """Yield (dotted_path, ndarray) leaves in declaration order."""
    if isinstance(tree, np.ndarray):
        yield (prefix or "root"), tree
        return
    kids = _children(tree)
    if kids is None:
        return
    for name, child in kids:
        path = f"{prefix}.{name}" if prefix else name
        yield from iter_arrays(child, path)


def zip_arrays(a, b):
    """Lockstep walk of two same-shaped trees; yields (path, leaf_a, leaf_b)."""
    wa, wb = list(iter_arrays(a)), list(iter_arrays(b))
    if len(wa) != len(wb):
        raise ShapeError(f"trees have {len(wa)} vs {len(wb)} array leaves")
    for (pa, xa), (pb, xb) in zip(wa, wb):
        if pa != pb or xa.shape != xb.shape:
            raise ShapeError(f"tree mismatch at {pa}/{pb}: "
                             f"{xa.shape} vs {xb.shape}")
        yield pa, xa, xb


def map_arrays(fn, tree):
    """Rebuild `tree` with fn applied to every ndarray leaf."""
    if isinstance(tree, np.ndarray):
        return fn(tree)
    if dataclasses.is_dataclass(tree):
        return type(tree)(**{f.name: map_arrays(fn, getattr(tree, f.name))
                             for f in dataclasses.fields(tree)})
    if isinstance(tree, (list, tuple)):
        return type(tree)(map_arrays(fn, v) for v in tree)
    return tree


def clone(tree):
    return map_arrays(np.copy, tree)


def zeros_like(tree):
    return map_arrays(np.zeros_like, tree)


def add_in_place(acc, other):
    for _, a, b in zip_arrays(acc, other):
        a += b


def scale_in_place(tree, factor):
    for _, a in iter_arrays(tree):
        a *= factor


def update_in_place(params, grads, fn):
    """Apply fn(param_leaf, grad_leaf) over both trees in lockstep."""
    for _, p, g in zip_arrays(params, grads):
        fn(p, g)


def global_norm(tree):
    total = 0.0
    with np.errstate(over="ignore"):
        for _, a in iter_arrays(tree):
            total += float(np.sum(a * a))
    return np.sqrt(total)


def n_params(tree):
    return sum(a.size for _, a in iter_arrays(tree))
