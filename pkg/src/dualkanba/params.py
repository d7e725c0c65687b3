"""Parameter construction, random streams and traversal of parameter trees."""

import dataclasses
import zlib

import numpy as np

from .autodiff import Tensor


def rng_stream(seed, name):
    """Independent generator for the named stream ``name`` under ``seed``.

    Streams are keyed by a CRC of the name, so adding or removing one
    component never shifts the draws of another.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.default_rng(ss)


def param(values, dtype=np.float64):
    return Tensor(np.ascontiguousarray(values, dtype=dtype), requires_grad=True)


def xavier(rng, fan_in, fan_out, dtype=np.float64, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)), dtype)


def zeros(*shape, dtype=np.float64):
    return param(np.zeros(shape), dtype)


def filled(value, *shape, dtype=np.float64):
    return param(np.full(shape, value), dtype)


def named_parameters(obj, prefix=""):
    """Yield ``(dotted_name, Tensor)`` for every tensor in a tree of dataclasses/lists/dicts."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.metadata.get("static"):
                continue
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_parameters(obj[k], f"{prefix}.{k}" if prefix else str(k))


def static(default=None):
    """Dataclass field that holds configuration rather than a parameter."""
    return dataclasses.field(default=default, metadata={"static": True})
