"""Feature-level datasets: JSONL I/O, seeded splits and a planted bimodal task.

The synthetic task plants one signal token in the text and one in the image.
Each carries an aspect prototype plus or minus a shared signal direction; the
label is positive when both signs are ``+``, negative when both are ``-`` and
neutral otherwise, so neither modality alone determines it.
"""

import itertools
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .params import rng_stream

NEGATIVE, NEUTRAL, POSITIVE = 0, 1, 2
FEATURE_KEYS = ("text_features", "visual_features", "aspect_features")


class DataFormatError(ValueError):
    pass


@dataclass(eq=False)
class Sample:
    text_features: np.ndarray
    visual_features: np.ndarray
    aspect_features: np.ndarray
    label: int

    def equals(self, other):
        return self.label == other.label and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in FEATURE_KEYS)


@dataclass
class SynthSpec:
    n_samples: int = 512
    ts: int = 16
    ti: int = 9
    ta: int = 2
    d_in: int = 16
    noise_std: float = 0.1
    seed: int = 0
    text_signal_pos: str = "random"
    n_prototypes: int = 4

    def validate(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if min(self.ts, self.ti, self.ta, self.d_in, self.n_prototypes) < 1 or self.n_samples < 0:
            raise ValueError("sequence lengths, d_in and n_prototypes must be positive")
        if self.text_signal_pos not in ("random", "fixed"):
            raise ValueError("text_signal_pos must be 'random' or 'fixed'")


def polarity(text_bit, visual_bit):
    """Label for a pair of planted signs (each +1 or -1)."""
    if text_bit > 0 and visual_bit > 0:
        return POSITIVE
    if text_bit < 0 and visual_bit < 0:
        return NEGATIVE
    return NEUTRAL


def text_only_bayes_accuracy():
    """Best accuracy achievable from the text sign alone, by enumerating the four sign pairs."""
    correct = 0
    cases = list(itertools.product((-1, 1), repeat=2))
    for bt in (-1, 1):
        labels = Counter(polarity(t, v) for t, v in cases if t == bt)
        correct += max(labels.values())
    return correct / len(cases)


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def _directions(rng, d, k, ta):
    u = _unit_rows(rng.normal(size=d))
    protos = rng.normal(size=(k, d))
    protos = _unit_rows(protos - np.outer(protos @ u, u))
    # each aspect slot gets its own fixed offset, like the distinct words of a
    # multi-token aspect; without it the aspect rows coincide and attention
    # over them cannot tell sentence tokens apart
    slots = _unit_rows(rng.normal(size=(ta, d)))
    return u, protos, slots


def generate_synthetic(spec):
    """Seeded list of :class:`Sample` for the planted bimodal task."""
    spec.validate()
    geo = rng_stream(spec.seed, "synthetic.directions")
    u, protos, slots = _directions(geo, spec.d_in, spec.n_prototypes, spec.ta)
    rng = rng_stream(spec.seed, "synthetic.samples")
    out = []
    for _ in range(spec.n_samples):
        k = rng.integers(spec.n_prototypes)
        bt, bv = rng.choice((-1, 1), size=2)
        text = rng.normal(0.0, spec.noise_std, size=(spec.ts, spec.d_in))
        visual = rng.normal(0.0, spec.noise_std, size=(spec.ti, spec.d_in))
        aspect = protos[k] + slots + rng.normal(0.0, spec.noise_std, size=(spec.ta, spec.d_in))
        tpos = rng.integers(spec.ts) if spec.text_signal_pos == "random" else 0
        vpos = rng.integers(spec.ti)
        text[tpos] += protos[k] + bt * u
        visual[vpos] += protos[k] + bv * u
        out.append(Sample(text, visual, aspect, polarity(bt, bv)))
    return out


# --------------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------------

def _fmt_matrix(a):
    if not np.all(np.isfinite(a)):
        raise DataFormatError("features must be finite")
    return "[" + ",".join("[" + ",".join(format(float(x), ".17g") for x in row) + "]" for row in a) + "]"


def write_jsonl(dataset, path):
    """One JSON object per line; floats written with 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset:
            fields = ",".join(f'"{k}":{_fmt_matrix(np.asarray(getattr(s, k), dtype=np.float64))}'
                              for k in FEATURE_KEYS)
            fh.write("{" + fields + f',"label":{int(s.label)}' + "}\n")


def read_jsonl(path):
    out = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                arrays = [np.asarray(obj[k], dtype=np.float64) for k in FEATURE_KEYS]
                label = obj["label"]
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
            if any(a.ndim != 2 or a.shape[0] < 1 for a in arrays):
                raise DataFormatError(f"{path}:{lineno}: features must be non-empty 2-D arrays")
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            if not isinstance(label, int) or label not in (0, 1, 2):
                raise DataFormatError(f"{path}:{lineno}: label must be 0, 1 or 2, got {label!r}")
            line_dims = tuple(a.shape[1] for a in arrays)
            if dims is None:
                dims = line_dims
            elif line_dims != dims:
                raise DataFormatError(f"{path}:{lineno}: feature dims {line_dims} differ from earlier lines {dims}")
            out.append(Sample(*arrays, label=label))
    return out


# --------------------------------------------------------------------------
# splitting and batching
# --------------------------------------------------------------------------

def split(dataset, ratios=(0.8, 0.1, 0.1), seed=0):
    """Seeded disjoint train/dev/test partition."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(dataset)
    perm = rng_stream(seed, "split").permutation(n)
    n_train = int(round(ratios[0] * n))
    n_dev = min(int(round(ratios[1] * n)), n - n_train)
    parts = (perm[:n_train], perm[n_train:n_train + n_dev], perm[n_train + n_dev:])
    return tuple([dataset[i] for i in part] for part in parts)


def stack(samples):
    """Stack same-shaped samples into ``(text, visual, aspect, labels)`` arrays."""
    return (np.stack([s.text_features for s in samples]),
            np.stack([s.visual_features for s in samples]),
            np.stack([s.aspect_features for s in samples]),
            np.array([s.label for s in samples], dtype=np.int64))


def shape_groups(samples):
    """Indices of ``samples`` grouped by sequence lengths, in first-seen order."""
    groups = {}
    for i, s in enumerate(samples):
        key = (s.text_features.shape, s.visual_features.shape, s.aspect_features.shape)
        groups.setdefault(key, []).append(i)
    return list(groups.values())
