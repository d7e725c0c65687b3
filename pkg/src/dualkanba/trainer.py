"""Adam, the epoch loop with early stopping, and evaluation metrics."""

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import autodiff as ad
from .data import shape_groups, stack
from .model import DualKanbaFormer, cross_entropy
from .params import rng_stream

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "dev_acc", "dev_macro_f1")


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    loss: float = float("nan")

    def line(self):
        return f"acc={self.accuracy:.4f}, macro_f1={self.macro_f1:.4f}"


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainResult:
    best_state: Dict[str, np.ndarray]
    history: List[dict]
    best_epoch: int
    best_dev_acc: float


def adam_step(params, grads, state, cfg):
    """Bias-corrected Adam update of ``params`` (``{name: Tensor}``) in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def per_class_f1(y_true, y_pred, n_classes=3):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    out = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        if tp == 0:
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        out[c] = 2 * precision * recall / (precision + recall)
    return out


def macro_f1(y_true, y_pred, n_classes=3):
    """Unweighted mean of per-class F1; classes with no true positives count as 0."""
    return float(per_class_f1(y_true, y_pred, n_classes).mean())


def accuracy(y_true, y_pred):
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def evaluate(model, dataset):
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = model.predict_proba(dataset)
    labels = np.array([s.label for s in dataset])
    pred = np.argmax(probs, axis=-1)
    nll = -np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300)))
    return Metrics(accuracy(labels, pred), macro_f1(labels, pred), float(nll))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def iter_batches(dataset, batch_size, rng):
    """Shuffled mini-batches of same-shaped samples."""
    order = rng.permutation(len(dataset))
    shuffled = [dataset[i] for i in order]
    for group in shape_groups(shuffled):
        for start in range(0, len(group), batch_size):
            yield [shuffled[i] for i in group[start:start + batch_size]]


def train_step(model, batch, tcfg, state, dropout_rng):
    text, visual, aspect, labels = stack(batch)
    params = model.named_parameters()
    with ad.Tape():
        loss = cross_entropy(model.logits(text, visual, aspect, train=True, rng=dropout_rng), labels)
        ad.backward(loss)
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for p in params.values():
        p.grad = None
    adam_step(params, grads, state, tcfg)
    return loss.item()


def train_loop(model, train, dev, cfg, on_epoch=None):
    """Train ``model`` in place; the best dev-accuracy state is loaded back at the end.

    Stops after ``cfg.patience`` consecutive epochs without a strict improvement
    in dev accuracy.
    """
    cfg.validate()
    if not train:
        raise ValueError("training set is empty")
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    dropout_rng = rng_stream(cfg.seed, "dropout")
    state = AdamState()
    history = []
    best_state, best_acc, best_epoch = None, -1.0, 0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for batch in iter_batches(train, cfg.batch_size, shuffle_rng):
            total += train_step(model, batch, cfg, state, dropout_rng) * len(batch)
            count += len(batch)
        dev_metrics = evaluate(model, dev if dev else train)
        row = {"epoch": epoch, "train_loss": total / count,
               "dev_acc": dev_metrics.accuracy, "dev_macro_f1": dev_metrics.macro_f1}
        history.append(row)
        logger.info("epoch %d loss %.5f dev %s", epoch, row["train_loss"], dev_metrics.line())
        if on_epoch is not None:
            on_epoch(row)
        if dev_metrics.accuracy > best_acc:
            best_acc, best_epoch, stale = dev_metrics.accuracy, epoch, 0
            best_state = model.state_dict()
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state=best_state, history=history, best_epoch=best_epoch, best_dev_acc=best_acc)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


# --------------------------------------------------------------------------
# experiment drivers
# --------------------------------------------------------------------------

@dataclass
class RunOutcome:
    label: str
    seed: int
    dev: Metrics
    best_epoch: int


def fit(model_cfg, train, dev, train_cfg, seed=None):
    """Build a fresh model (optionally re-seeded), train it and return it with its dev metrics."""
    if seed is not None:
        model_cfg = dataclasses.replace(model_cfg, seed=seed)
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    model = DualKanbaFormer(model_cfg)
    result = train_loop(model, train, dev, train_cfg)
    return model, result


def ablation_table(components, train, dev, model_cfg, train_cfg, seeds=(0,)):
    """``{"full": [...], component: [...]}`` of :class:`RunOutcome`, one per seed.

    The full model is trained once per seed and shared by every component.
    """
    configs = [("full", model_cfg)] + [(c, model_cfg.ablated(c)) for c in components]
    table = {label: [] for label, _ in configs}
    for seed in seeds:
        for label, cfg in configs:
            model, result = fit(cfg, train, dev, train_cfg, seed)
            table[label].append(RunOutcome(label, seed, evaluate(model, dev), result.best_epoch))
            logger.info("%s seed %d: %s", label, seed, table[label][-1].dev.line())
    return table


def run_ablation(component, train, dev, model_cfg, train_cfg, seeds=(0,)):
    """Train the full model and the model without ``component`` once per seed.

    Returns ``(baseline, ablated)`` lists of :class:`RunOutcome`.
    """
    table = ablation_table([component], train, dev, model_cfg, train_cfg, seeds)
    return table["full"], table[component]


def mean_accuracy(outcomes):
    return float(np.mean([o.dev.accuracy for o in outcomes]))


def sweep_layers(depths, train, dev, model_cfg, train_cfg):
    """Dev metrics for each stack depth in ``depths``."""
    rows = []
    for depth in depths:
        cfg = dataclasses.replace(model_cfg, n_layers=int(depth))
        model, result = fit(cfg, train, dev, train_cfg)
        m = evaluate(model, dev)
        rows.append({"n_layers": int(depth), "dev_acc": m.accuracy, "dev_macro_f1": m.macro_f1,
                     "dev_loss": m.loss, "best_epoch": result.best_epoch})
    return rows
