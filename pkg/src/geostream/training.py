"""Supervised training: cross-entropy, Adam, epoch loop, gradient checking.

Training is a single logical writer over the model parameters; evaluation
runs untraced and never mutates them. Everything is seeded: (seed, data,
config) fully determine the trained parameters.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledExample
from .embeddings import tokenize
from .metrics import MetricsReport, classification_metrics
from .model import GeoModel
from .tensor import NonFiniteError, Param, Tensor, no_grad

LOG_PROB_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; the message names the offending batch."""


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 50
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


class Adam:
    """Adaptive-moment optimizer; per-param state created lazily so embedding
    vectors that first appear mid-training get their own step counts."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}
        self._held: list[Param] = []  # keeps state keys (id()) alive

    def step(self, params: list[Param]) -> None:
        for p in params:
            key = id(p)
            state = self._state.get(key)
            if state is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
                t = 0
                self._held.append(p)
            else:
                m, v, t = state
            g = p.grad
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self._state[key] = (m, v, t)


def cross_entropy(dist: Tensor | np.ndarray, label: int) -> Tensor:
    """-log of the true class probability, clamped at 1e-12 before the log."""
    if not isinstance(dist, Tensor):
        dist = Tensor(dist)
    if not 0 <= label < dist.size:
        raise ValueError(f"label {label} out of range for {dist.size} classes")
    return -(dist.pick(label).clamp_min(LOG_PROB_FLOOR).log())


def example_loss(model: GeoModel, ex: LabeledExample) -> tuple[Tensor, int]:
    """Traced loss for one example plus its predicted label."""
    dist = model.forward(ex.tweet)
    return cross_entropy(dist, ex.label), GeoModel.predicted_label(dist.data)


def batch_loss(model: GeoModel, batch: list[LabeledExample]) -> Tensor:
    """Mean cross-entropy over a batch as one traced scalar."""
    total = None
    for ex in batch:
        loss, _ = example_loss(model, ex)
        total = loss if total is None else total + loss
    return total * (1.0 / len(batch))


def mean_loss(model: GeoModel, data: list[LabeledExample]) -> float:
    with no_grad():
        return batch_loss(model, data).item()


@dataclass
class EpochStats:
    mean_loss: float
    train_accuracy: float


def train_epoch(model: GeoModel, data: list[LabeledExample], cfg: TrainConfig,
                opt: Adam, rng: random.Random) -> EpochStats:
    """One pass: shuffle, then per mini-batch accumulate grads and step.

    Gradients accumulate example by example (each backward scaled by 1/B),
    which keeps graph memory at a single example while computing the exact
    mean-loss gradient.
    """
    if not data:
        raise ValueError("train_epoch requires nonempty data")
    order = list(range(len(data)))
    rng.shuffle(order)
    total_loss = 0.0
    correct = 0
    for batch_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
        batch = [data[i] for i in order[start:start + cfg.batch_size]]
        model.zero_grads()
        batch_total = 0.0
        scale = 1.0 / len(batch)
        try:
            for ex in batch:
                loss, pred = example_loss(model, ex)
                (loss * scale).backward()
                batch_total += loss.item()
                correct += pred == ex.label
        except NonFiniteError as exc:
            raise TrainingDivergedError(f"non-finite loss in batch {batch_idx}: {exc}") from exc
        if not math.isfinite(batch_total):
            raise TrainingDivergedError(f"non-finite loss in batch {batch_idx}")
        opt.step(model.trainable_params())
        total_loss += batch_total
    return EpochStats(mean_loss=total_loss / len(data), train_accuracy=correct / len(data))


@dataclass
class EpochRow:
    epoch: int
    mean_loss: float
    train_acc: float
    dev_acc: float | None

    def line(self) -> str:
        dev = f"{self.dev_acc:.6f}" if self.dev_acc is not None else ""
        return f"{self.epoch},{self.mean_loss:.6f},{self.train_acc:.6f},{dev}"


def train(model: GeoModel, train_data: list[LabeledExample], cfg: TrainConfig,
          dev_data: list[LabeledExample] | None = None, log=None,
          stop_train_acc: float | None = None) -> list[EpochRow]:
    """Run up to max_epochs with optional early stopping.

    Stops when dev accuracy fails to improve for ``patience`` epochs, or when
    training accuracy reaches ``stop_train_acc``. Emits one machine-parseable
    row per epoch via ``log`` when given.
    """
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = random.Random(cfg.seed)
    history: list[EpochRow] = []
    best_dev = -1.0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        stats = train_epoch(model, train_data, cfg, opt, rng)
        dev_acc = evaluate(model, dev_data).accuracy if dev_data else None
        row = EpochRow(epoch, stats.mean_loss, stats.train_accuracy, dev_acc)
        history.append(row)
        if log is not None:
            log(row.line())
        if stop_train_acc is not None and stats.train_accuracy >= stop_train_acc:
            break
        if dev_acc is not None and cfg.patience is not None:
            if dev_acc > best_dev:
                best_dev = dev_acc
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    return history


def evaluate(model: GeoModel, data: list[LabeledExample]) -> MetricsReport:
    """Classification metrics of argmax predictions; parameters untouched."""
    if not data:
        raise ValueError("evaluate requires nonempty data")
    gold = [ex.label for ex in data]
    with no_grad():
        pred = [GeoModel.predicted_label(model.forward(ex.tweet).data) for ex in data]
    return classification_metrics(gold, pred)


# -- gradient verification -----------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    n_checked: int
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok(self.tol) for e in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.ok(self.tol)]

    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            status = "ok" if e.ok(self.tol) else "FAIL"
            out.append(f"{status} {e.name}: max_rel_err={e.max_rel_err:.3e} "
                       f"(n={e.n_checked}, analytic={e.analytic:.6e}, numeric={e.numeric:.6e})")
        return out


def _batch_words(model: GeoModel, batch: list[LabeledExample]) -> list[str]:
    words: set[str] = set()
    if "text" in model.config.features:
        for ex in batch:
            words.update(tokenize(ex.tweet.text)[: model.config.max_text_tokens])
    return sorted(words)


def grad_check(model: GeoModel, batch: list[LabeledExample], eps: float = 1e-5,
               tol: float = 1e-4, max_samples: int = 200, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the batch mean loss to central finite
    differences, sampling at most ``max_samples`` scalars per tensor.

    Covers every model parameter tensor and, when embeddings are trainable,
    every word vector the batch touches.
    """
    targets: list[tuple[str, Param]] = model.named_params()
    if model.config.embeddings_trainable:
        # touch every word first so the OOV cache is stable during probing
        for w in _batch_words(model, batch):
            targets.append((f"embedding[{w}]", model.store.param(w)))

    model.zero_grads()
    batch_loss(model, batch).backward()
    analytic = {name: p.grad.copy() for name, p in targets}

    def loss_value() -> float:
        with no_grad():
            return batch_loss(model, batch).item()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in targets:
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        n = flat.size
        if n <= max_samples:
            indices = np.arange(n)
        else:
            indices = np.sort(rng.choice(n, size=max_samples, replace=False))
        worst = GradCheckEntry(name, len(indices), 0.0, -1, 0.0, 0.0)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_value()
            flat[i] = orig - eps
            lm = loss_value()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if rel > worst.max_rel_err:
                worst = GradCheckEntry(name, len(indices), rel, int(i), float(a), float(fd))
        report.entries.append(worst)
    return report
