"""Margin loss, optimiser, regularisers, the training loop and evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import Dataset, center_crop, random_crop, random_flip, random_shift
from .layers import CapsNet, load_checkpoint, save_checkpoint

__all__ = [
    "MarginLossParams",
    "DivergenceError",
    "margin_loss",
    "weight_decay_penalty",
    "apply_dropout",
    "Adam",
    "TrainResult",
    "train",
    "prepare_images",
    "predict_labels",
    "error_rate",
    "evaluate",
    "eval_checkpoint_averaged",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarginLossParams:
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_down: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.m_minus < self.m_plus <= 1.0:
            raise ValueError("need 0 < m_minus < m_plus <= 1")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, last_checkpoint: Path | None):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {last_checkpoint}")
        self.step = step
        self.last_checkpoint = last_checkpoint


def _targets(activations: Tensor, labels) -> np.ndarray:
    if isinstance(labels, np.ndarray) and labels.shape == activations.shape and labels.dtype.kind == "f":
        return labels
    if activations.ndim != 1:
        raise ValueError("label sets are only accepted for a single activation vector")
    labels = list(labels)
    if not labels:
        raise ValueError("label set is empty")
    t = np.zeros(activations.shape)
    t[labels] = 1.0
    return t


def margin_loss(activations, labels, params: MarginLossParams = MarginLossParams()) -> Tensor:
    """``sum_k T_k max(0, m+ - a_k)^2 + lambda (1 - T_k) max(0, a_k - m-)^2``.

    ``activations`` is ``[K]`` or ``[N, K]``.  ``labels`` is either an
    indicator array of the same shape or, for one sample, an iterable of the
    positive classes.  Batches are averaged over ``N``.
    """
    a = activations if isinstance(activations, Tensor) else Tensor(activations)
    t = _targets(a, labels)
    if not np.all(t.sum(axis=-1) > 0):
        raise ValueError("every sample needs at least one positive class")
    present = ad.relu(params.m_plus - a) ** 2
    absent = ad.relu(a - params.m_minus) ** 2
    per_class = Tensor(t) * present + Tensor(params.lambda_down * (1.0 - t)) * absent
    total = ad.tsum(per_class)
    return total / float(a.shape[0]) if a.ndim == 2 else total


def weight_decay_penalty(params: Sequence[Tensor], lam: float) -> Tensor | float:
    """``lam * sum ||w||^2`` over every trainable tensor."""
    if lam == 0.0:
        return 0.0
    return lam * sum((ad.tsum(p * p) for p in params), Tensor(0.0))


def apply_dropout(capsules: Tensor, keep_prob: float, rng: np.random.Generator, mode: str = "capsule") -> Tensor:
    """Zero whole capsules (or single elements with ``mode="element"``) and rescale by 1/keep."""
    if keep_prob >= 1.0:
        return capsules
    if mode == "capsule":
        n, caps, dim = capsules.shape
        keep = (rng.random((n, caps, 1)) < keep_prob) / keep_prob
        mask = np.broadcast_to(keep, capsules.shape)
    elif mode == "element":
        mask = (rng.random(capsules.shape) < keep_prob) / keep_prob
    else:
        raise ValueError(f"unknown dropout mode {mode!r}")
    return capsules * Tensor(np.ascontiguousarray(mask))


class Adam:
    """Adam with step size ``lr * decay_rate ** (step / decay_steps)``."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 decay_rate=1.0, decay_steps=1):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.decay_rate, self.decay_steps = decay_rate, max(1, decay_steps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def current_lr(self) -> float:
        return self.lr * self.decay_rate ** (self.t / self.decay_steps)

    def step(self) -> None:
        lr = self.current_lr()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def prepare_images(images: np.ndarray, config: RunConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Crop / shift / flip a batch; augmentation only when ``rng`` is given."""
    if config.crop:
        if rng is not None and config.random_crop:
            images = random_crop(images, config.crop, rng)
        else:
            images = center_crop(images, config.crop)
    if rng is not None:
        if config.augment_shift:
            images = random_shift(images, config.augment_shift, rng)
        if config.random_flip:
            images = random_flip(images, rng)
    return images


def predict_labels(scores: np.ndarray, k: int = 1) -> np.ndarray:
    """Top-``k`` classes per row (``[N]`` when ``k == 1``, else sorted ``[N, k]``)."""
    if k == 1:
        return scores.argmax(axis=1)
    return np.sort(np.argsort(-scores, axis=1, kind="stable")[:, :k], axis=1)


def error_rate(scores: np.ndarray, dataset: Dataset) -> float:
    if dataset.multi_label:
        k = dataset.labels.shape[1]
        pred = predict_labels(scores, k)
        return float(np.mean(np.any(pred != np.sort(dataset.labels, axis=1), axis=1)))
    return float(np.mean(predict_labels(scores) != dataset.labels))


def evaluate(model: CapsNet, dataset: Dataset, batch_size: int = 256) -> float:
    """Test error rate of ``model`` on ``dataset`` (dropout is never applied here)."""
    if len(dataset) == 0:
        raise ValueError("empty test set")
    images = prepare_images(dataset.images, model.config)
    return error_rate(model.predict_scores(images, batch_size), dataset)


def eval_checkpoint_averaged(checkpoints: Sequence[str | Path | CapsNet], test_set: Dataset,
                             mode: str = "metric", batch_size: int = 256) -> float:
    """Mean error over checkpoints (``metric``) or error of the mean weights (``weights``)."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    if len(test_set) == 0:
        raise ValueError("empty test set")
    models = [c if isinstance(c, CapsNet) else load_checkpoint(c)[0] for c in checkpoints]
    if mode == "metric":
        return float(np.mean([evaluate(m, test_set, batch_size) for m in models]))
    if mode == "weights":
        avg = models[0]
        merged = CapsNet(avg.config)
        merged.load_state_dict({k: np.mean([m.params[k].data for m in models], axis=0) for k in CapsNet.PARAM_NAMES})
        return evaluate(merged, test_set, batch_size)
    raise ValueError("mode must be 'metric' or 'weights'")


@dataclass
class TrainResult:
    model: CapsNet
    checkpoints: list[Path] = field(default_factory=list)
    log_rows: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


_LOG_FIELDS = ["step", "loss", "train_acc", "eval_acc"]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[start : start + batch_size]


def train(config: RunConfig, dataset: Dataset, out_dir: str | Path | None = None,
          test_set: Dataset | None = None, model: CapsNet | None = None) -> TrainResult:
    """Train a capsule network; deterministic for a fixed ``config.seed``.

    Checkpoints go to ``out_dir/ckpt-<step>.bin`` every
    ``config.checkpoint_every`` steps and at the end; the log CSV to
    ``out_dir/train_log.csv``.  Both are skipped when ``out_dir`` is None.
    """
    model = model or CapsNet(config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.parameters(), lr=config.learning_rate, beta1=config.adam_beta1,
               beta2=config.adam_beta2, eps=config.adam_eps,
               decay_rate=config.lr_decay_rate, decay_steps=config.lr_decay_steps)
    loss_params = MarginLossParams(config.m_plus, config.m_minus, config.lambda_down)
    targets_all = dataset.targets()
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(model=model)
    log_fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=_LOG_FIELDS)
        writer.writeheader()

    def checkpoint(step: int) -> None:
        if out is not None:
            result.checkpoints.append(save_checkpoint(out / f"ckpt-{step:07d}.bin", model, step))

    def transform(caps):
        return apply_dropout(caps, config.dropout_keep, rng, config.dropout_mode)

    window_loss, window_hits, window_n = [], 0, 0
    batches = _batches(len(dataset), min(config.batch_size, len(dataset)), rng)
    try:
        for step in range(1, config.max_steps + 1):
            idx = next(batches)
            images = prepare_images(dataset.images[idx], config, rng)
            scores, _ = model.forward(images, transform if config.dropout_keep < 1.0 else None)
            loss = margin_loss(scores, targets_all[idx], loss_params)
            if config.weight_decay:
                loss = loss + weight_decay_penalty(model.parameters(), config.weight_decay)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(step, result.checkpoints[-1] if result.checkpoints else None)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()

            result.losses.append(value)
            window_loss.append(value)
            sub = dataset.take(idx)
            window_hits += int(round((1.0 - error_rate(scores.data, sub)) * len(idx)))
            window_n += len(idx)

            if step % config.checkpoint_every == 0 or step == config.max_steps:
                checkpoint(step)
            if step % config.log_every == 0 or step == config.max_steps:
                row = {"step": step, "loss": float(np.mean(window_loss)),
                       "train_acc": window_hits / window_n, "eval_acc": ""}
                if test_set is not None and (
                    (config.eval_every and step % config.eval_every == 0) or step == config.max_steps
                ):
                    row["eval_acc"] = 1.0 - evaluate(model, test_set)
                result.log_rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    log_fh.flush()
                log.info("step %d loss %.5f train_acc %.4f eval_acc %s", step, row["loss"],
                         row["train_acc"], row["eval_acc"])
                window_loss, window_hits, window_n = [], 0, 0
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
