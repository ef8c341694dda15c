"""Diagnostics over a trained (or untrained) capsule network.

Connection strength of capsule ``i`` to ``j`` is ``c_{j|i} * |v_{j|i}|`` with
the coefficients of the last routing iteration; the influence of ``i`` is the
sum over ``j``.  Because the coefficients of one input capsule sum to one,
the influence reduces to ``|w_i| * |u_i|`` whenever every ``w_{j|i}`` scales
lengths by the same factor ``|w_i|``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .layers import CapsNet, RoutingState, dynamic_routing
from .training import prepare_images

__all__ = [
    "connection_strengths",
    "connection_strength",
    "influence",
    "InfluenceReport",
    "influence_report",
    "OrderedActivationCurve",
    "ordered_activation_curve",
    "RoutingCoeffStat",
    "routing_coeff_stat",
    "activation_map",
    "primary_activations",
    "transform_norms",
    "write_curve_csv",
    "write_coeff_csv",
    "write_influence_csv",
    "write_map_csv",
]


def connection_strengths(state: RoutingState) -> np.ndarray:
    """``c_{j|i} * |v_{j|i}|`` for every sample, ``[N, I, J]``."""
    return state.final_coefficients * np.linalg.norm(state.votes, axis=-1)


def _check_index(state: RoutingState, sample: int, i: int, j: int | None = None) -> None:
    n, num_in, num_out = state.final_coefficients.shape
    if not 0 <= sample < n:
        raise IndexError(f"sample {sample} out of range [0, {n})")
    if not 0 <= i < num_in:
        raise IndexError(f"input capsule {i} out of range [0, {num_in})")
    if j is not None and not 0 <= j < num_out:
        raise IndexError(f"output capsule {j} out of range [0, {num_out})")


def connection_strength(state: RoutingState, i: int, j: int, sample: int = 0) -> float:
    _check_index(state, sample, i, j)
    c = state.final_coefficients[sample, i, j]
    return float(c * np.linalg.norm(state.votes[sample, i, j]))


def influence(state: RoutingState, i: int, sample: int = 0) -> float:
    """Total connection strength of input capsule ``i``."""
    _check_index(state, sample, i)
    c = state.final_coefficients[sample, i]
    return float(np.sum(c * np.linalg.norm(state.votes[sample, i], axis=-1)))


def transform_norms(w: np.ndarray) -> np.ndarray:
    """Spectral norm of each transformation matrix, ``[I, J]``."""
    return np.linalg.norm(w, ord=2, axis=(-2, -1))


@dataclass
class InfluenceReport:
    per_capsule_influence: np.ndarray  # [I], mean over samples
    w_norm_per_capsule: np.ndarray  # [I], mean over j of |w_{j|i}|
    w_norm_spread: np.ndarray  # [I], std / mean over j of |w_{j|i}|
    activation_norms: np.ndarray  # [I], mean |u_i| over samples
    correlation: float  # Pearson r between influence and |u_i| over all (sample, i)


def _batched_states(model: CapsNet, images: np.ndarray, batch_size: int):
    images = prepare_images(images, model.config)
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            _, state = model.forward(images[start : start + batch_size])
            yield state


def influence_report(model: CapsNet, dataset: Dataset | np.ndarray, batch_size: int = 128) -> InfluenceReport:
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    if len(images) == 0:
        raise ValueError("empty dataset")
    infl, acts = [], []
    for state in _batched_states(model, images, batch_size):
        infl.append(connection_strengths(state.routing).sum(axis=-1))
        acts.append(state.primary.activations)
    infl_all, act_all = np.concatenate(infl), np.concatenate(acts)
    wn = transform_norms(model.params["digit_w"].data)
    mean_wn = wn.mean(axis=1)
    spread = np.where(mean_wn > 0, wn.std(axis=1) / np.where(mean_wn > 0, mean_wn, 1.0), 0.0)
    x, y = infl_all.ravel(), act_all.ravel()
    corr = float(np.corrcoef(x, y)[0, 1]) if x.std() > 0 and y.std() > 0 else float("nan")
    return InfluenceReport(infl_all.mean(axis=0), mean_wn, spread, act_all.mean(axis=0), corr)


def primary_activations(model: CapsNet, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Primary capsule lengths ``[N, I]``."""
    images = prepare_images(np.asarray(images, dtype=np.float64), model.config)
    out = []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            u, _ = model.primary_forward(images[start : start + batch_size])
            out.append(np.linalg.norm(u.data, axis=-1))
    return np.concatenate(out)


@dataclass
class OrderedActivationCurve:
    values: np.ndarray  # position-wise mean of descending-sorted activations

    def top(self, k: int) -> np.ndarray:
        return self.values[:k]

    def tail(self, start: int) -> np.ndarray:
        return self.values[start:]


def ordered_activation_curve(model: CapsNet, dataset: Dataset | np.ndarray, batch_size: int = 128) -> OrderedActivationCurve:
    """Sort each image's primary activations descending, then average position-wise."""
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    if len(images) == 0:
        raise ValueError("empty dataset")
    acts = primary_activations(model, images, batch_size)
    ordered = -np.sort(-acts, axis=1)
    return OrderedActivationCurve(ordered.mean(axis=0))


@dataclass
class RoutingCoeffStat:
    ordered: np.ndarray  # position-wise mean of descending-sorted max_j c_{j|i}
    sorted_max: np.ndarray  # [N, I] per-image descending max coefficients
    threshold: float = 0.15

    def threshold_count(self, t: float | None = None) -> float:
        """Mean number of capsules per image whose largest coefficient exceeds ``t``."""
        t = self.threshold if t is None else t
        return float(np.mean(np.sum(self.sorted_max > t, axis=1)))

    @property
    def count(self) -> float:
        return self.threshold_count()


def routing_coeff_stat(model: CapsNet, dataset: Dataset | np.ndarray, threshold: float = 0.15,
                       iterations: int | None = None, batch_size: int = 128) -> RoutingCoeffStat:
    """Largest routing coefficient of each primary capsule, ordered and averaged.

    ``iterations`` overrides the model's number of routing iterations; the
    coefficients reported are the ones used in the last iteration.
    """
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    if len(images) == 0:
        raise ValueError("empty dataset")
    iters = iterations or model.config.routing_iters
    images = prepare_images(images, model.config)
    rows = []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            u, _ = model.primary_forward(images[start : start + batch_size])
            _, state = dynamic_routing(u, model.params["digit_w"], iters)
            rows.append(-np.sort(-state.final_coefficients.max(axis=2), axis=1))
    sorted_max = np.concatenate(rows)
    return RoutingCoeffStat(sorted_max.mean(axis=0), sorted_max, threshold)


def activation_map(model: CapsNet, image: np.ndarray, reduce: str = "max") -> np.ndarray:
    """Primary activation per grid cell, reduced over capsule channels: ``[H_p, W_p]``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    acts = primary_activations(model, image)[0]
    p, h, w = model.primary_grid
    grid = acts.reshape(p, h, w)
    if reduce == "max":
        return grid.max(axis=0)
    if reduce == "mean":
        return grid.mean(axis=0)
    raise ValueError("reduce must be 'max' or 'mean'")


# CSV output -----------------------------------------------------------------

def write_curve_csv(path: str | Path, curves: dict[str, np.ndarray], top: int | None = None) -> Path:
    """Columns: ``position`` then one column per named curve."""
    names = list(curves)
    length = min(len(v) for v in curves.values())
    if top:
        length = min(length, top)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", *names])
        for k in range(length):
            w.writerow([k, *(repr(float(curves[n][k])) for n in names)])
    return Path(path)


def write_coeff_csv(path: str | Path, stat: RoutingCoeffStat, top: int | None = None) -> Path:
    """Columns: ``rank, mean_max_coefficient``.

    The threshold count goes to ``<stem>.summary.csv`` next to ``path``.
    """
    length = len(stat.ordered) if not top else min(top, len(stat.ordered))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "mean_max_coefficient"])
        for k in range(length):
            w.writerow([k, repr(float(stat.ordered[k]))])
    summary = Path(path).with_suffix(".summary.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "mean_count_above", "num_capsules", "num_images"])
        w.writerow([stat.threshold, stat.count, stat.sorted_max.shape[1], stat.sorted_max.shape[0]])
    return Path(path)


def write_influence_csv(path: str | Path, report: InfluenceReport) -> Path:
    """Columns: ``capsule, influence, w_norm, w_norm_spread, activation``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["capsule", "influence", "w_norm", "w_norm_spread", "activation"])
        for i in range(len(report.per_capsule_influence)):
            w.writerow([i, repr(float(report.per_capsule_influence[i])), repr(float(report.w_norm_per_capsule[i])),
                        repr(float(report.w_norm_spread[i])), repr(float(report.activation_norms[i]))])
    return Path(path)


def write_map_csv(path: str | Path, grid: np.ndarray) -> Path:
    """One CSV row per grid row, no header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(grid):
            w.writerow([repr(float(v)) for v in row])
    return Path(path)
