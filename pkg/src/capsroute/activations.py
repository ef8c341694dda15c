"""Primary-capsule activation functions.

All three are radial: they keep a capsule's direction and remap only its
length.  Each is expressed through :func:`capsroute.autodiff.radial_map`,
which needs the length ratio ``h(n) = |out| / n`` and ``h'(n) / n``; both are
written so that the zero vector maps to the zero vector with a finite
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, radial_map

__all__ = [
    "squash",
    "ci_squash",
    "powered_activation",
    "ActivationFn",
    "OriginalSquash",
    "CISquash",
    "PoweredActivation",
    "make_activation",
]


def _safe(n):
    return np.where(n > 0, n, 1.0)


def _squash_ratio(n):
    d = 1.0 + n * n
    h = n / d
    dh_over_n = np.where(n > 0, (1.0 - n * n) / (d * d) / _safe(n), 0.0)
    return h, dh_over_n


def squash(s, axis: int = -1) -> Tensor:
    """``|s|^2 / (1 + |s|^2) * s / |s|``; output length lies in [0, 1)."""
    return radial_map(s, _squash_ratio, axis=axis, op="squash")


def _ci_ratio(bar: float, power: int):
    bar_p = bar**power

    def ratio(n):
        # bar - relu(bar - n) equals min(n, bar); the subtraction form loses digits for small n
        clipped = np.minimum(n, bar)
        below = n < bar
        ns = _safe(n)
        h = np.where(n > 0, (clipped / bar) ** power / ns, 0.0 if power > 1 else 1.0 / bar)
        if power == 3:
            d_below = np.full_like(n, 2.0 / bar_p)
        else:
            d_below = np.where(n > 0, (power - 1) * ns ** (power - 3) / bar_p, 0.0)
        d_above = -1.0 / ns**3
        return h, np.where(below, d_below, d_above)

    return ratio


def ci_squash(s, bar: float = 6.5, axis: int = -1, power: int = 3) -> Tensor:
    """Cubic-increasing squash: length ``(|s| / bar)^3`` below ``bar``, exactly 1 above.

    ``power`` generalises the cubic growth; the default 3 is the cubic form.
    The derivative jumps at ``|s| == bar``; the cubic branch is used there.
    """
    if bar <= 0:
        raise ValueError("bar must be positive")
    if power < 1:
        raise ValueError("power must be at least 1")
    return radial_map(s, _ci_ratio(float(bar), int(power)), axis=axis, op="ci_squash")


def _power_ratio(k: int):
    def ratio(n):
        ns = _safe(n)
        h = n ** (k - 1) if k > 1 else np.ones_like(n)
        if k == 1:
            d = np.zeros_like(n)
        elif k == 3:
            d = np.full_like(n, 2.0)
        else:
            d = np.where(n > 0, (k - 1) * ns ** (k - 3), 0.0)
        return h, d

    return ratio


def powered_activation(u, n: int = 6, axis: int = -1) -> Tensor:
    """``Power_n(u) = |u|^n * u / |u|``, with ``Power_n(0) = 0``."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    return radial_map(u, _power_ratio(int(n)), axis=axis, op="power_n")


@dataclass(frozen=True)
class ActivationFn:
    """Base for the primary-capsule activation choices."""

    name = "base"

    def __call__(self, s, axis: int = -1) -> Tensor:
        raise NotImplementedError

    def curve(self, norms) -> np.ndarray:
        """Output length as a function of input length (1-D curve)."""
        norms = np.asarray(norms, dtype=np.float64)
        vecs = np.stack([norms, np.zeros_like(norms)], axis=-1)
        return np.linalg.norm(self(vecs).data, axis=-1)


@dataclass(frozen=True)
class OriginalSquash(ActivationFn):
    name = "squash"

    def __call__(self, s, axis: int = -1) -> Tensor:
        return squash(s, axis=axis)


@dataclass(frozen=True)
class CISquash(ActivationFn):
    bar: float = 6.5
    power: int = 3
    name = "ci"

    def __post_init__(self):
        if self.bar <= 0:
            raise ValueError("CISquash.bar must be > 0")

    def __call__(self, s, axis: int = -1) -> Tensor:
        return ci_squash(s, bar=self.bar, axis=axis, power=self.power)


@dataclass(frozen=True)
class PoweredActivation(ActivationFn):
    """Squash followed by ``Power_n``."""

    n: int = 6
    name = "pa"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("PoweredActivation.n must be >= 1")

    def __call__(self, s, axis: int = -1) -> Tensor:
        return powered_activation(squash(s, axis=axis), n=self.n, axis=axis)


def make_activation(name: str, pa_n: int = 6, ci_bar: float = 6.5, ci_power: int = 3) -> ActivationFn:
    name = name.lower()
    if name in ("squash", "original"):
        return OriginalSquash()
    if name in ("ci", "ci_squash", "ci-squash"):
        return CISquash(bar=ci_bar, power=ci_power)
    if name in ("pa", "powered"):
        return PoweredActivation(n=pa_n)
    raise ValueError(f"unknown activation {name!r}; expected squash, ci or pa")
