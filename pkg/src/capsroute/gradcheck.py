"""Finite-difference checks for every differentiable primitive.

Each case draws random inputs away from the documented kinks, contracts the
output against a fixed random tensor to get a scalar, and compares the tape
gradient with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .activations import ci_squash, powered_activation, squash
from .autodiff import Tensor
from .training import margin_loss

__all__ = ["CheckResult", "PRIMITIVES", "check_primitive", "run_gradcheck", "format_table"]

TOLERANCE = 1e-4


def _normal(rng, shape):
    return rng.normal(size=shape)


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)


def _positive(rng, shape):
    return rng.uniform(0.3, 2.0, size=shape)


def _vectors_with_norms(rng, count, dim, norms):
    v = rng.normal(size=(count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.asarray(norms)[:, None]


def _ci_input(rng, bar=6.5):
    n = 4
    below = rng.uniform(0.2, bar - 0.3, size=n)
    above = rng.uniform(bar + 0.3, 2 * bar, size=n)
    norms = np.where(rng.random(n) < 0.7, below, above)
    return [_vectors_with_norms(rng, n, 5, norms)]


def _pa_input(rng):
    return [_vectors_with_norms(rng, 4, 6, rng.uniform(0.05, 3.0, size=4))]


def _margin(acts):
    labels = np.zeros((3, 5))
    labels[np.arange(3), [0, 2, 4]] = 1.0
    return margin_loss(acts, labels)


def _margin_input(rng):
    # stay clear of the hinge points m+ = 0.9 and m- = 0.1
    a = rng.uniform(0.0, 1.0, size=(3, 5))
    for p in (0.1, 0.9):
        close = np.abs(a - p) < 0.02
        a[close] += 0.05
    return [a]


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable[..., Tensor]
    make_inputs: Callable[[np.random.Generator], list[np.ndarray]]


PRIMITIVES: list[Primitive] = [
    Primitive("add", ad.add, lambda r: [_normal(r, (3, 4)), _normal(r, (3, 4))]),
    Primitive("sub", ad.sub, lambda r: [_normal(r, (3, 4)), _normal(r, (3, 4))]),
    Primitive("mul", ad.mul, lambda r: [_normal(r, (3, 4)), _normal(r, (3, 4))]),
    Primitive("div", ad.div, lambda r: [_normal(r, (3, 4)), _away_from_zero(r, (3, 4), 0.5)]),
    Primitive("scale", lambda x: 2.5 * x, lambda r: [_normal(r, (5,))]),
    Primitive("power", lambda x: ad.power(x, 3.0), lambda r: [_normal(r, (6,))]),
    Primitive("exp", ad.exp, lambda r: [_normal(r, (6,))]),
    Primitive("log", ad.log, lambda r: [_positive(r, (6,))]),
    Primitive("sqrt", ad.sqrt, lambda r: [_positive(r, (6,))]),
    Primitive("relu", ad.relu, lambda r: [_away_from_zero(r, (4, 5))]),
    Primitive("matmul", ad.matmul, lambda r: [_normal(r, (3, 4)), _normal(r, (4, 2))]),
    Primitive("einsum", lambda w, u: ad.einsum("ijdk,nik->nijd", w, u),
              lambda r: [_normal(r, (3, 2, 4, 3)), _normal(r, (2, 3, 3))]),
    Primitive("conv2d", lambda x, k: ad.conv2d(x, k, 1),
              lambda r: [_normal(r, (1, 12, 12)), _normal(r, (2, 1, 9, 9))]),
    Primitive("conv2d_stride2", lambda x, k: ad.conv2d(x, k, 2),
              lambda r: [_normal(r, (2, 12, 12)), _normal(r, (2, 2, 9, 9))]),
    Primitive("conv2d_same", lambda x, k: ad.conv2d(x, k, 2, padding="same"),
              lambda r: [_normal(r, (1, 1, 10, 10)), _normal(r, (2, 1, 9, 9))]),
    Primitive("sum", lambda x: ad.tsum(x, axis=1), lambda r: [_normal(r, (3, 4))]),
    Primitive("mean", lambda x: ad.mean(x, axis=0), lambda r: [_normal(r, (3, 4))]),
    Primitive("softmax", lambda x: ad.softmax(x, axis=1), lambda r: [_normal(r, (3, 5))]),
    Primitive("vector_norm", lambda x: ad.vector_norm(x, axis=1), lambda r: [_away_from_zero(r, (4, 3), 0.2)]),
    Primitive("reshape", lambda x: ad.reshape(x, (6, 2)), lambda r: [_normal(r, (3, 4))]),
    Primitive("transpose", lambda x: ad.transpose(x, (1, 0, 2)), lambda r: [_normal(r, (2, 3, 4))]),
    Primitive("expand", lambda x: ad.expand(x, (3, 4)), lambda r: [_normal(r, (1, 4))]),
    Primitive("squash", squash, lambda r: [_vectors_with_norms(r, 4, 8, r.uniform(0.05, 4.0, size=4))]),
    Primitive("ci_squash", lambda s: ci_squash(s, 6.5), _ci_input),
    Primitive("powered_activation", lambda u: powered_activation(u, 6), _pa_input),
    Primitive("margin_loss", _margin, _margin_input),
]


@dataclass
class CheckResult:
    name: str
    cases: int
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _case_error(prim: Primitive, rng: np.random.Generator) -> float:
    inputs = prim.make_inputs(rng)
    probe_shape = prim.fn(*[Tensor(x) for x in inputs]).shape
    probe = rng.normal(size=probe_shape)

    def scalar(*arrays):
        return float(np.sum(prim.fn(*[Tensor(a) for a in arrays]).data * probe))

    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = prim.fn(*tensors)
    analytic = ad.grad(out, tensors, seed=probe)
    worst = 0.0
    for k, x in enumerate(inputs):
        def fk(v, k=k):
            args = list(inputs)
            args[k] = v
            return scalar(*args)

        numeric = ad.numerical_gradient(fk, x)
        worst = max(worst, ad.relative_error(analytic[k], numeric))
    return worst


def check_primitive(prim: Primitive, cases: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = max(_case_error(prim, rng) for _ in range(cases))
    return CheckResult(prim.name, cases, worst)


def run_gradcheck(seed: int = 0, cases: int = 100, names: list[str] | None = None) -> list[CheckResult]:
    chosen = [p for p in PRIMITIVES if names is None or p.name in names]
    return [check_primitive(p, cases, seed * 1000 + k) for k, p in enumerate(chosen)]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'primitive':<{width}}  cases  max_rel_error  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.cases:5d}  {r.max_error:13.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
