"""Capsule network layers: convolutional front end, primary capsules, routing.

Tensor layouts (``N`` = batch):

* images                    ``[N, C, H, W]``
* primary capsules          ``[N, I, D_in]`` with ``I = P * H_p * W_p``; capsule
                            ``i = (p * H_p + y) * W_p + x`` for channel ``p`` at
                            grid cell ``(y, x)``
* transformation matrices   ``[I, J, D_out, D_in]``
* votes                     ``[N, I, J, D_out]``
* routing logits / coeffs   ``[N, I, J]``
* digit capsules            ``[N, J, D_out]``
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .activations import ActivationFn, make_activation, squash
from .autodiff import Tensor
from .config import RunConfig

__all__ = [
    "RoutingError",
    "PrimaryState",
    "RoutingState",
    "ForwardState",
    "dynamic_routing",
    "CapsNet",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_header",
]


class RoutingError(FloatingPointError):
    """A non-finite value appeared inside the routing iterations."""


@dataclass
class PrimaryState:
    preactivation: np.ndarray  # s, [N, I, D]
    capsules: np.ndarray  # activated u_i, [N, I, D]
    grid: tuple[int, int, int]  # (P, H_p, W_p)

    @property
    def activations(self) -> np.ndarray:
        """Capsule lengths ``|u_i|``, shape ``[N, I]``."""
        return np.linalg.norm(self.capsules, axis=-1)


@dataclass
class RoutingState:
    votes: np.ndarray
    logits: list[np.ndarray] = field(default_factory=list)
    coefficients: list[np.ndarray] = field(default_factory=list)
    sums: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.coefficients)

    @property
    def final_coefficients(self) -> np.ndarray:
        return self.coefficients[-1]

    @property
    def final_outputs(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class ForwardState:
    primary: PrimaryState
    routing: RoutingState


def _check_finite(name: str, arr: np.ndarray, iteration: int) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise RoutingError(f"routing iteration {iteration}: {bad} non-finite entries in {name}")


def dynamic_routing(capsules_in, w, iterations: int = 3) -> tuple[Tensor, RoutingState]:
    """Routing-by-agreement between two capsule layers.

    ``capsules_in`` is ``[N, I, D_in]`` (or ``[I, D_in]``) and ``w`` is
    ``[I, J, D_out, D_in]``.  Logits start at zero; each iteration takes a
    softmax over the output capsules, forms the coefficient-weighted vote sum
    and squashes it.  Between iterations each logit grows by the dot product
    of its vote with the current output.  The whole loop is recorded on the
    tape, so gradients flow through the coefficients as well.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    u = capsules_in if isinstance(capsules_in, Tensor) else Tensor(capsules_in)
    unbatched = u.ndim == 2
    if unbatched:
        u = ad.reshape(u, (1,) + u.shape)
    w = w if isinstance(w, Tensor) else Tensor(w)
    if w.ndim != 4 or u.ndim != 3 or w.shape[0] != u.shape[1] or w.shape[3] != u.shape[2]:
        raise ad.ShapeError(f"routing: capsules {u.shape} incompatible with weights {w.shape}")
    n, num_in = u.shape[0], u.shape[1]
    num_out = w.shape[1]

    votes = ad.einsum("ijdk,nik->nijd", w, u)
    _check_finite("votes", votes.data, 0)
    state = RoutingState(votes=votes.data)
    b = Tensor(np.zeros((n, num_in, num_out)))
    out = None
    for r in range(iterations):
        c = ad.softmax(b, axis=2)
        s = ad.einsum("nij,nijd->njd", c, votes)
        out = squash(s, axis=-1)
        _check_finite("outputs", out.data, r + 1)
        state.logits.append(b.data)
        state.coefficients.append(c.data)
        state.sums.append(s.data)
        state.outputs.append(out.data)
        if r < iterations - 1:
            b = b + ad.einsum("nijd,njd->nij", votes, out)
    if unbatched:
        out = ad.reshape(out, out.shape[1:])
    return out, state


class CapsNet:
    """Two convolutions, a primary capsule layer and one routed capsule layer."""

    PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "digit_w")

    def __init__(self, config: RunConfig | None = None, seed: int | None = None):
        self.config = config or RunConfig()
        self.activation: ActivationFn = make_activation(
            self.config.activation, pa_n=self.config.pa_n, ci_bar=self.config.ci_bar,
            ci_power=self.config.ci_power,
        )
        self.params: dict[str, Tensor] = {}
        self._init_params(self.config.seed if seed is None else seed)

    # geometry ------------------------------------------------------------
    @staticmethod
    def _conv_out(size: int, k: int, stride: int, padding: str) -> int:
        if padding == "same":
            return -(-size // stride)
        return (size - k) // stride + 1

    @property
    def primary_grid(self) -> tuple[int, int, int]:
        cfg = self.config
        k = cfg.kernel_size
        h1 = self._conv_out(cfg.model_input_size, k, 1, cfg.conv1_padding)
        h2 = self._conv_out(h1, k, 2, cfg.conv2_padding)
        if h1 < 1 or h2 < 1:
            raise ValueError(f"input {cfg.model_input_size}px is too small for two {k}x{k} convolutions")
        return cfg.prim_channels, h2, h2

    @property
    def num_primary(self) -> int:
        p, h, w = self.primary_grid
        return p * h * w

    @property
    def input_shape(self) -> tuple[int, int, int]:
        s = self.config.model_input_size
        return self.config.input_channels, s, s

    def _init_params(self, seed: int) -> None:
        cfg = self.config
        rng = np.random.default_rng(seed)
        k = cfg.kernel_size
        c0, c1 = cfg.input_channels, cfg.conv1_channels
        c2 = cfg.prim_channels * cfg.prim_dim
        fan1, fan2 = c0 * k * k, c1 * k * k
        shapes = {
            "conv1_w": (rng.normal(0.0, np.sqrt(2.0 / fan1), (c1, c0, k, k))),
            "conv1_b": np.zeros(c1),
            "conv2_w": rng.normal(0.0, np.sqrt(1.0 / fan2), (c2, c1, k, k)),
            "conv2_b": np.zeros(c2),
            "digit_w": rng.normal(
                0.0, cfg.digit_init_std / np.sqrt(cfg.prim_dim),
                (self.num_primary, cfg.num_classes, cfg.digit_dim, cfg.prim_dim),
            ),
        }
        self.params = {name: Tensor(shapes[name], requires_grad=True, name=name) for name in self.PARAM_NAMES}

    # forward -------------------------------------------------------------
    def _as_batch(self, images) -> tuple[Tensor, bool]:
        x = images if isinstance(images, Tensor) else Tensor(images)
        single = x.ndim == 3
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ad.ShapeError(f"expected images of shape [N, *{self.input_shape}], got {x.shape}")
        return x, single

    @staticmethod
    def _add_bias(x: Tensor, b: Tensor) -> Tensor:
        return x + ad.expand(ad.reshape(b, (1, b.shape[0], 1, 1)), x.shape)

    def primary_forward(self, images) -> tuple[Tensor, PrimaryState]:
        x, _ = self._as_batch(images)
        cfg, p = self.config, self.params
        h = ad.relu(self._add_bias(ad.conv2d(x, p["conv1_w"], 1, cfg.conv1_padding), p["conv1_b"]))
        f = self._add_bias(ad.conv2d(h, p["conv2_w"], 2, cfg.conv2_padding), p["conv2_b"])
        n = f.shape[0]
        caps, hp, wp = cfg.prim_channels, f.shape[2], f.shape[3]
        # channel block p*D..(p+1)*D at one grid cell is one capsule
        s = ad.reshape(f, (n, caps, cfg.prim_dim, hp, wp))
        s = ad.transpose(s, (0, 1, 3, 4, 2))
        s = ad.reshape(s, (n, caps * hp * wp, cfg.prim_dim))
        u = self.activation(s, axis=-1)
        return u, PrimaryState(preactivation=s.data, capsules=u.data, grid=(caps, hp, wp))

    def route(self, capsules: Tensor) -> tuple[Tensor, RoutingState]:
        return dynamic_routing(capsules, self.params["digit_w"], self.config.routing_iters)

    def forward(self, images, capsule_transform: Callable[[Tensor], Tensor] | None = None) -> tuple[Tensor, ForwardState]:
        """Class activations ``|u_j|`` (``[N, K]``) and all intermediate state.

        ``capsule_transform`` is applied to the primary capsules before routing
        (training-time dropout hooks in here).
        """
        single = np.ndim(images.data if isinstance(images, Tensor) else images) == 3
        u, pstate = self.primary_forward(images)
        if capsule_transform is not None:
            u = capsule_transform(u)
            pstate.capsules = u.data
        digits, rstate = self.route(u)
        scores = ad.vector_norm(digits, axis=-1)
        if single:
            scores = ad.reshape(scores, scores.shape[1:])
        return scores, ForwardState(primary=pstate, routing=rstate)

    __call__ = forward

    def predict_scores(self, images, batch_size: int = 256) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        out = []
        with ad.no_grad():
            for start in range(0, len(images), batch_size):
                scores, _ = self.forward(images[start : start + batch_size])
                out.append(scores.data)
        return np.concatenate(out, axis=0)

    # parameters ----------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in self.PARAM_NAMES]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: self.params[k].data.copy() for k in self.PARAM_NAMES}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k in self.PARAM_NAMES:
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise ad.ShapeError(f"{k}: checkpoint shape {arr.shape} != model shape {self.params[k].shape}")
            self.params[k] = Tensor(arr.copy(), requires_grad=True, name=k)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


# checkpoints -----------------------------------------------------------------
#
# layout: b"CAPSCKPT" | u32 version | u32 header_len | header (UTF-8 JSON) |
#         tensors as little-endian float64, C order, in header order.

_MAGIC = b"CAPSCKPT"
_VERSION = 1


def save_checkpoint(path: str | Path, model: CapsNet, step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name in CapsNet.PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        blob = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "capsroute-checkpoint",
        "version": _VERSION,
        "config_hash": model.config.config_hash(),
        "config": model.config.to_dict(),
        "step": int(step),
        "tensors": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def read_checkpoint_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a capsroute checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
    return header, len(_MAGIC) + 8 + hlen


def load_checkpoint(path: str | Path) -> tuple[CapsNet, dict]:
    header, data_start = read_checkpoint_header(path)
    raw = Path(path).read_bytes()[data_start:]
    state = {}
    for entry in header["tensors"]:
        chunk = raw[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise ValueError(f"{path}: truncated tensor {entry['name']}")
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    config = RunConfig(**header["config"])
    if config.config_hash() != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    model = CapsNet(config)
    model.load_state_dict(state)
    return model, header
