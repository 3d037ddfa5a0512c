"""Learnable velocity fields: a numpy MLP with hand-written backprop, Adam,
and the binary checkpoint format.

Any object exposing ``forward(x, t, cond=None)`` can be used as a velocity
model by the solvers.  Gradient-based training additionally needs
``forward_cached`` / ``backward`` (see :class:`MLP`).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .errors import ArgumentError, ConfigurationError
from .path import gaussian_marginal_score, marginal_velocity_gaussian_oracle
from .scheduler import CondOTScheduler, Scheduler, make_scheduler

NULL_CONDITION = -1
CHECKPOINT_MAGIC = b"FMKIT\x00\x00\x01"
CHECKPOINT_VERSION = 1


@runtime_checkable
class VelocityModel(Protocol):
    def forward(self, x, t, cond=None) -> np.ndarray: ...


class FunctionModel:
    """Adapts a plain ``f(x, t)`` callable to the model contract."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def forward(self, x, t, cond=None):
        return np.asarray(self.fn(np.asarray(x, dtype=float), t), dtype=float)


def as_model(obj) -> VelocityModel:
    if hasattr(obj, "forward"):
        return obj
    if callable(obj):
        return FunctionModel(obj)
    raise ArgumentError(f"{obj!r} is not a velocity model")


# activations ---------------------------------------------------------------


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {"elu": (_elu, _elu_grad), "tanh": (np.tanh, _tanh_grad)}


class MLP:
    """Fully connected network on ``concat(x, t, embedding[cond])``.

    Parameters live in one flat float64 vector: per layer a ``(fan_in, fan_out)``
    weight block then the bias, followed by the ``(n_classes + 1, embed_dim)``
    embedding table whose row 0 is the null condition.
    """

    kind = "mlp"

    def __init__(
        self,
        data_dim: int,
        hidden=(64, 64),
        out_dim: int | None = None,
        n_classes: int = 0,
        embed_dim: int = 0,
        activation: str = "elu",
        seed: int | None = 0,
        zero_output: bool = False,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        if n_classes and not embed_dim:
            embed_dim = 8
        self.data_dim = int(data_dim)
        self.out_dim = int(out_dim if out_dim is not None else data_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_classes = int(n_classes)
        self.embed_dim = int(embed_dim) if n_classes else 0
        self.activation = activation
        self._act, self._act_grad = ACTIVATIONS[activation]
        self.widths = [self.data_dim + 1 + self.embed_dim, *self.hidden, self.out_dim]

        self._layout = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self._layout.append((offset, fan_in, fan_out))
            offset += fan_in * fan_out + fan_out
        self._embed_offset = offset
        offset += (self.n_classes + 1) * self.embed_dim
        self.n_params = offset
        self.params = np.zeros(offset)
        self.init(seed, zero_output=zero_output)

    # parameters -----------------------------------------------------------

    def init(self, seed=0, zero_output=False):
        rng = np.random.default_rng(seed)
        p = np.empty(self.n_params)
        for k, (off, fan_in, fan_out) in enumerate(self._layout):
            bound = 1.0 / np.sqrt(fan_in)
            size = fan_in * fan_out + fan_out
            p[off : off + size] = rng.uniform(-bound, bound, size)
            if zero_output and k == len(self._layout) - 1:
                p[off : off + size] = 0.0
        p[self._embed_offset :] = rng.uniform(-1.0, 1.0, self.n_params - self._embed_offset)
        # Start from float32-representable values so checkpoints round-trip exactly.
        self.params = p.astype(np.float32).astype(np.float64)
        return self

    def quantize(self):
        self.params = self.params.astype(np.float32).astype(np.float64)
        return self

    def layers(self, params=None):
        params = self.params if params is None else params
        out = []
        for off, fan_in, fan_out in self._layout:
            W = params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
            b = params[off + fan_in * fan_out : off + fan_in * fan_out + fan_out]
            out.append((W, b))
        return out

    def embedding(self, params=None):
        params = self.params if params is None else params
        return params[self._embed_offset :].reshape(self.n_classes + 1, self.embed_dim)

    # forward / backward ---------------------------------------------------

    def _rows(self, cond, n):
        if cond is None:
            return np.zeros(n, dtype=int)
        c = np.broadcast_to(np.asarray(cond, dtype=int), (n,))
        if self.n_classes == 0:
            if np.any(c != NULL_CONDITION):
                raise ArgumentError("model has no class conditioning")
            return np.zeros(n, dtype=int)
        if np.any(c < NULL_CONDITION) or np.any(c >= self.n_classes):
            raise ArgumentError(f"condition labels must lie in [-1, {self.n_classes})")
        return c + 1

    def _inputs(self, x, t, cond):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.data_dim:
            raise ArgumentError(f"expected inputs of dimension {self.data_dim}, got {x.shape[-1]}")
        X = x.reshape(-1, self.data_dim)
        n = X.shape[0]
        tt = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (n, 1))
        rows = self._rows(cond, n)
        parts = [X, tt]
        if self.embed_dim:
            parts.append(self.embedding()[rows])
        return np.hstack(parts), rows, x.shape[:-1]

    def forward_cached(self, x, t, cond=None):
        H, rows, batch_shape = self._inputs(x, t, cond)
        cache = [H]
        layers = self.layers()
        for k, (W, b) in enumerate(layers):
            Z = H @ W + b
            if k < len(layers) - 1:
                cache.append(Z)
                H = self._act(Z)
                cache.append(H)
            else:
                H = Z
        return H.reshape(batch_shape + (self.out_dim,)), (cache, rows, batch_shape)

    def forward(self, x, t, cond=None):
        return self.forward_cached(x, t, cond)[0]

    __call__ = forward

    def backward(self, cache, cotangent):
        """Return (parameter gradient, input gradient) for ``<cotangent, output>``."""
        acts, rows, batch_shape = cache
        g = np.asarray(cotangent, dtype=float).reshape(-1, self.out_dim)
        grad = np.zeros(self.n_params)
        layers = self.layers()
        for k in range(len(layers) - 1, -1, -1):
            off, fan_in, fan_out = self._layout[k]
            H_in = acts[2 * k]
            W, _ = layers[k]
            grad[off : off + fan_in * fan_out] = (H_in.T @ g).ravel()
            grad[off + fan_in * fan_out : off + fan_in * fan_out + fan_out] = g.sum(0)
            g = g @ W.T
            if k > 0:
                g = g * self._act_grad(acts[2 * k - 1])
        if self.embed_dim:
            dE = np.zeros((self.n_classes + 1, self.embed_dim))
            np.add.at(dE, rows, g[:, self.data_dim + 1 :])
            grad[self._embed_offset :] = dE.ravel()
        return grad, g[:, : self.data_dim].reshape(batch_shape + (self.data_dim,))

    def backward_params(self, x, t, cond=None, cotangent=None):
        out, cache = self.forward_cached(x, t, cond)
        if np.shape(cotangent) != out.shape:
            raise ArgumentError(f"cotangent shape {np.shape(cotangent)} != output shape {out.shape}")
        return self.backward(cache, cotangent)[0]

    def input_vjp(self, x, t, cond=None, cotangent=None):
        out, cache = self.forward_cached(x, t, cond)
        if np.shape(cotangent) != out.shape:
            raise ArgumentError(f"cotangent shape {np.shape(cotangent)} != output shape {out.shape}")
        return self.backward(cache, cotangent)[1]

    def input_jacobian(self, x, t, cond=None):
        """Jacobian ``d out / d x`` with shape ``batch + (out_dim, data_dim)``."""
        out, cache = self.forward_cached(x, t, cond)
        rows = []
        for i in range(self.out_dim):
            e = np.zeros_like(out)
            e[..., i] = 1.0
            rows.append(self.backward(cache, e)[1])
        return np.stack(rows, axis=-2)

    # serialization --------------------------------------------------------

    def config(self) -> dict:
        return {
            "model": self.kind,
            "widths": list(self.widths),
            "data_dim": self.data_dim,
            "out_dim": self.out_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "n_classes": self.n_classes,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_config(cls, cfg: dict, params: np.ndarray):
        m = cls(
            data_dim=cfg["data_dim"],
            hidden=cfg["hidden"],
            out_dim=cfg.get("out_dim"),
            n_classes=cfg.get("n_classes", 0),
            embed_dim=cfg.get("embed_dim", 0),
            activation=cfg.get("activation", "elu"),
            seed=None,
        )
        if params.size != m.n_params:
            raise ConfigurationError(f"checkpoint holds {params.size} parameters, architecture needs {m.n_params}")
        m.params = params.astype(np.float64)
        return m


class GaussianOracleVelocity:
    """Exact marginal velocity for source N(0, I) and target N(mu, s2 I)."""

    kind = "gaussian_oracle"
    n_params = 0

    def __init__(self, mu, s2: float = 1.0, scheduler: Scheduler | None = None):
        self.mu = np.asarray(mu, dtype=float)
        self.s2 = float(s2)
        self.scheduler = scheduler or CondOTScheduler()
        self.data_dim = self.mu.size
        self.params = np.zeros(0)

    def forward(self, x, t, cond=None):
        return marginal_velocity_gaussian_oracle(t, x, self.mu, self.s2, self.scheduler)

    __call__ = forward

    def score(self, x, t, cond=None):
        return gaussian_marginal_score(t, x, self.mu, self.s2, self.scheduler)

    def config(self) -> dict:
        return {"model": self.kind, "mu": self.mu.tolist(), "s2": self.s2, "data_dim": self.data_dim}

    @classmethod
    def from_config(cls, cfg: dict, params=None, scheduler=None):
        return cls(cfg["mu"], cfg.get("s2", 1.0), scheduler)


class Adam:
    """Adam with bias correction, updating a flat parameter vector in place."""

    def __init__(self, n_params: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        if grad.shape != self.m.shape or params.shape != self.m.shape:
            raise ArgumentError("optimizer state does not match parameter/gradient size")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


# checkpoints ----------------------------------------------------------------

MODEL_KINDS: dict[str, Callable] = {
    MLP.kind: MLP.from_config,
}


def register_model(kind: str, loader: Callable):
    MODEL_KINDS[kind] = loader


def save_checkpoint(path, model, scheduler: Scheduler | None = None, parameterization: str = "velocity", **meta):
    """Write the 8-byte magic, LE uint32 header length, JSON header, float32 block.

    Parameters are stored as float32; call ``model.quantize()`` first when the
    in-memory model must match the loaded one bit for bit.
    """
    params = np.asarray(getattr(model, "params", np.zeros(0)), dtype="<f4")
    header = {
        "version": CHECKPOINT_VERSION,
        **model.config(),
        "scheduler": (scheduler or CondOTScheduler()).to_dict(),
        "parameterization": parameterization,
        "n_params": int(params.size),
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.tobytes())


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not an fmkit checkpoint")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + n].decode("utf-8"))
    block = data[12 + n :]
    if len(block) != 4 * header["n_params"]:
        raise ConfigurationError(f"{path}: parameter block is {len(block)} bytes, header says {header['n_params']} floats")
    return header, np.frombuffer(block, dtype="<f4").astype(np.float64)


def load_checkpoint(path):
    """Return ``(model, header)``."""
    header, params = read_checkpoint(path)
    kind = header.get("model")
    if kind == GaussianOracleVelocity.kind:
        return GaussianOracleVelocity.from_config(header, scheduler=make_scheduler(header["scheduler"])), header
    try:
        loader = MODEL_KINDS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown model kind {kind!r} in checkpoint") from None
    return loader(header, params), header
