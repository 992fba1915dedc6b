"""MLP and multi-head scaled-dot-product attention built on the autodiff tape.

Weights use Xavier-uniform initialization with zero biases. All parameters
are float64 leaf tensors; serialization round-trips them through a flat
JSON mapping of parameter paths to {shape, data}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat,
    matmul,
    relu,
    scale,
    softmax_rows,
    tanh,
    transpose,
)

ACTIVATIONS = ("relu", "tanh", "identity")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _apply_activation(x: Tensor, tag: str) -> Tensor:
    if tag == "relu":
        return relu(x)
    if tag == "tanh":
        return tanh(x)
    if tag == "identity":
        return x
    raise ValueError(f"unknown activation {tag!r}, expected one of {ACTIVATIONS}")


@dataclass
class DenseLayer:
    w: Tensor
    b: Tensor
    activation: str


class Mlp:
    """Chain of affine layers with per-layer activation tags."""

    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ShapeError(f"adjacent layer widths do not chain: {prev.w.shape} -> {nxt.w.shape}")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers

    @classmethod
    def create(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> "Mlp":
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
            w = Tensor(xavier_uniform(rng, fan_in, fan_out), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            layers.append(DenseLayer(w, b, act))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1].w.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeError(f"mlp input shape {x.shape} does not match first layer width {self.in_width}")
        for layer in self.layers:
            x = _apply_activation(add(matmul(x, layer.w), layer.b), layer.activation)
        return x

    def forward_np(self, x: np.ndarray, relu_preacts: list | None = None) -> np.ndarray:
        """Tape-free forward for stacked inputs (..., in_width).

        When ``relu_preacts`` is given, every relu layer's pre-activation
        array is appended to it (used to screen kink proximity).
        """
        lead = x.shape[:-1]
        x = x.reshape(-1, x.shape[-1])  # collapse to one GEMM per layer
        for layer in self.layers:
            x = x @ layer.w.data + layer.b.data
            if layer.activation == "relu":
                if relu_preacts is not None:
                    relu_preacts.append(x)
                x = np.maximum(x, 0.0)
            elif layer.activation == "tanh":
                x = np.tanh(x)
        return x.reshape(lead + (x.shape[-1],))

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend((layer.w, layer.b))
        return out

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.w"] = layer.w
            out[f"{prefix}.{i}.b"] = layer.b
        return out


@dataclass
class AttentionHead:
    wq: Tensor
    wk: Tensor
    wv: Tensor


def attention(m: Tensor, head: AttentionHead) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the rows of ``m``.

    Returns ``(weights, out)`` where ``weights`` is the row-stochastic
    n x n matrix softmax(m Wq (m Wk)^T / sqrt(d_k)) and ``out`` is
    ``weights @ (m Wv)``.
    """
    d_model = head.wq.shape[0]
    if m.data.ndim != 2 or m.shape[1] != d_model:
        raise ShapeError(f"attention input shape {m.shape} does not match head width {d_model}")
    q = matmul(m, head.wq)
    k = matmul(m, head.wk)
    v = matmul(m, head.wv)
    d_k = head.wk.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    weights = softmax_rows(scores)
    return weights, matmul(weights, v)


class MultiHeadAttention:
    """Parallel attention heads whose per-row outputs are concatenated."""

    def __init__(self, heads: list[AttentionHead]):
        if not heads:
            raise ValueError("need at least one attention head")
        d_model = heads[0].wq.shape[0]
        if any(h.wq.shape[0] != d_model or h.wk.shape[0] != d_model or h.wv.shape[0] != d_model for h in heads):
            raise ShapeError("all heads must share the same model width")
        self.heads = heads

    @classmethod
    def create(cls, d_model: int, n_heads: int, rng: np.random.Generator) -> "MultiHeadAttention":
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        d_head = d_model // n_heads
        heads = [
            AttentionHead(
                wq=Tensor(xavier_uniform(rng, d_model, d_head), requires_grad=True),
                wk=Tensor(xavier_uniform(rng, d_model, d_head), requires_grad=True),
                wv=Tensor(xavier_uniform(rng, d_model, d_head), requires_grad=True),
            )
            for _ in range(n_heads)
        ]
        return cls(heads)

    @property
    def d_model(self) -> int:
        return self.heads[0].wq.shape[0]

    @property
    def out_width(self) -> int:
        return sum(h.wv.shape[1] for h in self.heads)

    def forward(self, m: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Returns (per-row concatenation of head outputs, per-head weights)."""
        outs, weights = [], []
        for head in self.heads:
            w, o = attention(m, head)
            weights.append(w)
            outs.append(o)
        return concat(outs, axis=1), weights

    def forward_np(self, m: np.ndarray) -> np.ndarray:
        """Tape-free forward for stacked inputs (..., n, d_model)."""
        lead = m.shape[:-2]
        n, d_model = m.shape[-2:]
        flat = m.reshape(-1, d_model)  # collapse projections to one GEMM each
        outs = []
        for head in self.heads:
            d_k = head.wk.shape[1]
            q = (flat @ head.wq.data).reshape(-1, n, d_k)
            k = (flat @ head.wk.data).reshape(-1, n, d_k)
            v = (flat @ head.wv.data).reshape(-1, n, head.wv.shape[1])
            scores = np.einsum("bik,bjk->bij", q, k) / math.sqrt(d_k)
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            w = e / e.sum(axis=-1, keepdims=True)
            outs.append(np.einsum("bij,bjk->bik", w, v))
        out = np.concatenate(outs, axis=-1)
        return out.reshape(lead + (n, out.shape[-1]))

    def parameters(self) -> list[Tensor]:
        out = []
        for head in self.heads:
            out.extend((head.wq, head.wk, head.wv))
        return out

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, head in enumerate(self.heads):
            out[f"{prefix}.{i}.wq"] = head.wq
            out[f"{prefix}.{i}.wk"] = head.wk
            out[f"{prefix}.{i}.wv"] = head.wv
        return out


def mlp_forward(net: Mlp, x: Tensor) -> Tensor:
    return net.forward(x)


# ---------------------------------------------------------------------------
# weight serialization: flat {path: {shape, data}} documents


def weights_to_doc(named: dict[str, Tensor]) -> dict:
    return {
        path: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for path, t in named.items()
    }


def load_weights(named: dict[str, Tensor], doc: dict) -> None:
    """Load a weight document in place, validating shapes bit-exactly."""
    missing = set(named) - set(doc)
    extra = set(doc) - set(named)
    if missing or extra:
        raise ValueError(f"weight document mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for path, t in named.items():
        entry = doc[path]
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise ValueError(f"shape mismatch for {path}: file has {shape}, architecture expects {t.shape}")
        t.data = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
