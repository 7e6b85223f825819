"""Plain-numpy neural network layers with exact backpropagation.

Just enough machinery for desk-scale experiments: conv/linear layers whose
matrix products can be routed through the photonic hardware model, ReLU,
2x2 average pooling, flatten, softmax cross-entropy, symmetric fake
quantization with straight-through gradients, and an Adam optimizer.  No
external ML framework is involved.

Convolutions are evaluated as matrix products on the im2col unfolding, so
a conv layer's weights live as a (C_out, C_in*K*K) matrix — exactly the
2-D shape the sparsity partitioner and the hardware mapper consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import DeviceModelError


def fake_quant_symmetric(w: np.ndarray, bits: int | None) -> np.ndarray:
    """Symmetric per-tensor fake quantization for signed weights.

    Scale anchors the largest magnitude at full code, so nothing clips and
    the straight-through gradient is exactly the identity.
    """
    if bits is None:
        return w
    m = float(np.max(np.abs(w))) if w.size else 0.0
    if m == 0.0:
        return w
    scale = m / (2 ** (bits - 1) - 1)
    return np.round(w / scale) * scale


def fake_quant_unsigned(x: np.ndarray, bits: int | None) -> np.ndarray:
    """Per-tensor fake quantization for non-negative activations."""
    if bits is None:
        return x
    m = float(np.max(x)) if x.size else 0.0
    if m <= 0.0:
        return x
    scale = m / (2 ** bits - 1)
    return np.round(x / scale) * scale


def im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix for stride-1 conv."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out = h + 2 * pad - k + 1
    w_out = w + 2 * pad - k + 1
    cols = np.empty((n, c, k, k, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h_out, j:j + w_out]
    return cols.reshape(n, c * k * k, h_out * w_out)


def col2im(cols: np.ndarray, x_shape: tuple, k: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back onto the image."""
    n, c, h, w = x_shape
    h_out = h + 2 * pad - k + 1
    w_out = w + 2 * pad - k + 1
    six = cols.reshape(n, c, k, k, h_out, w_out)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h_out, j:j + w_out] += six[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray


class Layer:
    """Base class; layers are stateful (they cache what backward needs)."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []


class _MatmulLayer(Layer):
    """Shared plumbing for layers realized as a 2-D weight matrix.

    ``photonic`` may be set to a callable (w2d, x2d) -> y2d to route the
    product through the hardware simulator at evaluation time; ``None``
    means exact arithmetic.  Gradients always use exact arithmetic with the
    quantized operands (straight-through).
    """

    w: np.ndarray
    b: np.ndarray
    dw: np.ndarray
    db: np.ndarray
    w_bits: int | None
    in_bits: int | None

    def __init__(self) -> None:
        self.photonic = None
        # How many product vectors one input sample costs (im2col positions
        # for a conv, 1 for a linear); recorded on forward, read by the
        # power/latency scheduler.
        self.vectors_per_sample = 0

    def _product(self, wq: np.ndarray, x2d: np.ndarray) -> np.ndarray:
        if self.photonic is not None:
            return self.photonic(wq, x2d)
        return wq @ x2d

    def params(self) -> list[Param]:
        return [Param(f"{self.name}.w", self.w, self.dw),
                Param(f"{self.name}.b", self.b, self.db)]


class Conv2d(_MatmulLayer):
    """3x3-style convolution evaluated as W @ im2col(x), stride 1."""

    def __init__(self, c_in: int, c_out: int, k: int, pad: int,
                 rng: np.random.Generator, name: str,
                 w_bits: int | None = None, in_bits: int | None = None):
        super().__init__()
        self.c_in, self.c_out, self.k, self.pad = c_in, c_out, k, pad
        self.name = name
        fan_in = c_in * k * k
        limit = np.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-limit, limit, size=(c_out, fan_in))
        self.b = np.zeros(c_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.w_bits, self.in_bits = w_bits, in_bits
        self._cache: tuple | None = None

    def forward(self, x, train: bool = False):
        n, _, h, w_img = x.shape
        cols = fake_quant_unsigned(im2col(x, self.k, self.pad), self.in_bits)
        wq = fake_quant_symmetric(self.w, self.w_bits)
        l_out = cols.shape[-1]
        self.vectors_per_sample = l_out
        x2d = cols.transpose(1, 0, 2).reshape(cols.shape[1], n * l_out)
        y2d = self._product(wq, x2d)
        y = y2d.reshape(self.c_out, n, l_out).transpose(1, 0, 2) + self.b[:, None]
        if train:
            self._cache = (x.shape, cols, wq)
        h_out = h + 2 * self.pad - self.k + 1
        w_out = w_img + 2 * self.pad - self.k + 1
        return y.reshape(n, self.c_out, h_out, w_out)

    def backward(self, grad):
        x_shape, cols, wq = self._cache
        n = x_shape[0]
        g2d = grad.reshape(n, self.c_out, -1)
        self.dw[...] = np.einsum("nol,nfl->of", g2d, cols)
        self.db[...] = g2d.sum(axis=(0, 2))
        dcols = np.einsum("of,nol->nfl", wq, g2d)
        return col2im(dcols, x_shape, self.k, self.pad)


class Linear(_MatmulLayer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 name: str, w_bits: int | None = None, in_bits: int | None = None):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.name = name
        limit = np.sqrt(6.0 / d_in)
        self.w = rng.uniform(-limit, limit, size=(d_out, d_in))
        self.b = np.zeros(d_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.w_bits, self.in_bits = w_bits, in_bits
        self._cache: tuple | None = None

    def forward(self, x, train: bool = False):
        self.vectors_per_sample = 1
        xq = fake_quant_unsigned(x, self.in_bits)
        wq = fake_quant_symmetric(self.w, self.w_bits)
        y = self._product(wq, xq.T).T + self.b
        if train:
            self._cache = (xq, wq)
        return y

    def backward(self, grad):
        xq, wq = self._cache
        self.dw[...] = grad.T @ xq
        self.db[...] = grad.sum(axis=0)
        return grad @ wq


class ReLU(Layer):
    def forward(self, x, train: bool = False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class AvgPool2d(Layer):
    """2x2 average pooling, stride 2 (inputs must have even H and W)."""

    def forward(self, x, train: bool = False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DeviceModelError("AvgPool2d needs even spatial dimensions")
        self._shape = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, grad):
        n, c, h, w = self._shape
        g = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) / 4.0
        return g.reshape(n, c, h, w)


class Flatten(Layer):
    def forward(self, x, train: bool = False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, train: bool = False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[Param]:
        out: list[Param] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def matmul_layers(self) -> list[_MatmulLayer]:
        return [l for l in self.layers if isinstance(l, _MatmulLayer)]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray
                          ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class Adam:
    def __init__(self, params: list[Param], lr: float = 2e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self._m = [np.zeros_like(p.value) for p in params]
        self._v = [np.zeros_like(p.value) for p in params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self._m, self._v):
            m += (1 - b1) * (p.grad - m)
            v += (1 - b2) * (p.grad ** 2 - v)
            m_hat = m / (1 - b1 ** self._t)
            v_hat = v / (1 - b2 ** self._t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_desk_convnet(rng: np.random.Generator,
                       quant: tuple[int | None, int | None] = (8, 6)
                       ) -> tuple[Sequential, list[int]]:
    """Small CNN for 8x8 single-channel images, 10 classes.

    Returns the model and the indices (into ``model.layers``) of the layers
    that take structured sparsity masks — the interior convolutions.  The
    first conv and the final linear stay dense.
    """
    b_w, b_in = quant
    layers: list[Layer] = [
        Conv2d(1, 8, 3, 1, rng, "conv1", b_w, b_in),
        ReLU(),
        Conv2d(8, 16, 3, 1, rng, "conv2", b_w, b_in),
        ReLU(),
        AvgPool2d(),
        Conv2d(16, 16, 3, 1, rng, "conv3", b_w, b_in),
        ReLU(),
        AvgPool2d(),
        Flatten(),
        Linear(64, 10, rng, "fc", b_w, b_in),
    ]
    return Sequential(layers), [2, 5]


def build_toy_mlp(rng: np.random.Generator, d_in: int, hidden: int,
                  classes: int, quant: tuple[int | None, int | None] = (8, 6)
                  ) -> tuple[Sequential, list[int]]:
    """Two-hidden-layer MLP; only the middle layer is sparsified."""
    b_w, b_in = quant
    layers: list[Layer] = [
        Linear(d_in, hidden, rng, "fc1", b_w, b_in),
        ReLU(),
        Linear(hidden, hidden, rng, "fc2", b_w, b_in),
        ReLU(),
        Linear(hidden, classes, rng, "fc3", b_w, b_in),
    ]
    return Sequential(layers), [2]
