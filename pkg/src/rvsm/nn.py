"""Minimal dense-tensor CNN with exact backpropagation and plain SGD.

Layers are pure: ``forward`` returns (output, cache) and ``backward``
consumes the cache, so evaluation on a fixed parameter snapshot is safe
to run concurrently while training mutates parameters elsewhere.  All
arithmetic is float64; convolution is 3x3 same-padding cross-correlation
(stride 1) and pooling is 2x2/stride-2 max with ceil semantics, the only
configuration supported.

The module-level functions (``conv2d_forward`` etc.) operate on single
images (C, H, W) and mirror the layer classes, which run batched
(N, C, H, W) internally via im2col.
"""

from __future__ import annotations

import threading

import numpy as np

from .rng import stream

KERNEL = 3  # fixed 3x3 kernels, same padding
POOL = 2    # fixed 2x2 windows, stride 2, ceil mode

# single-slot scratch per (thread, shape) for patch tensors that never
# outlive one backward call; forward-path patches are freshly allocated
# because the layer cache keeps them alive until backward
_scratch = threading.local()


def _transient(shape):
    pool = getattr(_scratch, "pool", None)
    if pool is None:
        pool = _scratch.pool = {}
    buf = pool.get(shape)
    if buf is None:
        buf = pool[shape] = np.empty(shape)
    return buf


# ---------------------------------------------------------------------------
# convolution core (batched)
#
# im2col is laid out (N, C*9, H*W) so that both the forward product and the
# weight gradient are plain batched matmuls and no activation tensor ever
# needs a transposed copy.

def _im2col(x, transient=False):
    """(N, C, H, W) -> (N, C*9, H*W) patch tensor for 3x3 same padding."""
    n, c, h, w = x.shape
    shape = (n, c, KERNEL, KERNEL, h, w)
    cols = _transient(shape) if transient else np.empty(shape)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for di in range(KERNEL):
        for dj in range(KERNEL):
            cols[:, :, di, dj] = padded[:, :, di : di + h, dj : dj + w]
    return cols.reshape(n, c * KERNEL * KERNEL, h * w)


def _conv_forward(x, weights, bias, transient=False):
    n, c, h, w = x.shape
    o = weights.shape[0]
    cols = _im2col(x, transient)
    y = np.matmul(weights.reshape(o, -1), cols).reshape(n, o, h, w)
    if bias is not None:
        y += bias[:, None, None]
    return y, cols


def _conv_backward(cols, x_shape, weights, grad_out, need_input_grad=True):
    n, c, h, w = x_shape
    o = weights.shape[0]
    g3 = grad_out.reshape(n, o, h * w)
    # batched (O, HW) @ (HW, C*9), summed over the batch
    grad_weights = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_input = None
    if need_input_grad:
        # dX is the same-padding cross-correlation of dY with the kernels
        # flipped spatially and transposed over channels
        w_t = weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_input, _ = _conv_forward(grad_out, np.ascontiguousarray(w_t), None, transient=True)
    return grad_input, grad_weights, grad_bias


def _check_conv_shapes(x, weights, bias):
    if weights.ndim != 4 or weights.shape[2:] != (KERNEL, KERNEL):
        raise ValueError(f"conv weights must have shape (O, C, 3, 3), got {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ValueError(
            f"input channels {x.shape[1]} do not match weight channels {weights.shape[1]}"
        )
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weights.shape[0]} filters")


# ---------------------------------------------------------------------------
# pooling core (batched, ceil mode)
#
# windows are gathered by the four strided slices x[:, :, di::2, dj::2]
# stacked along a trailing axis in row-major window order, so argmax ties
# resolve to the first element and odd trailing rows/columns are covered
# without materializing a padded copy.

def _pool_window_slices(h, w):
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        vh = (h - di + POOL - 1) // POOL
        vw = (w - dj + POOL - 1) // POOL
        yield k, di, dj, vh, vw


def _pool_forward(x):
    n, c, h, w = x.shape
    h2, w2 = -(-h // POOL), -(-w // POOL)
    # slice k = 0 always covers every window, so the running max can start
    # there; strict '>' keeps the earliest slice on ties (row-major rule)
    out = x[:, :, ::POOL, ::POOL].copy()
    idx = np.zeros((n, c, h2, w2), dtype=np.int8)
    for k, di, dj, vh, vw in _pool_window_slices(h, w):
        if k == 0:
            continue
        view = out[:, :, :vh, :vw]
        cand = x[:, :, di::POOL, dj::POOL]
        better = cand > view
        np.copyto(idx[:, :, :vh, :vw], k, where=better)
        np.maximum(view, cand, out=view)
    return out, idx


def _pool_backward(idx, h, w, grad_out):
    n, c, h2, w2 = grad_out.shape
    if idx.shape != grad_out.shape:
        raise ValueError(f"argmax indices {idx.shape} do not match upstream {grad_out.shape}")
    grad_input = np.zeros((n, c, h, w))
    for k, di, dj, vh, vw in _pool_window_slices(h, w):
        mask = idx[:, :, :vh, :vw] == k
        view = grad_input[:, :, di::POOL, dj::POOL]
        np.copyto(view, grad_out[:, :, :vh, :vw], where=mask)
    return grad_input


# ---------------------------------------------------------------------------
# single-image functional surface

def conv2d_forward(x, weights, bias):
    """Same-padding 3x3 cross-correlation of one image (C, H, W) -> (O, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W) input, got shape {x.shape}")
    _check_conv_shapes(x[None], weights, bias)
    out, _ = _conv_forward(x[None], weights, bias)
    return out[0]


def conv2d_backward(x, weights, grad_out):
    """Gradients of the single-image convolution: (dX, dW, db)."""
    x = np.asarray(x, dtype=np.float64)
    _check_conv_shapes(x[None], weights, None)
    if grad_out.shape != (weights.shape[0],) + x.shape[1:]:
        raise ValueError(f"upstream shape {grad_out.shape} does not match forward output")
    cols = _im2col(x[None])
    gin, gw, gb = _conv_backward(cols, x[None].shape, weights, grad_out[None])
    return gin[0], gw, gb


def maxpool_forward(x):
    """2x2 stride-2 ceil-mode max pool of (C, H, W); returns (output, indices).

    ``indices`` records the in-window argmax plus the input size and is the
    token ``maxpool_backward`` needs for exact gradient routing.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W) input, got shape {x.shape}")
    out, idx = _pool_forward(x[None])
    return out[0], (idx, x.shape[1], x.shape[2])


def maxpool_backward(indices, grad_out):
    """Route upstream values to their recorded argmax positions; zeros elsewhere."""
    idx, h, w = indices
    return _pool_backward(idx, h, w, grad_out[None] if grad_out.ndim == 3 else grad_out)[0]


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    # subgradient 0 at the kink
    return grad_out * (x > 0)


def dense_forward(x, weights, bias):
    """Affine map x @ W + b with W of shape (in_features, out_features)."""
    return x @ weights + bias


def dense_backward(x, weights, grad_out):
    if x.ndim == 1:
        return grad_out @ weights.T, np.outer(x, grad_out), grad_out.copy()
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax_cross_entropy(logits, label):
    """Cross-entropy of one sample; returns (loss, grad wrt logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if not (0 <= label < k):
        raise ValueError(f"label {label} out of range for {k} classes")
    m = logits.max()
    z = logits - m
    log_norm = np.log(np.exp(z).sum())
    loss = log_norm - z[label]
    grad = np.exp(z - log_norm)
    grad[label] -= 1.0
    return float(loss), grad


def _softmax_cross_entropy_batch(logits, labels):
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range for {k} classes")
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    losses = log_norm[:, 0] - z[np.arange(n), labels]
    grad = np.exp(z - log_norm)
    grad[np.arange(n), labels] -= 1.0
    return float(losses.mean()), grad / n


# ---------------------------------------------------------------------------
# layers

class Conv2d:
    def __init__(self, name, in_channels, out_channels, rng):
        self.name = name
        fan_in = in_channels * KERNEL * KERNEL
        fan_out = out_channels * KERNEL * KERNEL
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(-limit, limit, size=(out_channels, in_channels, KERNEL, KERNEL))
        self.bias = np.zeros(out_channels)

    def forward(self, x):
        _check_conv_shapes(x, self.weight, self.bias)
        out, cols = _conv_forward(x, self.weight, self.bias)
        return out, (cols, x.shape)

    def backward(self, cache, grad_out, need_input_grad=True):
        cols, x_shape = cache
        gin, gw, gb = _conv_backward(cols, x_shape, self.weight, grad_out, need_input_grad)
        return gin, {"weight": gw, "bias": gb}


class ReLU:
    name = None

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad_out, need_input_grad=True):
        grad_out *= cache  # upstream grad is owned by the backward chain
        return grad_out, None


class MaxPool:
    name = None

    def forward(self, x):
        out, idx = _pool_forward(x)
        return out, (idx, x.shape[2], x.shape[3])

    def backward(self, cache, grad_out, need_input_grad=True):
        idx, h, w = cache
        return _pool_backward(idx, h, w, grad_out), None


class Flatten:
    name = None

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out, need_input_grad=True):
        return grad_out.reshape(cache), None


class Dense:
    def __init__(self, name, in_features, out_features, rng):
        self.name = name
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = rng.uniform(-limit, limit, size=(in_features, out_features))
        self.bias = np.zeros(out_features)

    def forward(self, x):
        if x.shape[1] != self.weight.shape[0]:
            raise ValueError(
                f"dense layer {self.name}: input width {x.shape[1]} != {self.weight.shape[0]}"
            )
        return x @ self.weight + self.bias, x

    def backward(self, cache, grad_out, need_input_grad=True):
        gin = grad_out @ self.weight.T if need_input_grad else None
        return gin, {"weight": cache.T @ grad_out, "bias": grad_out.sum(axis=0)}


# ---------------------------------------------------------------------------
# network

class Network:
    """Ordered layer list with named parameter tensors."""

    def __init__(self, layers, input_channels, input_size, num_classes, seed):
        self.layers = layers
        self.input_channels = input_channels
        self.input_size = input_size
        self.num_classes = num_classes
        self.seed = seed

    def parameters(self):
        """Live references, keyed 'layername.weight' / 'layername.bias'."""
        out = {}
        for layer in self.layers:
            if layer.name is not None:
                out[f"{layer.name}.weight"] = layer.weight
                out[f"{layer.name}.bias"] = layer.bias
        return out

    def weight_tensors(self):
        """Weight matrices/kernels only (no biases), keyed by layer name."""
        return {
            layer.name: layer.weight for layer in self.layers if layer.name is not None
        }

    def layer_names(self):
        return [layer.name for layer in self.layers if layer.name is not None]

    def _as_batch(self, images):
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.input_channels:
            raise ValueError(f"expected (N, {self.input_channels}, H, W) images, got {x.shape}")
        return x

    def forward(self, images):
        """Logits for a batch (N, C, H, W) or a single image (C, H, W)."""
        squeeze = np.asarray(images).ndim == 3
        x = self._as_batch(images)
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x[0] if squeeze else x

    def loss_and_grads(self, images, labels):
        """Mean cross-entropy over the batch and gradients for every parameter."""
        x = self._as_batch(images)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        loss, grad = _softmax_cross_entropy_batch(x, labels)
        grads = {}
        for pos in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[pos]
            grad, layer_grads = layer.backward(caches[pos], grad, need_input_grad=pos > 0)
            if layer_grads is not None:
                grads[f"{layer.name}.weight"] = layer_grads["weight"]
                grads[f"{layer.name}.bias"] = layer_grads["bias"]
        return loss, grads


def forward(net, image):
    return net.forward(image)


def backward(net, image, label):
    return net.loss_and_grads(image, label)


def sgd_update(net, grads, eta):
    """In-place params <- params - eta * grads for every parameter tensor."""
    if eta < 0:
        raise ValueError(f"learning rate must be >= 0, got {eta}")
    params = net.parameters()
    for key, g in grads.items():
        p = params[key]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
        p -= eta * g


def pooled_size(size, stages=3):
    for _ in range(stages):
        size = -(-size // POOL)
    return size


def build_network(num_classes=2, input_size=100, seed=0, filters=32, dense_width=128):
    """Three conv/pool stages, then dense + linear output, Glorot-uniform init."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if input_size < 8:
        raise ValueError(
            f"input size {input_size} too small for three pooling stages (minimum 8)"
        )
    rng = stream(seed, "init")
    final = pooled_size(input_size)
    layers = [
        Conv2d("conv1", 1, filters, rng), ReLU(), MaxPool(),
        Conv2d("conv2", filters, filters, rng), ReLU(), MaxPool(),
        Conv2d("conv3", filters, filters, rng), ReLU(), MaxPool(),
        Flatten(),
        Dense("dense", filters * final * final, dense_width, rng), ReLU(),
        Dense("output", dense_width, num_classes, rng),
    ]
    return Network(layers, 1, input_size, num_classes, seed)


def build_default_network(num_classes=2, input_size=100, seed=0):
    """The stock architecture: 32 filters per conv stage and a 128-wide dense layer.

    With the default 100x100 input the spatial sizes run 100 -> 50 -> 25
    -> 13 and the per-layer weight counts are 288 / 9216 / 9216 / 692224
    / 256, with biases extra.
    """
    return build_network(num_classes, input_size, seed, filters=32, dense_width=128)
