"""Minimal dense-tensor neural network core.

Implements exactly the layer set needed for the hashing network -- 2D
convolution, max pooling, ReLU, tanh, flatten, fully connected -- with
hand-derived forward/backward passes on plain numpy arrays, plus Xavier
initialization, a momentum SGD optimizer and a binary checkpoint format.

Two numeric modes are supported: float64 for finite-difference gradient
checking, float32 for training. A network is built in one dtype and casts
its inputs accordingly.

Conventions:
  - image batches are (M, C, H, W), row-major;
  - convolutions are "same" (pad 2 for the 5x5 kernels used here);
  - max pooling uses ceil-mode output sizing, so 32 -> 16 -> 8 -> 4
    through the three 3x3/stride-2 pool stages;
  - pool argmax ties resolve to the first position in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, NumericError, StateError

CHECKPOINT_MAGIC = b"HLCK"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    """Base layer: forward caches whatever backward needs.

    ``params`` and ``grads`` are dicts keyed by short names ("w", "b").
    Layers without parameters leave them empty. ``backward`` must be called
    after ``forward`` (gradients refer to the most recent forward pass).
    """

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, need_dx=True):
        """Accumulate parameter gradients; return dL/dinput.

        need_dx=False lets the first layer of a network skip the input
        gradient, which nothing consumes.
        """
        raise NotImplementedError

    def init_params(self, rng, dtype):
        """Initialize parameters in place. Default: nothing to do."""

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        return self._cache


def _xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """2D convolution (cross-correlation), square kernel, symmetric padding.

    Weight shape (out_channels, in_channels, k, k); forward uses an
    im2col + GEMM formulation, backward scatters through the same layout.
    Internally the patch matrix is built channels-last so the gather
    copies contiguous channel runs (about twice as fast on one core as
    the channels-first layout).
    """

    def __init__(self, in_channels, out_channels, kernel=5, stride=1, pad=2,
                 name="conv"):
        super().__init__(name)
        if kernel < 1 or stride < 1 or pad < 0:
            raise ConfigError(f"{name}: bad kernel/stride/pad "
                              f"({kernel}/{stride}/{pad})")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params = {
            "w": np.zeros((out_channels, in_channels, kernel, kernel),
                          dtype=np.float32),
            "b": np.zeros(out_channels, dtype=np.float32),
        }

    def init_params(self, rng, dtype):
        k = self.kernel
        fan_in = self.in_channels * k * k
        fan_out = self.out_channels * k * k
        self.params["w"] = _xavier_uniform(
            rng, self.params["w"].shape, fan_in, fan_out, dtype)
        self.params["b"] = np.zeros(self.out_channels, dtype=dtype)

    def _wmat(self):
        """(out_channels, k*k*in_channels) view matching the col layout."""
        w = self.params["w"].transpose(0, 2, 3, 1)
        return np.ascontiguousarray(w).reshape(self.out_channels, -1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigError(
                f"{self.name}: expected (M, {self.in_channels}, H, W) input, "
                f"got {tuple(x.shape)}")
        m, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"{self.name}: input {h}x{w} too small for "
                              f"kernel {k} with pad {p}")
        xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        col = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        col = col.reshape(m * oh * ow, k * k * c)
        out = col @ self._wmat().T + self.params["b"]
        self._cache = (x.shape, col)
        return np.ascontiguousarray(
            out.reshape(m, oh, ow, self.out_channels).transpose(0, 3, 1, 2))

    def backward(self, dout, need_dx=True):
        (m, c, h, w), col = self._need_cache()
        k, s, p = self.kernel, self.stride, self.pad
        f = self.out_channels
        oh, ow = dout.shape[2], dout.shape[3]
        dmat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, f)
        dw = (dmat.T @ col).reshape(f, k, k, c)
        self.grads["w"] = np.ascontiguousarray(dw.transpose(0, 3, 1, 2))
        self.grads["b"] = dmat.sum(axis=0)
        if not need_dx:
            return None
        dcol = (dmat @ self._wmat()).reshape(m, oh, ow, k, k, c)
        dxp = np.zeros((m, h + 2 * p, w + 2 * p, c), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += \
                    dcol[:, :, :, i, j, :]
        return np.ascontiguousarray(
            dxp[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2))


class MaxPool2D(Layer):
    """Max pooling with ceil-mode output sizing.

    Windows that hang past the bottom/right edge are clipped; each output
    cell records the argmax position so backward routes every upstream
    gradient element to exactly one input position.
    """

    def __init__(self, window=3, stride=2, name="pool"):
        super().__init__(name)
        self.window = window
        self.stride = stride

    def forward(self, x):
        if x.ndim != 4:
            raise ConfigError(f"{self.name}: expected 4-d input, "
                              f"got {tuple(x.shape)}")
        m, c, h, w = x.shape
        k, s = self.window, self.stride
        if h < k or w < k:
            raise ConfigError(f"{self.name}: input {h}x{w} smaller than "
                              f"window {k}")
        oh = -((h - k) // -s) + 1  # ceil division
        ow = -((w - k) // -s) + 1
        hp = (oh - 1) * s + k
        wp = (ow - 1) * s + k
        xp = np.full((m, c, hp, wp), -np.inf, dtype=x.dtype)
        xp[:, :, :h, :w] = x
        # running max over the k*k window offsets; strict > keeps the
        # first (row-major) position on ties
        best = None
        idx = None
        for t in range(k * k):
            i, j = divmod(t, k)
            sl = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
            if best is None:
                best = sl.copy()
                idx = np.zeros(best.shape, dtype=np.int8)
            else:
                mask = sl > best
                idx[mask] = t
                np.maximum(best, sl, out=best)
        self._cache = (x.shape, idx)
        return best

    def backward(self, dout, need_dx=True):
        (m, c, h, w), idx = self._need_cache()
        k, s = self.window, self.stride
        oh, ow = idx.shape[2], idx.shape[3]
        ih = np.arange(oh)[None, None, :, None] * s + idx // k
        iw = np.arange(ow)[None, None, None, :] * s + idx % k
        mi = np.arange(m)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        flat = ((mi * c + ci) * h + ih) * w + iw
        dx = np.bincount(flat.ravel(),
                         weights=dout.ravel().astype(np.float64),
                         minlength=m * c * h * w)
        return dx.reshape(m, c, h, w).astype(dout.dtype)


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__(name)

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, dout, need_dx=True):
        mask = self._need_cache()
        return np.where(mask, dout, dout.dtype.type(0))


class Tanh(Layer):
    def __init__(self, name="tanh"):
        super().__init__(name)

    def forward(self, x):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, dout, need_dx=True):
        out = self._need_cache()
        return dout * (1.0 - out * out)


class Flatten(Layer):
    def __init__(self, name="flatten"):
        super().__init__(name)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_dx=True):
        shape = self._need_cache()
        return dout.reshape(shape)


class Linear(Layer):
    """Fully connected layer: out = x @ w + b, weight shape (in, out)."""

    def __init__(self, in_features, out_features, name="fc"):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "w": np.zeros((in_features, out_features), dtype=np.float32),
            "b": np.zeros(out_features, dtype=np.float32),
        }

    def init_params(self, rng, dtype):
        self.params["w"] = _xavier_uniform(
            rng, self.params["w"].shape,
            self.in_features, self.out_features, dtype)
        self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ConfigError(
                f"{self.name}: expected (M, {self.in_features}) input, "
                f"got {tuple(x.shape)}")
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout, need_dx=True):
        x = self._need_cache()
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        if not need_dx:
            return None
        return dout @ self.params["w"].T


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class Network:
    """Feed-forward stack of layers with named parameters.

    forward is a pure function of (parameters, input): repeated calls with
    the same arguments are bit-identical. backward requires a preceding
    forward and returns the gradient w.r.t. the input while filling each
    layer's ``grads``.
    """

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names: {names}")
        self._ran_forward = False

    def forward(self, x):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x)
        self._ran_forward = True
        return x

    def backward(self, dout, need_dx=False):
        """Backpropagate dL/doutput, filling every layer's grads.

        The gradient w.r.t. the network input is only computed (and
        returned) when need_dx is set; training never uses it.
        """
        if not self._ran_forward:
            raise StateError("backward called before any forward pass")
        g = np.ascontiguousarray(dout, dtype=self.dtype)
        for layer in reversed(self.layers[1:]):
            g = layer.backward(g)
        return self.layers[0].backward(g, need_dx=need_dx)

    def param_items(self):
        """Yield (qualified_name, layer, key) for every parameter."""
        for layer in self.layers:
            for key in layer.params:
                yield f"{layer.name}.{key}", layer, key

    def state(self):
        """Parameters as an ordered {name: array} dict."""
        return {name: layer.params[key]
                for name, layer, key in self.param_items()}

    def gradients(self):
        return {name: layer.grads.get(key)
                for name, layer, key in self.param_items()}

    def load_state(self, tensors):
        for name, layer, key in self.param_items():
            if name not in tensors:
                raise DataError(f"checkpoint is missing tensor '{name}'")
            arr = tensors[name]
            if tuple(arr.shape) != tuple(layer.params[key].shape):
                raise DataError(
                    f"checkpoint tensor '{name}' has shape {arr.shape}, "
                    f"expected {layer.params[key].shape}")
            layer.params[key] = np.ascontiguousarray(arr, dtype=self.dtype)


def hash_net(bits, dtype=np.float32, tanh_head=False):
    """The canonical hashing network.

    conv(32,5x5,s1,p2) -> relu -> pool(3x3,s2), repeated with 32 then 64
    filters, then fc(1024->500) -> relu -> fc(500->bits). The final layer
    is linear so codes can take both signs; an optional tanh head bounds
    outputs in (-1,1) for the asymmetric solver.
    """
    if bits <= 0:
        raise ConfigError(f"code length must be positive, got {bits}")
    layers = [
        Conv2D(3, 32, name="conv1"), ReLU("relu1"), MaxPool2D(name="pool1"),
        Conv2D(32, 32, name="conv2"), ReLU("relu2"), MaxPool2D(name="pool2"),
        Conv2D(32, 64, name="conv3"), ReLU("relu3"), MaxPool2D(name="pool3"),
        Flatten("flatten"),
        Linear(4 * 4 * 64, 500, name="fc1"), ReLU("relu4"),
        Linear(500, bits, name="fc2"),
    ]
    if tanh_head:
        layers.append(Tanh("tanh"))
    return Network(layers, dtype=dtype)


def xavier_init(net, seed):
    """Initialize all weight layers (Xavier uniform) and zero all biases.

    Reproducible: the same seed yields bit-identical parameters. ``seed``
    may be an int or a numpy SeedSequence.
    """
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        layer.init_params(rng, net.dtype)
    return net


def forward_in_batches(net, images, batch_size):
    """Forward a whole image set through ``net`` in chunks of batch_size."""
    if len(images) == 0:
        bits = 0
        for layer in reversed(net.layers):
            if hasattr(layer, "out_features"):
                bits = layer.out_features
                break
        return np.zeros((0, bits), dtype=net.dtype)
    outs = [net.forward(images[i:i + batch_size])
            for i in range(0, len(images), batch_size)]
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class SGD:
    """Momentum SGD with L2 weight decay on weights (not biases).

    Update: v <- momentum * v - lr * (grad + decay * param);
            param <- param + v.

    clip, if set, bounds the global gradient norm (over all parameters,
    before decay): larger gradients are rescaled to that norm. Stored
    layer gradients are left untouched.
    """

    def __init__(self, lr=1e-3, momentum=0.9, weight_decay=0.004,
                 clip=None):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip = clip
        self.velocity = {}

    def step(self, net):
        items = list(net.param_items())
        for name, layer, key in items:
            g = layer.grads.get(key)
            if g is None:
                raise StateError(f"no gradient recorded for {name}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}; "
                                   "aborting optimizer step")
        factor = 1.0
        if self.clip is not None:
            sq = sum(float(np.sum(layer.grads[key] ** 2))
                     for _, layer, key in items)
            norm = np.sqrt(sq)
            if norm > self.clip:
                factor = self.clip / norm
        for name, layer, key in items:
            p = layer.params[key]
            g = layer.grads[key]
            decay = self.weight_decay if key == "w" else 0.0
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            v *= self.momentum
            v -= self.lr * (factor * g + decay * p)
            p += v


# ---------------------------------------------------------------------------
# Checkpoint file format ("HLCK")
# ---------------------------------------------------------------------------
#
# magic "HLCK" | version u32 | count u32 | count x tensor records, each:
#   name_len u32 | name utf-8 | rank u32 | rank x extent u64 | data f32 LE
# All integers little-endian; tensor data is C-order 32-bit floats.

def save_checkpoint(path, tensors):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"{path}: truncated while reading {what} "
                        f"(wanted {n} bytes, got {len(buf)})")
    return buf


def load_checkpoint(path):
    tensors = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file "
                            f"(magic {magic!r})")
        version, count = struct.unpack("<II", _read_exact(f, 8, path,
                                                          "header"))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version "
                            f"{version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, path,
                                                          "name length"))
            name = _read_exact(f, name_len, path, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, path, "rank"))
            shape = struct.unpack(f"<{rank}Q",
                                  _read_exact(f, 8 * rank, path, "extents"))
            n_elem = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(f, 4 * n_elem, path, f"data of '{name}'")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return tensors
