"""Walk through the CNN itself: forward shapes, a numeric gradient
check on one layer, and the checkpoint round trip.

Run from the repository root:  python3 demos/01_network_basics.py
"""

import tempfile
from pathlib import Path

import numpy as np

from hashlearn.tensor_nn import (
    Conv2D, hash_net, load_checkpoint, save_checkpoint, xavier_init,
)

rng = np.random.default_rng(0)

# the standard encoder: 3 conv blocks, 2 fc layers, k outputs
net = xavier_init(hash_net(bits=12), seed=0)
x = rng.random((4, 3, 32, 32)).astype(np.float32)
out = net.forward(x)
print("input ", x.shape, "->", "codes", out.shape)
for layer in net.layers:
    print(f"  {layer.name:8s} params:",
          {k: v.shape for k, v in layer.params.items()} or "-")

# spot-check one conv gradient against central differences
conv = Conv2D(2, 3, kernel=3, stride=1, pad=1)
conv.params["w"] = 0.1 * rng.standard_normal((3, 2, 3, 3))
conv.params["b"] = rng.standard_normal(3)
xs = rng.standard_normal((1, 2, 5, 5))
r = rng.standard_normal(conv.forward(xs).shape)

conv.forward(xs)
dx = conv.backward(r)
eps = 1e-5
num = np.zeros_like(xs)
flat, nf = xs.ravel(), num.ravel()
for i in range(flat.size):
    old = flat[i]
    flat[i] = old + eps
    hi = float(np.sum(conv.forward(xs) * r))
    flat[i] = old - eps
    lo = float(np.sum(conv.forward(xs) * r))
    flat[i] = old
    nf[i] = (hi - lo) / (2 * eps)
gap = np.abs(dx - num).max() / np.abs(num).max()
print(f"conv input gradient vs finite differences: rel err {gap:.2e}")

# checkpoints carry every parameter tensor, bit for bit
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "net.hlck"
    save_checkpoint(path, net.state())
    copy = hash_net(bits=12)
    copy.load_state(load_checkpoint(path))
    same = all(np.array_equal(layer.params[k], other.params[k])
               for layer, other in zip(net.layers, copy.layers)
               for k in layer.params)
    print("checkpoint round trip identical:", same)
