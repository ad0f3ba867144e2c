"""Train the shadow-regularized hasher on a small synthetic set and
watch the loss terms: the pairwise term falls as classes separate, the
shadow and norm terms keep the real outputs near +-1 codes.

Run from the repository root:  python3 demos/02_shadow_training.py
About a minute on one core.
"""

import numpy as np

from hashlearn.data_cifar import SimilarityOracle, make_synthetic_set
from hashlearn.shadow_optimizer import TrainConfig, sign_pm, train
from hashlearn.tensor_nn import forward_in_batches

data = make_synthetic_set(400, seed=3)
oracle = SimilarityOracle(data.labels)
cfg = TrainConfig(bits=8, alpha=0.01, beta=0.01, epochs=20,
                  batch_size=80, seed=3)

print(f"{len(data)} images, {cfg.bits} bits, margin {cfg.margin:g}")
result = train(data, oracle, cfg,
               progress=lambda s: print(
                   f"epoch {s.epoch:2d} loss {s.mean_loss:9.4f} "
                   f"pair {s.pair_term:9.4f} shadow {s.shadow_term:7.4f} "
                   f"norm {s.norm_term:7.4f}"))

B = forward_in_batches(result.net, data.images, cfg.batch_size)
codes = sign_pm(B)
print("max |output|:", f"{np.abs(B).max():.3f}",
      " codes match final shadow:", np.array_equal(codes, result.shadow))

# mean Hamming distance inside vs across classes
d = (cfg.bits - codes @ codes.T) / 2
same = data.labels[:, None] == data.labels[None, :]
off = ~np.eye(len(data), dtype=bool)
print(f"mean Hamming same-class {d[same & off].mean():.2f}  "
      f"cross-class {d[~same].mean():.2f}")
