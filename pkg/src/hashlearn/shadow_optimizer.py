"""Alternating trainer: backprop epochs interleaved with sign snapshots.

The training target U ("shadow codes") is a +-1 matrix, one row per
training image. Each outer iteration runs one shuffled pass of mini-batch
SGD on the shadow-regularized pairwise loss, then replaces U with the
elementwise sign of the network's outputs over the full training set --
the exact minimizer of the alpha-term given the current outputs.

Each batch steps on a normalized loss: the pairwise terms are averaged
over the batch's unordered pairs, the shadow and norm terms over its
samples, and the whole is multiplied by GRAD_SCALE. Normalizing per
term rather than uniformly keeps alpha and beta meaningful at any batch
size. A raw sum needs an unusably small learning rate, and dividing
everything by the pair count (quadratic in batch size) lets the pair
terms drown the per-sample ones: the norm penalty then sleeps until
code norms are extreme and springs back as a catapult, which is exactly
where unstabilized runs blow up. The optimizer additionally clips the
global gradient norm at GRAD_CLIP, which bounds the spike in the few
steepest steps right after learning ignites; healthy gradients sit well
under the cap. Both constants come from stability scans at the
reference recipe across seeds.

Two independent random streams are spawned from the run seed, one for
weight initialization and one for epoch shuffling, so runs are
reproducible bit for bit.

A plain pairwise trainer (no shadow codes) drives the comparator
objectives over the same loop for baseline runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .losses import (
    SrhParams, cauchy_gradient, cauchy_pairwise_loss, dsh_gradient,
    dsh_loss, pair_count, srh_gradient, srh_terms,
)
from .tensor_nn import SGD, forward_in_batches, hash_net, xavier_init


#: gain on the normalized batch loss and gradient
GRAD_SCALE = 8.0

#: global gradient-norm cap, measured after normalization and gain
GRAD_CLIP = 5.0


def _batch_scale(m):
    return GRAD_SCALE / max(1, pair_count(m))


def sign_pm(x):
    """Elementwise sign into {-1,+1} with sign(0) = +1."""
    x = np.asarray(x)
    return np.where(x >= 0, 1.0, -1.0).astype(
        x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def shadow_update(B):
    """New shadow codes U = sign(B).

    U minimizes ||U - B||_F^2 over all +-1 matrices: the choice is
    independent per entry, and for entry b the costs are (b-1)^2 vs
    (b+1)^2, so the nearer sign wins; at b=0 both tie and +1 is the
    documented convention.
    """
    B = np.asarray(B)
    if not np.all(np.isfinite(B)):
        raise NumericError("cannot take signs of non-finite outputs")
    return sign_pm(B)


@dataclass
class TrainConfig:
    """Hyperparameters for a training run.

    Defaults follow the reference recipe: batch 160, momentum 0.9, weight
    decay 0.004, learning rate 1e-3, margin 2*bits, 150 epochs. gamma is
    only read by the cauchy objective.
    """

    bits: int = 12
    alpha: float = 0.01
    beta: float = 0.01
    margin: float | None = None
    epochs: int = 150
    batch_size: int = 160
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.004
    seed: int = 0
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, "
                              f"got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, "
                              f"got {self.lr}")
        # delegate bits/alpha/beta/margin validation
        p = SrhParams(self.bits, self.alpha, self.beta, self.margin)
        self.margin = p.margin


@dataclass
class EpochStats:
    """Per-epoch loss diagnostics.

    Values are means over the epoch's batches of the normalized batch
    loss (the quantity the optimizer actually steps on), split into the
    objective's components.
    """

    epoch: int
    mean_loss: float
    pair_term: float
    shadow_term: float
    norm_term: float


@dataclass
class TrainResult:
    net: object
    shadow: np.ndarray | None
    trace: list


def _epoch_batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _run_epochs(dataset, oracle, cfg, batch_step, after_epoch=None,
                progress=None):
    """Shared outer loop: shuffle, step batches, collect the trace."""
    n = len(dataset)
    if n == 0:
        raise ConfigError("training set is empty")
    root = np.random.SeedSequence(cfg.seed)
    init_stream, shuffle_stream = root.spawn(2)
    net = xavier_init(hash_net(cfg.bits), init_stream)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay, clip=GRAD_CLIP)
    shuffle_rng = np.random.default_rng(shuffle_stream)
    if after_epoch is not None:
        after_epoch(net, epoch=0)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_decay_every and epoch > 1 \
                and (epoch - 1) % cfg.lr_decay_every == 0:
            opt.lr *= cfg.lr_decay_factor
        totals = np.zeros(3)
        n_batches = 0
        for batch in _epoch_batches(shuffle_rng.permutation(n),
                                    cfg.batch_size):
            terms = batch_step(net, opt, batch, epoch, n_batches)
            totals += terms
            n_batches += 1
        trace.append(EpochStats(epoch, float(totals.sum() / n_batches),
                                float(totals[0] / n_batches),
                                float(totals[1] / n_batches),
                                float(totals[2] / n_batches)))
        if after_epoch is not None:
            after_epoch(net, epoch=epoch)
        if progress is not None:
            progress(trace[-1])
    return net, trace


def _checked_step(net, opt, terms, epoch, batch_index):
    loss = float(np.sum(terms))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at epoch {epoch}, "
                           f"batch {batch_index}")
    try:
        opt.step(net)
    except NumericError as e:
        raise NumericError(f"epoch {epoch}, batch {batch_index}: {e}") \
            from None
    return terms


def train(dataset, oracle, cfg, progress=None):
    """Alternating training on the shadow-regularized loss.

    dataset is a LabeledImageSet (the training subset); oracle indexes
    its rows. Returns the trained network, the final shadow codes (equal
    to the signs of the final full forward pass), and the epoch trace.
    progress, if given, is called with each completed EpochStats.
    """
    params = SrhParams(cfg.bits, cfg.alpha, cfg.beta, cfg.margin)
    images = dataset.images
    state = {}

    def refresh_shadow(net, epoch):
        outputs = forward_in_batches(net, images, cfg.batch_size)
        try:
            state["U"] = shadow_update(outputs)
        except NumericError as e:
            raise NumericError(f"epoch {epoch}: {e}") from None

    def step(net, opt, batch, epoch, batch_index):
        B = net.forward(images[batch])
        y = oracle.y(batch)
        u = state["U"][batch]
        nb = len(batch)
        pairs = max(1, pair_count(nb))
        # per-term normalization: pair terms average over pairs, the
        # shadow and norm terms over samples; folding the ratio into
        # alpha and beta keeps the loss and gradient consistent
        eff = SrhParams(params.bits, params.alpha * pairs / nb,
                        params.beta * pairs / nb, params.margin)
        scale = GRAD_SCALE / pairs
        terms = scale * np.array(srh_terms(B, u, y, eff))
        net.backward(scale * srh_gradient(B, u, y, eff))
        return _checked_step(net, opt, terms, epoch, batch_index)

    net, trace = _run_epochs(dataset, oracle, cfg, step,
                             after_epoch=refresh_shadow, progress=progress)
    return TrainResult(net, state["U"], trace)


def train_pairwise(dataset, oracle, cfg, method, progress=None):
    """Plain mini-batch training on a comparator objective.

    method "dsh": contrastive + L1 pull toward +-1, weight cfg.alpha.
    method "cauchy": Cauchy negative log-likelihood, scale cfg.gamma.
    Trace rows carry the whole loss in both mean_loss and pair_term; the
    shadow/norm columns stay zero.
    """
    if method not in ("dsh", "cauchy"):
        raise ConfigError(f"unknown pairwise method {method!r}")
    images = dataset.images

    def step(net, opt, batch, epoch, batch_index):
        B = net.forward(images[batch])
        y = oracle.y(batch)
        scale = _batch_scale(len(batch))
        if method == "dsh":
            loss = dsh_loss(B, y, cfg.margin, cfg.alpha)
            net.backward(scale * dsh_gradient(B, y, cfg.margin, cfg.alpha))
        else:
            loss = cauchy_pairwise_loss(B, y, cfg.gamma).value
            net.backward(scale * cauchy_gradient(B, y, cfg.gamma))
        return _checked_step(net, opt, np.array([scale * loss, 0.0, 0.0]),
                             epoch, batch_index)

    net, trace = _run_epochs(dataset, oracle, cfg, step, progress=progress)
    return TrainResult(net, None, trace)


# ---------------------------------------------------------------------------
# Loss trace files
# ---------------------------------------------------------------------------
# one line per epoch: epoch<TAB>mean_loss<TAB>pair<TAB>shadow<TAB>norm

def write_loss_trace(path, trace):
    lines = [f"{r.epoch}\t{r.mean_loss:.10g}\t{r.pair_term:.10g}"
             f"\t{r.shadow_term:.10g}\t{r.norm_term:.10g}\n"
             for r in trace]
    Path(path).write_text("".join(lines))


def read_loss_trace(path):
    trace = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{ln}: expected 5 tab-separated "
                            f"fields, got {len(parts)}")
        trace.append(EpochStats(int(parts[0]), *map(float, parts[1:])))
    return trace


def smoothed_violations(values, window=5):
    """Count increases of the moving average of a loss sequence.

    Used as a soft training-health check: a handful of increases is
    normal jitter, persistent growth is not.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < window + 1:
        return 0
    kernel = np.ones(window) / window
    means = np.convolve(values, kernel, mode="valid")
    return int(np.sum(np.diff(means) > 1e-9 * np.maximum(means[:-1], 1.0)))
