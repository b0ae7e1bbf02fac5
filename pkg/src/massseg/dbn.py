"""Deep belief network patch classifier.

A stack of RBMs is trained greedily with contrastive divergence. The top RBM
sees the last hidden layer together with a two-unit label block
``[(y + 1) / 2, (1 - y) / 2]``. A patch is classified by a deterministic
mean-field pass up to the top RBM, then comparing the top layer's free
energy under each label.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import RoiImage

__all__ = [
    "RbmLayer",
    "DbnModel",
    "DbnConfig",
    "label_block",
    "extract_patch",
    "extract_patches",
    "rbm_hidden_activation",
    "rbm_visible_activation",
    "train_rbm",
    "train_dbn",
    "mean_field_up",
    "free_energy",
    "dbn_posterior",
    "dbn_posterior_map",
]


@dataclass(frozen=True)
class RbmLayer:
    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        for name in ("weights", "visible_bias", "hidden_bias"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        v, h = self.weights.shape
        if self.visible_bias.shape != (v,) or self.hidden_bias.shape != (h,):
            raise ValueError("bias sizes do not match the weight matrix")

    @property
    def visible_count(self):
        return self.weights.shape[0]

    @property
    def hidden_count(self):
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, visible, hidden):
        return cls(np.zeros((visible, hidden)), np.zeros(visible), np.zeros(hidden))


@dataclass(frozen=True)
class DbnModel:
    """``layers`` are the unlabeled RBMs; ``top`` has two extra label visibles at the end."""

    layers: tuple
    top: RbmLayer
    patch_size: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        width = self.patch_size ** 2
        for layer in self.layers:
            if layer.visible_count != width:
                raise ValueError("layer sizes are not chained")
            width = layer.hidden_count
        if self.top.visible_count != width + 2:
            raise ValueError("top layer must see the last hidden layer plus 2 label units")


@dataclass(frozen=True)
class DbnConfig:
    layers: tuple = (50, 50, 50)
    epochs: int = 100
    learning_rate: float = 0.05
    batch_size: int = 32
    cd_steps: int = 1
    seed: int = 0


def label_block(y):
    """One-hot label encoding ``[(y + 1) / 2, (1 - y) / 2]``; vectorized over ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return np.stack([(y + 1.0) / 2.0, (1.0 - y) / 2.0], axis=-1)


def _check_patch_size(s):
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch side must be odd, got {s}")


def extract_patch(img: RoiImage, row, col, s):
    """Row-major ``s x s`` neighborhood of ``(row, col)`` with edge replication."""
    _check_patch_size(s)
    r = s // 2
    rows = np.clip(np.arange(row - r, row + r + 1), 0, img.height - 1)
    cols = np.clip(np.arange(col - r, col + r + 1), 0, img.width - 1)
    return img.intensities[np.ix_(rows, cols)].ravel()


def extract_patches(img: RoiImage, s):
    """Patches around every pixel, shape ``(H * W, s * s)`` in raster order."""
    _check_patch_size(s)
    r = s // 2
    padded = np.pad(img.intensities, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (s, s))
    return win.reshape(img.height * img.width, s * s).copy()


def rbm_hidden_activation(layer: RbmLayer, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.visible_count:
        raise ValueError(f"expected {layer.visible_count} visible units, got {v.shape[-1]}")
    return expit(layer.hidden_bias + v @ layer.weights)


def rbm_visible_activation(layer: RbmLayer, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != layer.hidden_count:
        raise ValueError(f"expected {layer.hidden_count} hidden units, got {h.shape[-1]}")
    return expit(layer.visible_bias + h @ layer.weights.T)


def _reconstruct(w, a, h, n_label):
    pre = a + h @ w.T
    if not n_label:
        return expit(pre)
    # label block is a softmax unit
    out = np.empty_like(pre)
    out[:, :-n_label] = expit(pre[:, :-n_label])
    lab = pre[:, -n_label:]
    lab = np.exp(lab - lab.max(axis=1, keepdims=True))
    out[:, -n_label:] = lab / lab.sum(axis=1, keepdims=True)
    return out


def train_rbm(data, hidden_count, epochs=100, learning_rate=0.05, cd_steps=1,
              batch_size=32, seed=0, n_label=0):
    """Train an RBM with CD-k on real-valued data in [0, 1].

    Visible values are used as Bernoulli probabilities. Hidden states are
    sampled during the Gibbs chain; the statistics use probabilities. The
    last ``n_label`` visible units, if any, form one softmax group.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    rng = np.random.default_rng(seed)
    n, nv = data.shape
    w = rng.normal(0.0, 0.01, size=(nv, hidden_count))
    a = np.zeros(nv)
    b = np.zeros(hidden_count)

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            v0 = data[order[start:start + batch_size]]
            ph0 = expit(b + v0 @ w)
            ph = ph0
            for _ in range(cd_steps):
                h = (rng.random(ph.shape) < ph).astype(np.float64)
                vk = _reconstruct(w, a, h, n_label)
                ph = expit(b + vk @ w)
            scale = learning_rate / v0.shape[0]
            w += scale * (v0.T @ ph0 - vk.T @ ph)
            a += scale * (v0 - vk).sum(axis=0)
            b += scale * (ph0 - ph).sum(axis=0)
    return RbmLayer(w, a, b)


def train_dbn(patches, labels, patch_size, config: DbnConfig = DbnConfig()) -> DbnModel:
    """Greedy layer-wise training; the top RBM also sees the label block."""
    x = np.asarray(patches, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("patch and label counts differ")
    if x.shape[0] == 0:
        raise ValueError("no training patches")
    if x.shape[1] != patch_size ** 2:
        raise ValueError(f"patches have {x.shape[1]} values, expected {patch_size ** 2}")
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 or +1")
    if not config.layers:
        raise ValueError("layer layout must include the top hidden layer")

    layers = []
    h = x
    for depth, width in enumerate(config.layers[:-1]):
        layer = train_rbm(h, width, config.epochs, config.learning_rate, config.cd_steps,
                          config.batch_size, seed=config.seed + depth)
        layers.append(layer)
        h = rbm_hidden_activation(layer, h)
    top = train_rbm(np.hstack([h, label_block(y)]), config.layers[-1], config.epochs,
                    config.learning_rate, config.cd_steps, config.batch_size,
                    seed=config.seed + len(layers), n_label=2)
    return DbnModel(tuple(layers), top, patch_size)


def mean_field_up(dbn: DbnModel, patch):
    h = np.asarray(patch, dtype=np.float64)
    for layer in dbn.layers:
        h = rbm_hidden_activation(layer, h)
    return h


def free_energy(top: RbmLayer, h, label):
    """Free energy of the top RBM with the hidden units summed out.

    ``F = -a_h.h - a_y.u - sum_j log(1 + exp(b_j + (h W_h)_j + (u W_y)_j))``
    where ``u`` is the label block. Vectorized over leading axes of ``h``.
    """
    h = np.asarray(h, dtype=np.float64)
    nh = top.visible_count - 2
    if h.shape[-1] != nh:
        raise ValueError(f"expected {nh} features, got {h.shape[-1]}")
    u = label_block(label)
    w_h, w_y = top.weights[:nh], top.weights[nh:]
    a_h, a_y = top.visible_bias[:nh], top.visible_bias[nh:]
    act = top.hidden_bias + h @ w_h + u @ w_y
    return -(h @ a_h) - u @ a_y - np.logaddexp(0.0, act).sum(axis=-1)


def _posterior(dbn, patches):
    h = mean_field_up(dbn, patches)
    f_pos = free_energy(dbn.top, h, 1)
    f_neg = free_energy(dbn.top, h, -1)
    # exp(-F+) / (exp(-F+) + exp(-F-)) in log-sum-exp form
    return np.exp(-f_pos - np.logaddexp(-f_pos, -f_neg))


def dbn_posterior(dbn: DbnModel, patch, eps=1e-3):
    """P(mass | patch), clamped to ``[eps, 1 - eps]``."""
    if dbn is None:
        raise ValueError("DBN is not trained")
    p = np.clip(_posterior(dbn, patch), eps, 1.0 - eps)
    return float(p) if np.ndim(p) == 0 else p


def dbn_posterior_map(dbn: DbnModel, img: RoiImage, eps=1e-3):
    patches = extract_patches(img, dbn.patch_size)
    return dbn_posterior(dbn, patches, eps).reshape(img.shape)
