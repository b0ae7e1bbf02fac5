"""Lattice data model and the CRF energy.

Labels use +1 for mass and -1 for background. Unary maps store the cost of
each label at every pixel; pairwise maps store the label-independent factor
of each edge potential, which is only paid when the two labels differ.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LatticeMismatch",
    "RoiImage",
    "LabelMask",
    "ModelWeights",
    "PotentialStack",
    "grid_edges",
    "energy",
    "joint_features",
]


class LatticeMismatch(ValueError):
    """Raised when two objects are defined on different lattices."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RoiImage:
    intensities: np.ndarray

    def __post_init__(self):
        x = _frozen(self.intensities, np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D lattice, got shape {x.shape}")
        if not np.all((x >= 0.0) & (x <= 1.0)):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "intensities", x)

    @property
    def shape(self):
        return self.intensities.shape

    @property
    def height(self):
        return self.intensities.shape[0]

    @property
    def width(self):
        return self.intensities.shape[1]


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray

    def __post_init__(self):
        y = _frozen(self.labels, np.int8)
        if y.ndim != 2 or y.shape[0] < 1 or y.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D lattice, got shape {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_bool(cls, positive):
        return cls(np.where(np.asarray(positive, dtype=bool), 1, -1))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def positive(self):
        return self.labels == 1

    def complement(self):
        return LabelMask(-self.labels)

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash((self.shape, self.labels.tobytes()))


@dataclass(frozen=True)
class ModelWeights:
    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        u = _frozen(np.atleast_1d(self.unary), np.float64)
        p = _frozen(np.atleast_1d(self.pairwise), np.float64)
        if u.ndim != 1 or p.ndim != 1:
            raise ValueError("weights must be 1-D")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "unary", u)
        object.__setattr__(self, "pairwise", p)

    @classmethod
    def from_vector(cls, w, n_unary):
        w = np.asarray(w, dtype=np.float64)
        return cls(w[:n_unary], w[n_unary:])

    @classmethod
    def zeros(cls, n_unary, n_pairwise):
        return cls(np.zeros(n_unary), np.zeros(n_pairwise))

    @property
    def vector(self):
        return np.concatenate([self.unary, self.pairwise])

    @property
    def is_submodular(self):
        return bool(np.all(self.pairwise >= 0.0))


@dataclass(frozen=True)
class PotentialStack:
    """Precomputed potentials for one image.

    ``unary_pos[k]`` / ``unary_neg[k]`` hold the cost of label +1 / -1 under
    unary potential ``k``. ``pair_h[l]`` holds the coefficient of pairwise
    potential ``l`` on the edge between ``(r, c)`` and ``(r, c + 1)``;
    ``pair_v[l]`` on the edge between ``(r, c)`` and ``(r + 1, c)``.
    """

    unary_pos: np.ndarray
    unary_neg: np.ndarray
    pair_h: np.ndarray
    pair_v: np.ndarray
    unary_names: tuple = field(default=())
    pairwise_names: tuple = field(default=())

    def __post_init__(self):
        up = _frozen(self.unary_pos, np.float64)
        un = _frozen(self.unary_neg, np.float64)
        ph = _frozen(self.pair_h, np.float64)
        pv = _frozen(self.pair_v, np.float64)
        if up.ndim != 3 or up.shape != un.shape:
            raise ValueError("unary maps must be (K, H, W) and agree for both labels")
        _, h, w = up.shape
        if ph.ndim != 3 or pv.ndim != 3 or ph.shape[0] != pv.shape[0]:
            raise ValueError("pairwise maps must be (L, H, W-1) and (L, H-1, W)")
        if ph.shape[1:] != (h, w - 1) or pv.shape[1:] != (h - 1, w):
            raise LatticeMismatch("pairwise maps do not match the unary lattice")
        if not (np.all(np.isfinite(up)) and np.all(np.isfinite(un))):
            raise ValueError("unary maps must be finite")
        for m in (ph, pv):
            if m.size and not np.all((m >= 0.0) & (m <= 1.0)):
                raise ValueError("pairwise coefficients must lie in [0, 1]")
        object.__setattr__(self, "unary_pos", up)
        object.__setattr__(self, "unary_neg", un)
        object.__setattr__(self, "pair_h", ph)
        object.__setattr__(self, "pair_v", pv)
        object.__setattr__(self, "unary_names", tuple(self.unary_names))
        object.__setattr__(self, "pairwise_names", tuple(self.pairwise_names))

    @property
    def shape(self):
        return self.unary_pos.shape[1:]

    @property
    def n_unary(self):
        return self.unary_pos.shape[0]

    @property
    def n_pairwise(self):
        return self.pair_h.shape[0]

    @property
    def n_features(self):
        return self.n_unary + self.n_pairwise

    def edges(self):
        """Return ``(i, j, coeffs)``: flat pixel indices and (L, E) coefficients."""
        i, j = grid_edges(*self.shape)
        L = self.n_pairwise
        coeffs = np.concatenate(
            [self.pair_h.reshape(L, self.pair_h[0].size if L else 0),
             self.pair_v.reshape(L, self.pair_v[0].size if L else 0)],
            axis=1,
        )
        if not L:
            coeffs = np.zeros((0, i.size))
        return i, j, coeffs


def grid_edges(height, width):
    """Flat indices of the 4-connected lattice edges, horizontal then vertical."""
    idx = np.arange(height * width).reshape(height, width)
    i = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    j = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return i, j


def _check(y, stack, w=None):
    if y.shape != stack.shape:
        raise LatticeMismatch(f"mask {y.shape} vs potentials {stack.shape}")
    if w is not None and (w.unary.size != stack.n_unary or w.pairwise.size != stack.n_pairwise):
        raise LatticeMismatch(
            f"weights ({w.unary.size}, {w.pairwise.size}) vs potentials "
            f"({stack.n_unary}, {stack.n_pairwise})"
        )


def joint_features(y: LabelMask, stack: PotentialStack) -> np.ndarray:
    """Feature vector such that ``energy(y, stack, w) == w.vector @ joint_features(y, stack)``."""
    _check(y, stack)
    pos = y.positive
    unary = np.where(pos, stack.unary_pos, stack.unary_neg).sum(axis=(1, 2))
    cut_h = pos[:, :-1] != pos[:, 1:]
    cut_v = pos[:-1, :] != pos[1:, :]
    pair = (stack.pair_h * cut_h).sum(axis=(1, 2)) + (stack.pair_v * cut_v).sum(axis=(1, 2))
    return np.concatenate([unary, pair])


def energy(y: LabelMask, stack: PotentialStack, w: ModelWeights) -> float:
    """Weighted CRF energy of labeling ``y``; lower is more probable."""
    _check(y, stack, w)
    pos = y.positive
    # weight the maps first, then select per pixel/edge
    unary = np.tensordot(w.unary, np.where(pos, stack.unary_pos, stack.unary_neg), axes=1)
    pair_h = np.tensordot(w.pairwise, stack.pair_h, axes=1)
    pair_v = np.tensordot(w.pairwise, stack.pair_v, axes=1)
    total = unary.sum()
    total += pair_h[pos[:, :-1] != pos[:, 1:]].sum()
    total += pair_v[pos[:-1, :] != pos[1:, :]].sum()
    return float(total)
