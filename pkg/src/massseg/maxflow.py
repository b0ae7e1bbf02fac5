"""Exact binary energy minimization by minimum s-t cut.

Pixels that end on the source side of the cut take label +1. With unary
costs ``U+`` and ``U-`` the terminal arcs are ``s -> i`` with capacity
``max(0, U- - U+)`` (paid when ``i`` is labeled -1) and ``i -> t`` with
capacity ``max(0, U+ - U-)`` (paid when ``i`` is labeled +1); the per-pixel
``min(U+, U-)`` is accumulated in ``FlowNetwork.constant`` so that
``energy(y) == constant + cut(y)`` for every labeling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import LabelMask, LatticeMismatch, ModelWeights, PotentialStack

__all__ = [
    "SubmodularityError",
    "FlowNetwork",
    "FlowResult",
    "combined_unaries",
    "build_flow_network",
    "solve",
    "min_cut",
    "warmup",
    "infer",
    "infer_loss_augmented",
]


class SubmodularityError(ValueError):
    """Raised for negative pairwise weights, which min-cut cannot minimize exactly."""


@dataclass(frozen=True)
class FlowNetwork:
    height: int
    width: int
    cap_source: np.ndarray
    cap_sink: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_cap: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        for name in ("cap_source", "cap_sink", "edge_cap"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite and nonnegative")

    @property
    def n_pixels(self):
        return self.height * self.width


@dataclass(frozen=True)
class FlowResult:
    labels: LabelMask
    flow_value: float
    cut_value: float


def combined_unaries(stack: PotentialStack, w: ModelWeights, loss_reference=None):
    """Weighted per-pixel costs of +1 and -1, with the Hamming loss folded in if given."""
    if w.unary.size != stack.n_unary or w.pairwise.size != stack.n_pairwise:
        raise LatticeMismatch("weight vector does not match the potential stack")
    u_pos = np.tensordot(w.unary, stack.unary_pos, axes=1).ravel()
    u_neg = np.tensordot(w.unary, stack.unary_neg, axes=1).ravel()
    if loss_reference is not None:
        if loss_reference.shape != stack.shape:
            raise LatticeMismatch("loss reference lattice differs from the potentials")
        ref_pos = loss_reference.positive.ravel()
        # disagreeing with the reference earns one unit of loss
        u_neg = u_neg - ref_pos
        u_pos = u_pos - ~ref_pos
    return u_pos, u_neg


def build_flow_network(stack: PotentialStack, w: ModelWeights, loss_reference=None) -> FlowNetwork:
    if not w.is_submodular:
        raise SubmodularityError(f"pairwise weights must be nonnegative, got {w.pairwise}")
    u_pos, u_neg = combined_unaries(stack, w, loss_reference)
    ei, ej, coeffs = stack.edges()
    edge_cap = w.pairwise @ coeffs if coeffs.shape[0] else np.zeros(ei.size)
    h, wd = stack.shape
    return FlowNetwork(
        h, wd,
        cap_source=np.maximum(u_neg - u_pos, 0.0),
        cap_sink=np.maximum(u_pos - u_neg, 0.0),
        edge_i=ei, edge_j=ej,
        edge_cap=np.maximum(edge_cap, 0.0),
        constant=float(np.minimum(u_pos, u_neg).sum()),
    )


def _arc_arrays(net: FlowNetwork):
    """Arcs sorted by tail into CSR form; ``rev[a]`` indexes the arc paired with ``a``."""
    n = net.n_pixels
    s, t = n, n + 1
    pix = np.arange(n)
    m = net.edge_i.size
    # forward arcs, followed by their reverses at offset half
    tail_f = np.concatenate([np.full(n, s), pix, net.edge_i])
    head_f = np.concatenate([pix, np.full(n, t), net.edge_j])
    cap_f = np.concatenate([net.cap_source, net.cap_sink, net.edge_cap])
    cap_r = np.concatenate([np.zeros(2 * n), net.edge_cap])
    half = tail_f.size
    tail = np.concatenate([tail_f, head_f])
    head = np.concatenate([head_f, tail_f])
    cap = np.concatenate([cap_f, cap_r]).astype(np.float64)
    rev = np.concatenate([np.arange(half) + half, np.arange(half)])

    order = np.argsort(tail, kind="stable")
    pos = np.empty_like(order)
    pos[order] = np.arange(order.size)
    start = np.zeros(n + 3, dtype=np.int64)
    np.add.at(start, tail + 1, 1)
    start = np.cumsum(start)
    assert start[-1] == 2 * (2 * n + m)
    return (start, tail[order].astype(np.int64), head[order].astype(np.int64),
            cap[order], pos[rev[order]].astype(np.int64))


@numba.njit(cache=True)
def _bfs_levels(start, head, res, s, eps, level, queue):
    level[:] = -1
    level[s] = 0
    qh, qt = 0, 1
    queue[0] = s
    while qh < qt:
        u = queue[qh]
        qh += 1
        for a in range(start[u], start[u + 1]):
            v = head[a]
            if level[v] < 0 and res[a] > eps:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1


@numba.njit(cache=True)
def _dinic(start, tail, head, res, rev, s, t, eps):
    n_nodes = start.size - 1
    level = np.empty(n_nodes, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    it = np.empty(n_nodes, dtype=np.int64)
    path = np.empty(n_nodes, dtype=np.int64)
    flow = 0.0
    while True:
        _bfs_levels(start, head, res, s, eps, level, queue)
        if level[t] < 0:
            break
        for u in range(n_nodes):
            it[u] = start[u]
        depth = 0
        u = s
        while True:
            if u == t:
                f = res[path[0]]
                for k in range(1, depth):
                    if res[path[k]] < f:
                        f = res[path[k]]
                for k in range(depth):
                    a = path[k]
                    res[a] -= f
                    res[rev[a]] += f
                flow += f
                depth = 0
                u = s
                continue
            advanced = False
            while it[u] < start[u + 1]:
                a = it[u]
                v = head[a]
                if res[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if depth == 0:
                    break
                level[u] = -1
                depth -= 1
                u = tail[path[depth]]
                it[u] += 1
    _bfs_levels(start, head, res, s, eps, level, queue)
    return flow, level >= 0


def solve(net: FlowNetwork) -> FlowResult:
    """Max-flow / min-cut on ``net``; returns the source-side labeling and both values."""
    n = net.n_pixels
    start, tail, head, cap, rev = _arc_arrays(net)
    res = cap.copy()
    eps = 1e-13 * max(1.0, float(cap.max()) if cap.size else 1.0)
    flow, reach = _dinic(start, tail, head, res, rev, n, n + 1, eps)
    crossing = reach[tail] & ~reach[head]
    cut = float(cap[crossing].sum())
    labels = LabelMask(np.where(reach[:n], 1, -1).reshape(net.height, net.width))
    return FlowResult(labels, float(flow), cut)


def warmup():
    """Load or compile the flow kernel on a two-pixel network."""
    solve(FlowNetwork(1, 2, np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                      np.array([0]), np.array([1]), np.array([0.5])))


def min_cut(net: FlowNetwork):
    r = solve(net)
    return r.labels, r.cut_value


def infer(stack: PotentialStack, w: ModelWeights) -> LabelMask:
    """Minimum-energy labeling."""
    return solve(build_flow_network(stack, w)).labels


def infer_loss_augmented(stack: PotentialStack, w: ModelWeights, gt: LabelMask) -> LabelMask:
    """Minimizer of ``energy(y) - hamming(gt, y)``."""
    return solve(build_flow_network(stack, w, loss_reference=gt)).labels
