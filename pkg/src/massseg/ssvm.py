"""Cutting-plane structured SVM (n-slack, margin rescaling).

Learns ``w`` from

    min  0.5 ||w||^2 + (C / N) sum_n xi_n
    s.t. E(y_hat) - E(y_n) >= hamming(y_n, y_hat) - xi_n   for every y_hat
         xi_n >= 0,  pairwise part of w >= 0

Constraints are generated one labeling at a time by loss-augmented
inference. Nonnegative pairwise weights keep every energy submodular, so the
min-cut inference used for constraint generation stays exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cvxopt
import numpy as np

from .core import LabelMask, LatticeMismatch, ModelWeights, PotentialStack, joint_features
from .maxflow import infer_loss_augmented

__all__ = [
    "ConstraintRecord",
    "QpState",
    "SsvmResult",
    "hamming",
    "most_violated",
    "qp_solve",
    "slacks_for",
    "train_ssvm",
]

log = logging.getLogger(__name__)


def hamming(y: LabelMask, y2: LabelMask) -> int:
    """Number of pixels where the two labelings disagree."""
    if y.shape != y2.shape:
        raise LatticeMismatch(f"{y.shape} vs {y2.shape}")
    return int(np.count_nonzero(y.labels != y2.labels))


@dataclass(frozen=True)
class ConstraintRecord:
    sample: int
    g: np.ndarray
    loss: int

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(g)):
            raise ValueError("feature difference must be finite")
        if self.loss < 0:
            raise ValueError("loss must be nonnegative")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    def violation(self, w):
        return self.loss - float(np.dot(w, self.g))


@dataclass
class QpState:
    w: np.ndarray
    slacks: np.ndarray
    objective: float
    kkt_residual: float
    C: float
    n_unary: int

    @property
    def weights(self):
        return ModelWeights.from_vector(self.w, self.n_unary)


def most_violated(stack: PotentialStack, w: ModelWeights, gt: LabelMask):
    """Loss-augmented labeling and its margin violation ``loss - (E(y_hat) - E(gt))``."""
    y_hat = infer_loss_augmented(stack, w, gt)
    g = joint_features(y_hat, stack) - joint_features(gt, stack)
    return y_hat, hamming(gt, y_hat) - float(w.vector @ g)


def slacks_for(constraints, w, n_samples):
    """Smallest feasible slacks for ``w``: the largest violation per sample, floored at 0."""
    xi = np.zeros(n_samples)
    for c in constraints:
        xi[c.sample] = max(xi[c.sample], c.violation(w))
    return xi


def _objective(w, xi, C, n):
    return 0.5 * float(w @ w) + C / n * float(xi.sum())


def _kkt_residual(P, q, G, h, z, lam):
    """Largest of stationarity, infeasibility and complementarity, each relative to its scale."""
    gap = h - G @ z
    grad = P @ z + q
    scale = 1.0 + max(np.abs(q).max(), np.abs(h).max(), np.abs(G.T @ lam).max())
    return max(
        np.abs(grad + G.T @ lam).max() / scale,
        max(0.0, -gap.min()) / (1.0 + np.abs(h).max()),
        np.abs(lam * gap).max() / scale,
        max(0.0, -lam.min()) / scale,
    )


def _polish(P, q, G, h, z, lam):
    """Re-solve the equality system on the active set found by the interior-point run."""
    gap = h - G @ z
    active = lam > np.maximum(gap, 0.0)
    Ga, ha = G[active], h[active]
    n, k = z.size, Ga.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Ga.T
    K[n:, :n] = Ga
    rhs = np.concatenate([-q, ha])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z_new = sol[:n]
    lam_new = np.zeros_like(lam)
    lam_new[active] = sol[n:]
    return z_new, lam_new


def qp_solve(constraints, C, N, n_features=None, n_unary=None) -> QpState:
    """Solve the restricted QP over the given constraint records.

    ``n_unary`` marks where the pairwise weights start; those are constrained
    to be nonnegative. An interior-point solve locates the active set, then
    the KKT equations on that set are solved directly; the polished point is
    kept when its KKT residual is smaller.
    """
    constraints = list(constraints)
    if C < 0:
        raise ValueError("C must be nonnegative")
    if n_features is None:
        if not constraints:
            raise ValueError("n_features is required when there are no constraints")
        n_features = constraints[0].g.size
    if n_unary is None:
        n_unary = n_features
    d = n_features
    if not constraints or C == 0:
        w = np.zeros(d)
        xi = slacks_for(constraints, w, N)
        return QpState(w, xi, _objective(w, xi, C, N), 0.0, C, n_unary)

    # variables z = [w, xi]; rows: margin constraints, xi >= 0, pairwise w >= 0
    m = len(constraints)
    n_pair = d - n_unary
    nz = d + N
    G = np.zeros((m + N + n_pair, nz))
    h = np.zeros(m + N + n_pair)
    for r, c in enumerate(constraints):
        G[r, :d] = -c.g
        G[r, d + c.sample] = -1.0
        h[r] = -c.loss
    G[m:m + N, d:] = -np.eye(N)
    G[m + N:, n_unary:d] = -np.eye(n_pair)
    P = np.zeros((nz, nz))
    P[:d, :d] = np.eye(d)
    q = np.concatenate([np.zeros(d), np.full(N, C / N)])

    opts = {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10,
            "maxiters": 200}
    sol = cvxopt.solvers.qp(cvxopt.matrix(P), cvxopt.matrix(q), cvxopt.matrix(G), cvxopt.matrix(h),
                            options=opts)
    if sol["x"] is None:
        raise RuntimeError(f"QP solver failed: {sol['status']}")
    z = np.array(sol["x"]).ravel()
    lam = np.array(sol["z"]).ravel()
    if sol["status"] != "optimal":
        log.debug("QP solver status %s", sol["status"])
    best = (_kkt_residual(P, q, G, h, z, lam), z, lam)
    zp, lp = _polish(P, q, G, h, z, lam)
    kp = _kkt_residual(P, q, G, h, zp, lp)
    if kp < best[0]:
        best = (kp, zp, lp)
    kkt, z, lam = best

    w = z[:d].copy()
    w[n_unary:] = np.maximum(w[n_unary:], 0.0)
    xi = slacks_for(constraints, w, N)
    return QpState(w, xi, _objective(w, xi, C, N), float(kkt), C, n_unary)


@dataclass
class SsvmResult:
    weights: ModelWeights
    converged: bool
    iterations: int
    objectives: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    slacks: np.ndarray = None
    max_kkt_residual: float = 0.0


def train_ssvm(dataset, C=1000.0, tol=1e-4, max_iter=200) -> SsvmResult:
    """Cutting-plane training over ``dataset``, a list of ``(PotentialStack, LabelMask)``.

    Each pass finds the most violated labeling for every sample and adds it
    when it beats the sample's current slack by more than ``tol``; the QP is
    re-solved after every pass that added something. ``converged`` is False
    when ``max_iter`` passes ran without reaching that point.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty training set")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = len(dataset)
    n_unary = dataset[0][0].n_unary
    d = dataset[0][0].n_features
    state = qp_solve([], C, n, n_features=d, n_unary=n_unary)
    constraints = []
    objectives = []
    kkt = 0.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        w = state.weights
        added = 0
        for k, (stack, gt) in enumerate(dataset):
            y_hat, viol = most_violated(stack, w, gt)
            if viol - state.slacks[k] > tol:
                g = joint_features(y_hat, stack) - joint_features(gt, stack)
                constraints.append(ConstraintRecord(k, g, hamming(gt, y_hat)))
                added += 1
        if not added:
            converged = True
            break
        state = qp_solve(constraints, C, n, n_features=d, n_unary=n_unary)
        objectives.append(state.objective)
        kkt = max(kkt, state.kkt_residual)
        log.info("ssvm pass %d: +%d constraints (%d total), objective %.6g",
                 it, added, len(constraints), state.objective)
    else:
        # the last pass may have added constraints; check whether the final w is done
        w = state.weights
        converged = all(
            most_violated(stack, w, gt)[1] - state.slacks[k] <= tol
            for k, (stack, gt) in enumerate(dataset)
        )
    return SsvmResult(state.weights, converged, it, objectives, constraints, state.slacks, kkt)
