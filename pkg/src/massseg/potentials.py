"""Unary and pairwise potentials.

Every unary potential is the two-class negative log-likelihood of a mass
probability ``p``: ``-log p`` for label +1 and ``-log(1 - p)`` for label -1,
with ``p`` clamped to ``[eps, 1 - eps]`` so the costs stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import LatticeMismatch, PotentialStack, RoiImage
from .dbn import dbn_posterior_map

__all__ = [
    "DEFAULT_EPS",
    "PriorModel",
    "Mixture1D",
    "GmmModel",
    "fit_prior",
    "prior_unary",
    "probability_unary",
    "fit_mixture",
    "fit_gmm",
    "gmm_posterior",
    "pairwise_potts",
    "pairwise_contrast",
    "contrast_coefficients",
    "build_potential_stack",
]

DEFAULT_EPS = 1e-3
VAR_FLOOR = 1e-4
_LOG_2PI = np.log(2.0 * np.pi)


def _clamp(p, eps):
    return np.clip(p, eps, 1.0 - eps)


def probability_unary(p):
    """Costs ``(-log p, -log(1 - p))`` for labels +1 and -1."""
    p = np.asarray(p, dtype=np.float64)
    return -np.log(p), -np.log1p(-p)


# --- location prior ---------------------------------------------------------

@dataclass(frozen=True)
class PriorModel:
    prob_map: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        p = np.array(self.prob_map, dtype=np.float64, copy=True)
        if p.ndim != 2:
            raise ValueError("prior map must be 2-D")
        if not np.all((p >= self.eps) & (p <= 1.0 - self.eps)):
            raise ValueError("prior probabilities must lie in [eps, 1 - eps]")
        p.setflags(write=False)
        object.__setattr__(self, "prob_map", p)

    @property
    def shape(self):
        return self.prob_map.shape


def fit_prior(masks, eps=DEFAULT_EPS) -> PriorModel:
    """Per-pixel frequency of the mass label over the training masks."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one mask to fit the prior")
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise LatticeMismatch("all masks must share one lattice")
    freq = np.mean([m.positive for m in masks], axis=0)
    return PriorModel(_clamp(freq, eps), eps)


def prior_unary(prior: PriorModel):
    return probability_unary(prior.prob_map)


# --- intensity GMM ------------------------------------------------------------

@dataclass(frozen=True)
class Mixture1D:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True).ravel()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.weights.size == self.means.size == self.variances.size >= 1):
            raise ValueError("mixture parameter arrays must share a nonzero length")

    @property
    def n_components(self):
        return self.weights.size

    def component_log_density(self, x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - 0.5 * (_LOG_2PI + np.log(self.variances) + (x - self.means) ** 2 / self.variances)

    def log_density(self, x):
        return logsumexp(self.component_log_density(x), axis=-1)


@dataclass(frozen=True)
class GmmModel:
    mass: Mixture1D
    background: Mixture1D
    eps: float = DEFAULT_EPS


@dataclass
class EmTrace:
    """Per-iteration mean log-likelihood; entry 0 is the initialization."""

    loglik: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.loglik) - 1


def _kmeanspp_init(x, m, rng, var_floor):
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, m):
        total = d2.sum()
        idx = rng.choice(x.size, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, (x - x[idx]) ** 2)
    centers = np.array(centers)
    assign = np.argmin((x[:, None] - centers) ** 2, axis=1)
    weights = np.bincount(assign, minlength=m) / x.size
    variances = np.array([
        max(np.var(x[assign == k]), var_floor) for k in range(m)
    ])
    return Mixture1D(weights, centers, variances)


def fit_mixture(x, m, seed=0, tol=1e-7, max_iter=500, var_floor=VAR_FLOOR):
    """Fit a 1-D Gaussian mixture by EM. Returns ``(Mixture1D, EmTrace)``.

    Stops when the mean log-likelihood changes by less than ``tol`` or after
    ``max_iter`` iterations. Variances are floored at ``var_floor``; the
    floored M-step is still the constrained maximizer, so the likelihood
    stays nondecreasing.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to zero samples")
    if m < 1:
        raise ValueError("component count must be at least 1")
    n_distinct = np.unique(x).size
    if m > n_distinct:
        raise ValueError(f"{m} components requested but only {n_distinct} distinct values")

    rng = np.random.default_rng(seed)
    mix = _kmeanspp_init(x, m, rng, var_floor)
    trace = EmTrace()
    comp = mix.component_log_density(x)
    ll_point = logsumexp(comp, axis=1)
    trace.loglik.append(float(ll_point.mean()))

    for _ in range(max_iter):
        resp = np.exp(comp - ll_point[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 0
        safe = np.where(alive, nk, 1.0)
        means = np.where(alive, resp.T @ x / safe, mix.means)
        var = np.where(alive, (resp * (x[:, None] - means) ** 2).sum(axis=0) / safe, mix.variances)
        mix = Mixture1D(nk / x.size, means, np.maximum(var, var_floor))

        comp = mix.component_log_density(x)
        ll_point = logsumexp(comp, axis=1)
        trace.loglik.append(float(ll_point.mean()))
        if abs(trace.loglik[-1] - trace.loglik[-2]) < tol:
            trace.converged = True
            break
    return mix, trace


def fit_gmm(images, masks, m=5, seed=0, eps=DEFAULT_EPS, var_floor=VAR_FLOOR, tol=1e-7, max_iter=500):
    """Fit separate intensity mixtures to mass and background pixels."""
    images, masks = list(images), list(masks)
    if len(images) != len(masks) or not images:
        raise ValueError("need matching, nonempty image and mask lists")
    x = np.concatenate([im.intensities.ravel() for im in images])
    pos = np.concatenate([mk.positive.ravel() for mk in masks])
    if x.size != pos.size:
        raise LatticeMismatch("image and mask lattices differ")
    fits = {}
    for name, sel, s in (("mass", pos, seed), ("background", ~pos, seed + 1)):
        if not sel.any():
            raise ValueError(f"no {name} pixels in the training masks")
        fits[name], _ = fit_mixture(x[sel], m, seed=s, tol=tol, max_iter=max_iter, var_floor=var_floor)
    return GmmModel(fits["mass"], fits["background"], eps)


def gmm_posterior(g: GmmModel, intensity):
    """P(mass | intensity) under equal class priors, clamped to [eps, 1 - eps]."""
    lm = g.mass.log_density(intensity)
    lb = g.background.log_density(intensity)
    p = np.exp(lm - np.logaddexp(lm, lb))
    p = _clamp(p, g.eps)
    return float(p) if np.ndim(p) == 0 else p


# --- pairwise terms -------------------------------------------------------------

def pairwise_potts(yi, yj):
    return 0.0 if yi == yj else 1.0


def pairwise_contrast(yi, yj, xi, xj):
    return 0.0 if yi == yj else float(np.exp(-(xi - xj) ** 2))


def contrast_coefficients(x):
    """Contrast factors ``exp(-(x_i - x_j)^2)`` on horizontal and vertical edges."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.diff(x, axis=1) ** 2), np.exp(-np.diff(x, axis=0) ** 2)


# --- assembly -------------------------------------------------------------------

def _unary_probability(name, img, model):
    if name == "prior":
        return model.prior.prob_map
    if name == "gmm":
        return gmm_posterior(model.gmm, img.intensities)
    if name.startswith("dbn"):
        return dbn_posterior_map(model.dbns[int(name[3:])], img, model.config.clamp_epsilon)
    raise ValueError(f"unknown unary potential {name!r}")


def build_potential_stack(img: RoiImage, model) -> PotentialStack:
    """Evaluate every enabled potential of ``model`` on ``img``."""
    if model.prior is not None and model.prior.shape != img.shape:
        raise LatticeMismatch(f"model lattice {model.prior.shape} vs image {img.shape}")
    h, w = img.shape
    pos, neg = [], []
    for name in model.config.unaries:
        cp, cn = probability_unary(_unary_probability(name, img, model))
        pos.append(cp)
        neg.append(cn)
    ch, cv = contrast_coefficients(img.intensities)
    pair_h, pair_v = [], []
    for name in model.config.pairwise:
        if name == "potts":
            pair_h.append(np.ones((h, w - 1)))
            pair_v.append(np.ones((h - 1, w)))
        elif name == "contrast":
            pair_h.append(ch)
            pair_v.append(cv)
        else:
            raise ValueError(f"unknown pairwise potential {name!r}")
    return PotentialStack(
        np.reshape(pos, (len(pos), h, w)),
        np.reshape(neg, (len(neg), h, w)),
        np.reshape(pair_h, (len(pair_h), h, w - 1)),
        np.reshape(pair_v, (len(pair_v), h - 1, w)),
        unary_names=model.config.unaries,
        pairwise_names=model.config.pairwise,
    )
