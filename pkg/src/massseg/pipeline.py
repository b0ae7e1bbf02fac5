"""Training and segmentation pipelines built from the individual stages."""
from __future__ import annotations

import logging

import numpy as np

from .config import Config
from .core import LabelMask, RoiImage
from .dbn import DbnConfig, extract_patches, train_dbn
from .manifest import ManifestRecord
from .maxflow import infer
from .model import TrainedModel
from .pgm import read_pgm
from .potentials import build_potential_stack, fit_gmm, fit_prior
from .preprocess import RoiAnnotation, enhance_contrast, extract_roi, resize_bicubic
from .ssvm import train_ssvm

__all__ = [
    "roi_from_raw",
    "mask_from_raw",
    "load_record",
    "prepare",
    "fit_potentials",
    "fit_weights",
    "train_model",
    "segment",
]

log = logging.getLogger(__name__)


def roi_from_raw(raw, ann: RoiAnnotation, config: Config) -> RoiImage:
    crop = extract_roi(raw, ann, config.roi_side_factor)
    return resize_bicubic(crop, config.roi_size, config.roi_size)


def mask_from_raw(raw, ann: RoiAnnotation, config: Config) -> LabelMask:
    """Masks go through the same crop and resample, then threshold at one half."""
    return LabelMask.from_bool(roi_from_raw(raw, ann, config).intensities >= 0.5)


def load_record(rec: ManifestRecord, config: Config):
    ann = RoiAnnotation(rec.center_x, rec.center_y, rec.scale)
    img = roi_from_raw(read_pgm(rec.image), ann, config)
    mask = mask_from_raw(read_pgm(rec.mask), ann, config)
    return img, mask


def prepare(img: RoiImage, config: Config) -> RoiImage:
    return enhance_contrast(img, config.gamma) if config.enhance else img


def fit_potentials(images, masks, config: Config) -> TrainedModel:
    """Fit the unary sub-models on already prepared images; weights stay unset."""
    images, masks = list(images), list(masks)
    if not images or len(images) != len(masks):
        raise ValueError("need a nonempty training set with one mask per image")
    prior = fit_prior(masks, config.clamp_epsilon)
    gmm = None
    if "gmm" in config.unaries:
        gmm = fit_gmm(images, masks, config.gmm_components, seed=config.seed,
                      eps=config.clamp_epsilon, var_floor=config.sigma_floor)
    dbns = {}
    labels = np.concatenate([m.labels.ravel() for m in masks])
    for s in config.patch_sizes:
        if f"dbn{s}" not in config.unaries:
            continue
        patches = np.concatenate([extract_patches(im, s) for im in images])
        rng = np.random.default_rng(config.seed + 1000 * s)
        if 0 < config.dbn_max_patches < len(patches):
            pick = np.sort(rng.choice(len(patches), config.dbn_max_patches, replace=False))
        else:
            pick = np.arange(len(patches))
        dcfg = DbnConfig(config.layers, config.dbn_epochs, config.dbn_learning_rate,
                         config.dbn_batch_size, config.cd_steps, seed=config.seed + 100 * s)
        log.info("training DBN %dx%d on %d patches", s, s, pick.size)
        dbns[s] = train_dbn(patches[pick], labels[pick], s, dcfg)
    return TrainedModel(config, prior, gmm, dbns, None)


def fit_weights(model: TrainedModel, images, masks):
    """Learn the CRF weights by SSVM for the potentials enabled in ``model.config``.

    Returns ``(model_with_weights, SsvmResult)``.
    """
    cfg = model.config
    data = [(build_potential_stack(im, model), mk) for im, mk in zip(images, masks)]
    result = train_ssvm(data, C=cfg.ssvm_C, tol=cfg.ssvm_tol, max_iter=cfg.ssvm_max_iter)
    return model.with_weights(result.weights), result


def train_model(images, masks, config: Config):
    """Full training: prepare images, fit potentials, learn weights.

    ``images`` are ROI images before contrast enhancement.
    """
    prepared = [prepare(im, config) for im in images]
    model = fit_potentials(prepared, masks, config)
    return fit_weights(model, prepared, masks)


def segment(model: TrainedModel, img: RoiImage) -> LabelMask:
    """Segment one ROI (before contrast enhancement)."""
    if model.weights is None:
        raise ValueError("model has no learned weights")
    stack = build_potential_stack(prepare(img, model.config), model)
    return infer(stack, model.weights)
