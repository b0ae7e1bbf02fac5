"""Trained model container and its binary file format.

Layout (all integers little-endian)::

    magic      8 bytes  b"MASSSEG\\0"
    version    u32
    n_sections u32
    section*   name (u16 length + utf-8) | payload (u64 length + bytes)

The ``config`` section is the ``key=value`` text of the configuration; every
other section is a list of named float64 arrays, each stored as
name (u16 + utf-8), ndim (u8), shape (u32 each) and raw little-endian data.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import Config, parse_config
from .core import ModelWeights
from .dbn import DbnModel, RbmLayer
from .potentials import GmmModel, Mixture1D, PriorModel

MAGIC = b"MASSSEG\x00"
FORMAT_VERSION = 1

__all__ = ["TrainedModel", "ModelFormatError", "dumps", "loads", "save_model", "load_model"]


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainedModel:
    config: Config
    prior: PriorModel
    gmm: GmmModel = None
    dbns: dict = field(default_factory=dict)
    weights: ModelWeights = None

    @property
    def shape(self):
        return self.prior.shape

    def with_weights(self, weights):
        return TrainedModel(self.config, self.prior, self.gmm, dict(self.dbns), weights)

    def with_config(self, config):
        return TrainedModel(config, self.prior, self.gmm, dict(self.dbns), self.weights)


# --- low-level packing ----------------------------------------------------------

def _pack_name(buf, name):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read(buf, n):
    raw = buf.read(n)
    if len(raw) != n:
        raise ModelFormatError("truncated model file")
    return raw


def _unpack_name(buf):
    (n,) = struct.unpack("<H", _read(buf, 2))
    return _read(buf, n).decode("utf-8")


def _pack_arrays(arrays):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        _pack_name(buf, name)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def _unpack_arrays(payload):
    buf = io.BytesIO(payload)
    (count,) = struct.unpack("<I", _read(buf, 4))
    out = {}
    for _ in range(count):
        name = _unpack_name(buf)
        (ndim,) = struct.unpack("<B", _read(buf, 1))
        shape = struct.unpack(f"<{ndim}I", _read(buf, 4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(_read(buf, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def _mixture_arrays(prefix, mix):
    return [(f"{prefix}.weights", mix.weights), (f"{prefix}.means", mix.means),
            (f"{prefix}.variances", mix.variances)]


def _rbm_arrays(prefix, layer):
    return [(f"{prefix}.W", layer.weights), (f"{prefix}.a", layer.visible_bias),
            (f"{prefix}.b", layer.hidden_bias)]


def _rbm_from(arrs, prefix):
    return RbmLayer(arrs[f"{prefix}.W"], arrs[f"{prefix}.a"], arrs[f"{prefix}.b"])


# --- model file -------------------------------------------------------------------

def dumps(model: TrainedModel) -> bytes:
    sections = [("config", model.config.to_text().encode("utf-8"))]
    sections.append(("prior", _pack_arrays([("prob_map", model.prior.prob_map),
                                            ("eps", np.array([model.prior.eps]))])))
    if model.gmm is not None:
        sections.append(("gmm", _pack_arrays(
            _mixture_arrays("mass", model.gmm.mass)
            + _mixture_arrays("background", model.gmm.background)
            + [("eps", np.array([model.gmm.eps]))]
        )))
    for s in sorted(model.dbns):
        dbn = model.dbns[s]
        arrays = [("patch_size", np.array([dbn.patch_size])), ("depth", np.array([len(dbn.layers)]))]
        for i, layer in enumerate(dbn.layers):
            arrays += _rbm_arrays(f"layer{i}", layer)
        arrays += _rbm_arrays("top", dbn.top)
        sections.append((f"dbn{s}", _pack_arrays(arrays)))
    if model.weights is not None:
        sections.append(("weights", _pack_arrays([("unary", model.weights.unary),
                                                  ("pairwise", model.weights.pairwise)])))

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, payload in sections:
        _pack_name(buf, name)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def loads(data: bytes) -> TrainedModel:
    buf = io.BytesIO(data)
    if _read(buf, len(MAGIC)) != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, count = struct.unpack("<II", _read(buf, 8))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    sections = {}
    for _ in range(count):
        name = _unpack_name(buf)
        (n,) = struct.unpack("<Q", _read(buf, 8))
        sections[name] = _read(buf, n)
    if buf.read(1):
        raise ModelFormatError("trailing bytes after the last section")
    if "config" not in sections or "prior" not in sections:
        raise ModelFormatError("model file lacks config or prior")

    config = parse_config(sections.pop("config").decode("utf-8"), env={})
    arrs = _unpack_arrays(sections.pop("prior"))
    prior = PriorModel(arrs["prob_map"], float(arrs["eps"][0]))
    gmm = None
    if "gmm" in sections:
        arrs = _unpack_arrays(sections.pop("gmm"))
        mix = {c: Mixture1D(arrs[f"{c}.weights"], arrs[f"{c}.means"], arrs[f"{c}.variances"])
               for c in ("mass", "background")}
        gmm = GmmModel(mix["mass"], mix["background"], float(arrs["eps"][0]))
    weights = None
    if "weights" in sections:
        arrs = _unpack_arrays(sections.pop("weights"))
        weights = ModelWeights(arrs["unary"], arrs["pairwise"])
    dbns = {}
    for name in sorted(sections):
        if not name.startswith("dbn"):
            raise ModelFormatError(f"unknown section {name!r}")
        arrs = _unpack_arrays(sections[name])
        depth = int(arrs["depth"][0])
        layers = tuple(_rbm_from(arrs, f"layer{i}") for i in range(depth))
        dbn = DbnModel(layers, _rbm_from(arrs, "top"), int(arrs["patch_size"][0]))
        dbns[dbn.patch_size] = dbn
    return TrainedModel(config, prior, gmm, dbns, weights)


def save_model(model: TrainedModel, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
