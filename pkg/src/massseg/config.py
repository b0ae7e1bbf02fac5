"""Pipeline configuration: flat ``key = value`` files with environment overrides.

Keys (defaults in parentheses)::

    roi_size          side of the canonical ROI lattice (40)
    roi_side_factor   crop side as a multiple of the annotated scale (2)
    enhance           apply contrast enhancement (true)
    gamma             gamma of the contrast enhancement (0.5)
    clamp_epsilon     probability clamp before taking logs (1e-3)
    gmm_components    mixture components per class (5)
    sigma_floor       variance floor for the mixtures (1e-4)
    patch_sizes       DBN patch sides, comma separated (3,5)
    layers            DBN hidden layer widths, last is the top layer (50,50,50)
    dbn_epochs        CD epochs per layer (100)
    dbn_learning_rate CD learning rate (0.05)
    dbn_batch_size    CD mini-batch size (32)
    cd_steps          Gibbs steps per CD update (1)
    dbn_max_patches   patches sampled per DBN for training, 0 = all (20000)
    unaries           enabled unary potentials (prior,gmm,dbn3,dbn5)
    pairwise          enabled pairwise potentials (potts,contrast)
    ssvm_C            SSVM regularization constant (1000)
    ssvm_tol          constraint violation tolerance (1e-4)
    ssvm_max_iter     cutting-plane pass cap (200)
    seed              master RNG seed (0)

Any key can be overridden by an environment variable ``MASSSEG_<KEY>``
(upper case), e.g. ``MASSSEG_SSVM_C=100``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass

ENV_PREFIX = "MASSSEG_"

__all__ = ["Config", "ConfigError", "ENV_PREFIX", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


def _ints(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _names(s):
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class Config:
    roi_size: int = 40
    roi_side_factor: float = 2.0
    enhance: bool = True
    gamma: float = 0.5
    clamp_epsilon: float = 1e-3
    gmm_components: int = 5
    sigma_floor: float = 1e-4
    patch_sizes: tuple = (3, 5)
    layers: tuple = (50, 50, 50)
    dbn_epochs: int = 100
    dbn_learning_rate: float = 0.05
    dbn_batch_size: int = 32
    cd_steps: int = 1
    dbn_max_patches: int = 20000
    unaries: tuple = ("prior", "gmm", "dbn3", "dbn5")
    pairwise: tuple = ("potts", "contrast")
    ssvm_C: float = 1000.0
    ssvm_tol: float = 1e-4
    ssvm_max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in self.unaries:
            if name not in ("prior", "gmm") and not (
                name.startswith("dbn") and name[3:].isdigit() and int(name[3:]) in self.patch_sizes
            ):
                raise ConfigError(f"unknown unary potential {name!r}")
        for name in self.pairwise:
            if name not in ("potts", "contrast"):
                raise ConfigError(f"unknown pairwise potential {name!r}")
        if any(s % 2 == 0 or s < 1 for s in self.patch_sizes):
            raise ConfigError("patch sizes must be odd")
        if not self.layers:
            raise ConfigError("layers must name at least the top layer")
        if self.roi_size < 2 or self.gmm_components < 1 or self.ssvm_C < 0:
            raise ConfigError("invalid numeric setting")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_CONVERTERS = {
    int: int,
    float: float,
    bool: _bool,
}


def _convert(name, raw):
    fld = {f.name: f for f in dataclasses.fields(Config)}[name]
    default = fld.default
    if name in ("patch_sizes", "layers"):
        return _ints(raw)
    if name in ("unaries", "pairwise"):
        return _names(raw)
    return _CONVERTERS[type(default)](str(raw).strip())


def parse_config(text, env=None, base=None):
    """Parse ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    known = {f.name for f in dataclasses.fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw
    env = os.environ if env is None else env
    for key in known:
        if ENV_PREFIX + key.upper() in env:
            values[key] = env[ENV_PREFIX + key.upper()]
    try:
        kw = {k: _convert(k, v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return (base or Config()).replace(**kw)


def load_config(path=None, env=None):
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, env=env)
