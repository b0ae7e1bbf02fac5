"""Dataset manifests: one tab-separated record per line.

Fields: image path, mask path, center_x, center_y, scale, split (train/test).
Relative paths resolve against the manifest's directory. Blank lines and
lines starting with ``#`` are skipped.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

__all__ = ["ManifestError", "ManifestRecord", "read_manifest", "write_manifest", "format_record"]

SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    mask: str
    center_x: float
    center_y: float
    scale: float
    split: str


def _num(s):
    v = float(s)
    return int(v) if v.is_integer() else v


def format_record(r: ManifestRecord) -> str:
    return "\t".join([r.image, r.mask, str(r.center_x), str(r.center_y), str(r.scale), r.split])


def read_manifest(path, check_paths=True):
    base = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ManifestError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
            image, mask, cx, cy, scale, split = parts
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: split must be train or test, got {split!r}")
            try:
                cx, cy, scale = _num(cx), _num(cy), _num(scale)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad numeric field") from None
            if scale <= 0:
                raise ManifestError(f"{path}:{lineno}: scale must be positive")
            image = os.path.join(base, image)
            mask = os.path.join(base, mask)
            if check_paths:
                for p in (image, mask):
                    if not os.path.isfile(p):
                        raise ManifestError(f"{path}:{lineno}: missing file {p}")
            key = (image, mask, cx, cy, scale)
            if key in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate record")
            seen.add(key)
            records.append(ManifestRecord(image, mask, cx, cy, scale, split))
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(format_record(r) + "\n")
