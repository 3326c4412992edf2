"""On-disk sample format and dataset manifests.

Layout::

    root/manifest.json
    root/{train,test}/{id}.rgb.png     8-bit RGB
    root/{train,test}/{id}.depth.png   16-bit, millimeters
    root/{train,test}/{id}.ob.png      8-bit, 0 / 255
"""
from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError, RangeError
from .scene import Sample

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEPTH_SCALE = 1000.0  # stored value = meters * DEPTH_SCALE
MAX_DEPTH_M = 65535 / DEPTH_SCALE
SUFFIXES = {"rgb": ".rgb.png", "depth": ".depth.png", "ob": ".ob.png"}


@dataclass(frozen=True)
class SamplePaths:
    rgb: Path
    depth: Path
    ob: Path

    @classmethod
    def for_id(cls, directory: str | Path, sample_id: str) -> "SamplePaths":
        d = Path(directory)
        return cls(*(d / f"{sample_id}{SUFFIXES[k]}" for k in ("rgb", "depth", "ob")))

    def existing(self) -> dict[str, bool]:
        return {k: getattr(self, k).is_file() for k in SUFFIXES}


def encode_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)):
        raise RangeError("depth contains non-finite values")
    if depth.max(initial=0.0) > MAX_DEPTH_M:
        raise RangeError(f"depth {depth.max():.3f} m exceeds the 16-bit millimeter range ({MAX_DEPTH_M} m)")
    if depth.min(initial=0.0) < 0:
        raise RangeError("negative depth cannot be encoded")
    return np.rint(depth * DEPTH_SCALE).astype(np.uint16)


def decode_depth(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float64) / DEPTH_SCALE).astype(np.float32)


def write_sample(sample: Sample, paths: SamplePaths) -> None:
    encoded = encode_depth(sample.depth)
    for p in (paths.rgb, paths.depth, paths.ob):
        p.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(np.ascontiguousarray(sample.rgb, dtype=np.uint8), mode="RGB").save(paths.rgb)
        Image.fromarray(encoded).save(paths.depth)
        Image.fromarray((sample.ob_mask > 0).astype(np.uint8) * 255, mode="L").save(paths.ob)
    except OSError as exc:
        raise DataError(f"cannot write sample files ({exc})") from exc


def _load(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_sample(paths: SamplePaths) -> Sample:
    rgb = _load(paths.rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"{paths.rgb}: expected an RGB image, got shape {rgb.shape}")
    raw = _load(paths.depth)
    if raw.ndim != 2:
        raise DataError(f"{paths.depth}: expected a single-channel 16-bit image")
    ob = _load(paths.ob)
    if ob.ndim != 2:
        raise DataError(f"{paths.ob}: expected a single-channel image")
    if not np.isin(ob, (0, 255)).all():
        raise DataError(f"{paths.ob}: OB mask must contain only 0 and 255")
    depth = decode_depth(raw)
    try:
        return Sample(rgb=rgb.astype(np.uint8), depth=depth, ob_mask=(ob > 0).astype(np.uint8),
                      valid_mask=(raw > 0).astype(np.uint8))
    except DataError as exc:
        raise DataError(f"{paths.rgb}: {exc}") from exc


# --------------------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    sample_id: str
    split: str
    rgb: str
    depth: str
    ob: str

    def paths(self, root: Path) -> SamplePaths:
        return SamplePaths(root / self.rgb, root / self.depth, root / self.ob)


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    generator: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    split_fraction: float = 0.8
    seed: int = 0
    format_version: int = FORMAT_VERSION

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def load(self, name: str) -> list[tuple[str, Sample]]:
        return [(e.sample_id, read_sample(e.paths(self.root))) for e in self.split(name)]

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "depth_encoding": {"dtype": "uint16", "scale": 1.0 / DEPTH_SCALE, "unit": "m"},
            "ob_encoding": {"dtype": "uint8", "positive": 255},
            "split_fraction": self.split_fraction,
            "seed": self.seed,
            "generator": self.generator,
            "samples": [asdict(e) for e in self.entries],
            "errors": self.errors,
        }

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _scan(root: Path) -> dict[str, dict[str, Path]]:
    found: dict[str, dict[str, Path]] = {}
    for path in sorted(root.rglob("*.png")):
        for kind, suffix in SUFFIXES.items():
            if path.name.endswith(suffix):
                sid = path.name[: -len(suffix)]
                if kind in found.setdefault(sid, {}):
                    raise DataError(f"duplicate sample id {sid!r}: {path}")
                found[sid][kind] = path
    return found


def build_manifest(root: str | Path, split_fraction: float = 0.8, seed: int = 0,
                   generator: dict | None = None) -> DatasetManifest:
    """Scan ``root`` for sample triples, split them and file them under train/ and test/.

    Incomplete triples are left in place and reported in ``manifest.errors``.
    """
    root = Path(root)
    if not 0.0 < split_fraction <= 1.0:
        raise ConfigError(f"split_fraction must lie in (0, 1], got {split_fraction}")
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    found = _scan(root)
    complete, errors = [], []
    for sid in sorted(found):
        missing = [k for k in SUFFIXES if k not in found[sid]]
        if missing:
            errors.append({"sample_id": sid, "error": f"missing {', '.join(missing)} file(s)",
                           "files": sorted(str(p.relative_to(root)) for p in found[sid].values())})
            log.warning("excluding incomplete sample %s (missing %s)", sid, missing)
        else:
            complete.append(sid)
    if not complete:
        raise DataError(f"no complete sample triples under {root}")

    order = np.random.default_rng(seed).permutation(len(complete))
    n_train = int(round(len(complete) * split_fraction))
    train_ids = {complete[i] for i in order[:n_train]}

    entries = []
    for sid in complete:
        split = "train" if sid in train_ids else "test"
        target = SamplePaths.for_id(root / split, sid)
        for kind in SUFFIXES:
            src, dst = found[sid][kind], getattr(target, kind)
            if src.resolve() != dst.resolve():
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.move(str(src), str(dst))
        entries.append(ManifestEntry(sid, split, *(str(getattr(target, k).relative_to(root)) for k in SUFFIXES)))
    manifest = DatasetManifest(root, entries, generator or {}, errors, split_fraction, seed)
    manifest.save()
    return manifest


def load_manifest(root: str | Path, verify: bool = True) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json" if root.is_dir() else root
    root = path.parent
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load manifest {path}: {exc}") from exc
    if data.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported manifest format_version {data.get('format_version')!r}")
    entries = [ManifestEntry(**e) for e in data["samples"]]
    ids = [e.sample_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate sample ids")
    if verify:
        for e in entries:
            for kind in SUFFIXES:
                p = root / getattr(e, kind)
                if not p.is_file():
                    raise DataError(f"manifest lists missing file {p}")
    return DatasetManifest(root, entries, data.get("generator", {}), data.get("errors", []),
                           data.get("split_fraction", 0.8), data.get("seed", 0))
