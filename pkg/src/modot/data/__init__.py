from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import (DatasetManifest, SamplePaths, build_manifest, decode_depth, encode_depth,
                 load_manifest, read_sample, write_sample)
from .scene import (Camera, Material, OpenBox, Quad, Sample, Scene, SceneSpec, Sphere,
                    derive_ob_from_depth, generate_scene, ob_components, render_sample, synth_sample)

__all__ = [
    "Camera", "DatasetManifest", "Material", "OpenBox", "Quad", "Sample", "SamplePaths", "Scene",
    "SceneSpec", "Sphere", "build_manifest", "decode_depth", "derive_ob_from_depth", "encode_depth",
    "generate_dataset", "generate_scene", "load_manifest", "ob_components", "read_sample",
    "render_sample", "sample_spec", "synth_sample", "write_sample",
]


def sample_spec(data_cfg, seed: int, index: int) -> SceneSpec:
    """Scene spec for sample ``index`` of a dataset generated with ``seed``."""
    state = np.random.SeedSequence([seed, index]).generate_state(2)
    lo, hi = data_cfg.min_primitives, data_cfg.max_primitives
    return SceneSpec(
        image_width=data_cfg.width,
        image_height=data_cfg.height,
        num_primitives=lo + int(state[0]) % (hi - lo + 1),
        kinds=tuple(data_cfg.kinds),
        depth_range=tuple(data_cfg.depth_range),
        textures=tuple(data_cfg.textures),
        rng_seed=int(state[1]),
        fov_deg=data_cfg.fov_deg,
    )


def generate_dataset(cfg, out_dir: str | Path) -> DatasetManifest:
    """Render ``cfg.data.num_samples`` samples under ``out_dir`` and write the manifest."""
    out = Path(out_dir)
    staging = out / "_staging"
    d = cfg.data
    for i in range(d.num_samples):
        sample = synth_sample(sample_spec(d, cfg.seed, i), d.contrast_threshold, d.rim_angle_deg)
        write_sample(sample, SamplePaths.for_id(staging, f"{i:06d}"))
    manifest = build_manifest(out, d.split_fraction, seed=cfg.seed,
                              generator={"seed": cfg.seed, "data": cfg.to_dict()["data"]})
    if staging.exists() and not any(staging.iterdir()):
        staging.rmdir()
    return manifest
