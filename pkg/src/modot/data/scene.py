"""Procedural scenes of layered primitives with exact depth and OB annotations.

Geometry lives in camera coordinates: x right, y down, z forward.  A pixel
``(row, col)`` looks along ``((col - cx) / f, (row - cy) / f, 1)`` with the
principal point at ``(W/2, H/2)``, so the centre pixel lies on the optical
axis.  Because the ray's z component is 1, the ray parameter of a hit is its
z-depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, GenerationError

PRIMITIVE_KINDS = ("rectangle", "slanted_plane", "sphere", "open_box")
TEXTURE_MODES = ("flat", "noise", "stripes")


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    focal: float

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float = 60.0) -> "Camera":
        return cls(width, height, 0.5 * width / math.tan(math.radians(fov_deg) / 2))

    @property
    def cx(self) -> float:
        return self.width / 2

    @property
    def cy(self) -> float:
        return self.height / 2

    def rays(self) -> np.ndarray:
        """Unnormalized ray directions (H, W, 3) with unit z component."""
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        x = (cols - self.cx) / self.focal
        y = (rows - self.cy) / self.focal
        return np.stack([x, y, np.ones_like(x)], axis=-1).astype(np.float64)

    def unproject(self, col: float, row: float, z: float) -> np.ndarray:
        return np.array([(col - self.cx) / self.focal * z, (row - self.cy) / self.focal * z, z])


@dataclass(frozen=True)
class Material:
    mode: str = "flat"
    color: tuple[float, float, float] = (0.7, 0.7, 0.7)
    frequency: float = 8.0
    phase: float = 0.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed: int = 0

    def albedo(self, points: np.ndarray) -> np.ndarray:
        base = np.asarray(self.color, dtype=np.float64)
        if self.mode == "flat":
            mod = np.ones(points.shape[:-1])
        elif self.mode == "stripes":
            s = points @ np.asarray(self.direction)
            mod = 0.6 + 0.4 * np.sign(np.sin(self.frequency * s + self.phase))
        elif self.mode == "noise":
            rng = np.random.default_rng(self.seed)
            mod = np.zeros(points.shape[:-1])
            for octave in range(4):
                k = rng.normal(size=3) * self.frequency * (1.7 ** octave)
                mod += np.sin(points @ k + rng.uniform(0, 2 * np.pi)) / (1.6 ** octave)
            mod = 0.75 + 0.2 * mod / 2.0
        else:
            raise ConfigError(f"unknown texture mode {self.mode!r}")
        return np.clip(mod[..., None] * base, 0.0, 1.0)


def _quad_hit(rays, center, u, v):
    normal = np.cross(u, v)
    normal = normal / np.linalg.norm(normal)
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, (center @ normal) / denom, np.inf)
    with np.errstate(invalid="ignore"):
        p = np.where(np.isfinite(t)[..., None], t[..., None] * rays, center) - center
    a = (p @ u) / (u @ u)
    b = (p @ v) / (v @ v)
    hit = (t > 0) & (np.abs(a) <= 1) & (np.abs(b) <= 1)
    t = np.where(hit, t, np.inf)
    return t, np.broadcast_to(normal, rays.shape)


@dataclass(frozen=True)
class Quad:
    """Planar parallelogram ``center + a*u + b*v`` with ``|a|, |b| <= 1``."""

    center: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]
    material: Material = field(default_factory=Material)
    kind: str = "slanted_plane"

    @classmethod
    def rectangle(cls, center, half_width, half_height, material=None) -> "Quad":
        return cls(tuple(center), (half_width, 0.0, 0.0), (0.0, half_height, 0.0),
                   material or Material(), kind="rectangle")

    def intersect(self, rays):
        return _quad_hit(rays, np.asarray(self.center, float), np.asarray(self.u, float),
                         np.asarray(self.v, float))

    def depth_span(self) -> tuple[float, float]:
        c, u, v = (np.asarray(a, float) for a in (self.center, self.u, self.v))
        zs = [c[2] + su * u[2] + sv * v[2] for su in (-1, 1) for sv in (-1, 1)]
        return min(zs), max(zs)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    material: Material = field(default_factory=Material)
    kind: str = "sphere"

    def intersect(self, rays):
        c = np.asarray(self.center, float)
        a = np.einsum("...i,...i->...", rays, rays)
        b = -2.0 * (rays @ c)
        cc = c @ c - self.radius ** 2
        disc = b * b - 4 * a * cc
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        t = np.where(hit, (-b - root) / (2 * a), np.inf)
        t = np.where(t > 0, t, np.inf)
        with np.errstate(invalid="ignore"):
            p = np.where(np.isfinite(t)[..., None], t[..., None] * rays, c)
        return t, (p - c) / self.radius

    def depth_span(self) -> tuple[float, float]:
        return self.center[2] - self.radius, self.center[2] + self.radius


@dataclass(frozen=True)
class OpenBox:
    """Axis-aligned box with its camera-facing side removed."""

    center: tuple[float, float, float]
    half_size: tuple[float, float, float]
    material: Material = field(default_factory=Material)
    kind: str = "open_box"

    def faces(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        c = np.asarray(self.center, float)
        hx, hy, hz = self.half_size
        ex, ey, ez = np.array([hx, 0, 0.0]), np.array([0, hy, 0.0]), np.array([0, 0, hz])
        return [
            (c + ez, ex, ey),  # back
            (c - ex, ey, ez),  # left
            (c + ex, ey, ez),  # right
            (c - ey, ex, ez),  # top
            (c + ey, ex, ez),  # bottom
        ]

    def intersect(self, rays):
        best_t = np.full(rays.shape[:-1], np.inf)
        best_n = np.zeros(rays.shape)
        for center, u, v in self.faces():
            t, n = _quad_hit(rays, center, u, v)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n = np.where(closer[..., None], n, best_n)
        return best_t, best_n

    def depth_span(self) -> tuple[float, float]:
        return self.center[2] - self.half_size[2], self.center[2] + self.half_size[2]


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    width: int
    height: int
    background_depth: float
    background: Material = field(default_factory=lambda: Material(color=(0.55, 0.5, 0.45)))
    light: tuple[float, float, float] = (0.4, -0.6, 1.0)
    fov_deg: float = 60.0

    def camera(self) -> Camera:
        return Camera.from_fov(self.width, self.height, self.fov_deg)


@dataclass(frozen=True)
class SceneSpec:
    image_width: int = 64
    image_height: int = 64
    num_primitives: int = 3
    kinds: tuple[str, ...] = PRIMITIVE_KINDS
    depth_range: tuple[float, float] = (1.0, 8.0)
    textures: tuple[str, ...] = TEXTURE_MODES
    rng_seed: int = 0
    fov_deg: float = 60.0

    def validate(self) -> "SceneSpec":
        if self.image_width <= 0 or self.image_height <= 0 or self.image_width % 32 or self.image_height % 32:
            raise ConfigError(
                f"image size must be a positive multiple of 32, got {self.image_width}x{self.image_height}")
        if self.num_primitives < 1:
            raise ConfigError("num_primitives must be >= 1")
        z0, z1 = self.depth_range
        if not 0 < z0 < z1:
            raise ConfigError(f"depth_range must satisfy 0 < z_min < z_max, got {self.depth_range}")
        if z1 - z0 < 1.0:
            raise ConfigError("depth_range must span at least 1 m to separate layers")
        bad = [k for k in self.kinds if k not in PRIMITIVE_KINDS] + [
            t for t in self.textures if t not in TEXTURE_MODES]
        if bad or not self.kinds or not self.textures:
            raise ConfigError(f"unknown or empty primitive kinds / textures: {bad}")
        return self


@dataclass
class Sample:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32 meters
    ob_mask: np.ndarray  # (H, W) uint8 {0, 1}
    valid_mask: np.ndarray  # (H, W) uint8 {0, 1}
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.depth.shape
        if self.rgb.shape[:2] != shape or self.ob_mask.shape != shape or self.valid_mask.shape != shape:
            raise GenerationError("rgb/depth/ob/valid arrays must share H x W")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


# --------------------------------------------------------------------------- generation

GAP = 0.6  # minimum depth separation (m) between an occluder and the surface behind it


def _material(rng, textures) -> Material:
    return Material(
        mode=str(textures[rng.integers(len(textures))]),
        color=tuple(float(c) for c in rng.uniform(0.15, 0.95, size=3)),
        frequency=float(rng.uniform(4.0, 14.0)),
        phase=float(rng.uniform(0, 2 * np.pi)),
        direction=tuple(float(c) for c in _unit(rng.normal(size=3))),
        seed=int(rng.integers(2 ** 31)),
    )


def _unit(v):
    return v / np.linalg.norm(v)


def _make_primitive(kind, rng, cam: Camera, col, row, z_front, z_back_limit, textures):
    size_px = rng.uniform(0.25, 0.5) * min(cam.width, cam.height)
    mat = _material(rng, textures)
    if kind == "rectangle":
        half = 0.5 * size_px * z_front / cam.focal
        aspect = rng.uniform(0.6, 1.6)
        c = cam.unproject(col, row, z_front)
        return Quad.rectangle(tuple(c), half * aspect, half / aspect, mat)
    if kind == "sphere":
        room = z_back_limit - z_front
        radius = min(0.5 * size_px * z_front / cam.focal, 0.45 * room)
        c = cam.unproject(col, row, z_front + radius)
        return Sphere(tuple(c), float(radius), mat)
    if kind == "open_box":
        room = z_back_limit - z_front
        hx = 0.5 * size_px * z_front / cam.focal
        hy = hx * rng.uniform(0.7, 1.3)
        hz = min(hx * rng.uniform(0.6, 1.2), 0.45 * room)
        c = cam.unproject(col, row, z_front + hz)
        return OpenBox(tuple(c), (float(hx), float(hy), float(hz)), mat)
    # slanted plane: tilt about a random in-plane axis, keeping its nearest corner at z_front
    half = 0.5 * size_px * z_front / cam.focal
    tilt = math.radians(rng.uniform(20, 55))
    yaw = rng.uniform(0, 2 * np.pi)
    axis_u = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    axis_v = np.array([-math.sin(yaw), math.cos(yaw), 0.0]) * math.cos(tilt) + np.array([0, 0, math.sin(tilt)])
    u, v = axis_u * half, axis_v * half
    dz = abs(v[2])
    dz = min(dz, 0.45 * (z_back_limit - z_front))
    v = np.array([v[0], v[1], math.copysign(dz, v[2])])
    c = cam.unproject(col, row, z_front + dz)
    return Quad(tuple(c), tuple(u), tuple(v), mat, kind="slanted_plane")


def _hits(prim, rays):
    t, _ = prim.intersect(rays)
    return t


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample a scene deterministically from ``spec.rng_seed``.

    With two or more primitives the second is placed over the first's image
    footprint and nearer to the camera, so at least one occluding pair exists.
    """
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    cam = Camera.from_fov(spec.image_width, spec.image_height, spec.fov_deg)
    rays = cam.rays()
    z_min, z_max = spec.depth_range
    for _attempt in range(64):
        prims = []
        for k in range(spec.num_primitives):
            kind = str(spec.kinds[rng.integers(len(spec.kinds))])
            if k == 1:
                # occluder of primitive 0: shifted footprint, strictly nearer
                span0 = prims[0].depth_span()
                z_hi = span0[0] - GAP
                if z_hi <= z_min:
                    break
                z_front = rng.uniform(z_min, z_hi)
                back_limit = span0[0] - GAP
                t0 = _hits(prims[0], rays)
                rows, cols = np.nonzero(np.isfinite(t0))
                if rows.size == 0:
                    break
                i = rng.integers(rows.size)
                col = cols[i] + rng.uniform(-0.15, 0.15) * cam.width
                row = rows[i] + rng.uniform(-0.15, 0.15) * cam.height
            else:
                # first primitive sits deep so an occluder fits in front of it
                lo = z_min + (GAP + 0.5 if k == 0 and spec.num_primitives > 1 else 0.0)
                z_front = rng.uniform(min(lo, z_max - GAP - 0.2), z_max - GAP - 0.2)
                back_limit = z_max - GAP
                col = rng.uniform(0.2, 0.8) * cam.width
                row = rng.uniform(0.2, 0.8) * cam.height
            prims.append(_make_primitive(kind, rng, cam, col, row, z_front, back_limit, spec.textures))
        if len(prims) != spec.num_primitives:
            continue
        if spec.num_primitives >= 2:
            t0, t1 = _hits(prims[0], rays), _hits(prims[1], rays)
            if not np.any(np.isfinite(t0) & np.isfinite(t1) & (t1 < t0)):
                continue
            # the occluded primitive must remain partly visible
            if not np.any(np.isfinite(t0) & ~np.isfinite(t1)):
                continue
        return Scene(tuple(prims), spec.image_width, spec.image_height, float(z_max),
                     background=_material(rng, spec.textures), fov_deg=spec.fov_deg)
    raise GenerationError(f"could not place an occluding pair for seed {spec.rng_seed}")


# --------------------------------------------------------------------------- rendering

def render_buffers(scene: Scene, camera: Camera | None = None) -> dict[str, np.ndarray]:
    """Ray-cast ``scene``; returns depth, normals (facing the camera), primitive ids and rgb."""
    if not scene.primitives:
        raise GenerationError("cannot render an empty scene")
    cam = camera or scene.camera()
    rays = cam.rays()
    shape = rays.shape[:-1]
    depth = np.full(shape, float(scene.background_depth))
    normals = np.broadcast_to(np.array([0.0, 0.0, -1.0]), rays.shape).copy()
    ids = np.full(shape, -1, dtype=np.int32)
    for i, prim in enumerate(scene.primitives):
        t, n = prim.intersect(rays)
        closer = t < depth
        depth = np.where(closer, t, depth)
        normals = np.where(closer[..., None], n, normals)
        ids[closer] = i
    # orient normals toward the viewer
    facing = np.einsum("...i,...i->...", normals, rays)
    normals = np.where((facing > 0)[..., None], -normals, normals)

    points = depth[..., None] * rays
    albedo = scene.background.albedo(points)
    for i, prim in enumerate(scene.primitives):
        sel = ids == i
        if sel.any():
            albedo[sel] = prim.material.albedo(points[sel])
    light = _unit(np.asarray(scene.light, float))
    diffuse = np.clip(-(normals @ light), 0.0, 1.0)
    shade = 0.35 + 0.65 * diffuse
    rgb = np.clip(albedo * shade[..., None] * 255.0 + 0.5, 0, 255).astype(np.uint8)
    return {"depth": depth, "normals": normals, "ids": ids, "rgb": rgb, "rays": rays}


def ob_components(depth: np.ndarray, normals: np.ndarray | None, contrast_threshold: float,
                  rim_angle_deg: float = 5.0, camera: Camera | None = None):
    """Return ``(discontinuity_mask, rim_mask)`` as boolean arrays.

    A pixel is a discontinuity pixel when some 4-neighbour lies more than
    ``contrast_threshold`` meters behind it.  With normals, the pair must also
    be geometrically disconnected: the chord between the two surface points
    has a component above ``contrast_threshold`` along their mean normal
    (zero on any plane or sphere, so steep smooth flanks are not boundaries).
    A pixel is a rim pixel when its surface normal is within ``rim_angle_deg``
    of perpendicular to its view ray.
    """
    if not contrast_threshold > 0:
        raise ConfigError(f"contrast threshold must be positive, got {contrast_threshold}")
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    rim = np.zeros((H, W), dtype=bool)
    n = points = None
    if normals is not None:
        cam = camera or Camera.from_fov(W, H)
        rays = cam.rays()
        points = depth[..., None] * rays
        unit_rays = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
        n = np.asarray(normals, dtype=np.float64)
        n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
        cos = np.abs(np.einsum("...i,...i->...", n, unit_rays))
        rim = cos < math.sin(math.radians(rim_angle_deg))

    def edge(near, far):
        # near/far: index tuples selecting the nearer pixel and its neighbour
        hit = depth[far] - depth[near] > contrast_threshold
        if n is None:
            return hit
        m = n[near] + n[far]
        norm = np.linalg.norm(m, axis=-1)
        offset = np.abs(np.einsum("...i,...i->...", points[near] - points[far], m)) / np.maximum(norm, 1e-12)
        return hit & ((norm < 1e-9) | (offset > contrast_threshold))

    disc = np.zeros((H, W), dtype=bool)
    a, b = np.s_[:-1, :], np.s_[1:, :]
    disc[a] |= edge(a, b)
    disc[b] |= edge(b, a)
    a, b = np.s_[:, :-1], np.s_[:, 1:]
    disc[a] |= edge(a, b)
    disc[b] |= edge(b, a)
    return disc, rim


def derive_ob_from_depth(depth, normals, contrast_threshold: float, rim_angle_deg: float = 5.0,
                         camera: Camera | None = None) -> np.ndarray:
    disc, rim = ob_components(depth, normals, contrast_threshold, rim_angle_deg, camera)
    return (disc | rim).astype(np.uint8)


def instance_contours(ids: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour of a different primitive id."""
    out = np.zeros(ids.shape, dtype=bool)
    diff_v = ids[1:, :] != ids[:-1, :]
    diff_h = ids[:, 1:] != ids[:, :-1]
    out[1:, :] |= diff_v
    out[:-1, :] |= diff_v
    out[:, 1:] |= diff_h
    out[:, :-1] |= diff_h
    return out.astype(np.uint8)


def render_sample(scene: Scene, camera: Camera | None = None, contrast_threshold: float = 0.05,
                  rim_angle_deg: float = 5.0) -> Sample:
    cam = camera or scene.camera()
    buf = render_buffers(scene, cam)
    disc, rim = ob_components(buf["depth"], buf["normals"], contrast_threshold, rim_angle_deg, cam)
    depth = buf["depth"].astype(np.float32)
    return Sample(
        rgb=buf["rgb"],
        depth=depth,
        ob_mask=(disc | rim).astype(np.uint8),
        valid_mask=np.ones(depth.shape, dtype=np.uint8),
        extras={
            "normals": buf["normals"].astype(np.float32),
            "primitive_ids": buf["ids"],
            "ob_discontinuity": disc.astype(np.uint8),
            "ob_rim": rim.astype(np.uint8),
            "instance_contour": instance_contours(buf["ids"]),
        },
    )


def synth_sample(spec: SceneSpec, contrast_threshold: float = 0.05, rim_angle_deg: float = 5.0) -> Sample:
    scene = generate_scene(spec)
    return render_sample(scene, scene.camera(), contrast_threshold, rim_angle_deg)
