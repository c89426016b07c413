"""Deterministic synthetic scene generator and dataset splits.

Each scene is a closed room (floor, ceiling, two side walls, back wall)
with floating axis-aligned boxes and spheres, ray-cast from a pinhole
camera at the origin looking along +z. Depth is z-depth, normals are the
analytic surface normals, and color is Lambert shading times a procedural
sinusoidal texture whose phase has nothing to do with the geometry, so
color-texture edges and depth edges land in different places.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .imageio import read_pfm, read_ppm, write_pfm, write_ppm
from .metrics import PinholeCamera

ROOM_HALF_X = 2.0
ROOM_HALF_Y = 2.0
ROOM_DEPTH = 7.0
OBJECT_NEAR = 2.4
OBJECT_FAR = 6.0
MIN_DEPTH = 0.3
MAX_DEPTH = 10.0

_LIGHT = np.array([0.35, -0.75, -0.56])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
_WALL_COLORS = {
    "floor": (0.55, 0.42, 0.30),
    "ceiling": (0.72, 0.72, 0.70),
    "left": (0.62, 0.32, 0.30),
    "right": (0.30, 0.45, 0.62),
    "back": (0.50, 0.58, 0.45),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    resolution: tuple = (64, 64)
    object_count: int = 4
    texture_frequency: float = 3.0

    def __post_init__(self):
        w, h = self.resolution
        if w % 32 or h % 32 or w <= 0 or h <= 0:
            raise ParameterError(f"resolution {self.resolution} must be "
                                 "positive and divisible by 32")
        if self.object_count < 1:
            raise ParameterError("object_count must be at least 1")
        if not self.texture_frequency > 0:
            raise ParameterError("texture_frequency must be positive")


@dataclass
class Sample:
    color: np.ndarray     # (3,H,W) in [0,1]
    depth: np.ndarray     # (1,H,W) meters
    normals: np.ndarray   # (3,H,W) unit vectors, toward camera
    intrinsics: PinholeCamera


def camera_for(resolution) -> PinholeCamera:
    w, h = resolution
    return PinholeCamera(fx=float(w), fy=float(w),
                         cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)


def _streams(seed):
    tex_ss, obj_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(tex_ss), np.random.default_rng(obj_ss)


def texture_pattern(spec: SceneSpec) -> np.ndarray:
    """The image-space texture field in [-1,1]; purely a function of pixel
    coordinates and the seed, never of the scene geometry."""
    w, h = spec.resolution
    tex_rng, _ = _streams(spec.seed)
    phase_u, phase_v = tex_rng.uniform(0.0, 2.0 * np.pi, 2)
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    f = spec.texture_frequency
    return (np.sin(2.0 * np.pi * f * uu / w + phase_u)
            * np.sin(2.0 * np.pi * 0.75 * f * vv / h + phase_v))


def _draw_objects(spec: SceneSpec, rng):
    slot = (OBJECT_FAR - OBJECT_NEAR) / spec.object_count
    objects = []
    for i in range(spec.object_count):
        kind = "box" if rng.integers(0, 2) == 0 else "sphere"
        x = rng.uniform(-1.2, 1.2)
        y = rng.uniform(-0.9, 0.9)
        z_jitter = rng.uniform(0.0, 1.0)
        hx = rng.uniform(0.25, 0.55)
        hy = rng.uniform(0.25, 0.55)
        hz = slot * rng.uniform(0.15, 0.25)
        color = rng.uniform(0.25, 0.85, 3)
        # one depth band per object keeps silhouette steps large
        z = OBJECT_NEAR + slot * i + 0.2 * slot * z_jitter
        center = np.array([x, y, z])
        if kind == "box":
            objects.append(("box", center, np.array([hx, hy, hz]), color))
        else:
            objects.append(("sphere", center, hz, color))
    return objects


def generate_scene(spec: SceneSpec) -> Sample:
    w, h = spec.resolution
    cam = camera_for(spec.resolution)
    _, obj_rng = _streams(spec.seed)

    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dx = (uu - cam.cx) / cam.fx
    dy = (vv - cam.cy) / cam.fy
    direction = np.stack([dx, dy, np.ones_like(dx)])

    depth = np.full((h, w), ROOM_DEPTH)
    normals = np.zeros((3, h, w))
    normals[2] = -1.0
    base = np.empty((3, h, w))
    base[:] = np.asarray(_WALL_COLORS["back"])[:, None, None]

    def accept(t_new, mask, n_new, color):
        closer = mask & (t_new < depth)
        depth[closer] = t_new[closer]
        for k in range(3):
            channel = n_new[k] if np.ndim(n_new[k]) else np.full((h, w), n_new[k])
            normals[k][closer] = channel[closer]
            base[k][closer] = color[k]

    with np.errstate(divide="ignore", invalid="ignore"):
        accept(ROOM_HALF_Y / dy, dy > 0, (0.0, -1.0, 0.0), _WALL_COLORS["floor"])
        accept(-ROOM_HALF_Y / dy, dy < 0, (0.0, 1.0, 0.0), _WALL_COLORS["ceiling"])
        accept(ROOM_HALF_X / dx, dx > 0, (-1.0, 0.0, 0.0), _WALL_COLORS["right"])
        accept(-ROOM_HALF_X / dx, dx < 0, (1.0, 0.0, 0.0), _WALL_COLORS["left"])

    for kind, center, size, color in _draw_objects(spec, obj_rng):
        if kind == "box":
            lo = center - size
            hi = center + size
            near = np.full((h, w), -np.inf)
            far = np.full((h, w), np.inf)
            for axis in range(3):
                d = direction[axis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ta = lo[axis] / d
                    tb = hi[axis] / d
                zero = d == 0
                inside = zero & (lo[axis] <= 0.0) & (0.0 <= hi[axis])
                a_near = np.where(zero, np.where(inside, -np.inf, np.inf),
                                  np.minimum(ta, tb))
                a_far = np.where(zero, np.where(inside, np.inf, -np.inf),
                                 np.maximum(ta, tb))
                near = np.maximum(near, a_near)
                far = np.minimum(far, a_far)
            hit = (far >= near) & (near > 0.05)
            t_new = np.where(hit, near, np.inf)
            point = t_new[None] * direction
            q = (point - center[:, None, None]) / size[:, None, None]
            face = np.argmax(np.abs(q), axis=0)
            n_new = np.zeros((3, h, w))
            for axis in range(3):
                sel = face == axis
                n_new[axis][sel] = np.sign(q[axis][sel])
            accept(t_new, hit, n_new, color)
        else:
            radius = float(size)
            a_coef = np.sum(direction * direction, axis=0)
            b_coef = -2.0 * np.tensordot(center, direction, axes=(0, 0))
            c_coef = float(center @ center) - radius * radius
            disc = b_coef * b_coef - 4.0 * a_coef * c_coef
            hit = disc >= 0
            with np.errstate(invalid="ignore"):
                t_new = (-b_coef - np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * a_coef)
            hit &= t_new > 0.05
            t_new = np.where(hit, t_new, np.inf)
            n_new = (t_new[None] * direction - center[:, None, None]) / radius
            accept(t_new, hit, n_new, color)

    # entry hits always face the camera; flip is a safety net
    facing_away = np.sum(normals * direction, axis=0) > 0
    normals[:, facing_away] *= -1.0

    assert np.all(np.isfinite(depth))
    assert depth.min() > MIN_DEPTH and depth.max() <= MAX_DEPTH

    shade = 0.35 + 0.65 * np.clip(np.tensordot(_LIGHT, normals, axes=(0, 0)),
                                  0.0, None)
    modulation = 0.72 + 0.28 * texture_pattern(spec)
    color = np.clip(base * shade * modulation, 0.0, 1.0)
    return Sample(color=color, depth=depth[None].copy(), normals=normals,
                  intrinsics=cam)


# ---------------------------------------------------------------- splits

MANIFEST_NAME = "manifest.tsv"
_MANIFEST_HEADER = "index\tseed\tcolor\tdepth\tnormals\tfx\tfy\tcx\tcy"


def sample_seed(split_seed: int, index: int) -> int:
    return split_seed + index


def generate_split(seed: int, count: int, template: SceneSpec):
    if count < 1:
        raise ParameterError("split needs at least one sample")
    return [generate_scene(replace(template, seed=sample_seed(seed, i)))
            for i in range(count)]


def write_split(root, split: str, seed: int, count: int,
                template: SceneSpec) -> Path:
    if count < 1:
        raise ParameterError("split needs at least one sample")
    directory = Path(root) / split
    directory.mkdir(parents=True, exist_ok=True)
    lines = [_MANIFEST_HEADER]
    for i in range(count):
        sample = generate_scene(replace(template, seed=sample_seed(seed, i)))
        names = (f"{i:04d}_color.ppm", f"{i:04d}_depth.pfm",
                 f"{i:04d}_normals.pfm")
        write_ppm(directory / names[0], sample.color)
        write_pfm(directory / names[1], sample.depth)
        write_pfm(directory / names[2], sample.normals)
        cam = sample.intrinsics
        lines.append(f"{i}\t{sample_seed(seed, i)}\t" + "\t".join(names)
                     + f"\t{cam.fx:.10g}\t{cam.fy:.10g}"
                     + f"\t{cam.cx:.10g}\t{cam.cy:.10g}")
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")
    return directory


def load_split(root, split: str):
    directory = Path(root) / split
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise FormatError(f"missing manifest: {manifest}")
    lines = manifest.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise FormatError(f"bad manifest header in {manifest}")
    samples = []
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != 9:
            raise FormatError(f"bad manifest row in {manifest}: {line!r}")
        _, _, color_name, depth_name, normals_name, fx, fy, cx, cy = parts
        color = read_ppm(directory / color_name)
        depth = read_pfm(directory / depth_name).astype(float)
        normals = read_pfm(directory / normals_name).astype(float)
        samples.append(Sample(color=color, depth=depth[None],
                              normals=normals,
                              intrinsics=PinholeCamera(float(fx), float(fy),
                                                       float(cx), float(cy))))
    return samples
