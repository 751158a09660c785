"""Procedural multi-view-plus-depth scenes.

Textured analytic primitives (planes, spheres, axis-aligned boxes) are
ray-cast from calibrated pinhole cameras. Camera convention: x right, y down,
z forward; a pixel at column ``u`` and row ``v`` has its center at image
coordinates ``(u, v)``. Depth is camera-space z, and 0 marks "no hit".

A scene on disk is a manifest JSON plus one PPM image and one PFM depth map
per (view, frame); see :func:`write_scene` and :func:`load_manifest`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imgio
from .imgio import NormParams

BACKGROUND = 0.5
ARC_DEGREES = 60.0

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise ValueError("R is not orthonormal")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def project(self, points: np.ndarray):
        """World points ``(..., 3)`` to pixel coordinates ``x, y`` and camera depth ``z``."""
        pc = points @ self.R.T + self.t
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.fx * pc[..., 0] / z + self.cx
            y = self.fy * pc[..., 1] / z + self.cy
        return x, y, z

    def unproject(self, x, y, depth) -> np.ndarray:
        """Pixel coordinates plus camera depth back to world points ``(..., 3)``."""
        x, y, depth = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                          np.asarray(depth, float))
        pc = np.stack([(x - self.cx) / self.fx * depth,
                       (y - self.cy) / self.fy * depth,
                       depth], axis=-1)
        return (pc - self.t) @ self.R

    def ray_directions(self, x, y) -> np.ndarray:
        """World-space ray directions whose camera-space z component is 1."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        dc = np.stack([(x - self.cx) / self.fx, (y - self.cy) / self.fy, np.ones_like(x)], axis=-1)
        return dc @ self.R

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   np.asarray(d["R"], dtype=np.float64), np.asarray(d["t"], dtype=np.float64))


def look_at(center, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera ``(R, t)`` for a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= norm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ center


def camera_arc(n, radius, lookat=(0.0, 0.0, 0.0), height=0.0, *, width=64, height_px=None,
               fov_deg=50.0, arc_deg=ARC_DEGREES):
    """``n`` cameras evenly spaced on a horizontal arc, all aimed at ``lookat``.

    The arc is centered on the +z side of ``lookat``; ``height`` is the world y
    coordinate of the camera centers.
    """
    if n < 2:
        raise ValueError(f"need at least 2 cameras, got {n}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    height_px = width if height_px is None else height_px
    lookat = np.asarray(lookat, dtype=np.float64)
    focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    half = math.radians(arc_deg) / 2.0
    cams = []
    for phi in np.linspace(-half, half, n):
        center = np.array([lookat[0] + radius * math.sin(phi), height,
                           lookat[2] + radius * math.cos(phi)])
        R, t = look_at(center, lookat)
        cams.append(Camera(focal, focal, (width - 1) / 2.0, (height_px - 1) / 2.0, R, t))
    return cams


# ---------------------------------------------------------------------------
# textures


@dataclass(frozen=True)
class Texture:
    kind: str = "checker"  # "checker" | "noise"
    scale: float = 4.0
    color_a: tuple = (0.9, 0.9, 0.9)
    color_b: tuple = (0.1, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checker", "noise"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "color_a": list(self.color_a),
                "color_b": list(self.color_b), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "checker"), scale=float(d.get("scale", 4.0)),
                   color_a=tuple(d.get("color_a", (0.9, 0.9, 0.9))),
                   color_b=tuple(d.get("color_b", (0.1, 0.1, 0.1))), seed=int(d.get("seed", 0)))


def _hash_unit(seed, ix, iy, channel):
    """Deterministic lattice hash to ``[0, 1]`` (splitmix64 finalizer)."""
    with np.errstate(over="ignore"):
        h = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        h = h ^ (ix.astype(np.int64).astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9))
        h = h ^ (iy.astype(np.int64).astype(np.uint64) * np.uint64(0x94D049BB133111EB))
        h = h ^ np.uint64(channel * 0x2545F4914F6CDD1D & 0xFFFFFFFFFFFFFFFF)
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(seed, u, v):
    fu, fv = np.floor(u), np.floor(v)
    su, sv = u - fu, v - fv
    su = su * su * (3 - 2 * su)
    sv = sv * sv * (3 - 2 * sv)
    iu, iv = fu.astype(np.int64), fv.astype(np.int64)
    out = np.empty(u.shape + (3,))
    for c in range(3):
        a = _hash_unit(seed, iu, iv, c)
        b = _hash_unit(seed, iu + 1, iv, c)
        d = _hash_unit(seed, iu, iv + 1, c)
        e = _hash_unit(seed, iu + 1, iv + 1, c)
        out[..., c] = (a * (1 - su) + b * su) * (1 - sv) + (d * (1 - su) + e * su) * sv
    return np.clip(out, 0.0, 1.0)


def texture_eval(texture: Texture, u, v) -> np.ndarray:
    """RGB color of ``texture`` at surface coordinates ``(u, v)``; shape ``u.shape + (3,)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if texture.kind == "checker":
        parity = (np.floor(u * texture.scale) + np.floor(v * texture.scale)).astype(np.int64) % 2
        a = np.asarray(texture.color_a, dtype=np.float64)
        b = np.asarray(texture.color_b, dtype=np.float64)
        return np.where(parity[..., None] == 0, a, b)
    # colors span color_a..color_b so scenes can keep noise low-contrast
    n = _value_noise(texture.seed, u * texture.scale, v * texture.scale)
    a = np.asarray(texture.color_a, dtype=np.float64)
    b = np.asarray(texture.color_b, dtype=np.float64)
    return np.clip(a + (b - a) * n, 0.0, 1.0)


# ---------------------------------------------------------------------------
# primitives


def _tangent_basis(normal):
    n = normal / np.linalg.norm(normal)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


@dataclass(frozen=True)
class Primitive:
    """An analytic surface.

    ``plane``: ``a`` = point, ``b`` = normal. ``sphere``: ``a`` = center,
    ``radius``. ``box``: ``a`` = min corner, ``b`` = max corner.
    """

    kind: str
    a: tuple
    b: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if self.kind == "plane":
            if np.linalg.norm(b) == 0:
                raise ValueError("plane normal must be nonzero")
        elif self.kind == "sphere":
            if self.radius <= 0:
                raise ValueError("sphere radius must be positive")
        elif self.kind == "box":
            if not np.all(a < b):
                raise ValueError("box min corner must be below max corner")
        else:
            raise ValueError(f"unknown primitive kind {self.kind!r}")

    def moved(self, offset) -> "Primitive":
        offset = np.asarray(offset, dtype=np.float64)
        a = tuple((np.asarray(self.a) + offset).tolist())
        b = self.b if self.kind == "plane" else tuple((np.asarray(self.b) + offset).tolist())
        return replace(self, a=a, b=b)

    def intersect(self, origin, dirs):
        """Nearest positive ray parameter per ray (``inf`` on miss) and texture coords."""
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if self.kind == "plane":
            return self._hit_plane(a, b, origin, dirs)
        if self.kind == "sphere":
            return self._hit_sphere(a, origin, dirs)
        return self._hit_box(a, b, origin, dirs)

    def _hit_plane(self, point, normal, origin, dirs):
        n = normal / np.linalg.norm(normal)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((point - origin) @ n) / denom
        t = np.where((np.abs(denom) > 1e-12) & (t > 1e-9), t, np.inf)
        t1, t2 = _tangent_basis(n)
        rel = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs - point
        return t, rel @ t1, rel @ t2

    def _hit_sphere(self, center, origin, dirs):
        oc = origin - center
        qa = np.einsum("...i,...i->...", dirs, dirs)
        qb = 2.0 * (dirs @ oc)
        qc = oc @ oc - self.radius ** 2
        disc = qb * qb - 4 * qa * qc
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_near = (-qb - sq) / (2 * qa)
        t_far = (-qb + sq) / (2 * qa)
        t = np.where(t_near > 1e-9, t_near, np.where(t_far > 1e-9, t_far, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        p = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs - center
        lon = np.arctan2(p[..., 0], p[..., 2])
        lat = np.arccos(np.clip(p[..., 1] / self.radius, -1.0, 1.0))
        return t, lon * self.radius, lat * self.radius

    def _hit_box(self, lo, hi, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (lo - origin) * inv
            t1 = (hi - origin) * inv
        tmin = np.minimum(t0, t1)
        tmax = np.maximum(t0, t1)
        tmin = np.where(np.isnan(tmin), -np.inf, tmin)
        tmax = np.where(np.isnan(tmax), np.inf, tmax)
        t_enter = tmin.max(axis=-1)
        t_exit = tmax.min(axis=-1)
        hit = (t_enter <= t_exit) & (t_exit > 1e-9)
        t = np.where(hit, np.where(t_enter > 1e-9, t_enter, t_exit), np.inf)
        axis = np.where(t_enter > 1e-9, tmin.argmax(axis=-1), tmax.argmin(axis=-1))
        p = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs - lo
        # face coordinates: the two axes other than the face normal
        u = np.where(axis == 0, p[..., 2], p[..., 0])
        v = np.where(axis == 1, p[..., 2], p[..., 1])
        return t, u, v

    def to_dict(self):
        d = {"kind": self.kind, "a": list(self.a), "texture": self.texture.to_dict()}
        if self.kind == "sphere":
            d["radius"] = self.radius
        else:
            d["b"] = list(self.b)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], a=tuple(float(v) for v in d["a"]),
                   b=tuple(float(v) for v in d.get("b", (0.0, 0.0, 0.0))),
                   radius=float(d.get("radius", 0.0)),
                   texture=Texture.from_dict(d.get("texture", {})))


def cast_rays(camera: Camera, primitives, x, y):
    """Cast rays through arbitrary (sub)pixel positions.

    Returns colors ``x.shape + (3,)`` and camera depth (0 where nothing is hit).
    """
    dirs = camera.ray_directions(x, y)
    origin = camera.center
    best = np.full(dirs.shape[:-1], np.inf)
    color = np.full(dirs.shape[:-1] + (3,), BACKGROUND)
    for prim in primitives:
        t, u, v = prim.intersect(origin, dirs)
        closer = t < best
        if not closer.any():
            continue
        best = np.where(closer, t, best)
        color[closer] = texture_eval(prim.texture, u[closer], v[closer])
    # dirs have unit camera-space z, so the ray parameter is the camera depth
    depth = np.where(np.isfinite(best), best, 0.0)
    return color, depth


def raycast(camera: Camera, primitives, width: int, height: int):
    """Render an ``(H, W, 3)`` float32 image and ``(H, W)`` float32 depth map."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    color, depth = cast_rays(camera, primitives, u, v)
    return color.astype(np.float32), depth.astype(np.float32)


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    primitives: tuple
    cameras: tuple
    width: int = 64
    height: int = 64
    frames: int = 1
    animated: int | None = None  # index of the primitive that moves
    offset: tuple = (0.0, 0.0, 0.0)  # per-frame rigid offset of that primitive
    norm_params: NormParams = NormParams()

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if len(self.cameras) < 2:
            raise ValueError("need at least 2 cameras")
        if self.animated is not None and not 0 <= self.animated < len(self.primitives):
            raise ValueError(f"animated primitive index {self.animated} out of range")

    def to_dict(self):
        return {
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "frames": self.frames,
            "animated": self.animated,
            "offset": list(self.offset),
            "primitives": [p.to_dict() for p in self.primitives],
            "cameras": [c.to_dict() for c in self.cameras],
            "norm_params": self.norm_params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        """Build a spec from JSON.

        Cameras may be listed explicitly or described by an ``arc`` entry
        ``{"n", "radius", "lookat", "height", "fov_deg"}``; a spec without
        primitives gets the seeded desk scene.
        """
        width = int(d.get("width", 64))
        height = int(d.get("height", width))
        seed = int(d.get("seed", 0))
        if "cameras" in d:
            cams = tuple(Camera.from_dict(c) for c in d["cameras"])
        else:
            arc = d.get("arc", {})
            cams = tuple(camera_arc(int(arc.get("n", 5)), float(arc.get("radius", 4.0)),
                                    arc.get("lookat", (0.0, 0.0, 0.0)), float(arc.get("height", 0.6)),
                                    width=width, height_px=height,
                                    fov_deg=float(arc.get("fov_deg", 50.0)),
                                    arc_deg=float(arc.get("arc_deg", ARC_DEGREES))))
        if "primitives" in d:
            prims = tuple(Primitive.from_dict(p) for p in d["primitives"])
            animated = d.get("animated")
        else:
            prims = desk_primitives(seed)
            animated = d.get("animated", DESK_ANIMATED)
        norm = NormParams.from_dict(d["norm_params"]) if "norm_params" in d else NormParams()
        return cls(seed=seed, primitives=prims, cameras=cams, width=width, height=height,
                   frames=int(d.get("frames", 1)), animated=animated,
                   offset=tuple(float(v) for v in d.get("offset", (0.0, 0.0, 0.0))),
                   norm_params=norm)


DESK_ANIMATED = 2


def desk_primitives(seed: int) -> tuple:
    """A seeded desk-scale arrangement: back wall, floor, a sphere and a box."""
    rng = np.random.default_rng(seed)

    def color():
        return tuple(np.round(rng.uniform(0.05, 0.95, 3), 3).tolist())

    def checker(scale_range):
        return Texture("checker", float(np.round(rng.uniform(*scale_range), 3)), color(), color())

    def noise(scale_range):
        return Texture("noise", float(np.round(rng.uniform(*scale_range), 3)), color(), color(),
                       int(rng.integers(0, 2**31)))

    wall_z = float(np.round(rng.uniform(-1.8, -1.4), 3))
    floor_y = float(np.round(rng.uniform(-0.7, -0.5), 3))
    sx = float(np.round(rng.uniform(-0.6, -0.2), 3))
    bx = float(np.round(rng.uniform(0.1, 0.4), 3))
    return (
        Primitive("plane", (0.0, 0.0, wall_z), (0.0, 0.0, 1.0), texture=checker((2.0, 3.5))),
        Primitive("plane", (0.0, floor_y, 0.0), (0.0, 1.0, 0.0), texture=noise((3.0, 6.0))),
        Primitive("sphere", (sx, floor_y + 0.45, 0.0), radius=0.4, texture=checker((5.0, 8.0))),
        Primitive("box", (bx, floor_y, -0.5), (bx + 0.5, floor_y + 0.5, 0.0),
                  texture=checker((4.0, 7.0))),
    )


def desk_scene(seed: int = 0, *, n_views: int = 5, width: int = 64, height: int | None = None,
               frames: int = 1, offset=(0.03, 0.0, 0.0), radius: float = 4.0,
               fov_deg: float = 40.0, arc_deg: float = ARC_DEGREES) -> SceneSpec:
    height = width if height is None else height
    cams = camera_arc(n_views, radius, (0.0, 0.0, -0.3), 0.6, width=width, height_px=height,
                      fov_deg=fov_deg, arc_deg=arc_deg)
    return SceneSpec(seed=seed, primitives=desk_primitives(seed), cameras=tuple(cams),
                     width=width, height=height, frames=frames, animated=DESK_ANIMATED,
                     offset=tuple(offset))


@dataclass
class View:
    """One ground-truth view: ``image`` in ``[0, 1]``, ``depth`` with 0 = no hit."""

    view_id: int
    frame_id: int
    camera: Camera
    image: np.ndarray
    depth: np.ndarray


def frame_primitives(spec: SceneSpec, frame: int):
    prims = list(spec.primitives)
    if spec.animated is not None:
        offset = np.asarray(spec.offset, dtype=np.float64) * frame
        prims[spec.animated] = prims[spec.animated].moved(offset)
    return prims


def generate_scene(spec: SceneSpec) -> list[View]:
    """Ray-cast every camera at every frame; views ordered by frame, then view id."""
    views = []
    for frame in range(spec.frames):
        prims = frame_primitives(spec, frame)
        for vid, cam in enumerate(spec.cameras):
            img, depth = raycast(cam, prims, spec.width, spec.height)
            views.append(View(vid, frame, cam, img, depth))
    return views


# ---------------------------------------------------------------------------
# manifest


def view_paths(view_id: int, frame_id: int):
    stem = f"v{view_id:02d}_f{frame_id:03d}"
    return f"images/{stem}.ppm", f"depth/{stem}.pfm"


def write_scene(spec: SceneSpec, out_dir, views: list[View] | None = None) -> Path:
    """Generate (unless given) and write a scene; returns the manifest path."""
    out_dir = Path(out_dir)
    views = generate_scene(spec) if views is None else views
    entries = []
    for view in views:
        img_rel, depth_rel = view_paths(view.view_id, view.frame_id)
        imgio.write_ppm(view.image, out_dir / img_rel)
        imgio.write_pfm(view.depth.astype(np.float32), out_dir / depth_rel)
        entries.append({"view_id": view.view_id, "frame_id": view.frame_id, "image": img_rel,
                        "depth": depth_rel, "camera": view.camera.to_dict()})
    manifest = {
        "width": spec.width,
        "height": spec.height,
        "frames": spec.frames,
        "norm_params": spec.norm_params.to_dict(),
        "views": entries,
        "spec": spec.to_dict(),
    }
    path = out_dir / "manifest.json"
    imgio.atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class Manifest:
    root: Path
    width: int
    height: int
    frames: int
    norm_params: NormParams
    views: list[View]

    @property
    def view_ids(self) -> list[int]:
        return sorted({v.view_id for v in self.views})

    @property
    def frame_ids(self) -> list[int]:
        return sorted({v.frame_id for v in self.views})

    def view(self, view_id: int, frame_id: int) -> View:
        for v in self.views:
            if v.view_id == view_id and v.frame_id == frame_id:
                return v
        raise KeyError(f"no view {view_id} at frame {frame_id}")

    def frame(self, frame_id: int) -> dict[int, View]:
        return {v.view_id: v for v in self.views if v.frame_id == frame_id}


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    d = json.loads(path.read_text())
    root = path.parent
    views = []
    for e in d["views"]:
        img = imgio.read_ppm(root / e["image"])
        depth = imgio.read_pfm(root / e["depth"])
        if img.shape[:2] != (d["height"], d["width"]) or depth.shape != img.shape[:2]:
            raise ValueError(f"view {e['view_id']} frame {e['frame_id']} has inconsistent size")
        views.append(View(int(e["view_id"]), int(e["frame_id"]), Camera.from_dict(e["camera"]),
                          img, depth))
    views.sort(key=lambda v: (v.frame_id, v.view_id))
    return Manifest(root, int(d["width"]), int(d["height"]), int(d["frames"]),
                    NormParams.from_dict(d["norm_params"]), views)
