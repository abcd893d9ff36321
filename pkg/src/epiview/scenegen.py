"""Synthetic scenes: ray-cast rendering, ground-truth correspondences,
and view trajectories.

Scenes are small sets of flat-colored spheres and axis-aligned boxes
inside a unit-ish bounding sphere, rendered with a z-buffered pinhole
model. Because every surface is analytic, depth and cross-view
correspondences are exact, which is what the geometric and consistency
tests lean on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    Extrinsics,
    SphericalCamera,
    camera_on_sphere,
)
from .numerics import FeatureMap

__all__ = [
    "Sphere",
    "Box",
    "PaintedBall",
    "Scene",
    "RenderedView",
    "Correspondence",
    "make_scene",
    "render",
    "raycast",
    "surface_table",
    "surface_palette",
    "gt_correspondence",
    "correspondence_grid",
    "positional_features",
    "make_trajectory",
    "scene_to_json",
    "scene_from_json",
]

# Depth agreement (scene units) below which a reprojected point counts as
# the visible surface rather than occluded.
OCCLUSION_TOL = 1e-4

BACKGROUND = -1


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    color: np.ndarray

    @property
    def id_count(self) -> int:
        return 1


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    color: np.ndarray

    @property
    def id_count(self) -> int:
        return 1


@dataclass(frozen=True)
class PaintedBall:
    """A sphere with a painted surface.

    ``voronoi`` shading flat-fills the spherical Voronoi cells of
    ``seeds`` with ``colors``; each cell gets its own surface id so
    same-surface checks work at patch granularity. ``normal`` shading
    colors every point by an injective, equal-norm map of its surface
    normal, giving each point a unique color (unambiguous matching
    ground truth)."""

    center: np.ndarray
    radius: float
    seeds: np.ndarray | None = None     # (m, 3) unit directions, voronoi only
    colors: np.ndarray | None = None    # (m, 3), voronoi only
    shading: str = "voronoi"

    @property
    def id_count(self) -> int:
        if self.shading == "voronoi":
            return self.seeds.shape[0]
        return 1

    def shade_normals(self, normals: np.ndarray) -> np.ndarray:
        """Unique equal-norm color per unit normal: the normal pulls the
        gray diagonal by less than its own length, so distinct normals
        map to distinct directions inside the RGB cube."""
        d = np.full_like(normals, 1.0 / math.sqrt(3.0)) + 0.5 * normals
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.clip(0.9 * d, 0.0, 1.0)


@dataclass(frozen=True)
class Scene:
    seed: int
    primitives: tuple
    bounding_radius: float
    mode: str = "distinctive"


@dataclass(frozen=True)
class RenderedView:
    rgb: FeatureMap
    depth: np.ndarray          # (H, W) camera-frame z, inf for background
    prim_id: np.ndarray        # (H, W) int, BACKGROUND for background
    camera: SphericalCamera
    intrinsics: CameraIntrinsics

    @property
    def extrinsics(self) -> Extrinsics:
        return camera_on_sphere(self.camera)


@dataclass(frozen=True)
class Correspondence:
    """Where a pixel of view A lands in view B. ``status`` is one of
    'ok', 'occluded', 'out_of_frame', 'behind'."""

    status: str
    uv: np.ndarray | None
    prim_a: int
    prim_b: int = BACKGROUND
    depth_b: float = math.inf

    @property
    def visible(self) -> bool:
        return self.status == "ok"


def _equal_norm_colors(rng: np.random.Generator, n: int, norm: float = 0.9) -> np.ndarray:
    """Colors of equal vector norm with greedily maximized pairwise
    angles, so dot-product matching has a strict, unambiguous winner.

    Greedy farthest-point selection over a candidate pool of octant
    directions; deterministic for a given generator.
    """
    pool = rng.uniform(0.0, 1.0, (4096, 3))
    pool = pool[np.linalg.norm(pool, axis=1) > 1e-3]
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    picked = [pool[0]]
    for _ in range(n - 1):
        worst = np.max(np.stack([pool @ p for p in picked]), axis=0)
        picked.append(pool[np.argmin(worst)])
    return np.clip(np.array(picked) * norm, 0.0, 1.0)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly evenly spread unit directions."""
    i = np.arange(n) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z ** 2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def make_scene(seed: int, mode: str = "distinctive", n_patches: int = 24) -> Scene:
    """Build a random scene.

    ``distinctive``: one large ball painted with ``n_patches`` Voronoi
    cells of unique equal-norm colors (every foreground pixel carries a
    saturated, match-unambiguous color) plus a few satellite spheres that
    create occlusions. ``plain``: a few large spheres with a deliberately
    narrow palette, stressing soft matching under ambiguity.
    """
    rng = np.random.default_rng(seed)
    prims: list = []
    if mode == "distinctive":
        colors = _equal_norm_colors(rng, 3)
        prims.append(PaintedBall(center=np.zeros(3), radius=0.7, shading="normal"))
        for k in range(3):
            az = rng.uniform(0, 2 * math.pi)
            el = rng.uniform(-0.4, 0.7)
            c = 0.82 * np.array([math.cos(el) * math.cos(az),
                                 math.cos(el) * math.sin(az), math.sin(el)])
            prims.append(Sphere(center=c, radius=float(rng.uniform(0.08, 0.11)),
                                color=colors[k]))
    elif mode == "plain":
        # flat fills and a deliberately narrow palette: exact-zero
        # self-consistency, ambiguous matching
        base = rng.uniform(0.45, 0.6, 3)
        jitter = rng.uniform(-0.06, 0.06, (n_patches, 3))
        prims.append(PaintedBall(center=np.zeros(3), radius=0.7,
                                 seeds=_fibonacci_sphere(n_patches),
                                 colors=np.clip(base + jitter, 0.0, 1.0),
                                 shading="voronoi"))
        for k in range(2):
            az = rng.uniform(0, 2 * math.pi)
            el = rng.uniform(-0.4, 0.7)
            c = 0.82 * np.array([math.cos(el) * math.cos(az),
                                 math.cos(el) * math.sin(az), math.sin(el)])
            prims.append(Sphere(center=c, radius=float(rng.uniform(0.09, 0.12)),
                                color=np.clip(base + rng.uniform(-0.06, 0.06, 3), 0, 1)))
    else:
        raise ValueError(f"unknown scene mode {mode!r}")
    return Scene(seed=seed, primitives=tuple(prims), bounding_radius=1.0, mode=mode)


def _ray_sphere(origin, dirs, center, radius):
    """Smallest positive ray parameter per ray; inf if missed. ``dirs``
    may be unnormalized (the parameter is in units of |dir|)."""
    oc = origin - center
    a = np.einsum("nd,nd->n", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius ** 2
    disc = b ** 2 - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    s0 = (-b - sq) / (2.0 * a)
    s1 = (-b + sq) / (2.0 * a)
    s = np.where(s0 > 1e-9, s0, s1)
    return np.where(hit & (s > 1e-9), s, np.inf)


def _ray_box(origin, dirs, lo, hi):
    """Slab-method ray/AABB intersection; same conventions as spheres."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :] - origin[None, :]) * inv
        t1 = (hi[None, :] - origin[None, :]) * inv
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    s = np.where(tmin > 1e-9, tmin, tmax)
    ok = (tmax >= tmin) & (s > 1e-9)
    return np.where(ok, s, np.inf)


def surface_table(scene: Scene):
    """Global surface-id layout: flat primitives own one id, painted
    balls one per patch. Returns (id base per primitive, total ids)."""
    bases = []
    total = 0
    for p in scene.primitives:
        bases.append(total)
        total += p.id_count
    return bases, total


def surface_palette(scene: Scene) -> np.ndarray:
    """(total_ids, 3) color per surface id; normal-shaded balls hold a
    placeholder (their color is computed per point at render time)."""
    bases, total = surface_table(scene)
    pal = np.zeros((total, 3))
    for p, base in zip(scene.primitives, bases):
        if isinstance(p, PaintedBall) and p.shading == "voronoi":
            pal[base:base + p.id_count] = p.colors
        elif isinstance(p, PaintedBall):
            pal[base] = 0.0
        else:
            pal[base] = p.color
    return pal


def raycast(scene: Scene, ext: Extrinsics, K: CameraIntrinsics, uv: np.ndarray):
    """Cast rays through sub-pixel positions ``uv`` (N, 2).

    Returns (depth (N,), surf_id (N,)): camera-frame z of the first hit
    (inf for a miss) and the global surface id hit (patch-resolved for
    painted balls, BACKGROUND for misses).
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    n = uv.shape[0]
    d_cam = np.concatenate([K.normalize(uv), np.ones((n, 1))], axis=1)
    dirs = d_cam @ ext.R                                # R^T per row
    origin = ext.camera_center()

    bases, _ = surface_table(scene)
    depth = np.full(n, np.inf)
    winner = np.full(n, -1, dtype=np.int64)
    for i, p in enumerate(scene.primitives):
        if isinstance(p, (Sphere, PaintedBall)):
            s = _ray_sphere(origin, dirs, np.asarray(p.center, dtype=np.float64), p.radius)
        else:
            s = _ray_box(origin, dirs, np.asarray(p.lo, dtype=np.float64),
                         np.asarray(p.hi, dtype=np.float64))
        closer = s < depth
        depth = np.where(closer, s, depth)
        winner = np.where(closer, i, winner)

    surf = np.full(n, BACKGROUND, dtype=np.int64)
    for i, p in enumerate(scene.primitives):
        sel = winner == i
        if not sel.any():
            continue
        if isinstance(p, PaintedBall) and p.shading == "voronoi":
            pts = origin[None, :] + dirs[sel] * depth[sel, None]
            normals = (pts - np.asarray(p.center)) / p.radius
            patch = np.argmax(normals @ p.seeds.T, axis=1)
            surf[sel] = bases[i] + patch
        else:
            surf[sel] = bases[i]
    return depth, surf


def render(scene: Scene, cam: SphericalCamera, K: CameraIntrinsics) -> RenderedView:
    """Z-buffered pinhole render. Deterministic for a fixed scene."""
    if cam.radius <= scene.bounding_radius:
        raise ValueError("camera must stay outside the scene bounding sphere")
    ext = camera_on_sphere(cam)
    h, w = K.height, K.width
    vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    depth, surf = raycast(scene, ext, K, uv)
    rgb = np.zeros((h * w, 3), dtype=np.float64)
    fg = surf >= 0
    if fg.any():
        rgb[fg] = surface_palette(scene)[surf[fg]]
    bases, _ = surface_table(scene)
    for p, base in zip(scene.primitives, bases):
        if isinstance(p, PaintedBall) and p.shading == "normal":
            sel = surf == base
            if sel.any():
                d_cam = np.concatenate([K.normalize(uv[sel]), np.ones((int(sel.sum()), 1))], axis=1)
                dirs = d_cam @ ext.R
                pts = ext.camera_center()[None, :] + dirs * depth[sel, None]
                normals = (pts - np.asarray(p.center)) / p.radius
                rgb[sel] = p.shade_normals(normals)
    return RenderedView(
        rgb=FeatureMap(rgb.reshape(h, w, 3)),
        depth=depth.reshape(h, w),
        prim_id=surf.reshape(h, w).astype(np.int64),
        camera=cam,
        intrinsics=K,
    )


def _unproject(scene: Scene, view: RenderedView, uv: np.ndarray):
    """World points and primitive ids for sub-pixel positions of a view."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    ext = view.extrinsics
    K = view.intrinsics
    depth, prim = raycast(scene, ext, K, uv)
    d_cam = np.concatenate([K.normalize(uv), np.ones((uv.shape[0], 1))], axis=1)
    safe = np.where(np.isfinite(depth), depth, 0.0)  # background rows are junk; prim marks them
    x_cam = d_cam * safe[:, None]
    x_world = (x_cam - ext.t) @ ext.R
    return x_world, depth, prim


def gt_correspondence(scene: Scene, view_a: RenderedView, view_b: RenderedView,
                      p: np.ndarray) -> Correspondence:
    """Exact correspondence of (sub-)pixel ``p`` of view A in view B.

    The pixel is unprojected through the analytic scene, transformed, and
    reprojected; visibility in B is decided by casting the B ray and
    comparing depths within ``OCCLUSION_TOL``. Background pixels are an
    error (no surface to correspond).
    """
    p = np.asarray(p, dtype=np.float64).reshape(2)
    x_world, depth_a, prim_a = _unproject(scene, view_a, p[None, :])
    if prim_a[0] < 0:
        raise ValueError(f"pixel {p} is background in view A")
    ext_b = view_b.extrinsics
    K_b = view_b.intrinsics
    x_b = ext_b.apply(x_world)[0]
    if x_b[2] <= 0:
        return Correspondence(status="behind", uv=None, prim_a=int(prim_a[0]))
    uv_b = K_b.project(x_b)
    if not (0 <= uv_b[0] <= K_b.width - 1 and 0 <= uv_b[1] <= K_b.height - 1):
        return Correspondence(status="out_of_frame", uv=None, prim_a=int(prim_a[0]))
    hit_depth, hit_prim = raycast(scene, ext_b, K_b, uv_b[None, :])
    if abs(hit_depth[0] - x_b[2]) > OCCLUSION_TOL:
        return Correspondence(status="occluded", uv=uv_b, prim_a=int(prim_a[0]),
                              prim_b=int(hit_prim[0]), depth_b=float(hit_depth[0]))
    return Correspondence(status="ok", uv=uv_b, prim_a=int(prim_a[0]),
                          prim_b=int(hit_prim[0]), depth_b=float(hit_depth[0]))


def correspondence_grid(scene: Scene, view_a: RenderedView, view_b: RenderedView,
                        uv_a: np.ndarray):
    """Vectorized :func:`gt_correspondence` over many positions of view A.

    Returns (uv_b (N, 2), visible (N,), prim_a (N,), prim_b (N,)); rows
    that are background in A come back with prim_a == BACKGROUND and
    visible False.
    """
    uv_a = np.asarray(uv_a, dtype=np.float64).reshape(-1, 2)
    x_world, _, prim_a = _unproject(scene, view_a, uv_a)
    ext_b = view_b.extrinsics
    K_b = view_b.intrinsics
    x_b = ext_b.apply(x_world)
    n = uv_a.shape[0]
    uv_b = np.zeros((n, 2))
    visible = np.zeros(n, dtype=bool)
    prim_b = np.full(n, BACKGROUND, dtype=np.int64)
    front = (prim_a >= 0) & (x_b[:, 2] > 0)
    if front.any():
        proj = K_b.project(x_b[front])
        uv_b[front] = proj
        in_frame = ((proj[:, 0] >= 0) & (proj[:, 0] <= K_b.width - 1)
                    & (proj[:, 1] >= 0) & (proj[:, 1] <= K_b.height - 1))
        check = np.flatnonzero(front)[in_frame]
        if check.size:
            hit_depth, hit_prim = raycast(scene, ext_b, K_b, uv_b[check])
            vis = np.abs(hit_depth - x_b[check, 2]) <= OCCLUSION_TOL
            visible[check] = vis
            prim_b[check] = hit_prim
    return uv_b, visible, prim_a, prim_b


def positional_features(scene: Scene, view: RenderedView, width: int, height: int,
                        freqs=(9.0,)) -> FeatureMap:
    """Sinusoidal position-encoded feature map of the visible surface.

    Channels are sin/cos of the hit point's coordinates at the given
    frequencies, evaluated at feature-pixel centers through the analytic
    scene. Every surface point maps to the same feature in every view and
    to a constant-norm vector (sin^2 + cos^2), which makes the field an
    idealized distinctive texture with an unambiguous matching ground
    truth; background pixels are zero.
    """
    k_feat = view.intrinsics.scaled(width / view.intrinsics.width)
    vv, uu = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    ext = view.extrinsics
    depth, surf = raycast(scene, ext, k_feat, uv)
    d_cam = np.concatenate([k_feat.normalize(uv), np.ones((uv.shape[0], 1))], axis=1)
    safe = np.where(np.isfinite(depth), depth, 0.0)
    pts = ext.camera_center()[None, :] + (d_cam @ ext.R) * safe[:, None]
    chans = []
    for f in freqs:
        chans.append(np.sin(f * pts))
        chans.append(np.cos(f * pts))
    feat = np.concatenate(chans, axis=1)
    feat[surf < 0] = 0.0
    return FeatureMap(feat.reshape(height, width, -1))


def make_trajectory(mode: str, seed: int, radius: float = 2.0) -> list[SphericalCamera]:
    """View trajectories used throughout the experiments.

    ``fixed16``: constant 30 degree elevation, azimuths every 22.5
    degrees. ``free16``/``free32``: azimuths evenly spaced over
    [0, 360), per-view elevations drawn uniformly from [-10, 40] degrees.
    """
    rng = np.random.default_rng(seed)
    if mode == "fixed16":
        return [SphericalCamera(30.0, k * 22.5, radius) for k in range(16)]
    if mode in ("free16", "free32"):
        n = 16 if mode == "free16" else 32
        step = 360.0 / n
        elevs = rng.uniform(-10.0, 40.0, n)
        return [SphericalCamera(float(elevs[k]), k * step, radius) for k in range(n)]
    raise ValueError(f"unknown trajectory mode {mode!r}")


def scene_to_json(scene: Scene) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, PaintedBall):
            entry = {"kind": "painted_ball", "center": [float(x) for x in p.center],
                     "radius": float(p.radius), "shading": p.shading}
            if p.shading == "voronoi":
                entry["seeds"] = [[float(x) for x in s] for s in p.seeds]
                entry["colors"] = [[float(x) for x in c] for c in p.colors]
            prims.append(entry)
        elif isinstance(p, Sphere):
            prims.append({"kind": "sphere", "center": [float(x) for x in p.center],
                          "radius": float(p.radius), "color": [float(x) for x in p.color]})
        else:
            prims.append({"kind": "box", "lo": [float(x) for x in p.lo],
                          "hi": [float(x) for x in p.hi], "color": [float(x) for x in p.color]})
    return {"seed": scene.seed, "mode": scene.mode,
            "bounding_radius": scene.bounding_radius, "primitives": prims}


def scene_from_json(obj: dict) -> Scene:
    prims: list = []
    for p in obj["primitives"]:
        if p["kind"] == "painted_ball":
            shading = p.get("shading", "voronoi")
            prims.append(PaintedBall(
                center=np.array(p["center"]), radius=float(p["radius"]),
                seeds=np.array(p["seeds"]) if shading == "voronoi" else None,
                colors=np.array(p["colors"]) if shading == "voronoi" else None,
                shading=shading))
        elif p["kind"] == "sphere":
            prims.append(Sphere(center=np.array(p["center"]), radius=float(p["radius"]),
                                color=np.array(p["color"])))
        elif p["kind"] == "box":
            prims.append(Box(lo=np.array(p["lo"]), hi=np.array(p["hi"]),
                             color=np.array(p["color"])))
        else:
            raise ValueError(f"unknown primitive kind {p['kind']!r}")
    return Scene(seed=int(obj["seed"]), primitives=tuple(prims),
                 bounding_radius=float(obj["bounding_radius"]), mode=obj.get("mode", "distinctive"))
