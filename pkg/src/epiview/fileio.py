"""File formats: PPM/PGM images, raw float32 blobs, pose and scene JSON,
fixture directories, and the checkpoint container.

All binary formats are little-endian and dependency-free so golden files
stay stable across machines.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, SphericalCamera, pose_from_json, pose_to_json
from .scenegen import RenderedView, Scene, render, scene_from_json, scene_to_json

__all__ = [
    "write_ppm", "read_ppm", "write_pgm",
    "write_f32", "read_f32",
    "write_checkpoint", "read_checkpoint",
    "write_fixture", "read_fixture",
    "write_trajectory", "read_trajectory",
    "write_json", "read_json",
]


def to_u8(data: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6, maxval 255) from an (H, W, 3) array in [0, 1]."""
    img = to_u8(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM wants an HxWx3 image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float32 array in [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
    return (data.reshape(h, w, 3).astype(np.float32) / float(maxval))


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from an (H, W) array in [0, 1]."""
    img = to_u8(image)
    if img.ndim != 2:
        raise ValueError("PGM wants an HxW image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def write_f32(path, data: np.ndarray, sidecar: dict | None = None) -> None:
    """Raw little-endian float32 blob, row-major, with a JSON sidecar
    describing the shape."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())
    meta = {"shape": list(arr.shape), "dtype": "float32-le", "order": "row-major"}
    if sidecar:
        meta.update(sidecar)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))


def read_f32(path) -> np.ndarray:
    meta = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return data.reshape(meta["shape"]).copy()


def write_checkpoint(path, arrays: dict[str, np.ndarray], header_extra: dict | None = None) -> None:
    """Checkpoint container: one JSON header line, then the arrays as
    flat little-endian float32 in header order."""
    names = list(arrays)
    header = {"layers": [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names]}
    if header_extra:
        header.update(header_extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def read_checkpoint(path):
    """Returns (arrays dict, header dict)."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    arrays: dict[str, np.ndarray] = {}
    off = nl + 1
    for layer in header["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        arrays[layer["name"]] = arr.reshape(shape).copy()
        off += count * 4
    return arrays, header


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_trajectory(path, cams: list[SphericalCamera]) -> None:
    write_json(path, {"views": [pose_to_json(c) for c in cams]})


def read_trajectory(path) -> list[SphericalCamera]:
    obj = read_json(path)
    return [pose_from_json(v) for v in obj["views"]]


def write_fixture(out_dir, scene: Scene, cams: list[SphericalCamera],
                  K: CameraIntrinsics) -> list[RenderedView]:
    """Render and persist a full fixture directory:

    scene.json, cameras.json, views/NNN.ppm, depth/NNN.f32 (+ sidecars).
    """
    out = Path(out_dir)
    (out / "views").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    write_json(out / "scene.json", scene_to_json(scene))
    write_json(out / "cameras.json", {
        "intrinsics": {"f": K.f, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
        "views": [pose_to_json(c) for c in cams],
    })
    views = []
    for i, cam in enumerate(cams):
        view = render(scene, cam, K)
        write_ppm(out / "views" / f"{i:03d}.ppm", view.rgb.data)
        write_f32(out / "depth" / f"{i:03d}.f32", np.where(np.isfinite(view.depth), view.depth, 0.0),
                  sidecar={"background": 0.0})
        views.append(view)
    return views


def read_fixture(fixture_dir):
    """Load a fixture directory; views are re-rendered from the scene so
    depth/prim buffers are exact. Returns (scene, cams, K, views)."""
    fix = Path(fixture_dir)
    scene = scene_from_json(read_json(fix / "scene.json"))
    cam_obj = read_json(fix / "cameras.json")
    ki = cam_obj["intrinsics"]
    K = CameraIntrinsics(f=ki["f"], cx=ki["cx"], cy=ki["cy"],
                         width=int(ki["width"]), height=int(ki["height"]))
    cams = [pose_from_json(v) for v in cam_obj["views"]]
    views = [render(scene, c, K) for c in cams]
    return scene, cams, K, views
