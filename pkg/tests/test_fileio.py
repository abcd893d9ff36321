"""File formats: PPM/PGM, raw float32 blobs, checkpoints, fixtures."""

import numpy as np
import pytest

from epiview.fileio import (
    read_checkpoint,
    read_f32,
    read_fixture,
    read_ppm,
    read_trajectory,
    to_u8,
    write_checkpoint,
    write_f32,
    write_fixture,
    write_pgm,
    write_ppm,
    write_trajectory,
)
from epiview.geometry import CameraIntrinsics
from epiview.scenegen import make_scene, make_trajectory


class TestPpm:
    def test_roundtrip_exact_at_u8(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((6, 9, 3))
        p = tmp_path / "x.ppm"
        write_ppm(p, img)
        back = read_ppm(p)
        np.testing.assert_allclose(to_u8(back), to_u8(img), atol=0)

    def test_header(self, tmp_path):
        p = tmp_path / "x.ppm"
        write_ppm(p, np.zeros((2, 3, 3)))
        raw = p.read_bytes()
        assert raw.startswith(b"P6\n3 2\n255\n")
        assert len(raw) == len(b"P6\n3 2\n255\n") + 18

    def test_clipping(self, tmp_path):
        img = np.array([[[-0.5, 0.5, 1.5]]])
        p = tmp_path / "x.ppm"
        write_ppm(p, img)
        np.testing.assert_allclose(read_ppm(p)[0, 0], [0.0, 128 / 255, 1.0], atol=1e-6)

    def test_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P3\n1 1\n255\n0 0 0")
        with pytest.raises(ValueError):
            read_ppm(p)


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        p = tmp_path / "x.pgm"
        write_pgm(p, np.array([[0.0, 1.0], [0.5, 0.25]]))
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert raw[-4:] == bytes([0, 255, 128, 64])


class TestF32:
    def test_roundtrip_with_sidecar(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((4, 5)).astype(np.float32)
        p = tmp_path / "depth.f32"
        write_f32(p, data, sidecar={"background": 0.0})
        back = read_f32(p)
        assert np.array_equal(back, data)
        import json
        meta = json.loads((tmp_path / "depth.f32.json").read_text())
        assert meta["shape"] == [4, 5] and meta["background"] == 0.0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        arrays = {"a.w": rng.standard_normal((3, 4)).astype(np.float32),
                  "b.b": rng.standard_normal(7).astype(np.float32)}
        p = tmp_path / "ckpt.bin"
        write_checkpoint(p, arrays, header_extra={"seed": 11})
        back, header = read_checkpoint(p)
        assert header["seed"] == 11
        assert [l["name"] for l in header["layers"]] == ["a.w", "b.b"]
        for k in arrays:
            assert np.array_equal(back[k], arrays[k])

    def test_layout_json_line_then_floats(self, tmp_path):
        p = tmp_path / "ckpt.bin"
        write_checkpoint(p, {"x": np.ones(2, dtype=np.float32)})
        raw = p.read_bytes()
        nl = raw.index(b"\n")
        import json
        json.loads(raw[:nl])  # header parses
        assert np.array_equal(np.frombuffer(raw[nl + 1:], dtype="<f4"), [1.0, 1.0])


class TestTrajectoryFile:
    def test_roundtrip(self, tmp_path):
        cams = make_trajectory("free16", 5)
        p = tmp_path / "traj.json"
        write_trajectory(p, cams)
        assert read_trajectory(p) == cams


class TestFixture:
    def test_layout_and_roundtrip(self, tmp_path):
        scene = make_scene(4, "plain")
        cams = make_trajectory("fixed16", 0)[:3]
        K = CameraIntrinsics.from_fov(16, 16)
        views = write_fixture(tmp_path / "fix", scene, cams, K)
        for name in ("scene.json", "cameras.json"):
            assert (tmp_path / "fix" / name).exists()
        for i in range(3):
            assert (tmp_path / "fix" / "views" / f"{i:03d}.ppm").exists()
            assert (tmp_path / "fix" / "depth" / f"{i:03d}.f32").exists()
        scene2, cams2, K2, views2 = read_fixture(tmp_path / "fix")
        assert cams2 == cams and K2 == K
        for a, b in zip(views, views2):
            assert np.array_equal(a.rgb.data, b.rgb.data)
            assert np.array_equal(a.prim_id, b.prim_id)

    def test_depth_files_match_renders(self, tmp_path):
        scene = make_scene(4, "plain")
        cams = make_trajectory("fixed16", 0)[:1]
        K = CameraIntrinsics.from_fov(16, 16)
        views = write_fixture(tmp_path / "fix", scene, cams, K)
        stored = read_f32(tmp_path / "fix" / "depth" / "000.f32")
        want = np.where(np.isfinite(views[0].depth), views[0].depth, 0.0).astype(np.float32)
        assert np.array_equal(stored, want)
