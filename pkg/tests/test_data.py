import numpy as np
import pytest

from crossreg import checkpoint as ck
from crossreg import kitti
from crossreg import synthetic as syn
from crossreg.errors import CheckpointError, ConfigError, ContractError, CorruptFileError, ParseError
from crossreg.geometry import PointCloud, Pose
from crossreg.scenes import ScenePair, load_scene, save_scene


class TestContainer:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a.weight": rng.normal(size=(3, 4)), "b": rng.normal(size=7),
                   "scalar": np.array(2.5)}
        path = tmp_path / "t.bin"
        ck.write_container(path, tensors)
        back = ck.read_container(path)
        assert set(back) == set(tensors)
        for name in tensors:
            assert np.array_equal(back[name], np.asarray(tensors[name]))

    def test_byte_reproducible(self, tmp_path):
        tensors = {"x": np.arange(6.0).reshape(2, 3), "y": np.ones(2)}
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        ck.write_container(a, tensors)
        ck.write_container(b, dict(reversed(tensors.items())))
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            ck.read_container(path)

    def test_truncated_tensor_names_offender(self, tmp_path):
        path = tmp_path / "t.bin"
        ck.write_container(path, {"alpha": np.ones(4), "beta": np.ones(8)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(CheckpointError, match="beta"):
            ck.read_container(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "t.bin"
        ck.write_container(path, {"a": np.ones(2)})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            ck.read_container(path)


class TestSceneIO:
    def test_scene_roundtrip(self, tmp_path):
        scene = syn.generate_synthetic(syn.SyntheticSceneConfig(n_points=500, seed=3))
        path = tmp_path / "scene.bin"
        save_scene(path, scene)
        back = load_scene(path)
        assert np.array_equal(back.image, scene.image)
        assert np.array_equal(back.cloud.points, scene.cloud.points)
        assert np.array_equal(back.cloud.intensity, scene.cloud.intensity)
        assert np.array_equal(back.gt_pose.rotation, scene.gt_pose.rotation)
        assert back.intrinsics == scene.intrinsics
        assert back.id == "scene"


class TestVelodyne:
    def test_two_point_file(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(np.arange(8, dtype="<f4").tobytes())
        cloud = kitti.read_velodyne(path)
        assert len(cloud) == 2
        assert cloud.points[1].tolist() == [4.0, 5.0, 6.0]
        assert cloud.intensity.tolist() == [3.0, 7.0]

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-50, 50, (200, 3)).astype(np.float32).astype(np.float64)
        inten = rng.uniform(0, 1, 200).astype(np.float32).astype(np.float64)
        path = tmp_path / "scan.bin"
        kitti.write_velodyne(path, PointCloud(pts, inten))
        back = kitti.read_velodyne(path)
        assert np.array_equal(back.points, pts)
        assert np.array_equal(back.intensity, inten)

    def test_truncated_rejected_with_offset(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(np.arange(8, dtype="<f4").tobytes()[:-3])
        with pytest.raises(CorruptFileError) as err:
            kitti.read_velodyne(path)
        assert err.value.offset == 16

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(b"")
        with pytest.raises(CorruptFileError):
            kitti.read_velodyne(path)


CALIB = """P0: 1 0 0 0 0 1 0 0 0 0 1 0
P2: 100 0 60 -20 0 100 30 0 0 0 1 0
Tr: 0 -1 0 0.1 0 0 -1 0.2 1 0 0 0.3
"""


class TestCalibPoses:
    def test_parse_calib(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text(CALIB)
        calib = kitti.parse_calib(path)
        assert calib["P2"][0, 0] == 100.0 and calib["P2"][0, 3] == -20.0
        assert calib["Tr"][0, 1] == -1.0 and calib["Tr"][2, 3] == 0.3

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("P2: " + " ".join(["1"] * 12) + "\n")
        with pytest.raises(ParseError, match="Tr"):
            kitti.parse_calib(path)

    def test_malformed_line_offset(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("P2: 1 2 3\n")
        with pytest.raises(ParseError) as err:
            kitti.parse_calib(path)
        assert err.value.offset == 0

    def test_parse_poses(self, tmp_path):
        path = tmp_path / "00.txt"
        path.write_text("1 0 0 10 0 1 0 20 0 0 1 30\n1 0 0 11 0 1 0 21 0 0 1 31\n")
        poses = kitti.parse_poses(path)
        assert poses.shape == (2, 3, 4)
        assert poses[1, 0, 3] == 11.0

    def test_non_numeric_pose_offset(self, tmp_path):
        path = tmp_path / "00.txt"
        line1 = "1 0 0 10 0 1 0 20 0 0 1 30\n"
        path.write_text(line1 + "1 0 0 x 0 1 0 0 0 0 1 0\n")
        with pytest.raises(ParseError) as err:
            kitti.parse_poses(path)
        assert err.value.offset == len(line1)


def write_kitti_fixture(tmp_path, calib_text=CALIB, identity=False):
    from PIL import Image

    rng = np.random.default_rng(5)
    seq = tmp_path / "sequences" / "00"
    (seq / "velodyne").mkdir(parents=True)
    (seq / "image_2").mkdir()
    (tmp_path / "poses").mkdir()
    pts = rng.uniform([-10, -10, -2], [10, 10, 2], (300, 3))
    kitti.write_velodyne(seq / "velodyne" / "000000.bin",
                         PointCloud(pts, rng.uniform(0, 1, 300)))
    (seq / "calib.txt").write_text(calib_text)
    if identity:
        (tmp_path / "poses" / "00.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    else:
        (tmp_path / "poses" / "00.txt").write_text("1 0 0 5 0 1 0 -1 0 0 1 2\n")
    Image.fromarray((rng.uniform(0, 1, (100, 400, 3)) * 255).astype(np.uint8)).save(
        seq / "image_2" / "000000.png")
    return seq


class TestLoadFrame:
    def test_identity_gives_p2_offset_only(self, tmp_path):
        calib = "P2: 100 0 60 -20 0 100 30 0 0 0 1 0\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n"
        seq = write_kitti_fixture(tmp_path, calib, identity=True)
        scene = kitti.load_kitti_frame(seq / "velodyne" / "000000.bin", seq / "calib.txt",
                                       tmp_path / "poses" / "00.txt", 0, n_points=100)
        # K^-1 @ P2[:,3] = (-20/100, 0, 0)
        assert np.allclose(scene.gt_pose.rotation, np.eye(3))
        assert np.allclose(scene.gt_pose.translation, [-0.2, 0.0, 0.0])

    def test_world_cloud_and_gt_consistent(self, tmp_path):
        seq = write_kitti_fixture(tmp_path)
        raw = kitti.read_velodyne(seq / "velodyne" / "000000.bin")
        scene = kitti.load_kitti_frame(seq / "velodyne" / "000000.bin", seq / "calib.txt",
                                       tmp_path / "poses" / "00.txt", 0,
                                       n_points=10 ** 9, seed=0)
        # composing gt with the world cloud must equal the direct velo->cam2 map
        calib = kitti.parse_calib(seq / "calib.txt")
        k = calib["P2"][:, :3]
        direct = Pose(np.eye(3), np.linalg.solve(k, calib["P2"][:, 3])).compose(
            Pose(calib["Tr"][:, :3], calib["Tr"][:, 3]))
        assert np.abs(scene.gt_pose.apply(scene.cloud.points)
                      - direct.apply(raw.points)).max() < 1e-9

    def test_image_resized_and_intrinsics_scaled(self, tmp_path):
        seq = write_kitti_fixture(tmp_path)
        scene = kitti.load_kitti_frame(seq / "velodyne" / "000000.bin", seq / "calib.txt",
                                       tmp_path / "poses" / "00.txt", 0, n_points=100)
        assert scene.image.shape == (160, 512, 3)
        assert scene.intrinsics.fx == pytest.approx(100 * 512 / 400)
        assert scene.intrinsics.fy == pytest.approx(100 * 160 / 100)
        assert scene.intrinsics.cx == pytest.approx(60 * 512 / 400)

    def test_subsampling_seeded(self, tmp_path):
        seq = write_kitti_fixture(tmp_path)
        args = (seq / "velodyne" / "000000.bin", seq / "calib.txt",
                tmp_path / "poses" / "00.txt", 0)
        a = kitti.load_kitti_frame(*args, n_points=50, seed=3)
        b = kitti.load_kitti_frame(*args, n_points=50, seed=3)
        c = kitti.load_kitti_frame(*args, n_points=50, seed=4)
        assert np.array_equal(a.cloud.points, b.cloud.points)
        assert len(a.cloud) == 50
        assert not np.array_equal(a.cloud.points, c.cloud.points)

    def test_split_definition(self):
        assert kitti.split_sequences("train") == tuple(f"{i:02d}" for i in range(9))
        assert kitti.split_sequences("test") == ("09", "10")
        with pytest.raises(ContractError):
            kitti.split_sequences("val")


class TestSynthetic:
    def test_deterministic(self):
        cfg = syn.SyntheticSceneConfig(n_points=400, seed=11)
        a = syn.generate_synthetic(cfg)
        b = syn.generate_synthetic(cfg)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.cloud.points, b.cloud.points)
        assert np.array_equal(a.gt_pose.rotation, b.gt_pose.rotation)

    def test_zero_jitter_canonical_pose(self):
        cfg = syn.SyntheticSceneConfig(n_points=300, seed=2, rotation_jitter_deg=0.0,
                                       translation_jitter=0.0)
        scene = syn.generate_synthetic(cfg)
        assert np.array_equal(scene.gt_pose.rotation, np.eye(3))
        assert np.array_equal(scene.gt_pose.translation, np.zeros(3))

    def test_overlap_invariant(self):
        for seed in range(5):
            scene = syn.generate_synthetic(syn.SyntheticSceneConfig(n_points=500, seed=seed))
            assert scene.overlap_fraction() >= 0.05

    def test_zero_primitives_rejected(self):
        with pytest.raises(ConfigError):
            syn.SyntheticSceneConfig(n_primitives=0)

    def test_zbuffer_rechecks(self):
        cfg = syn.SyntheticSceneConfig(n_points=200, seed=7)
        intr = cfg.intrinsics()
        rng = np.random.default_rng([cfg.seed, 0])
        faces = syn.build_faces(cfg, rng)
        syn.sample_faces(faces, cfg.n_points, rng)  # advance the stream as generate does
        angles = rng.uniform(-cfg.rotation_jitter_deg, cfg.rotation_jitter_deg, 3)
        shift = rng.uniform(-cfg.translation_jitter, cfg.translation_jitter, 3)
        from crossreg.geometry import euler_to_matrix
        pose = Pose(euler_to_matrix(angles), shift)
        rng_img = np.random.default_rng([cfg.seed, 0])
        faces2 = syn.build_faces(cfg, rng_img)
        syn.sample_faces(faces2, cfg.n_points, rng_img)
        rng_img.uniform(-cfg.rotation_jitter_deg, cfg.rotation_jitter_deg, 3)
        rng_img.uniform(-cfg.translation_jitter, cfg.translation_jitter, 3)
        image, (pts, colors) = syn.render_image(faces2, pose, intr, rng_img, return_trace=True)

        cam = pose.apply(pts)
        z = cam[:, 2]
        ok = z > 1e-9
        u = intr.fx * cam[ok, 0] / z[ok] + intr.cx
        v = intr.fy * cam[ok, 1] / z[ok] + intr.cy
        inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        pix = np.floor(v[inside]).astype(int) * intr.width + np.floor(u[inside]).astype(int)
        depth = z[ok][inside]
        col = colors[ok][inside]
        flat = image.reshape(-1, 3)
        checked = 0
        for p in np.unique(pix)[:200]:
            sel = pix == p
            winner = col[sel][depth[sel].argmin()]
            assert np.allclose(flat[p], winner)
            checked += 1
        assert checked > 50

    def test_intensity_matches_texture_luminance(self):
        cfg = syn.SyntheticSceneConfig(n_points=300, seed=9)
        rng = np.random.default_rng([cfg.seed, 0])
        faces = syn.build_faces(cfg, rng)
        pts, pick, u, v = syn.sample_faces(faces, cfg.n_points, rng)
        colors = syn.face_colors(faces, pick, u, v)
        scene = syn.generate_synthetic(cfg)
        assert np.allclose(scene.cloud.intensity, colors.mean(axis=1))
        assert np.array_equal(scene.cloud.points, pts)

    def test_dataset_ids_and_diversity(self):
        scenes = syn.synthetic_dataset(syn.SyntheticSceneConfig(n_points=200), 3, base_seed=40)
        assert [s.id for s in scenes] == ["synthetic-040", "synthetic-041", "synthetic-042"]
        assert not np.array_equal(scenes[0].cloud.points, scenes[1].cloud.points)
