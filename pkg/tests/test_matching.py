import numpy as np
import pytest

from crossreg import autodiff as ad
from crossreg import matching as ma
from crossreg.backbone import COARSE, FINE, FeatureMap, IMAGE, POINT
from crossreg.errors import ContractError, DegenerateFeatureError
from crossreg.hierarchy import PointHierarchy, build_image_pyramid


def fmap(data, level=COARSE, modality=POINT):
    data = np.asarray(data, dtype=np.float64)
    return FeatureMap(np.arange(len(data)), ad.Tensor(data), level, modality)


class TestFrustumHead:
    def test_zero_weights_give_half(self):
        head = ma.FrustumHead(np.random.default_rng(0), 4)
        head.linear.weight.data[:] = 0.0
        head.linear.bias.data[:] = 0.0
        scores = head(fmap(np.random.default_rng(1).uniform(-1, 1, (5, 4))))
        assert np.allclose(scores.values, 0.5)

    def test_boundary_score_counts_inside(self):
        scores = ma.FrustumScores(ad.Tensor(np.array([0.5, 0.49, 0.51])), threshold=0.5)
        assert scores.in_frustum_ids().tolist() == [0, 2]

    def test_scores_in_unit_interval(self):
        head = ma.FrustumHead(np.random.default_rng(2), 4)
        scores = head(fmap(np.random.default_rng(3).uniform(-10, 10, (20, 4))))
        assert ((scores.values > 0) & (scores.values < 1)).all()


class TestCosineSimilarity:
    def test_equal_rows(self):
        a = np.array([1.0, 2.0, 3.0])
        assert ma.cosine_similarity(a, a) == pytest.approx(1.0)
        assert ma.cosine_distance(a, a) == pytest.approx(0.0)

    def test_orthogonal(self):
        assert ma.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)
        assert ma.cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)

    def test_opposite(self):
        assert ma.cosine_similarity([1, 1], [-1, -1]) == pytest.approx(-1.0)
        assert ma.cosine_distance([1, 1], [-1, -1]) == pytest.approx(2.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateFeatureError):
            ma.cosine_similarity([0, 0], [1, 0])


def all_in(n):
    return ma.FrustumScores(ad.Tensor(np.ones(n)), threshold=0.5)


class TestCoarseMatch:
    def test_single_pair(self):
        points = fmap([[1.0, 0.0]])
        pixels = fmap([[0.5, 0.5]], modality=IMAGE)
        out = ma.coarse_match(points, pixels, all_in(1))
        assert out.pairs.tolist() == [[0, 0]]

    def test_exact_feature_match_wins(self):
        points = fmap([[1.0, 0.0, 0.0]])
        pixels = fmap([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], modality=IMAGE)
        out = ma.coarse_match(points, pixels, all_in(1))
        assert out.pairs.tolist() == [[0, 1]]
        assert out.scores[0] == pytest.approx(1.0)

    def test_frustum_filtering(self):
        points = fmap(np.eye(3))
        pixels = fmap(np.eye(3), modality=IMAGE)
        scores = ma.FrustumScores(ad.Tensor(np.array([0.9, 0.1, 0.9])), threshold=0.5)
        out = ma.coarse_match(points, pixels, scores)
        assert out.point_ids.tolist() == [0, 2]

    def test_empty_in_frustum_warns(self):
        points = fmap(np.eye(2))
        pixels = fmap(np.eye(2), modality=IMAGE)
        scores = ma.FrustumScores(ad.Tensor(np.zeros(2)), threshold=0.5)
        with pytest.warns(UserWarning):
            out = ma.coarse_match(points, pixels, scores)
        assert len(out) == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        points = fmap(rng.uniform(-1, 1, (12, 6)))
        pixels = fmap(rng.uniform(-1, 1, (20, 6)), modality=IMAGE)
        out = ma.coarse_match(points, pixels, all_in(12))
        for row, (pid, pxid) in enumerate(out.pairs):
            dists = [ma.cosine_distance(points.features.data[pid], pixels.features.data[j])
                     for j in range(20)]
            assert pxid == int(np.argmin(dists))

    def test_scale_invariance_of_selection(self):
        rng = np.random.default_rng(42)
        pts = rng.uniform(-1, 1, (8, 5))
        pix = rng.uniform(-1, 1, (15, 5))
        base = ma.coarse_match(fmap(pts), fmap(pix, modality=IMAGE), all_in(8))
        scaled_pts = pts * rng.uniform(0.1, 10.0, (8, 1))
        scaled_pix = pix * rng.uniform(0.1, 10.0, (15, 1))
        scaled = ma.coarse_match(fmap(scaled_pts), fmap(scaled_pix, modality=IMAGE), all_in(8))
        assert np.array_equal(base.pairs, scaled.pairs)

    def test_mutual_check_filters(self):
        # pixel 0 is closest to both points, but point 1 is not pixel 0's best
        points = fmap([[1.0, 0.0], [0.9, 0.1]])
        pixels = fmap([[1.0, 0.05]], modality=IMAGE)
        out = ma.coarse_match(points, pixels, all_in(2), mutual_check=True)
        assert len(out) == 1


def tiny_hierarchy():
    # 6 fine points in 2 groups with node points selected
    return PointHierarchy(fine_indices=np.arange(6), super_indices=np.array([0, 3]),
                          groups=(np.array([0, 1, 2]), np.array([3, 4, 5])),
                          group_radius=1.0,
                          node_points=(np.array([0, 2]), np.array([3, 5])))


class TestFineMatch:
    def setup_method(self):
        self.pyramid = build_image_pyramid(16, 16, 2)  # fine 8x8, coarse 2x2
        rng = np.random.default_rng(0)
        self.fine_pix = fmap(rng.uniform(-1, 1, (64, 4)), level=FINE, modality=IMAGE)

    def test_pairs_stay_in_parent_patch(self):
        rng = np.random.default_rng(1)
        fine_pts = fmap(rng.uniform(-1, 1, (6, 4)), level=FINE)
        coarse = ma.CorrespondenceSet("coarse", [[0, 0], [1, 3]])
        out = ma.fine_match(coarse, fine_pts, self.fine_pix, tiny_hierarchy(), self.pyramid)
        patches = {0: set(self.pyramid.patch_of(0).tolist()), 1: set(self.pyramid.patch_of(3).tolist())}
        owners = {0: 0, 2: 0, 3: 1, 5: 1}
        for pid, pxid in out.pairs:
            assert pxid in patches[owners[pid]]

    def test_pair_budget(self):
        rng = np.random.default_rng(2)
        fine_pts = fmap(rng.uniform(-1, 1, (6, 4)), level=FINE)
        coarse = ma.CorrespondenceSet("coarse", [[0, 0], [1, 3]])
        out = ma.fine_match(coarse, fine_pts, self.fine_pix, tiny_hierarchy(), self.pyramid)
        assert len(out) <= 2 * 2  # coarse pairs x nodes per group

    def test_identical_feature_pixel_chosen(self):
        fine_pts_data = np.zeros((6, 4))
        fine_pts_data[0] = self.fine_pix.features.data[9]  # a pixel inside patch of coarse 0
        fine_pts_data[2] = [1, 1, 1, 1]
        fine_pts = fmap(fine_pts_data + 1e-9, level=FINE)
        coarse = ma.CorrespondenceSet("coarse", [[0, 0]])
        out = ma.fine_match(coarse, fine_pts, self.fine_pix, tiny_hierarchy(), self.pyramid)
        row = out.pairs[out.point_ids == 0][0]
        assert row[1] == 9

    def test_single_pixel_patch(self):
        pyr = build_image_pyramid(8, 8, 1)  # fine 4x4, patches of 1 pixel
        rng = np.random.default_rng(3)
        pix = fmap(rng.uniform(-1, 1, (16, 4)), level=FINE, modality=IMAGE)
        pts = fmap(rng.uniform(-1, 1, (6, 4)), level=FINE)
        coarse = ma.CorrespondenceSet("coarse", [[0, 0]])
        out = ma.fine_match(coarse, pts, pix, tiny_hierarchy(), pyr)
        assert (out.pairs[:, 1] == out.pairs[0, 1]).all()
        assert len(out) == 2

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        fine_pts = fmap(rng.uniform(-1, 1, (6, 4)), level=FINE)
        coarse = ma.CorrespondenceSet("coarse", [[0, 1], [1, 2]])
        h = tiny_hierarchy()
        out = ma.fine_match(coarse, fine_pts, self.fine_pix, h, self.pyramid)
        expected = []
        for sp, px in coarse.pairs:
            patch = self.pyramid.patch_of(px)
            for n in h.node_points[sp]:
                d = [ma.cosine_distance(fine_pts.features.data[n], self.fine_pix.features.data[q])
                     for q in patch]
                expected.append((n, patch[int(np.argmin(d))]))
        assert sorted(map(tuple, out.pairs.tolist())) == sorted(expected)

    def test_missing_node_points_rejected(self):
        h = PointHierarchy(fine_indices=np.arange(6), super_indices=np.array([0]),
                           groups=(np.arange(6),), group_radius=1.0)
        with pytest.raises(ContractError):
            ma.fine_match(ma.CorrespondenceSet("coarse", [[0, 0]]),
                          fmap(np.ones((6, 4)), level=FINE), self.fine_pix, h, self.pyramid)


class TestCorrespondenceSet:
    def test_duplicate_coarse_point_ids_rejected(self):
        with pytest.raises(ContractError):
            ma.CorrespondenceSet("coarse", [[0, 1], [0, 2]])

    def test_csv_dump(self, tmp_path):
        pyr = build_image_pyramid(16, 16, 2)
        cset = ma.CorrespondenceSet("fine", [[3, 9]], [0.75])
        path = tmp_path / "pairs.csv"
        ma.write_correspondences(path, [cset], pyr)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "level,point_id,pixel_u,pixel_v,similarity"
        # fine grid is 8 wide: pixel 9 -> row 1, col 1 -> center (1.5, 1.5)
        assert lines[1] == "fine,3,1.5,1.5,0.750000"
