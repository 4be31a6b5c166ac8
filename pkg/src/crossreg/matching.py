"""Frustum filtering and the two-stage correspondence search.

Both stages rank candidates by cosine distance and keep the exhaustive
argmin (ties to the lowest pixel id); there is no score thresholding or
mutuality filtering by default since the pose solver's consensus loop
absorbs outliers.  A mutual-nearest check is available for ablations.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nnet
from .backbone import FeatureMap
from .errors import ContractError, DegenerateFeatureError
from .hierarchy import FINE_STRIDE, COARSE_STRIDE, ImagePyramid, PointHierarchy

GROUND_TRUTH = "ground_truth"


@dataclass
class CorrespondenceSet:
    """Pairs of (point-side id, pixel-side id) at one level."""

    level: str
    pairs: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.intp).reshape(-1, 2)
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if len(self.scores) != len(self.pairs):
                raise ContractError("one score per pair required")
        if self.level == "coarse" and len(self.pairs):
            if len(np.unique(self.pairs[:, 0])) != len(self.pairs):
                raise ContractError("coarse point ids must be unique")

    def __len__(self):
        return len(self.pairs)

    @property
    def point_ids(self):
        return self.pairs[:, 0]

    @property
    def pixel_ids(self):
        return self.pairs[:, 1]


@dataclass
class FrustumScores:
    """Per-superpoint visibility probabilities plus the decision threshold."""

    scores: ad.Tensor
    threshold: float = 0.5

    @property
    def values(self):
        return self.scores.data.reshape(-1)

    def in_frustum_ids(self):
        """Superpoints classified inside the frustum (score >= threshold)."""
        return np.nonzero(self.values >= self.threshold)[0]


class FrustumHead:
    """Binary classification head: sigmoid of a linear readout."""

    def __init__(self, rng, dim):
        self.linear = nnet.Linear(rng, dim, 1)

    def __call__(self, coarse_points: FeatureMap, threshold=0.5) -> FrustumScores:
        logits = self.linear(coarse_points.features)
        return FrustumScores(ad.reshape(ad.sigmoid(logits), (-1,)), threshold)

    def named_parameters(self, prefix="frustum"):
        return self.linear.named_parameters(prefix)

    def mac_count(self, rows):
        return self.linear.mac_count(rows)


def classify_frustum(coarse_points: FeatureMap, head: FrustumHead, threshold=0.5) -> FrustumScores:
    return head(coarse_points, threshold)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two feature rows, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("zero-norm feature row in cosine similarity")
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(a, b) -> float:
    return 1.0 - cosine_similarity(a, b)


def normalized_rows(features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise DegenerateFeatureError("zero-norm feature row cannot be matched")
    return features / norms


def similarity_matrix(a, b) -> np.ndarray:
    """All-pairs cosine similarities between two row-stacked feature blocks."""
    return normalized_rows(a) @ normalized_rows(b).T


def coarse_match(points: FeatureMap, pixels: FeatureMap, frustum: FrustumScores,
                 mutual_check=False) -> CorrespondenceSet:
    """Nearest superpixel in feature space for every in-frustum superpoint."""
    keep = frustum.in_frustum_ids()
    if keep.size == 0:
        warnings.warn("no superpoints classified in-frustum; empty coarse set", stacklevel=2)
        return CorrespondenceSet("coarse", np.empty((0, 2)), np.empty(0))
    sims = similarity_matrix(points.features.data[keep], pixels.features.data)
    best = sims.argmax(axis=1)
    if mutual_check:
        back = sims.argmax(axis=0)
        mutual = back[best] == np.arange(len(keep))
        keep, best, sims = keep[mutual], best[mutual], sims[mutual]
    pairs = np.stack([points.ids[keep], pixels.ids[best]], axis=1)
    scores = sims[np.arange(len(best)), best]
    return CorrespondenceSet("coarse", pairs, scores)


def fine_match(coarse_pairs: CorrespondenceSet, fine_points: FeatureMap,
               fine_pixels: FeatureMap, hierarchy: PointHierarchy,
               pyramid: ImagePyramid) -> CorrespondenceSet:
    """Per-node nearest pixel restricted to the matched superpixel's patch."""
    if not hierarchy.node_points:
        raise ContractError("node points must be selected before fine matching")
    point_feats = normalized_rows(fine_points.features.data)
    pixel_feats = normalized_rows(fine_pixels.features.data)
    all_pairs = []
    all_scores = []
    for sp_id, px_id in coarse_pairs.pairs:
        nodes = hierarchy.node_points[sp_id]
        patch = pyramid.patch_of(px_id)
        if nodes.size == 0 or patch.size == 0:
            continue
        sims = point_feats[nodes] @ pixel_feats[patch].T
        best = sims.argmax(axis=1)
        for n, b, s in zip(nodes, best, sims[np.arange(len(nodes)), best]):
            all_pairs.append((n, patch[b]))
            all_scores.append(s)
    if not all_pairs:
        return CorrespondenceSet("fine", np.empty((0, 2)), np.empty(0))
    order = np.lexsort((np.array(all_pairs)[:, 1], np.array(all_pairs)[:, 0]))
    pairs = np.array(all_pairs)[order]
    scores = np.array(all_scores)[order]
    return CorrespondenceSet("fine", pairs, scores)


def pixel_center(pyramid: ImagePyramid, level: str, pixel_id: int):
    """Cell-center (u, v) of a pixel id in its own grid units."""
    cols = pyramid.coarse_shape[1] if level == "coarse" else pyramid.fine_shape[1]
    row, col = divmod(int(pixel_id), cols)
    return col + 0.5, row + 0.5


def level_stride(level: str) -> int:
    return COARSE_STRIDE if level == "coarse" else FINE_STRIDE


def write_correspondences(path, sets, pyramid: ImagePyramid):
    """CSV dump with columns level, point_id, pixel_u, pixel_v, similarity."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "point_id", "pixel_u", "pixel_v", "similarity"])
        for cset in sets:
            for i, (pid, pxid) in enumerate(cset.pairs):
                u, v = pixel_center(pyramid, cset.level, pxid)
                score = "" if cset.scores is None else f"{cset.scores[i]:.6f}"
                writer.writerow([cset.level, int(pid), f"{u:.1f}", f"{v:.1f}", score])
