"""Supervision and training losses.

Ground truth projects superpoints and fine points through the known pose
and snaps them to their grid cells.  Negatives are re-mined from the current
features at every step: the hardest (most similar) pixel outside a safe
radius around the positive cell.  The coarse term is a two-sided hinge on
cosine distances; the fine term is a circle loss over sampled triplets with
detached weighting factors; classification is a summed binary cross-entropy.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateFeatureError, NoNegativeError
from .geometry import CameraIntrinsics, PointCloud, Pose, project_many
from .hierarchy import COARSE_STRIDE, FINE_STRIDE, ImagePyramid, PointHierarchy
from .matching import CorrespondenceSet, FrustumScores, normalized_rows


@dataclass
class LossConfig:
    delta_pos: float = 0.2
    delta_neg: float = 1.8
    gamma: float = 10.0
    safe_radius: float = 1.0  # in coarse-grid cells
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    n_fine_samples: int = 64
    printed_form: bool = False
    fine_margin_space: str = "printed"  # "printed" | "similarity"

    def __post_init__(self):
        if not 0 < self.delta_pos < self.delta_neg:
            raise ContractError("margins must satisfy 0 < delta_pos < delta_neg")
        if self.gamma <= 0 or self.safe_radius < 0:
            raise ContractError("gamma must be positive and safe radius non-negative")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.fine_margin_space not in ("printed", "similarity"):
            raise ContractError("fine_margin_space must be 'printed' or 'similarity'")

    def fine_exponent_margins(self):
        """Margins used inside the circle-loss exponents.

        The margins are distance-space quantities shared with the hinge
        loss; used verbatim against cosine similarities ("printed") the
        negative exponent is bounded by gamma * (s^2 - delta_neg^2) and the
        term vanishes for every reachable similarity, so a trainable
        "similarity" mode maps them through d = 1 - s instead.
        """
        if self.fine_margin_space == "similarity":
            return 1.0 - self.delta_pos, 1.0 - self.delta_neg
        return self.delta_pos, self.delta_neg


@dataclass
class SupervisionBatch:
    """Static per-scene supervision; negatives are mined per step."""

    gt_coarse: CorrespondenceSet
    gt_frustum_labels: np.ndarray
    fine_point_ids: np.ndarray      # in-frustum fine points (fine-list positions)
    fine_positive_ids: np.ndarray   # their ground-truth fine cells


def make_ground_truth(pose: Pose, intr: CameraIntrinsics, cloud: PointCloud,
                      hierarchy: PointHierarchy, pyramid: ImagePyramid) -> SupervisionBatch:
    """Project superpoints and fine points into their grid cells."""
    super_pts = hierarchy.super_coords(cloud)
    uv, _, valid = project_many(intr, pose.apply(super_pts))
    inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
    labels = inside.astype(np.float64)

    cw = pyramid.coarse_shape[1]
    cols = np.floor(uv[inside, 0] / COARSE_STRIDE).astype(np.intp)
    rows = np.floor(uv[inside, 1] / COARSE_STRIDE).astype(np.intp)
    pairs = np.stack([np.nonzero(inside)[0], rows * cw + cols], axis=1)
    if not len(pairs):
        warnings.warn("no in-frustum superpoints; empty supervision", stacklevel=2)
    gt_coarse = CorrespondenceSet("ground_truth", pairs)

    fine_pts = hierarchy.fine_coords(cloud)
    fuv, _, fvalid = project_many(intr, pose.apply(fine_pts))
    finside = fvalid & (fuv[:, 0] >= 0) & (fuv[:, 0] < intr.width) & (fuv[:, 1] >= 0) & (fuv[:, 1] < intr.height)
    fw = pyramid.fine_shape[1]
    fcols = np.floor(fuv[finside, 0] / FINE_STRIDE).astype(np.intp)
    frows = np.floor(fuv[finside, 1] / FINE_STRIDE).astype(np.intp)
    return SupervisionBatch(gt_coarse=gt_coarse,
                            gt_frustum_labels=labels,
                            fine_point_ids=np.nonzero(finside)[0],
                            fine_positive_ids=frows * fw + fcols)


def mine_negative(anchor_feature, pixel_features, pixel_centers, pos_id, radius) -> int:
    """Hardest negative: most similar pixel with grid distance > radius.

    ``radius`` is measured in the same grid units as ``pixel_centers``.
    """
    centers = np.asarray(pixel_centers, dtype=np.float64)
    allowed = np.linalg.norm(centers - centers[pos_id], axis=1) > radius
    if not allowed.any():
        raise NoNegativeError("every pixel lies inside the safe radius")
    anchor = np.asarray(anchor_feature, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(anchor)
    if norm == 0.0:
        raise DegenerateFeatureError("zero-norm anchor feature")
    sims = normalized_rows(pixel_features) @ (anchor / norm)
    sims[~allowed] = -np.inf
    return int(sims.argmax())


def cosine_rows(a, b):
    """Differentiable per-row cosine similarity of two aligned row blocks."""
    if (np.linalg.norm(a.data, axis=1) == 0).any() or (np.linalg.norm(b.data, axis=1) == 0).any():
        raise DegenerateFeatureError("zero-norm feature row in cosine similarity")
    dot = ad.tsum(ad.mul(a, b), axis=1, keepdims=True)
    na = ad.sqrt(ad.tsum(ad.mul(a, a), axis=1, keepdims=True))
    nb = ad.sqrt(ad.tsum(ad.mul(b, b), axis=1, keepdims=True))
    return ad.reshape(ad.div(dot, ad.mul(na, nb)), (-1,))


def mine_coarse_triplets(batch: SupervisionBatch, point_feats, pixel_feats,
                         coarse_centers, cfg: LossConfig):
    """(anchor, positive, negative) index triples; unminable anchors skipped."""
    triplets = []
    feats = pixel_feats.data
    for sp_id, pos_id in batch.gt_coarse.pairs:
        try:
            neg = mine_negative(point_feats.data[sp_id], feats, coarse_centers,
                                pos_id, cfg.safe_radius)
        except NoNegativeError:
            continue
        triplets.append((sp_id, pos_id, neg))
    return triplets


def sample_fine_triplets(batch: SupervisionBatch, point_feats, pixel_feats,
                         fine_centers, cfg: LossConfig, rng):
    """Random in-frustum fine points with mined hardest negatives.

    The safe radius is converted from coarse cells to fine cells so it spans
    the same image area at both levels.
    """
    n_pool = len(batch.fine_point_ids)
    if n_pool == 0:
        return []
    take = min(cfg.n_fine_samples, n_pool)
    sel = rng.choice(n_pool, size=take, replace=False)
    radius = cfg.safe_radius * (COARSE_STRIDE // FINE_STRIDE)
    triplets = []
    feats = pixel_feats.data
    for i in sel:
        pid = batch.fine_point_ids[i]
        pos = batch.fine_positive_ids[i]
        try:
            neg = mine_negative(point_feats.data[pid], feats, fine_centers, pos, radius)
        except NoNegativeError:
            continue
        triplets.append((pid, pos, neg))
    return triplets


def _gather_triplet_rows(triplets, point_feats, pixel_feats):
    t = np.asarray(triplets, dtype=np.intp)
    anchors = ad.gather_rows(point_feats, t[:, 0])
    pos = ad.gather_rows(pixel_feats, t[:, 1])
    neg = ad.gather_rows(pixel_feats, t[:, 2])
    return anchors, pos, neg


def coarse_loss(triplets, point_feats, pixel_feats, cfg: LossConfig):
    """Two-sided hinge on cosine distances over mined triplets."""
    if not triplets:
        return ad.Tensor(0.0)
    anchors, pos, neg = _gather_triplet_rows(triplets, point_feats, pixel_feats)
    d_pos = 1.0 - cosine_rows(anchors, pos)
    d_neg = 1.0 - cosine_rows(anchors, neg)
    hinge_pos = ad.relu(d_pos - cfg.delta_pos)
    hinge_neg = ad.relu(cfg.delta_neg - d_neg)
    return ad.tsum(ad.add(hinge_pos, hinge_neg))


def optimizing_rates(s_pos, s_neg, cfg: LossConfig):
    """Clamped per-pair weights; treated as constants during backprop."""
    alpha_pos = np.maximum(0.0, 1.0 + cfg.delta_pos - np.asarray(s_pos))
    alpha_neg = np.maximum(0.0, np.asarray(s_neg) + cfg.delta_neg)
    return alpha_pos, alpha_neg


def circle_loss_from_similarities(s_pos, s_neg, cfg: LossConfig, rates=None):
    """log(1 + sum(exp(pos logits)) * sum(exp(neg logits))) over triplets.

    ``rates`` overrides the (alpha_pos, alpha_neg) pair; gradient checks use
    it to freeze the detached weights at the base point.
    """
    alpha_pos, alpha_neg = rates if rates is not None else optimizing_rates(s_pos.data, s_neg.data, cfg)
    pos_margin, neg_margin = cfg.fine_exponent_margins()
    pos_term = ad.tsum(ad.exp(ad.mul(s_pos - pos_margin, -cfg.gamma * alpha_pos)))
    neg_base = s_pos if cfg.printed_form else s_neg
    neg_term = ad.tsum(ad.exp(ad.mul(neg_base - neg_margin, cfg.gamma * alpha_neg)))
    return ad.log(1.0 + ad.mul(pos_term, neg_term))


def fine_loss(triplets, point_feats, pixel_feats, cfg: LossConfig):
    """Circle loss over sampled triplets with detached optimizing rates.

    The negative exponent uses the negative pair's similarity; the paper's
    printed variant (positive similarity in the negative term) is available
    through ``cfg.printed_form``.
    """
    if not triplets:
        return ad.Tensor(0.0)
    anchors, pos, neg = _gather_triplet_rows(triplets, point_feats, pixel_feats)
    return circle_loss_from_similarities(cosine_rows(anchors, pos),
                                         cosine_rows(anchors, neg), cfg)


def frustum_loss(scores: FrustumScores, labels):
    """Summed binary cross-entropy with probability clamping."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    s = ad.clip(scores.scores, 1e-7, 1.0 - 1e-7)
    pos = ad.mul(ad.log(s), labels)
    negl = ad.mul(ad.log(1.0 - s), 1.0 - labels)
    return -ad.tsum(ad.add(pos, negl))


def joint_loss(l_coarse, l_fine, l_cls, cfg: LossConfig):
    return ad.add(ad.add(ad.mul(l_coarse, cfg.lambda1), ad.mul(l_fine, cfg.lambda2)),
                  ad.mul(l_cls, cfg.lambda3))
