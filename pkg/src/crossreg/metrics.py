"""Registration and correspondence quality metrics.

The rotation error sums the absolute intrinsic-XYZ Euler angles of the
residual rotation, in degrees; recall counts frames whose rotation and
translation errors both clear their thresholds; the inlier ratio reprojects
each fine pair through the ground-truth pose and counts strict hits.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError
from .geometry import CameraIntrinsics, Pose, euler_angles, project_many
from .hierarchy import ImagePyramid
from .matching import CorrespondenceSet, pixel_center

METRIC_LOG_COLUMNS = ["frame", "rre_deg", "rte_m", "ir", "n_pairs", "runtime_ms"]


@dataclass
class RegistrationResult:
    frame: str
    rre: float
    rte: float
    ir: float = float("nan")
    n_pairs: int = 0
    runtime_ms: float = float("nan")
    success: dict = field(default_factory=dict)


def rre_rte(gt: Pose, est: Pose):
    """(rotation error deg, translation error m) between two poses."""
    if np.array_equal(gt.rotation, est.rotation):
        rre = 0.0  # exact-zero contract for identical rotations
    else:
        rre = float(np.abs(euler_angles(gt.rotation.T @ est.rotation)).sum())
    rte = float(np.linalg.norm(gt.translation - est.translation))
    return rre, rte


def registration_recall(results, rre_thresh: float, rte_thresh: float) -> float:
    """Fraction of frames with rre < rre_thresh and rte < rte_thresh."""
    if not results:
        raise UndefinedMetricError("registration recall over an empty result list")
    hits = sum(1 for r in results if r.rre < rre_thresh and r.rte < rte_thresh)
    return hits / len(results)


def inlier_ratio(pairs: CorrespondenceSet, points_xyz, gt_pose: Pose,
                 intr: CameraIntrinsics, pyramid: ImagePyramid, tau: float) -> float:
    """Fraction of fine pairs whose ground-truth reprojection lands within tau.

    ``points_xyz`` holds the 3-D coordinates aligned with the pair rows;
    ``intr`` must be expressed at the fine-grid scale, and ``tau`` is in
    fine-grid pixels.  Pairs that project behind the camera count as outliers.
    """
    if len(pairs) == 0:
        raise UndefinedMetricError("inlier ratio over an empty correspondence set")
    uv, _, valid = project_many(intr, gt_pose.apply(points_xyz))
    centers = np.array([pixel_center(pyramid, pairs.level, p) for p in pairs.pixel_ids])
    dist = np.linalg.norm(uv - centers, axis=1)
    return float((valid & (dist < tau)).sum() / len(pairs))


def write_metric_log(path, results):
    """Per-frame CSV with the schema shared by the evaluation command."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_LOG_COLUMNS)
        for r in results:
            writer.writerow([r.frame, f"{r.rre:.6f}", f"{r.rte:.6f}",
                             f"{r.ir:.6f}", r.n_pairs, f"{r.runtime_ms:.3f}"])


def threshold_table(results, thresholds=((None, None), (45.0, 10.0), (10.0, 5.0))):
    """Aggregate rows mirroring the evaluation report layout.

    Frames whose errors exceed a row's thresholds are dropped from that
    row's mean/std; the recall column is the surviving fraction (empty for
    the unfiltered row).
    """
    if not results:
        raise UndefinedMetricError("aggregation over an empty result list")
    rows = []
    for rre_t, rte_t in thresholds:
        if rre_t is None:
            kept = list(results)
            label = "none/none"
            rr = ""
        else:
            kept = [r for r in results if r.rre < rre_t and r.rte < rte_t]
            label = f"{rre_t:g}/{rte_t:g}"
            rr = f"{100.0 * len(kept) / len(results):.2f}"
        if kept:
            rres = np.array([r.rre for r in kept])
            rtes = np.array([r.rte for r in kept])
            stats = [rres.mean(), rres.std(), rtes.mean(), rtes.std()]
        else:
            stats = [float("nan")] * 4
        rows.append({"threshold": label, "rre_mean": stats[0], "rre_std": stats[1],
                     "rte_mean": stats[2], "rte_std": stats[3], "rr_percent": rr,
                     "n_frames": len(kept)})
    return rows


def write_threshold_table(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "rre_mean", "rre_std", "rte_mean", "rte_std",
                         "rr_percent", "n_frames"])
        for row in rows:
            writer.writerow([row["threshold"], f"{row['rre_mean']:.6f}", f"{row['rre_std']:.6f}",
                             f"{row['rte_mean']:.6f}", f"{row['rte_std']:.6f}",
                             row["rr_percent"], row["n_frames"]])
