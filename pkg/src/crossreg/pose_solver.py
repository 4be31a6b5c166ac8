"""Closed-form perspective-n-point estimation with a consensus wrapper.

The solver expresses the 3-D points as barycentric combinations of four
control points (centroid plus principal axes), recovers the control points
in the camera frame from the null space of the 2n x 12 projection system,
resolves the kernel scale with the classic beta cases (one to three kernel
vectors, each polished by a few Gauss-Newton steps on the inter-control
distances) and keeps the candidate with the lowest reprojection error.  The
final rotation comes from an orthogonal Procrustes alignment, so it is
orthonormal to machine precision.

RANSAC draws each minimal sample from an rng seeded by (base seed,
iteration), making runs reproducible and iteration order irrelevant.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateConfigurationError, EstimationFailureError,
                     InsufficientDataError)
from .geometry import CameraIntrinsics, Pose

_PAIR_IDX = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
# column order of the squared-distance system in terms of beta_i * beta_j
_BETA_COLS = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2), (0, 3), (1, 3), (2, 3), (3, 3)]


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold: float = 3.0  # pixels
    min_sample: int = 4
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.min_sample < 4:
            raise DegenerateConfigurationError("EPnP needs at least 4 pairs per sample")
        if not 0.0 < self.confidence < 1.0:
            raise DegenerateConfigurationError("confidence must be in (0, 1)")


@dataclass
class PoseEstimate:
    pose: Pose
    inlier_ids: np.ndarray
    mean_reprojection_error: float


def _raw_reprojection_errors(r, t, points, pixels, intr):
    cam = points @ r.T + t
    z = cam[:, 2]
    err = np.full(len(points), np.inf)
    front = z > 0
    u = intr.fx * cam[front, 0] / z[front] + intr.cx
    v = intr.fy * cam[front, 1] / z[front] + intr.cy
    err[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return err


def reprojection_errors(pose: Pose, points, pixels, intr: CameraIntrinsics):
    """Pixel distance between projections and observations; inf behind camera."""
    return _raw_reprojection_errors(pose.rotation, pose.translation,
                                    np.asarray(points, dtype=np.float64),
                                    np.asarray(pixels, dtype=np.float64), intr)


def _control_points(points):
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] < 1e-12 * max(eigval[2], 1e-300):
        raise DegenerateConfigurationError("points are (near) coplanar or collinear")
    scales = np.sqrt(eigval)
    return np.vstack([centroid, centroid + scales[::-1, None] * eigvec.T[::-1]])


def _barycentric(points, control):
    basis = (control[1:] - control[0]).T
    try:
        coeff = np.linalg.solve(basis, (points - control[0]).T).T
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfigurationError("control-point basis is singular") from exc
    return np.hstack([1.0 - coeff.sum(axis=1, keepdims=True), coeff])


def _kernel(alphas, pixels, intr):
    n = len(alphas)
    m = np.zeros((2 * n, 12))
    for j in range(4):
        a = alphas[:, j]
        m[0::2, 3 * j + 0] = a * intr.fx
        m[0::2, 3 * j + 2] = a * (intr.cx - pixels[:, 0])
        m[1::2, 3 * j + 1] = a * intr.fy
        m[1::2, 3 * j + 2] = a * (intr.cy - pixels[:, 1])
    _, vecs = np.linalg.eigh(m.T @ m)
    return vecs[:, :4].T.reshape(4, 4, 3)  # kernel vectors, most null first


def _distance_system(kernel, control):
    i_idx = [i for i, _ in _PAIR_IDX]
    j_idx = [j for _, j in _PAIR_IDX]
    rho = ((control[i_idx] - control[j_idx]) ** 2).sum(axis=1)
    dv = kernel[:, i_idx] - kernel[:, j_idx]
    l_mat = np.zeros((6, 10))
    for col, (a, b) in enumerate(_BETA_COLS):
        prod = (dv[a] * dv[b]).sum(axis=1)
        l_mat[:, col] = prod if a == b else 2.0 * prod
    return l_mat, rho, dv


def _solve_ls(a, b):
    """Least squares via normal equations; tiny systems dominate the profile."""
    try:
        return np.linalg.solve(a.T @ a, a.T @ b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a, b, rcond=None)[0]


def _initial_betas(l_mat, rho):
    betas = []
    # one kernel vector: closed-form ratio
    b1 = np.zeros(4)
    b1[0] = np.sqrt(abs(rho.sum() / l_mat[:, 0].sum())) if l_mat[:, 0].sum() > 0 else 0.0
    betas.append(b1)
    # two kernel vectors: least squares on [b11, b12, b22]
    sol = _solve_ls(l_mat[:, :3], rho)
    b2 = np.zeros(4)
    b2[0] = np.sqrt(abs(sol[0]))
    b2[1] = np.sqrt(abs(sol[2])) * np.sign(sol[1]) * np.sign(sol[0] if sol[0] != 0 else 1.0)
    betas.append(b2)
    # three kernel vectors: least squares on [b11, b12, b22, b13, b23]
    sol = _solve_ls(l_mat[:, :5], rho)
    b3 = np.zeros(4)
    b3[0] = np.sqrt(abs(sol[0]))
    b3[1] = np.sqrt(abs(sol[2])) * np.sign(sol[1]) * np.sign(sol[0] if sol[0] != 0 else 1.0)
    if b3[0] > 1e-12:
        b3[2] = sol[3] / b3[0]
    betas.append(b3)
    return betas


def _gauss_newton_all(betas, dv, rho, iterations=3):
    """Advance every beta case in lockstep with batched normal equations."""
    betas = betas.copy()
    flat = dv.reshape(4, -1)
    for _ in range(iterations):
        combo = (betas @ flat).reshape(len(betas), 6, 3)
        resid = (combo * combo).sum(axis=2) - rho
        jac = 2.0 * (dv[None] * combo[:, None]).sum(axis=3).transpose(0, 2, 1)
        jtj = jac.transpose(0, 2, 1) @ jac
        jtr = jac.transpose(0, 2, 1) @ -resid[..., None]
        try:
            betas = betas + np.linalg.solve(jtj, jtr)[..., 0]
        except np.linalg.LinAlgError:
            break
    return betas


def _procrustes_all(world, cameras):
    """Batched rigid alignment cameras[k] ~= R_k @ world + t_k."""
    wc = world.mean(axis=0)
    cc = cameras.mean(axis=1)
    h = np.einsum("ni,kno->kio", world - wc, cameras - cc[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.transpose(0, 2, 1) @ u.transpose(0, 2, 1)))
    flip = np.repeat(np.eye(3)[None], len(cameras), axis=0)
    flip[:, 2, 2] = d
    r = vt.transpose(0, 2, 1) @ flip @ u.transpose(0, 2, 1)
    t = cc - np.einsum("kio,o->ki", r, wc)
    return r, t


def _epnp_raw(points, pixels, intr):
    control = _control_points(points)
    alphas = _barycentric(points, control)
    kernel = _kernel(alphas, pixels, intr)
    l_mat, rho, dv = _distance_system(kernel, control)

    betas = _gauss_newton_all(np.array(_initial_betas(l_mat, rho)), dv, rho)
    cam_control = (betas @ kernel.reshape(4, -1)).reshape(-1, 4, 3)
    cam_points = alphas @ cam_control  # (cases, n, 3)
    wrong_side = cam_points[:, :, 2].sum(axis=1) < 0
    cam_points[wrong_side] = -cam_points[wrong_side]
    in_front = (cam_points[:, :, 2] > 0).all(axis=1)
    if not in_front.any():
        raise DegenerateConfigurationError("no beta case produced points in front of the camera")
    rs, ts = _procrustes_all(points, cam_points[in_front])
    cams = points @ rs.transpose(0, 2, 1) + ts[:, None]
    z = cams[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cams[:, :, 0] / z + intr.cx
        v = intr.fy * cams[:, :, 1] / z + intr.cy
        errs = np.hypot(u - pixels[:, 0], v - pixels[:, 1]).mean(axis=1)
    errs[np.isnan(errs) | (z <= 0).any(axis=1)] = np.inf
    if not np.isfinite(errs).any():
        raise DegenerateConfigurationError("no beta case produced points in front of the camera")
    k = int(errs.argmin())
    return rs[k], ts[k]


def epnp(points, pixels, intr: CameraIntrinsics) -> Pose:
    """Closed-form pose from n >= 4 correspondences (world point, pixel)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(points) < 4 or len(points) != len(pixels):
        raise InsufficientDataError(f"EPnP needs >= 4 pairs; got {len(points)} points, {len(pixels)} pixels")
    r, t = _epnp_raw(points, pixels, intr)
    return Pose(r, t)


def ransac_epnp(points, pixels, intr: CameraIntrinsics, cfg: RansacConfig) -> PoseEstimate:
    """Consensus loop around EPnP with a final refit on the best inlier set."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    if n < cfg.min_sample:
        raise InsufficientDataError(f"RANSAC needs >= {cfg.min_sample} pairs; got {n}")

    best_inliers = None
    best_rt = None
    best_err = np.inf
    needed = cfg.max_iterations
    for iteration in range(cfg.max_iterations):
        if iteration >= needed:
            break
        rng = np.random.default_rng([cfg.seed, iteration])
        sample = rng.choice(n, size=cfg.min_sample, replace=False)
        try:
            r, t = _epnp_raw(points[sample], pixels[sample], intr)
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        err = _raw_reprojection_errors(r, t, points, pixels, intr)
        inliers = np.nonzero(err <= cfg.inlier_threshold)[0]
        if len(inliers) < cfg.min_sample:
            continue
        mean_err = err[inliers].mean()
        if best_inliers is None or len(inliers) > len(best_inliers) or \
                (len(inliers) == len(best_inliers) and mean_err < best_err):
            best_inliers = inliers
            best_rt = (r, t)
            best_err = mean_err
            ratio = len(inliers) / n
            if ratio >= 1.0:
                needed = 0
            else:
                needed = min(needed, np.log(1.0 - cfg.confidence) / np.log(1.0 - ratio ** cfg.min_sample))

    if best_inliers is None:
        raise EstimationFailureError("no pose model reached the minimum consensus")

    try:
        r, t = _epnp_raw(points[best_inliers], pixels[best_inliers], intr)
        refit_err = _raw_reprojection_errors(r, t, points, pixels, intr)
        refit_inliers = np.nonzero(refit_err <= cfg.inlier_threshold)[0]
        if len(refit_inliers) >= cfg.min_sample:
            return PoseEstimate(Pose(r, t), refit_inliers, float(refit_err[refit_inliers].mean()))
    except (DegenerateConfigurationError, np.linalg.LinAlgError):
        pass
    return PoseEstimate(Pose(*best_rt), best_inliers, float(best_err))
