"""End-to-end plumbing: scene preparation, training, registration, evaluation.

A prepared scene caches everything deterministic (hierarchy, pyramid, ground
truth); the training loop re-mines negatives from the current features at
every step and applies one optimizer step per scene.  Registration runs the
forward pass tape-free, matches coarse-to-fine and recovers the pose with
the consensus solver at fine-grid scale.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as lo
from . import matching as ma
from .config import RunConfig
from .errors import EstimationFailureError, InsufficientDataError, NumericError
from .geometry import Pose
from .hierarchy import (FINE_STRIDE, build_image_pyramid, build_point_hierarchy,
                        select_node_points)
from .metrics import RegistrationResult, inlier_ratio, rre_rte
from .model import RegistrationNetwork
from .pose_solver import RansacConfig, ransac_epnp


@dataclass
class PreparedScene:
    scene: object
    hierarchy: object
    pyramid: object
    supervision: object
    index: int

    @property
    def id(self):
        return self.scene.id


def prepare_scene(scene, cfg: RunConfig, index=0) -> PreparedScene:
    h, w, _ = scene.image.shape
    pyramid = build_image_pyramid(w, h, cfg.model.patch_window)
    hierarchy = build_point_hierarchy(scene.cloud, cfg.model.n_superpoints,
                                      cfg.model.group_radius, seed=[cfg.seed, index])
    hierarchy = select_node_points(hierarchy, scene.cloud, cfg.model.node_points)
    supervision = lo.make_ground_truth(scene.gt_pose, scene.intrinsics, scene.cloud,
                                       hierarchy, pyramid)
    return PreparedScene(scene, hierarchy, pyramid, supervision, index)


def prepare_scenes(scenes, cfg: RunConfig):
    return [prepare_scene(s, cfg, i) for i, s in enumerate(scenes)]


def forward(network: RegistrationNetwork, prep: PreparedScene, cfg: RunConfig):
    """Feature maps and frustum scores for one scene."""
    img_coarse, img_fine = network.image_encoder(prep.scene.image, prep.pyramid)
    pt_coarse, pt_fine = network.point_encoder(prep.scene.cloud, prep.hierarchy)
    pt_coarse, img_coarse = network.stack(pt_coarse, img_coarse,
                                          prep.hierarchy.super_coords(prep.scene.cloud),
                                          prep.pyramid.coarse_centers())
    frustum = network.frustum_head(pt_coarse, cfg.model.frustum_threshold)
    return {"img_coarse": img_coarse, "img_fine": img_fine,
            "pt_coarse": pt_coarse, "pt_fine": pt_fine, "frustum": frustum}


def scene_loss(network, prep, cfg: RunConfig, loss_cfg: lo.LossConfig, rng):
    """Joint loss with freshly mined negatives; returns (tensor, components)."""
    out = forward(network, prep, cfg)
    coarse_triplets = lo.mine_coarse_triplets(prep.supervision, out["pt_coarse"].features,
                                              out["img_coarse"].features,
                                              prep.pyramid.coarse_centers(), loss_cfg)
    fine_triplets = lo.sample_fine_triplets(prep.supervision, out["pt_fine"].features,
                                            out["img_fine"].features,
                                            prep.pyramid.fine_centers(), loss_cfg, rng)
    l_coarse = lo.coarse_loss(coarse_triplets, out["pt_coarse"].features,
                              out["img_coarse"].features, loss_cfg)
    l_fine = lo.fine_loss(fine_triplets, out["pt_fine"].features,
                          out["img_fine"].features, loss_cfg)
    l_cls = lo.frustum_loss(out["frustum"], prep.supervision.gt_frustum_labels)
    total = lo.joint_loss(l_coarse, l_fine, l_cls, loss_cfg)
    parts = {"coarse": l_coarse.item(), "fine": l_fine.item(),
             "classify": l_cls.item(), "joint": total.item()}
    return total, parts


def loss_config_from(cfg: RunConfig) -> lo.LossConfig:
    s = cfg.loss
    return lo.LossConfig(delta_pos=s.delta_pos, delta_neg=s.delta_neg, gamma=s.gamma,
                         safe_radius=s.safe_radius, lambda1=s.lambda1, lambda2=s.lambda2,
                         lambda3=s.lambda3, n_fine_samples=s.n_fine_samples,
                         printed_form=s.printed_form,
                         fine_margin_space=s.fine_margin_space)


def build_network(cfg: RunConfig, seed=None) -> RegistrationNetwork:
    return RegistrationNetwork(cfg.model,
                               seed=cfg.seed if seed is None else seed,
                               use_self=not cfg.ablation.disable_self_attention,
                               use_cross=not cfg.ablation.disable_cross_attention)


def train(scenes, cfg: RunConfig, network=None, epoch_callback=None):
    """Train on prepared or raw scenes; returns (network, history rows)."""
    prepared = [s if isinstance(s, PreparedScene) else prepare_scene(s, cfg, i)
                for i, s in enumerate(scenes)]
    if network is None:
        network = build_network(cfg)
    loss_cfg = loss_config_from(cfg)
    params = network.parameters()
    opt = ad.AdamState(params, lr=cfg.optim.learning_rate,
                       beta1=cfg.optim.beta1, beta2=cfg.optim.beta2, eps=cfg.optim.eps,
                       lr_decay=cfg.optim.lr_decay, lr_decay_every=cfg.optim.lr_decay_every)
    history = []
    for epoch in range(cfg.optim.epochs):
        opt.set_epoch(epoch)
        rng = np.random.default_rng([cfg.seed, 1000 + epoch])
        sums = {"coarse": 0.0, "fine": 0.0, "classify": 0.0, "joint": 0.0}
        for prep in prepared:
            total, parts = scene_loss(network, prep, cfg, loss_cfg, rng)
            if not np.isfinite(total.item()):
                raise NumericError(f"non-finite loss at epoch {epoch}, scene '{prep.id}': {parts}")
            for p in params:
                p.grad = np.zeros_like(p.data)
            ad.backward(total)
            opt.apply_step()
            opt.zero_grad()
            for key in sums:
                sums[key] += parts[key]
        row = {"epoch": epoch, "lr": opt.lr}
        row.update({k: v / len(prepared) for k, v in sums.items()})
        history.append(row)
        if epoch_callback is not None:
            epoch_callback(row)
    return network, history


def _fine_scale_intrinsics(intr):
    return intr.scaled(1.0 / FINE_STRIDE)


def _solver_input_fine(pairs, prep):
    fine_coords = prep.hierarchy.fine_coords(prep.scene.cloud)
    pts = fine_coords[pairs.point_ids]
    pix = np.array([ma.pixel_center(prep.pyramid, "fine", p) for p in pairs.pixel_ids])
    return pts, pix


def _solver_input_coarse(pairs, prep):
    """Coarse pairs remapped to fine resolution (coarse-only ablation)."""
    pts = prep.hierarchy.super_coords(prep.scene.cloud)[pairs.point_ids]
    centers = np.array([ma.pixel_center(prep.pyramid, "coarse", p) for p in pairs.pixel_ids])
    return pts, centers * 4.0  # coarse cells span 4 fine cells


def _fine_only_match(out, prep, cfg):
    """Node points of in-frustum superpoints against the whole fine grid."""
    keep = out["frustum"].in_frustum_ids()
    nodes = np.concatenate([prep.hierarchy.node_points[i] for i in keep]) if len(keep) else \
        np.empty(0, dtype=np.intp)
    if nodes.size == 0:
        return ma.CorrespondenceSet("fine", np.empty((0, 2)), np.empty(0))
    nodes = np.unique(nodes)
    sims = ma.similarity_matrix(out["pt_fine"].features.data[nodes],
                                out["img_fine"].features.data)
    best = sims.argmax(axis=1)
    pairs = np.stack([nodes, best], axis=1)
    return ma.CorrespondenceSet("fine", pairs, sims[np.arange(len(nodes)), best])


def register_scene(network, prep: PreparedScene, cfg: RunConfig):
    """Pose estimate plus the correspondence sets and timing that led to it."""
    t0 = time.perf_counter()
    with ad.no_grad():
        out = forward(network, prep, cfg)
        coarse_pairs = ma.coarse_match(out["pt_coarse"], out["img_coarse"], out["frustum"],
                                       mutual_check=cfg.model.mutual_check)
        if cfg.ablation.fine_only:
            fine_pairs = _fine_only_match(out, prep, cfg)
        elif cfg.ablation.coarse_only:
            fine_pairs = ma.CorrespondenceSet("fine", np.empty((0, 2)), np.empty(0))
        else:
            fine_pairs = ma.fine_match(coarse_pairs, out["pt_fine"], out["img_fine"],
                                       prep.hierarchy, prep.pyramid)
    inference_ms = 1000.0 * (time.perf_counter() - t0)

    if cfg.ablation.coarse_only:
        pts, pix = _solver_input_coarse(coarse_pairs, prep)
    else:
        pts, pix = _solver_input_fine(fine_pairs, prep)

    t1 = time.perf_counter()
    estimate = ransac_epnp(pts, pix, _fine_scale_intrinsics(prep.scene.intrinsics),
                           RansacConfig(max_iterations=cfg.ransac.max_iterations,
                                        inlier_threshold=cfg.ransac.inlier_threshold,
                                        confidence=cfg.ransac.confidence,
                                        seed=cfg.seed + prep.index))
    pose_ms = 1000.0 * (time.perf_counter() - t1)
    return {"estimate": estimate, "coarse": coarse_pairs, "fine": fine_pairs,
            "inference_ms": inference_ms, "pose_ms": pose_ms, "outputs": out}


def frustum_accuracy(out, prep, cfg: RunConfig) -> float:
    predicted = out["frustum"].values >= cfg.model.frustum_threshold
    return float((predicted == (prep.supervision.gt_frustum_labels > 0.5)).mean())


def evaluate_scene(network, prep: PreparedScene, cfg: RunConfig) -> RegistrationResult:
    """One frame's metrics; a failed estimation scores as the identity guess."""
    try:
        reg = register_scene(network, prep, cfg)
        rre, rte = rre_rte(prep.scene.gt_pose, reg["estimate"].pose)
        runtime = reg["inference_ms"] + reg["pose_ms"]
        pairs = reg["coarse"] if cfg.ablation.coarse_only else reg["fine"]
    except (EstimationFailureError, InsufficientDataError) as exc:
        warnings.warn(f"registration failed on '{prep.id}': {exc}", stacklevel=2)
        rre, rte = rre_rte(prep.scene.gt_pose, Pose.identity())
        return RegistrationResult(prep.id, rre, rte, ir=0.0, n_pairs=0, runtime_ms=float("nan"))

    ir = float("nan")
    if not cfg.ablation.coarse_only and len(reg["fine"]):
        pts = prep.hierarchy.fine_coords(prep.scene.cloud)[reg["fine"].point_ids]
        ir = inlier_ratio(reg["fine"], pts, prep.scene.gt_pose,
                          _fine_scale_intrinsics(prep.scene.intrinsics),
                          prep.pyramid, cfg.ir_tau)
    return RegistrationResult(prep.id, rre, rte, ir=ir, n_pairs=len(pairs), runtime_ms=runtime)


def evaluate_scenes(network, prepared, cfg: RunConfig):
    return [evaluate_scene(network, prep, cfg) for prep in prepared]
