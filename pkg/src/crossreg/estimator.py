"""Scikit-learn style facade over the registration pipeline.

``fit`` trains the two-stream network on a list of ScenePair samples (the
ground-truth poses inside the scenes are the supervision, so ``y`` stays
None); ``predict`` registers scenes and returns one pose per scene.  All
constructor arguments are plain hyperparameters, so ``get_params`` /
``set_params`` and cloning compose with the wider scikit-learn ecosystem.
"""

import numpy as np
from sklearn.base import BaseEstimator

from . import pipeline
from .config import RunConfig
from .metrics import registration_recall, rre_rte
from .validation import check_scenes


class CoarseToFineRegistrar(BaseEstimator):
    """Camera-to-point-cloud registration via coarse-to-fine matching."""

    def __init__(self, coarse_channels=64, fine_channels=32, blocks=2,
                 n_superpoints=64, group_radius=0.6, patch_window=16,
                 node_points=4, epochs=200, learning_rate=1e-3, lr_decay=0.5,
                 lr_decay_every=50, n_fine_samples=64,
                 fine_margin_space="similarity", frustum_threshold=0.5,
                 ransac_threshold=3.0, ransac_iterations=1000,
                 disable_self_attention=False, disable_cross_attention=False,
                 coarse_only=False, fine_only=False, seed=0):
        self.coarse_channels = coarse_channels
        self.fine_channels = fine_channels
        self.blocks = blocks
        self.n_superpoints = n_superpoints
        self.group_radius = group_radius
        self.patch_window = patch_window
        self.node_points = node_points
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.n_fine_samples = n_fine_samples
        self.fine_margin_space = fine_margin_space
        self.frustum_threshold = frustum_threshold
        self.ransac_threshold = ransac_threshold
        self.ransac_iterations = ransac_iterations
        self.disable_self_attention = disable_self_attention
        self.disable_cross_attention = disable_cross_attention
        self.coarse_only = coarse_only
        self.fine_only = fine_only
        self.seed = seed

    def _run_config(self) -> RunConfig:
        cfg = RunConfig()
        cfg.seed = self.seed
        cfg.model.coarse_channels = self.coarse_channels
        cfg.model.fine_channels = self.fine_channels
        cfg.model.blocks = self.blocks
        cfg.model.n_superpoints = self.n_superpoints
        cfg.model.group_radius = self.group_radius
        cfg.model.patch_window = self.patch_window
        cfg.model.node_points = self.node_points
        cfg.model.frustum_threshold = self.frustum_threshold
        cfg.loss.n_fine_samples = self.n_fine_samples
        cfg.loss.fine_margin_space = self.fine_margin_space
        cfg.optim.epochs = self.epochs
        cfg.optim.learning_rate = self.learning_rate
        cfg.optim.lr_decay = self.lr_decay
        cfg.optim.lr_decay_every = self.lr_decay_every
        cfg.ransac.inlier_threshold = self.ransac_threshold
        cfg.ransac.max_iterations = self.ransac_iterations
        cfg.ablation.disable_self_attention = self.disable_self_attention
        cfg.ablation.disable_cross_attention = self.disable_cross_attention
        cfg.ablation.coarse_only = self.coarse_only
        cfg.ablation.fine_only = self.fine_only
        return cfg

    def fit(self, X, y=None):
        """Train on scenes; their embedded poses are the supervision."""
        scenes = check_scenes(X, minimum=1)
        cfg = self._run_config()
        prepared = pipeline.prepare_scenes(scenes, cfg)
        self.network_, self.history_ = pipeline.train(prepared, cfg)
        self.config_ = cfg
        self.n_features_in_ = len(scenes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("this CoarseToFineRegistrar instance is not fitted yet")

    def predict(self, X):
        """Estimated Pose per scene (cloud frame to camera frame)."""
        return [est.pose for est in self.predict_estimate(X)]

    def predict_estimate(self, X):
        """Full PoseEstimate per scene (pose, inliers, reprojection error)."""
        self._check_fitted()
        scenes = check_scenes(X)
        out = []
        for i, scene in enumerate(scenes):
            prep = pipeline.prepare_scene(scene, self.config_, i)
            out.append(pipeline.register_scene(self.network_, prep, self.config_)["estimate"])
        return out

    def score(self, X, y=None):
        """Registration recall at the 10 deg / 5 m thresholds."""
        self._check_fitted()
        scenes = check_scenes(X)
        prepared = pipeline.prepare_scenes(scenes, self.config_)
        results = pipeline.evaluate_scenes(self.network_, prepared, self.config_)
        return registration_recall(results, 10.0, 5.0)

    def transform(self, X):
        """Residual (rre_deg, rte_m) rows against each scene's stored pose."""
        estimates = self.predict_estimate(X)
        scenes = list(X)
        return np.array([rre_rte(s.gt_pose, e.pose) for s, e in zip(scenes, estimates)])
