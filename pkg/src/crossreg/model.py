"""Full network assembly: encoders, attention stack and frustum head."""

import numpy as np

from . import checkpoint
from .attention import AttentionStack
from .backbone import ImageEncoder, PointEncoder
from .config import ModelConfig
from .errors import CheckpointError
from .matching import FrustumHead


class RegistrationNetwork:
    """Owns every learnable tensor; forward passes are free functions of it."""

    def __init__(self, cfg: ModelConfig, seed=0, use_self=True, use_cross=True):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.image_encoder = ImageEncoder(rng, cfg.coarse_channels, cfg.fine_channels)
        self.point_encoder = PointEncoder(rng, cfg.coarse_channels, cfg.fine_channels,
                                          use_intensity=cfg.use_intensity)
        self.stack = AttentionStack(rng, cfg.coarse_channels, blocks=cfg.blocks,
                                    value_source=cfg.cross_value_source,
                                    use_self=use_self, use_cross=use_cross)
        self.frustum_head = FrustumHead(rng, cfg.coarse_channels)

    def named_parameters(self) -> dict:
        params = {}
        params.update(self.image_encoder.named_parameters("image"))
        params.update(self.point_encoder.named_parameters("point"))
        params.update(self.stack.named_parameters("stack"))
        params.update(self.frustum_head.named_parameters("frustum"))
        return params

    def parameters(self):
        named = self.named_parameters()
        return [named[k] for k in sorted(named)]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def save(self, path):
        checkpoint.write_container(path, {k: v.data for k, v in self.named_parameters().items()})

    def load(self, path):
        stored = checkpoint.read_container(path)
        params = self.named_parameters()
        for name in params:
            if name not in stored:
                raise CheckpointError(f"{path}: missing tensor '{name}'")
            if stored[name].shape != params[name].data.shape:
                raise CheckpointError(f"{path}: tensor '{name}' has shape {stored[name].shape}, "
                                      f"expected {params[name].data.shape}")
        extra = set(stored) - set(params)
        if extra:
            raise CheckpointError(f"{path}: unexpected tensor '{sorted(extra)[0]}'")
        for name, p in params.items():
            p.data[...] = stored[name]

    def mac_estimate(self, pyramid, n_fine_points, n_superpoints) -> dict:
        """Static multiply-accumulate counts per stage for one forward pass."""
        c = self.cfg.coarse_channels
        f = self.cfg.fine_channels
        stages = {
            "image_encoder": self.image_encoder.mac_count(pyramid),
            "point_encoder": self.point_encoder.mac_count(n_fine_points, n_superpoints),
            "attention": self.stack.mac_count(n_superpoints, pyramid.n_coarse),
            "frustum_head": self.frustum_head.mac_count(n_superpoints),
            "matching": n_superpoints * pyramid.n_coarse * c
                        + n_superpoints * self.cfg.node_points * self.cfg.patch_window ** 2 * f,
        }
        stages["total"] = sum(stages.values())
        return stages
