"""Two-stream encoders producing coarse and fine feature maps.

The image stream is a three-stage strided patch-pooling pyramid (2x2 patch
flatten + MLP per stage) whose decoder upsamples the coarse stage back to
the fine grid through a skip connection.  The point stream pools encoded
relative coordinates over each point-to-node group (max over members) for
superpoint features and adds a projected superpoint context onto per-point
encodings for fine features.  Both streams are far lighter than full CNN or
kernel-point stacks but keep the same two-level contract.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nnet
from .errors import ContractError, NumericError
from .geometry import PointCloud
from .hierarchy import ImagePyramid, PointHierarchy

COARSE = "coarse"
FINE = "fine"
IMAGE = "image"
POINT = "point"


@dataclass
class FeatureMap:
    """Row-per-element feature block tied to a level and modality."""

    ids: np.ndarray
    features: ad.Tensor
    level: str
    modality: str

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.intp)
        if len(self.ids) != self.features.shape[0]:
            raise ContractError("one feature row per id required")

    @property
    def width(self):
        return self.features.shape[1]

    def with_features(self, features):
        return FeatureMap(self.ids, features, self.level, self.modality)


def _check_finite(name, tensor):
    if not np.isfinite(tensor.data).all():
        raise NumericError(f"{name} produced non-finite features")


def _pool_indices(rows, cols):
    """Row ids of the four children of each 2x2 block, row-major parents."""
    rr, cc = np.mgrid[0 : rows // 2, 0 : cols // 2]
    base = (rr * 2) * cols + cc * 2
    quads = [base, base + 1, base + cols, base + cols + 1]
    return [q.ravel() for q in quads]


def _patch_merge(x, rows, cols):
    """Halve a row-major grid by flattening each 2x2 patch into channels."""
    quads = _pool_indices(rows, cols)
    return ad.concat([ad.gather_rows(x, q) for q in quads], axis=1)


class ImageEncoder:
    """Pyramid encoder over a (H, W, 3) image in [0, 1]."""

    def __init__(self, rng, coarse_channels=64, fine_channels=32):
        self.coarse_channels = coarse_channels
        self.fine_channels = fine_channels
        self.stage1 = nnet.MLP(rng, [12, fine_channels, fine_channels])
        self.stage2 = nnet.MLP(rng, [4 * fine_channels, coarse_channels])
        self.stage3 = nnet.MLP(rng, [4 * coarse_channels, coarse_channels, coarse_channels])
        self.decoder = nnet.MLP(rng, [fine_channels + coarse_channels, fine_channels, fine_channels])

    def __call__(self, image, pyramid: ImagePyramid):
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        if (h, w) != (pyramid.height, pyramid.width):
            raise ContractError(f"image {h}x{w} does not match pyramid {pyramid.height}x{pyramid.width}")

        rgb = ad.Tensor(image.reshape(h * w, 3))
        f1 = self.stage1(_patch_merge(rgb, h, w))                      # (h/2*w/2, fine)
        f2 = ad.relu(self.stage2(_patch_merge(f1, h // 2, w // 2)))    # (h/4*w/4, coarse)
        f3 = self.stage3(_patch_merge(f2, h // 4, w // 4))             # (h/8*w/8, coarse)

        fh, fw = pyramid.fine_shape
        ch, cw = pyramid.coarse_shape
        rr, cc = np.mgrid[0:fh, 0:fw]
        up_idx = ((rr // 4) * cw + (cc // 4)).ravel()
        fine = self.decoder(ad.concat([f1, ad.gather_rows(f3, up_idx)], axis=1))

        _check_finite("image encoder", f3)
        _check_finite("image encoder", fine)
        coarse_map = FeatureMap(np.arange(pyramid.n_coarse), f3, COARSE, IMAGE)
        fine_map = FeatureMap(np.arange(pyramid.n_fine), fine, FINE, IMAGE)
        return coarse_map, fine_map

    def named_parameters(self, prefix="image"):
        return nnet.collect({f"{prefix}.stage1": self.stage1, f"{prefix}.stage2": self.stage2,
                             f"{prefix}.stage3": self.stage3, f"{prefix}.decoder": self.decoder})

    def mac_count(self, pyramid: ImagePyramid):
        fh, fw = pyramid.fine_shape
        n1, n2, n3 = fh * fw, fh * fw // 4, fh * fw // 16
        return (self.stage1.mac_count(n1) + self.stage2.mac_count(n2)
                + self.stage3.mac_count(n3) + self.decoder.mac_count(n1))


class PointEncoder:
    """Group-pooled superpoint features plus contextual per-point features."""

    def __init__(self, rng, coarse_channels=64, fine_channels=32, use_intensity=True):
        self.coarse_channels = coarse_channels
        self.fine_channels = fine_channels
        self.use_intensity = use_intensity
        in_dim = 4 if use_intensity else 3
        self.encoder = nnet.MLP(rng, [in_dim, fine_channels, fine_channels])
        self.super_head = nnet.MLP(rng, [fine_channels, coarse_channels, coarse_channels])
        self.fine_head = nnet.MLP(rng, [in_dim, fine_channels, fine_channels])
        self.context = nnet.Linear(rng, coarse_channels, fine_channels)

    def _point_inputs(self, cloud, hierarchy, owner):
        fine_pts = hierarchy.fine_coords(cloud)
        super_pts = hierarchy.super_coords(cloud)
        rel = fine_pts - super_pts[owner]
        if self.use_intensity:
            if cloud.intensity is not None:
                inten = cloud.intensity[hierarchy.fine_indices]
            else:
                inten = np.zeros(hierarchy.n_fine)
            rel = np.hstack([rel, inten[:, None]])
        return rel

    def __call__(self, cloud: PointCloud, hierarchy: PointHierarchy):
        if hierarchy.n_super == 0 or hierarchy.n_fine == 0:
            raise ContractError("point hierarchy is empty")
        owner = hierarchy.group_of_fine()
        if (owner < 0).any():
            # points beyond every group still get features, anchored to the
            # nearest surviving superpoint
            fine_pts = hierarchy.fine_coords(cloud)
            super_pts = hierarchy.super_coords(cloud)
            loose = np.nonzero(owner < 0)[0]
            d2 = ((fine_pts[loose, None, :] - super_pts[None, :, :]) ** 2).sum(axis=2)
            owner = owner.copy()
            owner[loose] = d2.argmin(axis=1)

        inputs = ad.Tensor(self._point_inputs(cloud, hierarchy, owner))
        encoded = self.encoder(inputs)
        pooled = ad.concat([ad.tmax(ad.gather_rows(encoded, members), axis=0, keepdims=True)
                            for members in hierarchy.groups], axis=0)
        coarse = self.super_head(pooled)

        fine = ad.add(self.fine_head(inputs), self.context(ad.gather_rows(coarse, owner)))
        _check_finite("point encoder", coarse)
        _check_finite("point encoder", fine)
        coarse_map = FeatureMap(np.arange(hierarchy.n_super), coarse, COARSE, POINT)
        fine_map = FeatureMap(np.arange(hierarchy.n_fine), fine, FINE, POINT)
        return coarse_map, fine_map

    def named_parameters(self, prefix="point"):
        return nnet.collect({f"{prefix}.encoder": self.encoder, f"{prefix}.super_head": self.super_head,
                             f"{prefix}.fine_head": self.fine_head, f"{prefix}.context": self.context})

    def mac_count(self, n_fine, n_super):
        return (self.encoder.mac_count(n_fine) + self.super_head.mac_count(n_super)
                + self.fine_head.mac_count(n_fine) + self.context.mac_count(n_fine))
