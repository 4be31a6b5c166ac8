"""Coarse-level attention stack mixing the two modalities.

Each round applies self-attention within every modality and then exchanges
information with cross-attention, all followed by feed-forward blocks with
residual connections and layer normalization.  Queries and keys are always
dotted across modalities in the cross step; the ``value_source`` switch
controls which modality's value projection produces the aggregated rows:

* ``"query_side"`` (default) projects the key-side features with the query
  modality's value matrix, which is the only dimension-consistent reading of
  aggregating "own" values over foreign keys;
* ``"key_side"`` is the conventional variant (key modality projects itself).
"""

import numpy as np

from . import autodiff as ad
from . import nnet
from .backbone import FeatureMap
from .errors import ConfigError

VALUE_SOURCES = ("query_side", "key_side")


def attention_matrix(q, k):
    """Row-stochastic attention weights softmax(q k^T / sqrt(d))."""
    scale = 1.0 / np.sqrt(q.shape[1])
    return ad.softmax_rows(ad.mul(ad.matmul(q, ad.transpose(k)), scale))


def scaled_dot_attention(q, k, v):
    return ad.matmul(attention_matrix(q, k), v)


class PositionalEncoder:
    """Adds an MLP encoding of per-element positions onto the features.

    Coordinates are normalized per axis to [-1, 1] over the supplied set;
    a degenerate axis (all values equal) maps to zero.
    """

    def __init__(self, rng, coord_dim, feature_dim, hidden=32):
        self.mlp = nnet.MLP(rng, [coord_dim, hidden, feature_dim])

    @staticmethod
    def normalize(coords):
        coords = np.asarray(coords, dtype=np.float64)
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.where(hi > lo, 2.0 * (coords - lo) / span - 1.0, 0.0)

    def __call__(self, fmap: FeatureMap, coords) -> FeatureMap:
        if len(coords) != len(fmap.ids):
            raise ConfigError("one coordinate per feature row required")
        offsets = self.mlp(ad.Tensor(self.normalize(coords)))
        return fmap.with_features(ad.add(fmap.features, offsets))

    def named_parameters(self, prefix):
        return self.mlp.named_parameters(prefix)

    def mac_count(self, rows):
        return self.mlp.mac_count(rows)


class SelfAttentionBlock:
    """Single-head self-attention with FFN, residuals and layer norm."""

    def __init__(self, rng, dim):
        self.dim = dim
        self.wq = nnet.Linear(rng, dim, dim, bias=False)
        self.wk = nnet.Linear(rng, dim, dim, bias=False)
        self.wv = nnet.Linear(rng, dim, dim, bias=False)
        self.ffn = nnet.MLP(rng, [dim, 2 * dim, dim])
        self.norm_attn = nnet.LayerNorm(dim)
        self.norm_ffn = nnet.LayerNorm(dim)

    def core(self, x):
        """The attention aggregation itself, before FFN and normalization."""
        return scaled_dot_attention(self.wq(x), self.wk(x), self.wv(x))

    def __call__(self, x):
        x = self.norm_attn(ad.add(x, self.core(x)))
        return self.norm_ffn(ad.add(x, self.ffn(x)))

    def named_parameters(self, prefix):
        return nnet.collect({f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                             f"{prefix}.wv": self.wv, f"{prefix}.ffn": self.ffn,
                             f"{prefix}.norm_attn": self.norm_attn,
                             f"{prefix}.norm_ffn": self.norm_ffn})

    def mac_count(self, rows):
        proj = 3 * rows * self.dim * self.dim
        mix = 2 * rows * rows * self.dim
        return proj + mix + self.ffn.mac_count(rows)


class CrossAttentionBlock:
    """Bidirectional cross-modality attention over coarse feature maps."""

    def __init__(self, rng, dim, value_source="query_side"):
        if value_source not in VALUE_SOURCES:
            raise ConfigError(f"value_source must be one of {VALUE_SOURCES}")
        self.dim = dim
        self.value_source = value_source
        self.point_q = nnet.Linear(rng, dim, dim, bias=False)
        self.point_k = nnet.Linear(rng, dim, dim, bias=False)
        self.point_v = nnet.Linear(rng, dim, dim, bias=False)
        self.pixel_q = nnet.Linear(rng, dim, dim, bias=False)
        self.pixel_k = nnet.Linear(rng, dim, dim, bias=False)
        self.pixel_v = nnet.Linear(rng, dim, dim, bias=False)
        self.point_ffn = nnet.MLP(rng, [dim, 2 * dim, dim])
        self.pixel_ffn = nnet.MLP(rng, [dim, 2 * dim, dim])
        self.point_norm_attn = nnet.LayerNorm(dim)
        self.point_norm_ffn = nnet.LayerNorm(dim)
        self.pixel_norm_attn = nnet.LayerNorm(dim)
        self.pixel_norm_ffn = nnet.LayerNorm(dim)

    def core(self, points, pixels):
        """Cross-aggregated (points', pixels') before FFN and normalization."""
        if self.value_source == "query_side":
            point_values = self.point_v(pixels)
            pixel_values = self.pixel_v(points)
        else:
            point_values = self.pixel_v(pixels)
            pixel_values = self.point_v(points)
        out_p = scaled_dot_attention(self.point_q(points), self.pixel_k(pixels), point_values)
        out_i = scaled_dot_attention(self.pixel_q(pixels), self.point_k(points), pixel_values)
        return out_p, out_i

    def __call__(self, points, pixels):
        out_p, out_i = self.core(points, pixels)
        points = self.point_norm_attn(ad.add(points, out_p))
        points = self.point_norm_ffn(ad.add(points, self.point_ffn(points)))
        pixels = self.pixel_norm_attn(ad.add(pixels, out_i))
        pixels = self.pixel_norm_ffn(ad.add(pixels, self.pixel_ffn(pixels)))
        return points, pixels

    def named_parameters(self, prefix):
        modules = {f"{prefix}.point_q": self.point_q, f"{prefix}.point_k": self.point_k,
                   f"{prefix}.point_v": self.point_v, f"{prefix}.pixel_q": self.pixel_q,
                   f"{prefix}.pixel_k": self.pixel_k, f"{prefix}.pixel_v": self.pixel_v,
                   f"{prefix}.point_ffn": self.point_ffn, f"{prefix}.pixel_ffn": self.pixel_ffn,
                   f"{prefix}.point_norm_attn": self.point_norm_attn,
                   f"{prefix}.point_norm_ffn": self.point_norm_ffn,
                   f"{prefix}.pixel_norm_attn": self.pixel_norm_attn,
                   f"{prefix}.pixel_norm_ffn": self.pixel_norm_ffn}
        return nnet.collect(modules)

    def mac_count(self, n_points, n_pixels):
        proj = 3 * (n_points + n_pixels) * self.dim * self.dim
        mix = 2 * 2 * n_points * n_pixels * self.dim
        return proj + mix + self.point_ffn.mac_count(n_points) + self.pixel_ffn.mac_count(n_pixels)


class AttentionStack:
    """Positional encoding followed by B (self, self, cross) rounds."""

    def __init__(self, rng, dim, blocks=2, value_source="query_side",
                 use_self=True, use_cross=True):
        if blocks < 1:
            raise ConfigError("attention stack needs at least one block")
        self.dim = dim
        self.use_self = use_self
        self.use_cross = use_cross
        self.pos_point = PositionalEncoder(rng, 3, dim)
        self.pos_pixel = PositionalEncoder(rng, 2, dim)
        self.rounds = []
        for _ in range(blocks):
            self.rounds.append({
                "self_point": SelfAttentionBlock(rng, dim),
                "self_pixel": SelfAttentionBlock(rng, dim),
                "cross": CrossAttentionBlock(rng, dim, value_source),
            })

    def __call__(self, points: FeatureMap, pixels: FeatureMap,
                 point_coords, pixel_coords):
        points = self.pos_point(points, point_coords)
        pixels = self.pos_pixel(pixels, pixel_coords)
        xp, xi = points.features, pixels.features
        for block in self.rounds:
            if self.use_self:
                xp = block["self_point"](xp)
                xi = block["self_pixel"](xi)
            if self.use_cross:
                xp, xi = block["cross"](xp, xi)
        return points.with_features(xp), pixels.with_features(xi)

    def named_parameters(self, prefix="stack"):
        params = {}
        params.update(self.pos_point.named_parameters(f"{prefix}.pos_point"))
        params.update(self.pos_pixel.named_parameters(f"{prefix}.pos_pixel"))
        for b, block in enumerate(self.rounds):
            for key, module in block.items():
                params.update(module.named_parameters(f"{prefix}.{b}.{key}"))
        return params

    def mac_count(self, n_points, n_pixels):
        total = self.pos_point.mac_count(n_points) + self.pos_pixel.mac_count(n_pixels)
        for block in self.rounds:
            if self.use_self:
                total += block["self_point"].mac_count(n_points)
                total += block["self_pixel"].mac_count(n_pixels)
            if self.use_cross:
                total += block["cross"].mac_count(n_points, n_pixels)
        return total
