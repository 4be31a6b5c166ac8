"""Two-level coarse/fine pyramids for images and point clouds.

The image side is purely structural: a coarse superpixel grid at 1/8 of the
original resolution, a fine grid at 1/2, and a square patch window on the
fine grid per superpixel.  The point side subsamples the cloud to half size,
picks superpoints by farthest-point sampling, groups fine points to their
nearest superpoint inside a radius, and selects spread-out node points per
group as fine-matching candidates.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .geometry import PointCloud

COARSE_STRIDE = 8
FINE_STRIDE = 2
COARSE_PER_FINE = COARSE_STRIDE // FINE_STRIDE

# groups at or below this size get exhaustive max-min node selection,
# which makes the dispersion guarantee exact instead of greedy
_EXHAUSTIVE_LIMIT = 12


@dataclass(frozen=True)
class ImagePyramid:
    """Grid geometry shared by the image backbone and the matchers."""

    width: int
    height: int
    patch_window: int

    def __post_init__(self):
        if self.width % COARSE_STRIDE or self.height % COARSE_STRIDE:
            raise ConfigError(f"image dims must be divisible by {COARSE_STRIDE}; got {self.width}x{self.height}")
        if self.patch_window < 1:
            raise ConfigError("patch window must be >= 1")

    @property
    def fine_shape(self):
        return self.height // FINE_STRIDE, self.width // FINE_STRIDE

    @property
    def coarse_shape(self):
        return self.height // COARSE_STRIDE, self.width // COARSE_STRIDE

    @property
    def n_fine(self):
        h, w = self.fine_shape
        return h * w

    @property
    def n_coarse(self):
        h, w = self.coarse_shape
        return h * w

    def coarse_centers(self):
        """(n_coarse, 2) cell centers (u, v) in coarse-grid units, row-major ids."""
        h, w = self.coarse_shape
        vv, uu = np.mgrid[0:h, 0:w]
        return np.stack([uu.ravel() + 0.5, vv.ravel() + 0.5], axis=1)

    def fine_centers(self):
        """(n_fine, 2) cell centers (u, v) in fine-grid units, row-major ids."""
        h, w = self.fine_shape
        vv, uu = np.mgrid[0:h, 0:w]
        return np.stack([uu.ravel() + 0.5, vv.ravel() + 0.5], axis=1)

    def coarse_cell_of(self, u, v):
        """Coarse id containing an original-resolution pixel position."""
        h, w = self.coarse_shape
        col = int(u // COARSE_STRIDE)
        row = int(v // COARSE_STRIDE)
        if not (0 <= col < w and 0 <= row < h):
            raise ContractError(f"pixel ({u}, {v}) outside image")
        return row * w + col

    def fine_cell_of(self, u, v):
        """Fine id containing an original-resolution pixel position."""
        h, w = self.fine_shape
        col = int(u // FINE_STRIDE)
        row = int(v // FINE_STRIDE)
        if not (0 <= col < w and 0 <= row < h):
            raise ContractError(f"pixel ({u}, {v}) outside image")
        return row * w + col

    def patch_of(self, coarse_id):
        """Fine ids of the w x w patch around one superpixel, clamped inside.

        The window is centered on the superpixel's fine-grid footprint and
        shifted (never shrunk, unless the grid itself is smaller than w) so
        it always lies fully inside the fine grid.
        """
        fh, fw = self.fine_shape
        ch, cw = self.coarse_shape
        row, col = divmod(coarse_id, cw)
        w = self.patch_window
        r0 = _clamped_start(row * COARSE_PER_FINE + COARSE_PER_FINE // 2, w, fh)
        c0 = _clamped_start(col * COARSE_PER_FINE + COARSE_PER_FINE // 2, w, fw)
        rows = np.arange(r0, min(r0 + w, fh))
        cols = np.arange(c0, min(c0 + w, fw))
        return (rows[:, None] * fw + cols[None, :]).ravel()


def _clamped_start(center, window, extent):
    start = center - window // 2
    return max(0, min(start, extent - window))


def build_image_pyramid(width: int, height: int, patch_window: int) -> ImagePyramid:
    return ImagePyramid(width=width, height=height, patch_window=patch_window)


@dataclass(frozen=True)
class PointHierarchy:
    """Fine subsample, superpoints and their point-to-node groups.

    ``fine_indices`` index the original cloud; ``super_indices`` also index
    the cloud; ``groups`` and ``node_points`` hold positions into the fine
    list (one array per surviving superpoint).
    """

    fine_indices: np.ndarray
    super_indices: np.ndarray
    groups: tuple
    group_radius: float
    node_points: tuple = field(default=())

    @property
    def n_fine(self):
        return len(self.fine_indices)

    @property
    def n_super(self):
        return len(self.super_indices)

    def fine_coords(self, cloud: PointCloud):
        return cloud.points[self.fine_indices]

    def super_coords(self, cloud: PointCloud):
        return cloud.points[self.super_indices]

    def group_of_fine(self):
        """Map fine-list position -> owning group index (-1 when ungrouped)."""
        owner = np.full(self.n_fine, -1, dtype=np.intp)
        for gi, members in enumerate(self.groups):
            owner[members] = gi
        return owner


def farthest_point_sample(points, count, seed):
    """Greedy farthest-point subset; deterministic under the seed.

    Returns indices into ``points``; the first pick is seeded-random, every
    later pick maximizes the distance to the chosen set (first-max ties).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    count = min(count, n)
    rng = np.random.default_rng(seed)
    chosen = np.empty(count, dtype=np.intp)
    chosen[0] = rng.integers(n)
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def build_point_hierarchy(cloud: PointCloud, n_super: int, r_g: float, seed) -> PointHierarchy:
    """Half-resolution subsample plus radius-bounded nearest-superpoint groups.

    Each fine point joins the group of its nearest superpoint provided the
    distance is strictly below ``r_g`` (nearest wins when several qualify;
    index order breaks exact ties).  Superpoints whose group comes out empty
    are dropped with a warning.
    """
    if n_super > len(cloud):
        raise ContractError(f"n_super={n_super} exceeds cloud size {len(cloud)}")
    if r_g <= 0:
        raise ContractError("group radius must be positive")
    rng = np.random.default_rng(seed)
    n_fine = max(1, len(cloud) // 2)
    fine_indices = np.sort(rng.choice(len(cloud), size=n_fine, replace=False))
    super_indices = farthest_point_sample(cloud.points, n_super, rng.integers(2**32))

    fine_pts = cloud.points[fine_indices]
    super_pts = cloud.points[super_indices]
    # nearest superpoint per fine point; argmin takes the lowest index on ties
    d2 = ((fine_pts[:, None, :] - super_pts[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    within = np.sqrt(d2[np.arange(len(fine_pts)), nearest]) < r_g

    groups = []
    kept_super = []
    for si in range(len(super_indices)):
        members = np.nonzero((nearest == si) & within)[0]
        if members.size == 0:
            warnings.warn(f"superpoint {si} has no fine points within r_g={r_g}; dropped", stacklevel=2)
            continue
        kept_super.append(super_indices[si])
        groups.append(members)
    return PointHierarchy(fine_indices=fine_indices,
                          super_indices=np.asarray(kept_super, dtype=np.intp),
                          groups=tuple(groups),
                          group_radius=float(r_g))


def _min_pairwise(points, idx):
    sub = points[np.asarray(idx)]
    d = np.linalg.norm(sub[:, None] - sub[None], axis=2)
    return d[np.triu_indices(len(sub), k=1)].min()


def select_node_points(h: PointHierarchy, cloud: PointCloud, k: int, seed=0) -> PointHierarchy:
    """Pick up to ``k`` spread-out representatives per group.

    Small groups are solved exactly for the max-min-distance subset; larger
    ones use farthest-point sampling started at the member farthest from the
    superpoint.  Whole groups of size <= k are taken verbatim.
    """
    if k < 1:
        raise ContractError("node point count must be >= 1")
    fine_pts = h.fine_coords(cloud)
    super_pts = h.super_coords(cloud)
    nodes = []
    for gi, members in enumerate(h.groups):
        if len(members) <= k:
            nodes.append(np.array(members, dtype=np.intp))
            continue
        pts = fine_pts[members]
        if k == 1:
            sel = np.array([int(np.argmax(np.linalg.norm(pts - super_pts[gi], axis=1)))], dtype=np.intp)
        elif len(members) <= _EXHAUSTIVE_LIMIT:
            best = max(itertools.combinations(range(len(members)), k),
                       key=lambda c: _min_pairwise(pts, c))
            sel = np.array(best, dtype=np.intp)
        else:
            start = int(np.argmax(np.linalg.norm(pts - super_pts[gi], axis=1)))
            sel = np.empty(k, dtype=np.intp)
            sel[0] = start
            dist = np.linalg.norm(pts - pts[start], axis=1)
            for i in range(1, k):
                nxt = int(np.argmax(dist))
                sel[i] = nxt
                dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
        nodes.append(np.sort(members[sel]))
    return PointHierarchy(fine_indices=h.fine_indices, super_indices=h.super_indices,
                          groups=h.groups, group_radius=h.group_radius,
                          node_points=tuple(nodes))
