"""SVG export of correspondence quality for quick visual inspection."""

from .geometry import project
from .hierarchy import FINE_STRIDE
from .matching import pixel_center


def correspondence_svg(scene, pyramid, fine_pairs, hierarchy, tau=2.0, scale=8.0):
    """Fine matches drawn over the fine grid; green inside tau, red outside.

    Each correspondence is a line from the ground-truth projection of its
    point to the center of the matched pixel.
    """
    fh, fw = pyramid.fine_shape
    intr = scene.intrinsics.scaled(1.0 / FINE_STRIDE)
    width, height = fw * scale, fh * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
             f'viewBox="0 0 {width:.0f} {height:.0f}">',
             f'<rect width="{width:.0f}" height="{height:.0f}" fill="#181818"/>']
    coords = hierarchy.fine_coords(scene.cloud)
    for (pid, pxid), score in zip(fine_pairs.pairs,
                                  fine_pairs.scores if fine_pairs.scores is not None
                                  else [None] * len(fine_pairs)):
        cam = scene.gt_pose.apply(coords[pid].reshape(1, 3))[0]
        u, v, _, ok = project(intr, cam)
        mu, mv = pixel_center(pyramid, "fine", pxid)
        if ok:
            err = ((u - mu) ** 2 + (v - mv) ** 2) ** 0.5
            color = "#3fbf3f" if err < tau else "#d04040"
            parts.append(f'<line x1="{u * scale:.1f}" y1="{v * scale:.1f}" '
                         f'x2="{mu * scale:.1f}" y2="{mv * scale:.1f}" '
                         f'stroke="{color}" stroke-width="1"/>')
            parts.append(f'<circle cx="{u * scale:.1f}" cy="{v * scale:.1f}" r="2" fill="#e0e0e0"/>')
        else:
            color = "#d04040"
        parts.append(f'<circle cx="{mu * scale:.1f}" cy="{mv * scale:.1f}" r="2" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_correspondence_svg(path, scene, pyramid, fine_pairs, hierarchy, tau=2.0):
    with open(path, "w") as fh:
        fh.write(correspondence_svg(scene, pyramid, fine_pairs, hierarchy, tau=tau))
