"""Planar geometry helpers: angle wrapping, polyline distances, oriented boxes."""
import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)


def rotate(points, angle):
    c, s = np.cos(angle), np.sin(angle)
    pts = np.asarray(points, dtype=float)
    return np.stack([c * pts[..., 0] - s * pts[..., 1], s * pts[..., 0] + c * pts[..., 1]], axis=-1)


def polyline_segments(polylines):
    """Stack the segments of several polylines.

    Returns (starts, ends, owner) where owner[i] is the index of the polyline
    that segment i belongs to.
    """
    starts, ends, owner = [], [], []
    for k, pts in enumerate(polylines):
        pts = np.asarray(pts, dtype=float)
        starts.append(pts[:-1])
        ends.append(pts[1:])
        owner.append(np.full(len(pts) - 1, k))
    if not starts:
        empty = np.zeros((0, 2))
        return empty, empty, np.zeros(0, dtype=int)
    return np.concatenate(starts), np.concatenate(ends), np.concatenate(owner)


def segment_distances(points, starts, ends):
    """Distance from every point to every segment, shape (n_points, n_segments)."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a = starts[None, :, :]
    d = (ends - starts)[None, :, :]
    denom = np.einsum("...i,...i->...", d, d)
    denom = np.where(denom > 0.0, denom, 1.0)
    u = np.clip(np.einsum("...i,...i->...", p - a, d) / denom, 0.0, 1.0)
    closest = a + u[..., None] * d
    return np.hypot(p[..., 0] - closest[..., 0], p[..., 1] - closest[..., 1])


def min_distance_to_polylines(points, polylines):
    """Minimum distance from each point to the union of the polylines (inf if none)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    starts, ends, _ = polyline_segments(polylines)
    if len(starts) == 0:
        return np.full(len(points), np.inf)
    return segment_distances(points, starts, ends).min(axis=1)


def distance_to_each_polyline(point, starts, ends, owner, n_polylines):
    """Distance from a single point to each polyline given stacked segments."""
    d = segment_distances(np.asarray(point, dtype=float)[None, :], starts, ends)[0]
    out = np.full(n_polylines, np.inf)
    np.minimum.at(out, owner, d)
    return out


def project_onto_polyline(point, polyline):
    """Nearest segment index and the arc-length position of the projection."""
    pts = np.asarray(polyline, dtype=float)
    if len(pts) == 1:
        return 0, 0.0
    starts, ends = pts[:-1], pts[1:]
    d = segment_distances(np.asarray(point, dtype=float)[None, :], starts, ends)[0]
    i = int(np.argmin(d))
    seg = ends[i] - starts[i]
    u = np.clip(np.dot(point - starts[i], seg) / np.dot(seg, seg), 0.0, 1.0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*(ends - starts).T))])
    return i, cum[i] + u * np.hypot(*seg)


def resample_polyline(points, n):
    """Resample uniformly in arc length to n points, endpoints included."""
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, cum[-1], n)
    target[-1] = cum[-1]
    x = np.interp(target, cum, pts[:, 0])
    y = np.interp(target, cum, pts[:, 1])
    out = np.stack([x, y], axis=1)
    out[0], out[-1] = pts[0], pts[-1]
    return out


def box_corners(x, y, yaw, length, width):
    """Corners of oriented rectangles, shape (..., 4, 2), counter-clockwise."""
    x, y, yaw = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, yaw)))
    hl = np.asarray(length, dtype=float) / 2.0
    hw = np.asarray(width, dtype=float) / 2.0
    c, s = np.cos(yaw), np.sin(yaw)
    local = [(1, -1), (1, 1), (-1, 1), (-1, -1)]
    corners = []
    for sl, sw in local:
        lx, ly = sl * hl, sw * hw
        corners.append(np.stack([x + c * lx - s * ly, y + s * lx + c * ly], axis=-1))
    return np.stack(corners, axis=-2)


def obb_overlap(a, b):
    """Separating-axis test between rectangles given as corner arrays.

    `a` and `b` broadcast against each other with trailing shape (4, 2).
    Touching boxes count as overlapping.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    axes = np.stack(
        [a[..., 1, :] - a[..., 0, :], a[..., 3, :] - a[..., 0, :],
         b[..., 1, :] - b[..., 0, :], b[..., 3, :] - b[..., 0, :]],
        axis=-2,
    )
    pa = np.einsum("...kj,...cj->...kc", axes, a)
    pb = np.einsum("...kj,...cj->...kc", axes, b)
    separated = (pa.max(axis=-1) < pb.min(axis=-1)) | (pb.max(axis=-1) < pa.min(axis=-1))
    return ~separated.any(axis=-1)


def box_gap(ca, yaw_a, la, wa, cb, yaw_b, lb, wb):
    """Approximate free gap between two boxes along their center line.

    Center distance minus both half-extents projected on the unit vector
    joining the centers; negative when the projections overlap.
    """
    ca = np.asarray(ca, dtype=float)
    cb = np.asarray(cb, dtype=float)
    delta = cb - ca
    dist = np.hypot(delta[..., 0], delta[..., 1])
    safe = np.where(dist > 0.0, dist, 1.0)
    ux, uy = delta[..., 0] / safe, delta[..., 1] / safe

    def half_extent(yaw, length, width):
        c, s = np.cos(yaw), np.sin(yaw)
        return 0.5 * length * np.abs(ux * c + uy * s) + 0.5 * width * np.abs(-ux * s + uy * c)

    return dist - half_extent(yaw_a, la, wa) - half_extent(yaw_b, lb, wb)
