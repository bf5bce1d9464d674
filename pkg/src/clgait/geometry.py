"""2D <-> 3D transforms: pinhole projection and back-projection, nearest-fill
depth interpolation, voxel-grid downsampling, gait-style 64x64 normalization,
and depth-to-3-channel encoding.

Conventions: camera coordinates are x right, y down, z forward (meters);
depth images hold per-pixel z with 0.0 meaning empty; silhouettes are
float masks in [0, 1].
"""

from dataclasses import dataclass

import numpy as np

# virtual sensor defaults for pseudo-pair generation (configuration, not truth)
DEFAULT_FOCAL = 500.0
DEFAULT_Z_NEAR = 1.0
DEFAULT_Z_FAR = 10.0
# depth-encoding window used by the training/eval pipeline: tight around the
# virtual sensor range so body-relief depth differences use the full [0, 1]
# intensity range rather than ~5% of it
PIPELINE_Z_NEAR = 2.8
PIPELINE_Z_FAR = 5.2
CROP_SIZE = 64

# non-empty pixels are floored at 1/255 in channel encoding so depth == z_near
# stays distinguishable from empty
CHANNEL_FLOOR = 1.0 / 255.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @staticmethod
    def default(width, height):
        return CameraIntrinsics(DEFAULT_FOCAL, DEFAULT_FOCAL, width / 2.0, height / 2.0)


def project_points(points: np.ndarray, K: CameraIntrinsics, size) -> np.ndarray:
    """Z-buffered pinhole projection of (N, 3) points into a (H, W) depth map.

    Pixels are rounded; points behind the camera or out of bounds are
    dropped; ties at identical depth keep the earlier point in input order.
    """
    w, h = size
    if w <= 0 or h <= 0:
        raise ValueError("project_points: size must be positive")
    depth = np.zeros((h, w), dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return depth
    z = pts[:, 2]
    valid = z > 0
    pts = pts[valid]
    z = z[valid]
    u = np.rint(K.fx * pts[:, 0] / z + K.cx).astype(np.int64)
    v = np.rint(K.fy * pts[:, 1] / z + K.cy).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v, z = u[inside], v[inside], z[inside]
    # stable z-buffer: sort by (pixel, depth, input order), keep first per pixel
    pix = v * w + u
    order = np.lexsort((np.arange(len(z)), z, pix))
    pix, z = pix[order], z[order]
    keep = np.ones(len(pix), dtype=bool)
    keep[1:] = pix[1:] != pix[:-1]
    depth.reshape(-1)[pix[keep]] = z[keep]
    return depth


def interpolate_depth(sparse: np.ndarray, radius: int) -> np.ndarray:
    """Fill empty pixels from the nearest filled pixel within a Chebyshev
    radius; ties broken by smaller depth, then row-major source order."""
    if radius < 1:
        raise ValueError("interpolate_depth: radius must be >= 1")
    src = np.asarray(sparse, dtype=np.float64)
    h, w = src.shape
    out = src.copy()
    filled_src = src > 0
    empty = ~filled_src
    for d in range(1, radius + 1):
        best = np.full((h, w), np.inf)
        for dy in range(-d, d + 1):
            for dx in range(-d, d + 1):
                if max(abs(dy), abs(dx)) != d:
                    continue
                # source pixel (y+dy, x+dx) seen from target (y, x)
                ys0, ys1 = max(dy, 0), h + min(dy, 0)
                yt0, yt1 = max(-dy, 0), h + min(-dy, 0)
                xs0, xs1 = max(dx, 0), w + min(dx, 0)
                xt0, xt1 = max(-dx, 0), w + min(-dx, 0)
                cand = np.full((h, w), np.inf)
                block = np.where(
                    filled_src[ys0:ys1, xs0:xs1], src[ys0:ys1, xs0:xs1], np.inf
                )
                cand[yt0:yt1, xt0:xt1] = block
                better = empty & (cand < best)
                best[better] = cand[better]
        ring = empty & np.isfinite(best)
        out[ring] = best[ring]
        empty = empty & ~ring
    return out


def back_project(depth: np.ndarray, K: CameraIntrinsics, mask=None) -> np.ndarray:
    """Pixels with depth > 0 (and mask > 0.5 if given) -> (N, 3) points."""
    d = np.asarray(depth, dtype=np.float64)
    sel = d > 0
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != d.shape:
            raise ValueError(
                f"back_project: mask shape {m.shape} != depth shape {d.shape}"
            )
        sel = sel & (m > 0.5)
    v, u = np.nonzero(sel)
    z = d[v, u]
    x = z * (u - K.cx) / K.fx
    y = z * (v - K.cy) / K.fy
    return np.column_stack([x, y, z])


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """One centroid per occupied voxel, ordered by ascending voxel index."""
    if voxel <= 0:
        raise ValueError("voxel_downsample: voxel size must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    idx = np.floor(pts / voxel).astype(np.int64)
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    idx_sorted = idx[order]
    pts_sorted = pts[order]
    new_cell = np.ones(len(pts), dtype=bool)
    new_cell[1:] = np.any(idx_sorted[1:] != idx_sorted[:-1], axis=1)
    starts = np.nonzero(new_cell)[0]
    sums = np.add.reduceat(pts_sorted, starts, axis=0)
    counts = np.diff(np.append(starts, len(pts)))
    return sums / counts[:, None]


def normalize_crop(frame: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Gait-style normalization: tight foreground box scaled to full height,
    centered horizontally on the foreground centroid, nearest-neighbor only
    (values are never rescaled in magnitude)."""
    img = np.asarray(frame, dtype=np.float64)
    fg = img > 0
    if not fg.any():
        raise ValueError("normalize_crop: empty frame")
    rows = np.nonzero(fg.any(axis=1))[0]
    top, bottom = rows[0], rows[-1]
    box_h = bottom - top + 1
    scale = size / box_h
    # foreground centroid column in input coordinates
    vs, us = np.nonzero(fg)
    centroid_u = us.mean()
    out = np.zeros((size, size), dtype=img.dtype)
    rr = np.arange(size)
    cc = np.arange(size)
    in_r = np.floor(top + (rr + 0.5) / scale).astype(np.int64)
    in_c = np.rint(centroid_u + (cc - size / 2.0 + 0.5) / scale).astype(np.int64)
    in_r = np.clip(in_r, 0, img.shape[0] - 1)
    valid_c = (in_c >= 0) & (in_c < img.shape[1])
    out[:, valid_c] = img[np.ix_(in_r, in_c[valid_c])]
    return out


def depth_to_channels(depth: np.ndarray, z_near=DEFAULT_Z_NEAR, z_far=DEFAULT_Z_FAR):
    """Map depth in [z_near, z_far] to a 3-channel image in [0, 1].

    Empty pixels stay (0, 0, 0); non-empty pixels are floored at 1/255 so
    depth == z_near remains distinguishable from empty. Grayscale
    replication keeps the encoding invertible.
    """
    if z_near >= z_far:
        raise ValueError("depth_to_channels: z_near must be < z_far")
    d = np.asarray(depth, dtype=np.float64)
    t = np.clip((d - z_near) / (z_far - z_near), 0.0, 1.0)
    t = np.where(d > 0, np.maximum(t, CHANNEL_FLOOR), 0.0)
    return np.repeat(t[:, :, None], 3, axis=2)
