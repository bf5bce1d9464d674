"""Pseudo-pair generation from externally estimated depth maps.

The monocular depth estimator is an upstream producer; this module consumes
its output: mask the depth by the silhouette, back-project through a virtual
camera, voxel-downsample, re-project + interpolate, and normalize everything
to 64x64.
"""

import numpy as np

from .. import geometry
from .dataset import INTERP_RADIUS


def pseudo_pairs_from_depth(silhouette: np.ndarray, depth: np.ndarray,
                            K: geometry.CameraIntrinsics, voxel: float):
    """Returns (normalized silhouette, downsampled pseudo cloud, pseudo depth).

    The pseudo depth image is the downsampled cloud re-projected into the
    same camera and hole-filled, i.e. the representation used for
    contrastive pre-training.
    """
    sil = np.asarray(silhouette, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if sil.shape != d.shape:
        raise ValueError(
            f"pseudo_pairs_from_depth: silhouette {sil.shape} != depth {d.shape}"
        )
    masked = np.where(sil > 0.5, d, 0.0)
    if not (masked > 0).any():
        raise ValueError("pseudo_pairs_from_depth: no overlap")
    cloud = geometry.back_project(masked, K)
    cloud_down = geometry.voxel_downsample(cloud, voxel)
    h, w = d.shape
    sparse = geometry.project_points(cloud_down, K, (w, h))
    dense = geometry.interpolate_depth(sparse, INTERP_RADIUS)
    # keep the pseudo depth's support inside the person region so the pair
    # stays spatially aligned after cropping
    dense = np.where(masked > 0, dense, 0.0)
    return (
        geometry.normalize_crop(sil),
        cloud_down,
        geometry.normalize_crop(dense),
    )
