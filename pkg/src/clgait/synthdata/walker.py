"""Procedural articulated walker.

A 9-segment capsule skeleton (torso, head, 2x upper/lower arm, 2x thigh/shin)
with sinusoidal joint angles, rendered two ways from the same pose:
silhouettes via orthographic capsule rasterization, and point clouds by
z-buffered sampling of the visible surface from a virtual perspective sensor
with Gaussian range noise. Everything is keyed off counter-based streams, so
identical inputs give bit-identical frames.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from ..numcore import rng as rngmod

FPS = 10.0
CONDITIONS = ("normal", "bag", "umbrella", "night")


@dataclass(frozen=True)
class IdentityParams:
    height: float               # meters, total standing height
    limb_lengths: dict          # per-segment meters
    stride_freq: float          # Hz
    stride_amp: float           # radians, hip swing amplitude
    phase: float                # radians
    body_width: float           # meters
    limb_girth: float = 1.0     # relative limb thickness
    arm_swing: float = 0.55     # arm amplitude as a fraction of stride_amp
    knee_flex: float = 0.6      # knee bend as a fraction of stride_amp
    bounce: float = 0.015       # vertical pelvis oscillation, meters
    elbow_bend: float = 0.35    # fixed forearm flexion, radians

    def __post_init__(self):
        if not (1.4 <= self.height <= 2.0):
            raise ValueError(f"height {self.height} outside [1.4, 2.0]")


@dataclass(frozen=True)
class SensorConfig:
    """Virtual sensor geometry for both renderers."""

    raster_px: int = 96            # orthographic silhouette canvas
    raster_extent: float = 2.2     # meters covered by the canvas
    sensor_px: int = 96            # perspective depth sensor resolution
    sensor_focal: float = 150.0    # pixels (angular resolution knob)
    sensor_range: float = 4.0      # walker distance from sensor, meters
    sensor_height: float = 0.9     # optical axis height above ground, meters
    range_noise: float = 0.005     # Gaussian sigma on range, meters
    surface_step: float = 0.025    # capsule surface sampling step, meters


def sample_identity(seed: int, label: str) -> IdentityParams:
    """Draw one identity's body/gait parameters from its named stream."""
    r = rngmod.stream(seed, "identity", label)
    height = float(r.uniform(1.5, 1.95))
    # Proportions are sampled per identity, not fixed fractions of height:
    # crop normalization removes absolute height, so the ratios are what
    # actually distinguish one walker from another.
    leg = float(r.uniform(0.42, 0.55)) * height
    arm = float(r.uniform(0.28, 0.40)) * height
    thigh_frac = float(r.uniform(0.42, 0.60))
    upper_frac = float(r.uniform(0.50, 0.60))
    head = float(r.uniform(0.05, 0.085)) * height
    limb = {
        "thigh": thigh_frac * leg,
        "shin": (1.0 - thigh_frac) * leg,
        "upper_arm": upper_frac * arm,
        "forearm": (1.0 - upper_frac) * arm,
        # torso takes up whatever the legs and head leave of the height
        "torso": height - 0.96 * leg - 2.25 * head,
        "head": head,  # radius
    }
    return IdentityParams(
        height=height,
        limb_lengths=limb,
        stride_freq=float(r.uniform(0.7, 1.4)),
        stride_amp=float(r.uniform(0.40, 0.85)),
        phase=float(r.uniform(0.0, 2.0 * math.pi)),
        body_width=float(r.uniform(0.13, 0.30)),
        limb_girth=float(r.uniform(0.65, 1.45)),
        arm_swing=float(r.uniform(0.35, 0.75)),
        knee_flex=float(r.uniform(0.4, 0.85)),
        bounce=float(r.uniform(0.005, 0.035)),
        elbow_bend=float(r.uniform(0.15, 0.6)),
    )


def skeleton_segments(params: IdentityParams, t: float, condition: str):
    """Capsules (p1, p2, radius) in the walker frame at time t.

    Walker frame: x lateral, y up (0 = ground), z facing direction. The
    walker treads in place so sequences stay centered.
    """
    ll = params.limb_lengths
    w2 = params.body_width / 2.0
    omega = 2.0 * math.pi * params.stride_freq
    ph = omega * t + params.phase

    leg_len = ll["thigh"] + ll["shin"]
    pelvis_y = leg_len * 0.96 + params.bounce * math.cos(2.0 * ph)
    neck_y = pelvis_y + ll["torso"]

    limb_r = (0.030 + 0.012 * params.height / 1.8) * params.limb_girth
    segs = []

    # torso + head
    segs.append((np.array([0.0, pelvis_y, 0.0]), np.array([0.0, neck_y, 0.0]), w2))
    head_c = np.array([0.0, neck_y + 1.25 * ll["head"], 0.0])
    segs.append((head_c, head_c, ll["head"]))

    # legs: sagittal-plane swing, knee flexes during the back half of the swing
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        hip = np.array([sgn * w2 * 0.6, pelvis_y, 0.0])
        hip_ang = params.stride_amp * math.sin(ph + (0.0 if sgn > 0 else math.pi))
        knee_flex = params.knee_flex * params.stride_amp * max(
            0.0, math.sin(ph + (0.0 if sgn > 0 else math.pi) + 0.9)
        )
        knee = hip + ll["thigh"] * np.array(
            [0.0, -math.cos(hip_ang), math.sin(hip_ang)]
        )
        shin_ang = hip_ang - knee_flex
        ankle = knee + ll["shin"] * np.array(
            [0.0, -math.cos(shin_ang), math.sin(shin_ang)]
        )
        segs.append((hip, knee, limb_r))
        segs.append((knee, ankle, limb_r * 0.9))

    # arms: counter-phase swing with a fixed elbow bend
    arm_amp = params.arm_swing * params.stride_amp
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        shoulder = np.array([sgn * w2 * 0.95, neck_y - 0.02, 0.0])
        sh_ang = arm_amp * math.sin(ph + (math.pi if sgn > 0 else 0.0))
        elbow = shoulder + ll["upper_arm"] * np.array(
            [0.0, -math.cos(sh_ang), math.sin(sh_ang)]
        )
        fore_ang = sh_ang + params.elbow_bend
        hand = elbow + ll["forearm"] * np.array(
            [0.0, -math.cos(fore_ang), math.sin(fore_ang)]
        )
        segs.append((shoulder, elbow, limb_r * 0.85))
        segs.append((elbow, hand, limb_r * 0.75))
        if condition == "bag" and sgn > 0:
            # static carried capsule hanging from the left hand
            segs.append((hand, hand + np.array([0.0, -0.22, 0.0]), 0.05))

    if condition == "umbrella":
        # canopy capsule above the head, occluding the head region
        top = head_c + np.array([0.0, 0.22, 0.0])
        segs.append((top + np.array([-0.35, 0.0, 0.0]),
                     top + np.array([0.35, 0.0, 0.0]), 0.05))
    return segs


def _rotate_y(points: np.ndarray, deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return points @ rot.T


def render_silhouette(segments, view_deg: float, cfg: SensorConfig) -> np.ndarray:
    """Orthographic rasterization of the rotated capsules into a 0/1 mask."""
    n = cfg.raster_px
    scale = n / cfg.raster_extent
    cx = (n - 1) / 2.0
    mask = np.zeros((n, n), dtype=np.float64)
    cols, rows = np.meshgrid(np.arange(n), np.arange(n))
    px = (cols - cx) / scale                       # world x
    py = (n - 1 - rows) / scale                    # world y (row 0 on top)
    for p1, p2, r in segments:
        a = _rotate_y(p1[None, :], view_deg)[0]
        b = _rotate_y(p2[None, :], view_deg)[0]
        ax, ay = a[0], a[1]
        bx, by = b[0], b[1]
        dx, dy = bx - ax, by - ay
        den = dx * dx + dy * dy
        if den < 1e-12:
            dist2 = (px - ax) ** 2 + (py - ay) ** 2
        else:
            tt = np.clip(((px - ax) * dx + (py - ay) * dy) / den, 0.0, 1.0)
            dist2 = (px - (ax + tt * dx)) ** 2 + (py - (ay + tt * dy)) ** 2
        mask[dist2 <= r * r] = 1.0
    return mask


def sample_capsule_surface(p1, p2, r, step: float) -> np.ndarray:
    """Deterministic grid sampling of a capsule surface."""
    axis = p2 - p1
    length = float(np.linalg.norm(axis))
    n_circ = max(8, int(math.ceil(2.0 * math.pi * r / step)))
    ang = np.linspace(0.0, 2.0 * math.pi, n_circ, endpoint=False)
    if length < 1e-9:
        # sphere: latitude rings
        n_lat = max(4, int(math.ceil(math.pi * r / step)))
        lat = np.linspace(-math.pi / 2, math.pi / 2, n_lat)
        pts = []
        for la in lat:
            ring_r = r * math.cos(la)
            pts.append(
                np.column_stack(
                    [
                        ring_r * np.cos(ang),
                        np.full_like(ang, r * math.sin(la)),
                        ring_r * np.sin(ang),
                    ]
                )
            )
        return p1 + np.concatenate(pts)
    u = axis / length
    # orthonormal frame around the axis
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    circle = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)
    n_axis = max(2, int(math.ceil(length / step)) + 1)
    ts = np.linspace(0.0, 1.0, n_axis)
    pts = [p1 + t * axis + r * circle for t in ts]
    # hemispherical caps
    n_cap = max(2, int(math.ceil(0.5 * math.pi * r / step)))
    for la in np.linspace(0.1, math.pi / 2, n_cap):
        ring_r = r * math.cos(la)
        off = r * math.sin(la)
        ring = ring_r * circle
        pts.append(p1 - off * u + ring)
        pts.append(p2 + off * u + ring)
    return np.concatenate(pts)


def sensor_capture(segments, view_deg: float, cfg: SensorConfig,
                   noise_rng: np.random.Generator) -> tuple:
    """Visible-surface point cloud in sensor camera coordinates plus the raw
    z-buffered depth image it came from.

    Camera: x right, y down, z forward; walker centered at cfg.sensor_range.
    """
    surf = np.concatenate(
        [sample_capsule_surface(p1, p2, r, cfg.surface_step) for p1, p2, r in segments]
    )
    surf = _rotate_y(surf, view_deg)
    cam = np.column_stack(
        [
            surf[:, 0],
            cfg.sensor_height - surf[:, 1],
            cfg.sensor_range + surf[:, 2],
        ]
    )
    n = cfg.sensor_px
    K = geometry.CameraIntrinsics(cfg.sensor_focal, cfg.sensor_focal, n / 2.0, n / 2.0)
    depth = geometry.project_points(cam, K, (n, n))
    if cfg.range_noise > 0:
        filled = depth > 0
        noise = noise_rng.standard_normal(depth.shape) * cfg.range_noise
        depth = np.where(filled, np.maximum(depth + noise, 1e-3), 0.0)
    cloud = geometry.back_project(depth, K)
    return cloud, depth, K
