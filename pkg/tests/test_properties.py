"""Property-based checks of the library's structural invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from clgait import geometry, losses
from clgait import numcore as nc

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


@given(
    logits=hnp.arrays(np.float64, (3, 5), elements=finite),
    shift=st.floats(-100.0, 100.0, allow_nan=False),
)
def test_cross_entropy_shift_invariance(logits, shift):
    targets = np.array([0, 2, 4])
    base = nc.softmax_cross_entropy(nc.Var(logits), targets).data
    moved = nc.softmax_cross_entropy(nc.Var(logits + shift), targets).data
    assert abs(base - moved) <= 1e-9


@given(
    x=hnp.arrays(np.float64, (1, 5, 5, 2), elements=finite),
    y=hnp.arrays(np.float64, (1, 5, 5, 2), elements=finite),
    a=st.floats(-3.0, 3.0, allow_nan=False),
    b=st.floats(-3.0, 3.0, allow_nan=False),
)
def test_conv2d_linearity(x, y, a, b):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 3, 2, 4))
    bias = np.zeros(4)

    def conv(inp):
        return nc.conv2d(nc.Var(inp), nc.Var(w), nc.Var(bias), stride=1, pad=1).data

    combined = conv(a * x + b * y)
    separate = a * conv(x) + b * conv(y)
    np.testing.assert_allclose(combined, separate, atol=1e-6)


@given(
    s=hnp.arrays(np.float64, (4, 6), elements=st.floats(0.1, 5.0)),
    p=hnp.arrays(np.float64, (4, 6), elements=st.floats(0.1, 5.0)),
    scale=st.floats(0.01, 100.0),
)
def test_contrastive_row_scale_invariance(s, p, scale):
    a = losses.contrastive_loss(s, p).data
    b = losses.contrastive_loss(scale * s, p).data
    np.testing.assert_allclose(a, b, rtol=1e-8)


@settings(deadline=None)
@given(
    pts=hnp.arrays(np.float64, (30, 3), elements=st.floats(-5.0, 5.0)),
    voxel=st.floats(0.05, 2.0),
)
def test_voxel_centroids_stay_in_their_cells(pts, voxel):
    out = geometry.voxel_downsample(pts, voxel)
    assert 1 <= len(out) <= len(pts)
    idx = np.floor(out / voxel)
    lower = idx * voxel
    assert (out >= lower - 1e-9).all()
    assert (out <= lower + voxel + 1e-9).all()


@settings(deadline=None)
@given(data=st.data())
def test_projected_depths_are_input_depths(data):
    n = data.draw(st.integers(1, 50))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    z = rng.uniform(1.0, 10.0, n)
    pts = np.column_stack(
        [z * rng.uniform(-0.3, 0.3, n), z * rng.uniform(-0.3, 0.3, n), z]
    )
    K = geometry.CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    depth = geometry.project_points(pts, K, (640, 480))
    filled = depth[depth > 0]
    assert np.isin(filled, z).all()


@settings(deadline=None)
@given(data=st.data())
def test_normalize_crop_fills_height(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    h = data.draw(st.integers(70, 120))
    w = data.draw(st.integers(70, 120))
    img = np.zeros((h, w))
    r0 = data.draw(st.integers(0, h - 20))
    r1 = data.draw(st.integers(r0 + 10, min(r0 + 60, h - 1)))
    c0 = data.draw(st.integers(5, w - 15))
    img[r0:r1, c0 : c0 + 8] = rng.uniform(0.5, 2.0, (r1 - r0, 8))
    out = geometry.normalize_crop(img)
    assert out.shape == (64, 64)
    rows = np.nonzero(out.any(axis=1))[0]
    assert rows[0] == 0
    assert rows[-1] >= 62  # foreground spans the full output height
