import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlp.errors import (DegenerateGeometryError, DegenerateLayoutError, DomainError, InsufficientAnchorsError,
                        UnsupportedConfigurationError)
from vlp.geometry import (Anchor, CameraIntrinsics, ImagePoint, PixelPoint, WorldPoint, calibrate_center,
                          estimate_height, estimate_planar, estimate_rotation, image_to_pixel, locate,
                          pixel_to_image, rotation_matrix, select_lamp_pair, to_world, wrap_angle)
from vlp.simulator import CameraPose, project


def anchors_for(scene, pose, intr, ids=None):
    out = []
    for rec in scene.luminaires:
        if ids is None or rec.id in ids:
            out.append(Anchor(rec.id, rec.position, project(rec.position, pose, intr)))
    return out


# -- pixel_to_image ------------------------------------------------------------

def test_principal_point_maps_to_origin(intr):
    cx, cy = intr.center
    q = pixel_to_image(PixelPoint(cx, cy), intr)
    assert (q.i, q.j) == (0.0, 0.0)


def test_compressed_pixel_scale():
    intr = CameraIntrinsics.preset("compressed")
    assert intr.a == pytest.approx(2.56)
    cx, cy = intr.center
    assert pixel_to_image(PixelPoint(cx + 100, cy), intr).i == pytest.approx(0.08192, abs=1e-12)


def test_native_pixel_scale():
    intr = CameraIntrinsics.preset("native")
    cx, cy = intr.center
    assert pixel_to_image(PixelPoint(cx + 100, cy), intr).i == pytest.approx(0.032, abs=1e-12)


@pytest.mark.parametrize("u, v", [(-1.0, 10.0), (10.0, -1.0), (800.0, 10.0), (10.0, 600.0)])
def test_pixel_out_of_frame_rejected(u, v):
    with pytest.raises(DomainError):
        pixel_to_image(PixelPoint(u, v), CameraIntrinsics.preset("compressed"))


@given(st.floats(0, 799), st.floats(0, 599))
def test_pixel_image_round_trip(u, v):
    intr = CameraIntrinsics.preset("compressed")
    p = image_to_pixel(pixel_to_image(PixelPoint(u, v), intr), intr)
    assert p.u == pytest.approx(u, abs=1e-9) and p.v == pytest.approx(v, abs=1e-9)


def test_bad_intrinsics_rejected():
    with pytest.raises(DomainError):
        CameraIntrinsics(0.0, 3.2e-4, (2048, 1536), (800, 600))
    with pytest.raises(DomainError):
        CameraIntrinsics.preset("fisheye")


# -- height ----------------------------------------------------------------------

def test_height_direct_substitution():
    intr = CameraIntrinsics.preset("native")
    H = estimate_height(WorldPoint(0, 0, 150), WorldPoint(100, 0, 150),
                        ImagePoint(0, 0), ImagePoint(0.2667, 0), intr)
    assert H == pytest.approx(150.0, abs=0.02)


def test_height_from_rendered_pair(scene, intr):
    pose = CameraPose(3.0, -7.0, 0.0, 0.4)
    a, b = anchors_for(scene, pose, intr, {"LED1", "LED4"})
    rp = lambda p: PixelPoint(round(p.u), round(p.v))  # noqa: E731
    H = estimate_height(a.world, b.world, pixel_to_image(rp(a.pixel), intr), pixel_to_image(rp(b.pixel), intr), intr)
    assert abs(H - 150.0) <= intr.quantization_bound(150.0)


def test_height_invariant_under_compression(scene):
    native = CameraIntrinsics.preset("native")
    comp = CameraIntrinsics.preset("compressed")
    pose = CameraPose(10.0, 5.0, 0.0, 0.0)
    hs = []
    for intr in (native, comp.equivalent_focal()):
        a, b = anchors_for(scene, pose, intr, {"LED1", "LED4"})
        hs.append(estimate_height(a.world, b.world, pixel_to_image(a.pixel, intr),
                                  pixel_to_image(b.pixel, intr), intr))
    assert hs[0] == pytest.approx(hs[1], rel=1e-12)


def test_height_degenerate_cases(intr):
    L1, L2 = WorldPoint(0, 0, 150), WorldPoint(10, 10, 150)
    p = ImagePoint(0.1, 0.1)
    with pytest.raises(DegenerateGeometryError):
        estimate_height(L1, L2, p, p, intr)
    with pytest.raises(UnsupportedConfigurationError):
        estimate_height(L1, WorldPoint(10, 10, 140), p, ImagePoint(0, 0), intr)


# -- planar ----------------------------------------------------------------------

def test_symmetric_image_points_give_midpoint(intr):
    L1, L2 = WorldPoint(-20, 10, 150), WorldPoint(30, -40, 150)
    x, y = estimate_planar(L1, L2, ImagePoint(0.1, -0.2), ImagePoint(-0.1, 0.2), 150.0, intr)
    assert (x, y) == pytest.approx((5.0, -15.0))


def test_planar_rejects_non_positive_height(intr):
    with pytest.raises(DomainError):
        estimate_planar(WorldPoint(0, 0), WorldPoint(1, 1), ImagePoint(0, 0), ImagePoint(1, 1), 0.0, intr)


@pytest.mark.parametrize("pose", [CameraPose(10.0, -20.0), CameraPose(0.0, 0.0), CameraPose(-30.0, 25.0, 0.0, 1.0)])
def test_locate_round_trip_within_bound(scene, intr, pose):
    H = scene.led_plane_z - pose.z
    pair = select_lamp_pair(anchors_for(scene, pose, intr), intr)
    pair = tuple(Anchor(a.led_id, a.world, PixelPoint(round(a.pixel.u), round(a.pixel.v))) for a in pair)
    fix = locate(pair, intr)
    assert math.hypot(fix.x_w - pose.x, fix.y_w - pose.y) <= intr.quantization_bound(H)


def test_table_layout_diagonal_pair_at_origin(scene, intr):
    pose = CameraPose(0.0, 0.0)
    fix = locate(select_lamp_pair(anchors_for(scene, pose, intr, {"LED1", "LED3"}), intr), intr)
    assert math.hypot(fix.x_w, fix.y_w) < 1e-9
    assert fix.H == pytest.approx(150.0)
    assert fix.z_w == pytest.approx(0.0)


# -- rotation --------------------------------------------------------------------

@pytest.mark.parametrize("p1, p2, expected", [
    ((10, 0), (-10, 0), 0.0),
    ((0, 10), (0, -10), math.pi / 2),
    ((-10, 0), (10, 0), math.pi),
])
def test_rotation_closed_forms(p1, p2, expected):
    assert estimate_rotation(ImagePoint(*p1), ImagePoint(*p2)) == pytest.approx(expected)


def test_rotation_coincident_points():
    with pytest.raises(DegenerateGeometryError):
        estimate_rotation(ImagePoint(1, 1), ImagePoint(1, 1))


def test_recovered_yaw_matches_pose(scene):
    intr = CameraIntrinsics.preset("native")
    pose = CameraPose(0.0, 0.0, 0.0, math.radians(30))
    fix = locate(select_lamp_pair(anchors_for(scene, pose, intr), intr), intr)
    assert math.degrees(fix.theta) == pytest.approx(30.0, abs=0.5)


@given(st.floats(-1e3, 1e3))
def test_wrap_angle_range(t):
    w = wrap_angle(t)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-9)


# -- world transform -------------------------------------------------------------

def test_rotation_identity_and_quarter_turn():
    assert np.array_equal(rotation_matrix(0.0), np.eye(3))
    p = to_world(1.0, 0.0, 0.0, math.pi / 2)
    assert (p.x, p.y) == pytest.approx((0.0, -1.0), abs=1e-15)


@given(st.floats(-10, 10))
def test_rotation_inverse(phi):
    assert np.allclose(rotation_matrix(phi) @ rotation_matrix(-phi), np.eye(3), atol=1e-12)


# -- pair selection ----------------------------------------------------------------

def _anchor(led_id, x, y, u, v):
    return Anchor(led_id, WorldPoint(x, y, 150), PixelPoint(u, v))


def test_single_valid_pair_selected():
    a, b = _anchor("A", 0, 0, 10, 10), _anchor("B", 100, 100, 50, 50)
    assert select_lamp_pair([b, a]) == (a, b)


def test_equal_y_pair_is_degenerate():
    with pytest.raises(DegenerateLayoutError):
        select_lamp_pair([_anchor("A", 0, 0, 10, 10), _anchor("B", 100, 0, 50, 10)])


def test_too_few_anchors():
    with pytest.raises(InsufficientAnchorsError):
        select_lamp_pair([_anchor("A", 0, 0, 10, 10)])


def test_all_four_lamps_pick_widest_diagonal(scene, intr):
    anchors = anchors_for(scene, CameraPose(0.0, 0.0), intr)
    best = max(((a, b) for k, a in enumerate(anchors) for b in anchors[k + 1:]
                if a.world.x != b.world.x and a.world.y != b.world.y),
               key=lambda ab: math.hypot(ab[0].pixel.u - ab[1].pixel.u, ab[0].pixel.v - ab[1].pixel.v))
    chosen = select_lamp_pair(anchors, intr)
    assert {chosen[0].led_id, chosen[1].led_id} == {best[0].led_id, best[1].led_id}


# -- calibration -------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8))
def test_calibrate_center_recovers_offset(du, dv):
    from vlp.simulator import ScenePlatform
    scene = ScenePlatform()
    true_intr = CameraIntrinsics.preset("compressed")
    cx, cy = true_intr.center
    shifted = true_intr.with_center(cx + du, cy + dv)
    fixes = []
    for yaw in np.linspace(-3, 3, 7):
        pose = CameraPose(0.0, 0.0, 0.0, float(yaw))
        fixes.append(locate(select_lamp_pair(anchors_for(scene, pose, shifted)), true_intr))
    cal = calibrate_center(fixes, (0.0, 0.0), true_intr)
    assert cal.center == pytest.approx((cx + du, cy + dv), abs=0.05)


def test_calibrate_center_needs_fixes(intr):
    with pytest.raises(DomainError):
        calibrate_center([], (0.0, 0.0), intr)
