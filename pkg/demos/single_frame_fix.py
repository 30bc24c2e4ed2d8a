"""Render one frame, find the lamps, identify them and compute a fix.

    python3 demos/single_frame_fix.py [x y]
"""

import math
import sys

from vlp.codec import extract_features, match_id
from vlp.geometry import Anchor, PixelPoint, locate, select_lamp_pair
from vlp.imaging import RenderConfig
from vlp.simulator import CameraPose, ScenePlatform, render_frame
from vlp.tracker import detect_rois


def main(argv):
    x, y = (float(argv[0]), float(argv[1])) if len(argv) == 2 else (-20.0, 10.0)
    scene = ScenePlatform()
    render = RenderConfig.preset("native")
    intr = scene.intrinsics(render)
    pose = CameraPose(x, y)
    frame = render_frame(scene, pose, 0.0, render)
    print(f"camera at ({x:.1f}, {y:.1f}) cm, frame {frame.pixels.shape[1]}x{frame.pixels.shape[0]}")

    anchors = []
    for roi in detect_rois(frame):
        feats = extract_features(frame, roi, render)
        led = match_id(feats, scene.luminaires, render)
        print(f"  blob at ({roi.cx:7.1f}, {roi.cy:7.1f}) px -> {led}")
        if led is not None:
            anchors.append(Anchor(led, scene.luminaires.get(led).position, PixelPoint(roi.cx, roi.cy)))

    if len(anchors) < 2:
        print("fewer than two lamps identified, no fix")
        return 1
    fix = locate(select_lamp_pair(anchors, intr), intr)
    err = math.hypot(fix.x_w - x, fix.y_w - y)
    print(f"fix ({fix.x_w:.2f}, {fix.y_w:.2f}) cm from {fix.pair}, H={fix.H:.1f} cm, error {err:.2f} cm")
    print(f"quantization bound at this height: {intr.quantization_bound(fix.H):.2f} cm")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
