"""Double-lamp visible light positioning with rolling-shutter LED IDs and Camshift/Kalman tracking."""

from vlp.codec import (LuminaireDatabase, LuminaireRecord, ModulationProfile, StripeFeatures, default_database,
                       expected_features, extract_features, match_id, synthesize_stripes)
from vlp.geometry import (Anchor, CameraIntrinsics, ImagePoint, PixelPoint, PoseFix, WorldPoint, calibrate_center,
                          estimate_height, estimate_planar, estimate_rotation, locate, pixel_to_image,
                          select_lamp_pair, to_world)
from vlp.imaging import Frame, RenderConfig, SearchWindow
from vlp.simulator import CameraPose, ScenePlatform, Trajectory, project, render_frame, run_trajectory
from vlp.tracker import TrackedLamp, TrackerConfig, bhattacharyya, detect_rois, track_frame

__version__ = "0.1.0"

__all__ = [
    "LuminaireDatabase", "LuminaireRecord", "ModulationProfile", "StripeFeatures", "default_database",
    "expected_features", "extract_features", "match_id", "synthesize_stripes",
    "Anchor", "CameraIntrinsics", "ImagePoint", "PixelPoint", "PoseFix", "WorldPoint", "calibrate_center",
    "estimate_height", "estimate_planar", "estimate_rotation", "locate", "pixel_to_image", "select_lamp_pair",
    "to_world", "Frame", "RenderConfig", "SearchWindow", "CameraPose", "ScenePlatform", "Trajectory", "project",
    "render_frame", "run_trajectory", "TrackedLamp", "TrackerConfig", "bhattacharyya", "detect_rois",
    "track_frame",
]
