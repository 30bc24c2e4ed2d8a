import math

import pytest

from vlp.errors import DomainError
from vlp.imaging import RenderConfig
from vlp.mesh.nodes import STAGES, LatencyReport
from vlp.mesh.pipeline import run_pipeline
from vlp.simulator import CameraPose, ScenePlatform, Trajectory

PATH_A = [(-35.0, 0.0), (35.0, -0.5)]


def short_path(frames):
    """The first ``frames`` seconds of the x-axis path at 1 fps."""
    traj = Trajectory.from_path(PATH_A, speed=0.4)
    return [[(ts, traj.pose_at(ts * 1e-9)) for ts in traj.sample_times(1.0)[:frames]]]


@pytest.fixture(scope="module")
def runs():
    scene = ScenePlatform()
    out = {}
    for topo, preset in [("local", "compressed"), ("split", "compressed"), ("split", "native")]:
        out[topo, preset] = run_pipeline(topo, scene, short_path(6), RenderConfig.preset(preset))
    return out


@pytest.mark.parametrize("key", [("local", "compressed"), ("split", "compressed"), ("split", "native")])
def test_every_frame_yields_an_accurate_fix(runs, key):
    res = runs[key]
    segs = short_path(6)[0]
    assert not res.degraded, res.errors
    assert res.frames_published == 6
    assert [f.source_frame_seq for f in res.fixes] == list(range(6))
    intr = ScenePlatform().intrinsics(RenderConfig.preset(key[1]))
    for f in res.fixes:
        pose = segs[f.source_frame_seq][1]
        assert math.hypot(f.x_w - pose.x, f.y_w - pose.y) <= intr.quantization_bound(150.0)
        assert len(set(f.pair)) == 2


@pytest.mark.parametrize("key", [("local", "compressed"), ("split", "compressed"), ("split", "native")])
def test_latency_report_has_every_stage(runs, key):
    lat = runs[key].latency
    for stage in STAGES:
        assert lat.stage(stage).size == len(runs[key].fixes)
        assert (lat.stage(stage) >= 0).all()


def test_larger_frames_take_longer_to_transport(runs):
    assert runs["split", "native"].latency.mean_s("transport") > runs["split", "compressed"].latency.mean_s("transport")


def test_unknown_topology_rejected():
    with pytest.raises(DomainError):
        run_pipeline("mesh", ScenePlatform(), short_path(1), RenderConfig.preset("compressed"))


def test_no_fix_without_two_lamps():
    # beyond a corner of the platform only LED1 is in view
    segs = [[(0, CameraPose(-160.0, 120.0))], [(10**9, CameraPose(-150.0, 130.0))]]
    res = run_pipeline("local", ScenePlatform(), segs, RenderConfig.preset("compressed"))
    assert res.fixes == []
    assert res.stats.frames_with_pair == 0


def test_trajectory_accepted_directly():
    traj = Trajectory.from_path([(0.0, 0.0), (0.8, 0.0)], speed=0.4)
    res = run_pipeline("local", ScenePlatform(), traj, RenderConfig.preset("compressed"))
    assert len(res.fixes) == 3


def test_latency_csv_round_trip(tmp_path, runs):
    lat = runs["local", "compressed"].latency
    lat.to_csv(tmp_path / "lat.csv")
    assert LatencyReport.from_csv(tmp_path / "lat.csv") == lat
    assert (tmp_path / "lat.csv").read_text().splitlines()[0] == "fix_seq,stage,ns"
    text = lat.breakdown()
    assert all(s in text for s in STAGES)
