"""Camera node as a standalone process: ``python -m vlp.mesh.camera_proc HOST:PORT < job.json``."""

from __future__ import annotations

import json
import sys
import time

from vlp.mesh.bus import TcpBus
from vlp.mesh.nodes import CameraNode
from vlp.simulator import CameraPose, render_from_dict, scene_from_dict


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    job = json.load(sys.stdin)
    bus = TcpBus(argv[0])
    try:
        cam = CameraNode(bus, scene_from_dict(job["scene"]), render_from_dict(job["render"]), job["lockstep"])
        cam.run([[(ts, CameraPose(*p)) for ts, *p in seg] for seg in job["segments"]])
        # let the done message leave before the socket closes
        time.sleep(0.05)
    finally:
        bus.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
