"""Drive the camera along the x-axis path through both topologies.

    python3 demos/path_tracking.py [frames]
"""

import sys

from vlp.harness.experiment import ExperimentSpec, run_experiment


def main(argv):
    frames = int(argv[0]) if argv else 40
    for topology in ("local", "split"):
        spec = ExperimentSpec.preset_named("A", topology=topology, max_frames=frames)
        res = run_experiment(spec)
        print(f"== {topology}")
        print(res.stats.summary())
        print(res.latency.breakdown())
        if res.degraded:
            print("degraded run")


if __name__ == "__main__":
    main(sys.argv[1:])
