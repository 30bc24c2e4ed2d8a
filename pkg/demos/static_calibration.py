"""Repeated static fixes before and after principal-point calibration."""

from vlp.harness.experiment import ExperimentSpec, run_experiment


def main():
    res = run_experiment(ExperimentSpec.preset_named("static", repetitions=40))
    print(res.stats.summary())
    print(f"dispersion before calibration {res.extra['dispersion_uncorrected_cm']:.3f} cm")
    print(f"dispersion after calibration  {res.extra['dispersion_corrected_cm']:.3f} cm")


if __name__ == "__main__":
    main()
