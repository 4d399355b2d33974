"""Desk-scale accuracy experiments against the 500ksps reference meter.

Reproduces the headline numbers at reduced run counts: calibrated 12-bit
error per device preset, the voltage-neglect penalty in battery mode, and
the 9-bit vs 12-bit trade-off.  (The acceptance suite runs the full ten
30-second runs per preset; here three 10-second runs keep it quick.)
"""

import numpy as np

from emeter.analysis import voltage_effect
from emeter.calibration import (
    PotentiometerModel,
    SwitchNetwork,
    build_staircase,
    fit_current,
    fit_voltage,
    run_calibration_sweep,
)
from emeter.experiment import PipelineOptions, device_pipeline, run_experiment
from emeter.workloads import PRESETS, ReferenceMeter

RUNS, SECONDS = 3, 10.0

pot, network = PotentiometerModel(), SwitchNetwork()
program = build_staircase(pot, network, step_a=5e-3, max_a=0.8)
curves = {}
for res in (12, 9):
    pairs = run_calibration_sweep(
        program, device_pipeline(PipelineOptions(seed=1, resolution_bits=res)),
        ReferenceMeter(), pot=pot, network=network)
    curves[res] = fit_voltage(pairs, fit_current(pairs))

print(f"median error over {RUNS} x {SECONDS:.0f}s runs, calibrated, "
      "12-bit BCM at 2500kHz:")
for preset in PRESETS:
    errs = {12: [], 9: []}
    for res in (12, 9):
        for seed in range(RUNS):
            run = run_experiment(preset, 1,
                                 PipelineOptions(seed=seed, resolution_bits=res),
                                 calibration=curves[res], duration=SECONDS)
            errs[res].append(run.report.error_percent)
    gap = np.median(errs[9]) - np.median(errs[12])
    print(f"  {preset:10s} 12-bit {np.median(errs[12]):6.3f}%   "
          f"9-bit {np.median(errs[9]):6.3f}%   gap {gap:+6.3f}pp")
print()

# the hybrid sleep model vs plain integration on the sensor-tag preset
run = run_experiment("cc2650", 1, PipelineOptions(seed=0),
                     calibration=curves[12], duration=SECONDS)
e_a = run.report.e_reference_j
print("cc2650 hybrid error %.4f%%, naive error %.4f%%"
      % (abs(run.energy_hybrid_j - e_a) / e_a * 100,
         abs(run.energy_naive_j - e_a) / e_a * 100))
print()

print("voltage-neglect penalty (mean voltage instead of per-sample):")
for source in ("battery", "supply"):
    run = run_experiment("cyw43907", 1, PipelineOptions(seed=0),
                         source=source, duration=SECONDS)
    delta = voltage_effect(run.trace)["delta_percent"]
    print(f"  cyw43907 on {source:8s}: {delta:.4f}%")
