"""Empirical CDFs of sampled current: 802.11 board vs 802.15.4 tag.

The 802.11 device spends its time across a current span roughly 46x wider
than the sensor tag, which is why wide-range measurement matters.
"""

import numpy as np

from emeter.analysis import ecdf, ecdf_csv
from emeter.experiment import PipelineOptions, run_experiment
from emeter.workloads import generate_profile

traces = {}
for preset in ("cyw43907", "cc2650"):
    run = run_experiment(preset, 1, PipelineOptions(seed=0), duration=10.0)
    traces[preset] = run.trace

for preset, trace in traces.items():
    xs, ps = ecdf(trace.current)
    print(f"{preset}: {len(trace)} samples, {len(xs)} distinct current levels")
    for q in (0.25, 0.5, 0.9, 0.99):
        idx = int(np.searchsorted(ps, q))
        print(f"   p{int(q * 100):02d} <= {xs[min(idx, len(xs) - 1)] * 1e3:8.3f} mA")
print()

wifi = generate_profile("cyw43907", 1, seed=0, duration=30.0)
tag = generate_profile("cc2650", 1, seed=0, duration=30.0)
span_wifi = wifi.time_weighted_quantile(0.99) - wifi.current.min()
span_tag = tag.time_weighted_quantile(0.99) - tag.current.min()
print("robust current span: %.1f mA (802.11) vs %.3f mA (802.15.4) -> %.1fx wider"
      % (span_wifi * 1e3, span_tag * 1e3, span_wifi / span_tag))
print()

print("CSV head for plotting (emeter ecdf <trace> --out ecdf.csv --gnuplot):")
print("\n".join(ecdf_csv(traces["cc2650"].current).splitlines()[:5]))
