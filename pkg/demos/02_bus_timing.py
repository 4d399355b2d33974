"""Polling counts and sampling throughput per driver stack and bus speed.

The fast (BCM-like) driver talks to the bus controller directly; the
Linux-like stack pays a syscall per transaction, at least 20us per read.
The sampler polls the ready bit until a conversion completes, so slower
reads mean fewer polls but also lower throughput.
"""

import numpy as np

from emeter.bus_timing import (
    PROFILES,
    SUPPORTED_SPEEDS_KHZ,
    expected_polls,
    load_delay_config,
    read_delay,
)
from emeter.sensor import SensorConfig

speeds = sorted(SUPPORTED_SPEEDS_KHZ, reverse=True)

for res in (12, 9):
    print(f"--- {res}-bit resolution ---")
    print("driver " + "".join(f"{s:>10d}kHz" for s in speeds))
    for name in ("bcm", "linux"):
        cfg = SensorConfig(resolution_bits=res, supply_voltage=5.0)
        cells = [expected_polls(PROFILES[name], s, cfg) for s in speeds]
        print(f"{name:6s} " + "".join(f"{c.polls_per_sample:>13d}" for c in cells)
              + "   polls/sample")
        print(f"{'':6s} " + "".join(f"{c.samples_per_second:>13.0f}" for c in cells)
              + "   samples/s")
    print()

# jittered read delays: the Linux stack spreads about 22us, BCM about 4us
rng = np.random.default_rng(0)
for name in ("bcm", "linux"):
    draws = np.array([read_delay(PROFILES[name], 500, rng) for _ in range(5000)])
    print(f"{name:6s} read at 500kHz: mean {draws.mean():6.1f} us, "
          f"spread {draws.max() - draws.min():5.1f} us")
print()

# delay constants can be re-fitted from a plain-text config
profiles = load_delay_config("bcm.500 = 120.0\nlinux.500 = 160.0\n")
cfg = SensorConfig(resolution_bits=12)
print("after re-fit, 12-bit polls at 500kHz:",
      expected_polls(profiles["bcm"], 500, cfg).polls_per_sample, "(bcm),",
      expected_polls(profiles["linux"], 500, cfg).polls_per_sample, "(linux)")
