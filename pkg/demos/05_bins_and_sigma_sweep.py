"""Sweep bin count and smoothing width against the baseline.

Run: python3 demos/05_bins_and_sigma_sweep.py [steps]
The same sweep is available as `histloss ablate`.
"""

import sys

from histloss.experiment import RunConfig, ablate, ablation_csv, sigma_trend
from histloss.model import OptimizerConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
rows = ablate(RunConfig(optimizer=OptimizerConfig(total_steps=steps)), (128, 256), (0.25, 0.75, 2.0))

print(ablation_csv(r for r in rows if r.stratum == "overall"))
print("sigma = 0.75 lowest at 128 bins:", sigma_trend(rows))

# Per-stratum rows group validation clusters by their most common species.
for r in rows:
    if r.variant == "hl_gauss_k128_s0.75":
        print(f"{r.stratum:8s} energy MAE {1000 * r.energy_mae:.3f} meV/atom")
