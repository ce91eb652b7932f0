"""Train the scalar-MAE baseline and the HL-Gauss head on the same data.

Run: python3 demos/03_baseline_vs_histogram.py [steps]
Both runs share dataset, split, trunk initialisation and schedule.
"""

import sys

from histloss.experiment import GridSpec, RunConfig, evaluate, prepare_data, train_run
from histloss.model import OptimizerConfig
from histloss.toy import generate_dataset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
data = prepare_data(generate_dataset(1, 5000), 8)
base_cfg = RunConfig(optimizer=OptimizerConfig(total_steps=steps))

results = {}
for mode in ("baseline_mae", "hl_gauss"):
    cfg = base_cfg.replace(mode=mode, grid=GridSpec() if mode == "baseline_mae" else base_cfg.grid)
    run = train_run(cfg, data)
    ev = evaluate(run.checkpoint, data, "val")
    results[mode] = ev
    print(f"{mode:13s} val energy MAE {1000 * ev.energy_mae:6.3f} meV/atom   force MAE {1000 * ev.force_mae:6.2f} meV/A")
    for m in run.metrics[:: max(1, len(run.metrics) // 5)]:
        print(f"    step {m.step:5d}  eval-batch energy MAE {1000 * m.energy_mae:7.3f}")

print("ratio hl_gauss / baseline:", results["hl_gauss"].energy_mae / results["baseline_mae"].energy_mae)
