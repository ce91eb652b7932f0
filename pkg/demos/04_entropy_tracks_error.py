"""Does the predicted histogram's entropy flag the samples it gets wrong?

Run: python3 demos/04_entropy_tracks_error.py [steps]
"""

import sys

import numpy as np

from histloss.experiment import RunConfig, evaluate, pearson_r, positive_fraction, prepare_data, train_run
from histloss.model import OptimizerConfig
from histloss.toy import generate_dataset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
data = prepare_data(generate_dataset(1, 5000), 8)
run = train_run(RunConfig(optimizer=OptimizerConfig(total_steps=steps)), data)

# Per-step correlation on the fixed held-out batch (the correlation.csv series).
for step, r_eval, r_train in run.correlation_series()[::4]:
    fmt = lambda r: "  null" if r is None else f"{r:+.3f}"
    print(f"step {step:5d}  r(eval) {fmt(r_eval)}  r(train batch) {fmt(r_train)}")
print("share of post-warmup steps with r > 0:", positive_fraction(run.metrics, run.config.optimizer.warmup_steps))

# On the whole validation split: bucket samples by entropy and compare errors.
ev = evaluate(run.checkpoint, data, "val")
ent = np.array([r[4] for r in ev.records])
err = np.array([r[5] for r in ev.records])
print("validation r:", pearson_r(ent, err))
for q, idx in enumerate(np.array_split(np.argsort(ent), 4)):
    print(f"entropy quartile {q + 1}: mean entropy {ent[idx].mean():.2f} nats, mean |error| {1000 * err[idx].mean():.2f} meV/atom")
