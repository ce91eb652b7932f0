"""Turning a scalar energy into a smoothed histogram, and back.

Run: python3 demos/01_histogram_targets.py
"""

import numpy as np

from histloss.codec import EncodeConfig, decode_expectation, encode_target, entropy, make_grid

# A 16-bin grid on [0, 1]; each bin is 1/16 wide.
grid = make_grid(0.0, 1.0, 16)
print("bin width:", grid.w)

# The target 0.40 is spread over neighbouring bins by a Gaussian 0.75 bins wide.
cfg = EncodeConfig.for_grid(grid, 0.75)
p = encode_target(0.40, cfg, grid)
for c, mass in zip(grid.centers, p):
    print(f"{c:6.3f} {mass:8.5f} " + "#" * int(round(60 * mass)))

# The expectation over bin centres lands back near the target.
print("decoded:", decode_expectation(p, grid))

# Wider smoothing means a flatter histogram and higher entropy (in nats).
for mult in (0.25, 0.75, 2.0):
    q = encode_target(0.40, EncodeConfig.for_grid(grid, mult), grid)
    print(f"sigma = {mult:4.2f} w  entropy = {entropy(q):.3f}  decoded = {decode_expectation(q, grid):.5f}")

# Narrow smoothing snaps the decoded value towards the nearest bin centre.
targets = np.linspace(0.3, 0.5, 9)
narrow = decode_expectation(encode_target(targets, EncodeConfig.for_grid(grid, 0.25), grid), grid)
print("quantisation error at sigma = 0.25 w:", np.round(narrow - targets, 5))
