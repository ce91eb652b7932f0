"""A synthetic dataset of small Lennard-Jones clusters.

Run: python3 demos/02_lennard_jones_clusters.py
"""

import tempfile
from pathlib import Path

import numpy as np

from histloss.toy import DEFAULT_PARAMS, Configuration, generate_dataset, lj_energy, read_dataset, write_dataset

# Two argon atoms at the bottom of the well: energy -epsilon, zero force.
r_star = 2 ** (1 / 6) * DEFAULT_PARAMS.sigma[1]
pair = Configuration([[0, 0, 0], [r_star, 0, 0]], [1, 1])
print("Ar2 at r* =", round(r_star, 4), "A:", lj_energy(pair), "eV")

samples = generate_dataset(seed=1, n_samples=500)
sizes = np.bincount([s.n_atoms for s in samples])
print("cluster sizes:", {n: int(c) for n, c in enumerate(sizes) if c})

energies = np.array([s.per_atom_energy for s in samples])
print(f"per-atom energy: min {energies.min():.4f}, median {np.median(energies):.4f}, max {energies.max():.4f} eV")

# Analytic forces against a central difference on one atom.
s = samples[7]
h = 1e-5
x = s.config.positions.copy()
fd = []
for d in range(3):
    xp, xm = x.copy(), x.copy()
    xp[0, d] += h
    xm[0, d] -= h
    fd.append(-(lj_energy(Configuration(xp, s.config.species)) - lj_energy(Configuration(xm, s.config.species))) / (2 * h))
print("force on atom 0, analytic:", s.forces[0], "finite difference:", np.array(fd))
print("net force:", s.forces.sum(axis=0))

# The text format stores 17 significant digits, so a reload is exact.
with tempfile.TemporaryDirectory() as tmp:
    path = write_dataset(samples, Path(tmp) / "clusters.txt")
    print(path.read_text().splitlines()[:4])
    back = read_dataset(path)
    print("exact reload:", all(a.per_atom_energy == b.per_atom_energy for a, b in zip(samples, back)))
