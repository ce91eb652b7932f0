"""Synthetic labelled clusters with Lennard-Jones energies and forces.

Stands in for a quantum-chemistry dataset: every sample carries the
per-atom energy (total / n_atoms) and the exact analytic forces.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LJParams",
    "DEFAULT_PARAMS",
    "Configuration",
    "Sample",
    "lj_energy",
    "lj_forces",
    "make_sample",
    "generate_dataset",
    "dump_dataset",
    "write_dataset",
    "parse_dataset",
    "read_dataset",
    "dataset_digest",
    "split_indices",
    "dominant_species",
    "SamplingError",
]

# pairs closer than this are rejected outright, whatever the species
HARD_FLOOR = 1e-3


class SamplingError(RuntimeError):
    """Rejection sampling ran out of attempts placing an atom."""


@dataclass(frozen=True)
class LJParams:
    """Per-species well depth (eV) and size (Å); cross terms use Lorentz-Berthelot."""

    epsilon: tuple[float, ...]
    sigma: tuple[float, ...]
    names: tuple[str, ...] = ()

    @property
    def n_species(self) -> int:
        return len(self.epsilon)

    def pair(self, a, b):
        eps = np.sqrt(np.asarray(self.epsilon)[a] * np.asarray(self.epsilon)[b])
        sig = 0.5 * (np.asarray(self.sigma)[a] + np.asarray(self.sigma)[b])
        return eps, sig


# Ne, Ar, Kr
DEFAULT_PARAMS = LJParams(epsilon=(0.0031, 0.0104, 0.0140), sigma=(2.79, 3.40, 3.65), names=("Ne", "Ar", "Kr"))


@dataclass(frozen=True)
class Configuration:
    positions: np.ndarray
    species: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        spc = np.array(self.species, dtype=np.int64).reshape(-1)
        if len(pos) != len(spc):
            raise ValueError(f"{len(pos)} positions but {len(spc)} species labels")
        if len(pos) < 2:
            raise ValueError("a configuration needs at least two atoms")
        pos.setflags(write=False)
        spc.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "species", spc)

    @property
    def n_atoms(self) -> int:
        return len(self.species)


@dataclass(frozen=True)
class Sample:
    config: Configuration
    per_atom_energy: float
    forces: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.config.n_atoms


def _pair_terms(config: Configuration, params: LJParams):
    pos = config.positions
    i, j = np.triu_indices(config.n_atoms, k=1)
    d = pos[i] - pos[j]
    r = np.sqrt(np.einsum("pd,pd->p", d, d))
    if np.any(r < HARD_FLOOR):
        raise ValueError(f"interatomic distance below hard floor {HARD_FLOOR} Å: {r.min():.3g}")
    eps, sig = params.pair(config.species[i], config.species[j])
    return i, j, d, r, eps, sig


def lj_energy(config: Configuration, params: LJParams = DEFAULT_PARAMS) -> float:
    """Total Lennard-Jones energy (eV), no cutoff, no periodicity."""
    _, _, _, r, eps, sig = _pair_terms(config, params)
    sr6 = (sig / r) ** 6
    return float(np.sum(4.0 * eps * (sr6 * sr6 - sr6)))


def lj_forces(config: Configuration, params: LJParams = DEFAULT_PARAMS) -> np.ndarray:
    """Analytic forces ``-dE/dr_i`` as an ``(n_atoms, 3)`` array (eV/Å)."""
    i, j, d, r, eps, sig = _pair_terms(config, params)
    sr6 = (sig / r) ** 6
    # -dV/dr / r, so that F_i = coef * (r_i - r_j)
    coef = 24.0 * eps * (2.0 * sr6 * sr6 - sr6) / (r * r)
    fij = coef[:, None] * d
    forces = np.zeros((config.n_atoms, 3))
    np.add.at(forces, i, fij)
    np.add.at(forces, j, -fij)
    return forces


def make_sample(config: Configuration, params: LJParams = DEFAULT_PARAMS) -> Sample:
    forces = lj_forces(config, params)
    forces.setflags(write=False)
    return Sample(config, lj_energy(config, params) / config.n_atoms, forces)


def _place_cluster(rng, species, params, r_min, bond_range, max_attempts):
    n = len(species)
    pos = np.zeros((n, 3))
    for a in range(1, n):
        for _ in range(max_attempts):
            anchor = int(rng.integers(a))
            _, sig_anchor = params.pair(species[a], species[anchor])
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            cand = pos[anchor] + direction * rng.uniform(*bond_range) * sig_anchor
            _, sig = params.pair(species[a], species[:a])
            dist = np.linalg.norm(pos[:a] - cand, axis=1)
            if np.all(dist >= r_min * sig):
                pos[a] = cand
                break
        else:
            raise SamplingError(
                f"could not place atom {a} of {n} after {max_attempts} attempts "
                f"(r_min={r_min}, bond_range={bond_range})"
            )
    return pos - pos.mean(axis=0)


def generate_dataset(
    seed: int,
    n_samples: int,
    atom_range: Sequence[int] = (2, 8),
    params: LJParams = DEFAULT_PARAMS,
    r_min: float = 0.8,
    bond_range: tuple[float, float] = (0.95, 1.6),
    max_attempts: int = 1000,
) -> list[Sample]:
    """Random clusters grown atom by atom, labelled with Lennard-Jones.

    Each new atom is dropped at a random direction from a random existing
    atom, at a distance drawn from ``bond_range`` (in units of the pair's
    sigma), and rejected if it lands closer than ``r_min * sigma_ij`` to any
    atom already placed.

    Args:
        seed: Seed for the sample stream; equal seeds give identical datasets.
        n_samples: Number of clusters.
        atom_range: Inclusive ``(min, max)`` atom count, drawn uniformly.
        params: Species table.
        r_min: Minimum pair distance in units of the mixed sigma.
        bond_range: Placement distance range in units of the mixed sigma.
        max_attempts: Placement attempts per atom before giving up.

    Raises:
        SamplingError: if an atom cannot be placed within ``max_attempts``.
    """
    lo, hi = (int(x) for x in atom_range)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if lo < 2 or hi < lo:
        raise ValueError(f"atom range must satisfy 2 <= min <= max, got {atom_range}")
    if not 0 < r_min <= bond_range[0] <= bond_range[1]:
        raise ValueError(f"need 0 < r_min <= bond_range[0] <= bond_range[1], got {r_min}, {bond_range}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        n = int(rng.integers(lo, hi + 1))
        species = rng.integers(params.n_species, size=n)
        pos = _place_cluster(rng, species, params, r_min, bond_range, max_attempts)
        samples.append(make_sample(Configuration(pos, species), params))
    return samples


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_dataset(samples: Iterable[Sample]) -> str:
    """Serialise samples to the line-oriented text format.

    One record per sample::

        n_atoms
        species x y z fx fy fz      (n_atoms lines)
        per_atom_energy

    Floats use 17 significant digits, which round-trips IEEE doubles exactly.
    """
    out = io.StringIO()
    for s in samples:
        out.write(f"{s.n_atoms}\n")
        for spc, p, f in zip(s.config.species, s.config.positions, s.forces):
            out.write(" ".join([str(int(spc)), *map(_fmt, p), *map(_fmt, f)]) + "\n")
        out.write(_fmt(s.per_atom_energy) + "\n")
    return out.getvalue()


def write_dataset(samples: Iterable[Sample], path) -> Path:
    path = Path(path)
    path.write_text(dump_dataset(samples))
    return path


def parse_dataset(text: str) -> list[Sample]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    samples = []
    pos = 0
    while pos < len(lines):
        try:
            n = int(lines[pos])
            rows = [ln.split() for ln in lines[pos + 1 : pos + 1 + n]]
            energy = float(lines[pos + 1 + n])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed dataset record starting at data line {pos + 1}") from exc
        if len(rows) != n or any(len(r) != 7 for r in rows):
            raise ValueError(f"malformed atom lines in record starting at data line {pos + 1}")
        species = [int(r[0]) for r in rows]
        xyz = [[float(v) for v in r[1:4]] for r in rows]
        forces = np.array([[float(v) for v in r[4:7]] for r in rows])
        forces.setflags(write=False)
        samples.append(Sample(Configuration(xyz, species), energy, forces))
        pos += n + 2
    return samples


def read_dataset(path) -> list[Sample]:
    return parse_dataset(Path(path).read_text())


def dataset_digest(samples: Iterable[Sample]) -> str:
    return hashlib.sha256(dump_dataset(samples).encode()).hexdigest()


def split_indices(n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 90/10 split: every tenth sample goes to validation."""
    idx = np.arange(n_samples)
    val = idx % 10 == 9
    return idx[~val], idx[val]


def dominant_species(sample: Sample, n_species: int = 3) -> int:
    """Most frequent species in the cluster (lowest index wins ties)."""
    return int(np.argmax(np.bincount(sample.config.species, minlength=n_species)))


def min_pair_distance(config: Configuration) -> float:
    i, j = np.triu_indices(config.n_atoms, k=1)
    return float(np.min(np.linalg.norm(config.positions[i] - config.positions[j], axis=1)))


def total_energy(sample: Sample) -> float:
    return sample.per_atom_energy * sample.n_atoms
