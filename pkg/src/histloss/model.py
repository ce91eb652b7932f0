"""Feed-forward potential with an energy head and a direct force head.

The energy branch sees only rotation/translation invariant features. The
force head predicts one scalar coefficient per (sorted) atom pair; forces are
assembled as ``F_i = sum_j g_ij * u_ij`` with ``u_ij`` the unit vector from
``j`` to ``i``, which keeps them rotation-equivariant without differentiating
the energy.

Backpropagation and the AdamW optimiser are written out by hand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import BinGrid, encode_target, EncodeConfig
from .losses import (
    LossConfig,
    combined_loss,
    cross_entropy,
    cross_entropy_grad_logits,
    force_mae_grad,
    force_mae_loss,
    mae_grad,
    mae_loss,
    softmax_with_temperature,
)
from .toy import Configuration

__all__ = [
    "MODES",
    "Descriptor",
    "DescriptorBatch",
    "ModelConfig",
    "ModelState",
    "OptimizerConfig",
    "NonFiniteError",
    "featurize",
    "stack_descriptors",
    "init_state",
    "forward",
    "backward",
    "loss_and_grads",
    "lr_at",
    "optimizer_step",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("baseline_mae", "hl_gauss")
CHECKPOINT_VERSION = 1
TRUNK = ("W1", "b1", "W2", "b2")
FORCE_HEAD = ("Wf", "bf")
ENERGY_HEAD = ("We", "be")


class NonFiniteError(FloatingPointError):
    """A gradient, parameter or loss stopped being finite."""


def n_pair_slots(max_atoms: int) -> int:
    return max_atoms * (max_atoms - 1) // 2


def _pair_types(n_species: int) -> dict[tuple[int, int], int]:
    types = [(a, b) for a in range(n_species) for b in range(a, n_species)]
    return {t: i for i, t in enumerate(types)}


@dataclass(frozen=True)
class Descriptor:
    """Fixed-size view of one configuration.

    ``energy`` holds, for every unordered species pair, the inverse distances
    of all atom pairs of that type sorted in decreasing order and zero-padded
    to ``max_atoms * (max_atoms - 1) / 2`` slots, followed by the per-species
    atom counts. ``pair_i``/``pair_j``/``units`` describe which atom pair sits
    in each slot (``-1`` and a zero vector for empty slots).
    """

    energy: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    units: np.ndarray
    n_atoms: int


def featurize(config: Configuration, max_atoms: int, n_species: int = 3) -> Descriptor:
    n = config.n_atoms
    if n > max_atoms:
        raise ValueError(f"configuration has {n} atoms, featurizer allows at most {max_atoms}")
    if np.any(config.species >= n_species) or np.any(config.species < 0):
        raise ValueError(f"species labels must lie in [0, {n_species})")
    types = _pair_types(n_species)
    block = n_pair_slots(max_atoms)
    n_slots = block * len(types)
    inv = np.zeros(n_slots)
    pair_i = np.full(n_slots, -1, dtype=np.int64)
    pair_j = np.full(n_slots, -1, dtype=np.int64)
    units = np.zeros((n_slots, 3))

    i, j = np.triu_indices(n, k=1)
    d = config.positions[i] - config.positions[j]
    r = np.linalg.norm(d, axis=1)
    si, sj = config.species[i], config.species[j]
    t = np.array([types[(min(a, b), max(a, b))] for a, b in zip(si, sj)], dtype=np.int64)
    # group by type, closest pair first; ties broken by pair index for determinism
    order = np.lexsort((np.arange(len(r)), r, t))
    fill = np.zeros(len(types), dtype=np.int64)
    for p in order:
        slot = t[p] * block + fill[t[p]]
        fill[t[p]] += 1
        inv[slot] = 1.0 / r[p]
        pair_i[slot], pair_j[slot] = i[p], j[p]
        units[slot] = d[p] / r[p]
    counts = np.bincount(config.species, minlength=n_species).astype(float)
    return Descriptor(np.concatenate([inv, counts]), pair_i, pair_j, units, n)


@dataclass
class DescriptorBatch:
    """Stacked descriptors; ``incidence[b, m, s]`` is +1/-1 if atom ``m`` is the
    first/second member of the pair in slot ``s``."""

    energy: np.ndarray
    incidence: np.ndarray
    units: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.energy)

    def take(self, idx) -> "DescriptorBatch":
        return DescriptorBatch(self.energy[idx], self.incidence[idx], self.units[idx], self.mask[idx])


def stack_descriptors(descriptors: Sequence[Descriptor], max_atoms: int) -> DescriptorBatch:
    n_slots = len(descriptors[0].pair_i)
    b = len(descriptors)
    incidence = np.zeros((b, max_atoms, n_slots), dtype=np.int8)
    mask = np.zeros((b, max_atoms))
    for k, desc in enumerate(descriptors):
        filled = np.nonzero(desc.pair_i >= 0)[0]
        incidence[k, desc.pair_i[filled], filled] = 1
        incidence[k, desc.pair_j[filled], filled] = -1
        mask[k, : desc.n_atoms] = 1.0
    return DescriptorBatch(
        np.stack([d.energy for d in descriptors]),
        incidence,
        np.stack([d.units for d in descriptors]),
        mask,
    )


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "hl_gauss"
    bins: int = 128
    hidden: int = 128
    max_atoms: int = 8
    n_species: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "hl_gauss" and self.bins < 2:
            raise ValueError("hl_gauss mode needs at least 2 bins")
        if self.max_atoms < 2 or self.hidden < 1:
            raise ValueError("max_atoms must be >= 2 and hidden >= 1")

    @property
    def n_slots(self) -> int:
        return n_pair_slots(self.max_atoms) * len(_pair_types(self.n_species))

    @property
    def n_inputs(self) -> int:
        return self.n_slots + self.n_species

    @property
    def n_energy_out(self) -> int:
        return self.bins if self.mode == "hl_gauss" else 1


@dataclass
class ModelState:
    """Parameters, fixed input/output scalings and AdamW moments.

    ``feat_mean``/``feat_std`` standardise inputs. In baseline mode the scalar
    head is mapped to energy as ``energy_shift + energy_scale * out``; force
    outputs are multiplied by ``force_scale`` in both modes.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    feat_mean: np.ndarray
    feat_std: np.ndarray
    energy_shift: float = 0.0
    energy_scale: float = 1.0
    force_scale: float = 1.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def trunk_bytes(self) -> bytes:
        return b"".join(self.params[name].tobytes() for name in TRUNK)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def init_state(
    config: ModelConfig,
    feat_mean=None,
    feat_std=None,
    energy_shift: float = 0.0,
    energy_scale: float = 1.0,
    force_scale: float = 1.0,
) -> ModelState:
    """Fan-in scaled uniform trunk and force head; zero energy head.

    The RNG draws do not depend on ``mode`` so both modes share the trunk.
    """
    rng = np.random.default_rng(config.seed)

    def uniform(fan_in, fan_out):
        lim = math.sqrt(3.0 / fan_in)
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    h = config.hidden
    params = {
        "W1": uniform(config.n_inputs, h),
        "b1": np.zeros(h),
        "W2": uniform(h, h),
        "b2": np.zeros(h),
        "Wf": uniform(h, config.n_slots),
        "bf": np.zeros(config.n_slots),
        "We": np.zeros((h, config.n_energy_out)),
        "be": np.zeros(config.n_energy_out),
    }
    n_in = config.n_inputs
    feat_mean = np.zeros(n_in) if feat_mean is None else np.asarray(feat_mean, dtype=float)
    feat_std = np.ones(n_in) if feat_std is None else np.asarray(feat_std, dtype=float)
    return ModelState(
        config=config,
        params=params,
        feat_mean=feat_mean,
        feat_std=feat_std,
        energy_shift=float(energy_shift),
        energy_scale=float(energy_scale),
        force_scale=float(force_scale),
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def forward(state: ModelState, batch: DescriptorBatch):
    """Run the network on a batch.

    Returns:
        ``(energy_out, forces, cache)``. ``energy_out`` is ``(B, k)`` logits in
        hl_gauss mode or ``(B,)`` energies in baseline mode; ``forces`` is
        ``(B, max_atoms, 3)`` with padded atoms at zero.
    """
    p = state.params
    if batch.energy.shape[1] != p["W1"].shape[0]:
        raise ValueError(
            f"descriptor has {batch.energy.shape[1]} features, model expects {p['W1'].shape[0]}"
        )
    if batch.units.shape[1] != p["Wf"].shape[1]:
        raise ValueError(f"descriptor has {batch.units.shape[1]} pair slots, model expects {p['Wf'].shape[1]}")
    x = (batch.energy - state.feat_mean) / state.feat_std
    z1 = x @ p["W1"] + p["b1"]
    a1 = _silu(z1)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = _silu(z2)
    out = a2 @ p["We"] + p["be"]
    if state.config.mode == "baseline_mae":
        energy_out = state.energy_shift + state.energy_scale * out[:, 0]
    else:
        energy_out = out
    g = a2 @ p["Wf"] + p["bf"]
    inc = batch.incidence.astype(float)
    forces = state.force_scale * np.matmul(inc, g[:, :, None] * batch.units)
    cache = (x, z1, a1, z2, a2, inc, batch.units)
    return energy_out, forces, cache


def backward(state: ModelState, cache, d_energy_out, d_forces) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given its output gradients."""
    x, z1, a1, z2, a2, inc, units = cache
    p = state.params
    d_energy_out = np.asarray(d_energy_out, dtype=float)
    d_forces = np.asarray(d_forces, dtype=float)
    b = x.shape[0]
    if state.config.mode == "baseline_mae":
        if d_energy_out.shape != (b,):
            raise ValueError(f"energy gradient must have shape {(b,)}, got {d_energy_out.shape}")
        d_out = (state.energy_scale * d_energy_out)[:, None]
    else:
        if d_energy_out.shape != (b, state.config.bins):
            raise ValueError(f"energy gradient must have shape {(b, state.config.bins)}, got {d_energy_out.shape}")
        d_out = d_energy_out
    if d_forces.shape != (b, inc.shape[1], 3):
        raise ValueError(f"force gradient must have shape {(b, inc.shape[1], 3)}, got {d_forces.shape}")

    # F = s * inc @ (g * u)  =>  dg[b, s] = s * sum_m inc[b, m, s] * (u[b, s] . dF[b, m])
    d_pair = np.matmul(inc.transpose(0, 2, 1), d_forces)
    d_g = state.force_scale * np.einsum("bsd,bsd->bs", d_pair, units)

    grads = {
        "We": a2.T @ d_out,
        "be": d_out.sum(axis=0),
        "Wf": a2.T @ d_g,
        "bf": d_g.sum(axis=0),
    }
    d_a2 = d_out @ p["We"].T + d_g @ p["Wf"].T
    d_z2 = d_a2 * _silu_grad(z2)
    grads["W2"] = a1.T @ d_z2
    grads["b2"] = d_z2.sum(axis=0)
    d_a1 = d_z2 @ p["W2"].T
    d_z1 = d_a1 * _silu_grad(z1)
    grads["W1"] = x.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    return grads


def loss_and_grads(
    state: ModelState,
    batch: DescriptorBatch,
    energy_targets,
    force_targets,
    loss_cfg: LossConfig,
    target_hist=None,
    energy_unit: float = 1.0,
    force_unit: float = 1.0,
):
    """Weighted energy + force loss on a batch and its parameter gradients.

    In hl_gauss mode ``target_hist`` holds the encoded ``(B, k)`` histograms
    and the energy term is their cross-entropy with the temperature softmax;
    in baseline mode the energy term is the MAE against ``energy_targets``.

    ``energy_unit``/``force_unit`` divide the MAE terms, so they can be
    measured in units of the training-set spread instead of eV and eV/Å.

    Returns:
        ``(total, energy_loss, force_loss, grads)``.
    """
    energy_out, forces, cache = forward(state, batch)
    if state.config.mode == "hl_gauss":
        if target_hist is None:
            raise ValueError("hl_gauss mode needs encoded target histograms")
        probs = softmax_with_temperature(energy_out, loss_cfg.temperature)
        e_loss = cross_entropy(target_hist, probs)
        d_e = cross_entropy_grad_logits(target_hist, energy_out, loss_cfg.temperature)
    else:
        e_loss = mae_loss(energy_targets, energy_out) / energy_unit
        d_e = mae_grad(energy_targets, energy_out) / energy_unit
    f_loss = force_mae_loss(force_targets, forces, batch.mask) / force_unit
    d_f = force_mae_grad(force_targets, forces, batch.mask) / force_unit
    total = combined_loss(e_loss, f_loss, loss_cfg)
    grads = backward(state, cache, loss_cfg.energy_weight * d_e, loss_cfg.force_weight * d_f)
    return total, e_loss, f_loss, grads


def encode_batch(energies, grid: BinGrid, sigma_multiplier: float):
    return encode_target(energies, EncodeConfig.for_grid(grid, sigma_multiplier), grid)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    warmup_steps: int = 100
    total_steps: int = 5000
    floor: float = 0.01
    batch_size: int = 32
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be nonnegative")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps)")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must lie in [0, 1]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (or None to disable)")


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup from ``lr / warmup`` to ``lr``, then cosine to ``floor * lr``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = min(step - cfg.warmup_steps, span) / span
    return cfg.lr * (cfg.floor + (1.0 - cfg.floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def optimizer_step(state: ModelState, grads: dict[str, np.ndarray], cfg: OptimizerConfig) -> ModelState:
    """One AdamW update at the scheduled learning rate (mutates ``state``).

    Gradients are clipped by global norm first. Weight decay is decoupled and
    applied to weight matrices only, never to biases.
    """
    for name, g in grads.items():
        if name not in state.params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != state.params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {state.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block {name!r} at step {state.step}")
    grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
    lr = lr_at(state.step, cfg)
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, w in state.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if name.startswith("W") and cfg.weight_decay:
            w -= lr * cfg.weight_decay * w
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if not np.all(np.isfinite(w)):
            raise NonFiniteError(f"parameter block {name!r} became non-finite at step {state.step}")
    state.step = t
    return state


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> Path:
    """Write parameters, moments, scalings and metadata to an ``.npz`` file.

    ``extra`` must be JSON-serialisable; it is stored verbatim (run config,
    grid, temperature) and handed back by :func:`load_checkpoint`.
    """
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": state.config.__dict__,
        "step": state.step,
        "energy_shift": state.energy_shift,
        "energy_scale": state.energy_scale,
        "force_scale": state.force_scale,
        "extra": extra or {},
    }
    arrays = {"feat_mean": state.feat_mean, "feat_std": state.feat_std}
    for name in state.params:
        arrays[f"param/{name}"] = state.params[name]
        arrays[f"m/{name}"] = state.m[name]
        arrays[f"v/{name}"] = state.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> tuple[ModelState, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        config = ModelConfig(**meta["config"])
        names = [k.split("/", 1)[1] for k in data.files if k.startswith("param/")]
        state = ModelState(
            config=config,
            params={n: data[f"param/{n}"].copy() for n in names},
            feat_mean=data["feat_mean"].copy(),
            feat_std=data["feat_std"].copy(),
            energy_shift=meta["energy_shift"],
            energy_scale=meta["energy_scale"],
            force_scale=meta["force_scale"],
            m={n: data[f"m/{n}"].copy() for n in names},
            v={n: data[f"v/{n}"].copy() for n in names},
            step=meta["step"],
        )
    return state, meta["extra"]
