"""Training runs, evaluation, entropy/error correlation and the ablation sweep."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import BinGrid, EncodeConfig, encode_target, entropy, grid_for_energies, in_range_mass, MIN_IN_RANGE_MASS
from .losses import LossConfig, softmax_with_temperature
from .model import (
    DescriptorBatch,
    ModelConfig,
    ModelState,
    NonFiniteError,
    OptimizerConfig,
    featurize,
    forward,
    init_state,
    load_checkpoint,
    loss_and_grads,
    lr_at,
    optimizer_step,
    save_checkpoint,
    stack_descriptors,
)
from .toy import DEFAULT_PARAMS, Sample, dataset_digest, dominant_species, generate_dataset, read_dataset, split_indices

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "energy_mae", "force_mae", "mean_entropy", "pearson_r", "lr")
CORRELATION_HEADER = ("step", "pearson_r_eval", "pearson_r_train")
ABLATION_HEADER = ("variant", "bins", "sigma_mult", "stratum", "energy_mae", "force_mae")
RECORDS_HEADER = ("index", "stratum", "energy", "energy_pred", "entropy", "abs_error")
# fraction of training targets allowed to sit (mostly) off the histogram grid
MAX_OFF_GRID_FRACTION = 0.01


class RunAborted(RuntimeError):
    """Training stopped: non-finite values or an unusable histogram grid."""


class IgnoredSettingWarning(UserWarning):
    """A configured value has no effect in the selected mode."""


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 1
    n_samples: int = 5000
    atoms_min: int = 2
    atoms_max: int = 8
    path: str | None = None


@dataclass(frozen=True)
class GridSpec:
    """Bin count and smoothing; ``lo``/``hi`` override the data-driven range."""

    bins: int = 128
    sigma_mult: float = 0.75
    lo: float | None = None
    hi: float | None = None
    margin: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    mode: str = "hl_gauss"
    dataset: DatasetSpec = DatasetSpec()
    grid: GridSpec = GridSpec()
    loss: LossConfig = LossConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    hidden: int = 128
    seed: int = 0
    eval_interval: int = 100
    eval_batch: int = 256
    normalize_losses: bool = True

    def __post_init__(self):
        if self.mode not in ("baseline_mae", "hl_gauss"):
            raise ValueError(f"mode must be 'baseline_mae' or 'hl_gauss', got {self.mode!r}")
        if self.mode == "hl_gauss":
            if self.grid.bins < 2:
                raise ValueError("hl_gauss mode needs bins >= 2")
            if not self.grid.sigma_mult > 0:
                raise ValueError("hl_gauss mode needs sigma_mult > 0")
        if self.eval_interval < 1 or self.eval_batch < 1:
            raise ValueError("eval_interval and eval_batch must be >= 1")

    def ignored_settings(self) -> list[str]:
        """Grid settings that differ from the defaults but are unused in baseline mode."""
        if self.mode != "baseline_mae":
            return []
        default = GridSpec()
        return [f"grid.{f.name}" for f in dataclasses.fields(GridSpec) if getattr(self.grid, f.name) != getattr(default, f.name)]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            mode=d["mode"],
            dataset=DatasetSpec(**d["dataset"]),
            grid=GridSpec(**d["grid"]),
            loss=LossConfig(**d["loss"]),
            optimizer=OptimizerConfig(**d["optimizer"]),
            hidden=d["hidden"],
            seed=d["seed"],
            eval_interval=d["eval_interval"],
            eval_batch=d["eval_batch"],
            normalize_losses=d.get("normalize_losses", True),
        )


@dataclass
class PreparedData:
    """A dataset with its descriptors, padded force labels and split."""

    samples: list[Sample]
    batch: DescriptorBatch
    energies: np.ndarray
    forces: np.ndarray
    strata: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    max_atoms: int
    digest: str


def load_samples(ds: DatasetSpec) -> list[Sample]:
    if ds.path is not None:
        return read_dataset(ds.path)
    return generate_dataset(ds.seed, ds.n_samples, (ds.atoms_min, ds.atoms_max))


def prepare_data(samples: Sequence[Sample], max_atoms: int | None = None) -> PreparedData:
    if not samples:
        raise ValueError("empty dataset")
    max_atoms = max_atoms or max(s.n_atoms for s in samples)
    batch = stack_descriptors([featurize(s.config, max_atoms) for s in samples], max_atoms)
    forces = np.zeros((len(samples), max_atoms, 3))
    for k, s in enumerate(samples):
        forces[k, : s.n_atoms] = s.forces
    train_idx, val_idx = split_indices(len(samples))
    return PreparedData(
        samples=list(samples),
        batch=batch,
        energies=np.array([s.per_atom_energy for s in samples]),
        forces=forces,
        strata=np.array([dominant_species(s) for s in samples]),
        train_idx=train_idx,
        val_idx=val_idx,
        max_atoms=max_atoms,
        digest=dataset_digest(samples),
    )


def pearson_r(x, y) -> float | None:
    """Sample Pearson correlation, or ``None`` when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two 1-d vectors of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass
class Predictions:
    energy: np.ndarray
    forces: np.ndarray
    entropy: np.ndarray | None


def predict(state: ModelState, batch: DescriptorBatch, grid: BinGrid | None, temperature: float) -> Predictions:
    """Decoded energies, forces and (hl_gauss only) predictive entropies."""
    out, forces, _ = forward(state, batch)
    if state.config.mode == "hl_gauss":
        probs = softmax_with_temperature(out, temperature)
        return Predictions(probs @ grid.centers, forces, entropy(probs))
    return Predictions(out, forces, None)


@dataclass
class EvalResult:
    energy_mae: float
    force_mae: float
    records: list[tuple]
    per_stratum: dict[int, tuple[float, float]]

    def records_csv(self, names: Sequence[str] = DEFAULT_PARAMS.names) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RECORDS_HEADER)
        for idx, stratum, e, e_hat, h, err in self.records:
            w.writerow([idx, names[stratum], _fmt(e), _fmt(e_hat), _fmt(h), _fmt(err)])
        return out.getvalue()


def score_predictions(energies, energy_pred, forces, force_pred, mask, entropies=None, strata=None, indices=None) -> EvalResult:
    """Energy/force MAE and per-sample records for a set of predictions.

    Force MAE averages each sample's per-component mean over samples. Per-
    stratum numbers use the same definitions on the stratum's samples; the
    overall numbers are therefore sample-weighted means of the strata.
    """
    energies = np.asarray(energies, dtype=float)
    energy_pred = np.asarray(energy_pred, dtype=float)
    if len(energies) == 0:
        raise ValueError("cannot evaluate an empty split")
    abs_err = np.abs(energies - energy_pred)
    comp = np.abs(np.asarray(forces) - np.asarray(force_pred)) * np.asarray(mask)[..., None]
    per_sample_force = comp.reshape(len(energies), -1).sum(axis=1) / (3.0 * np.asarray(mask).sum(axis=1))
    strata = np.zeros(len(energies), dtype=int) if strata is None else np.asarray(strata)
    indices = np.arange(len(energies)) if indices is None else np.asarray(indices)
    ent = np.full(len(energies), math.nan) if entropies is None else np.asarray(entropies, dtype=float)
    records = [
        (int(i), int(s), float(e), float(p), float(h), float(a))
        for i, s, e, p, h, a in zip(indices, strata, energies, energy_pred, ent, abs_err)
    ]
    per_stratum = {
        int(s): (float(abs_err[strata == s].mean()), float(per_sample_force[strata == s].mean()))
        for s in np.unique(strata)
    }
    return EvalResult(float(abs_err.mean()), float(per_sample_force.mean()), records, per_stratum)


def _grid_from_extra(extra: dict) -> BinGrid | None:
    g = extra.get("grid")
    return BinGrid(g["lo"], g["hi"], g["k"]) if g else None


def evaluate(checkpoint, data: PreparedData | Sequence[Sample], split: str = "val") -> EvalResult:
    """Score a checkpoint on one split (``train``, ``val`` or ``all``).

    ``checkpoint`` is a path or a ``(ModelState, extra)`` pair as returned by
    :func:`histloss.model.load_checkpoint`.
    """
    state, extra = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    if not isinstance(data, PreparedData):
        data = prepare_data(data, state.config.max_atoms)
    if data.max_atoms != state.config.max_atoms:
        data = prepare_data(data.samples, state.config.max_atoms)
    idx = {"train": data.train_idx, "val": data.val_idx, "all": np.arange(len(data.samples))}.get(split)
    if idx is None:
        raise ValueError(f"split must be 'train', 'val' or 'all', got {split!r}")
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    temperature = extra.get("temperature", LossConfig().temperature)
    pred = predict(state, data.batch.take(idx), _grid_from_extra(extra), temperature)
    return score_predictions(
        data.energies[idx],
        pred.energy,
        data.forces[idx],
        pred.forces,
        data.batch.mask[idx],
        pred.entropy,
        data.strata[idx],
        idx,
    )


@dataclass
class MetricRecord:
    step: int
    energy_mae: float
    force_mae: float
    mean_entropy: float | None
    pearson_r: float | None
    lr: float
    pearson_r_train: float | None = None


@dataclass
class RunResult:
    config: RunConfig
    metrics: list[MetricRecord]
    state: ModelState
    grid: BinGrid | None
    data: PreparedData
    out_dir: Path | None = None
    extra: dict = field(default_factory=dict)

    @property
    def checkpoint(self) -> tuple[ModelState, dict]:
        return self.state, self.extra

    def metrics_csv(self) -> str:
        return metrics_csv(self.metrics)

    def correlation_series(self) -> list[tuple[int, float | None, float | None]]:
        return [(m.step, m.pearson_r, m.pearson_r_train) for m in self.metrics]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def metrics_csv(metrics: Iterable[MetricRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in metrics:
        w.writerow([_fmt(m.step), _fmt(m.energy_mae), _fmt(m.force_mae), _fmt(m.mean_entropy), _fmt(m.pearson_r), _fmt(m.lr)])
    return out.getvalue()


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (None if v == "" else float(v)) for k, v in row.items()} for row in rows]


def entropy_error_track(snapshots: Iterable[tuple[int, Sequence[float], Sequence[float]]]) -> list[tuple[int, float | None]]:
    """Per-step Pearson r between predictive entropy and absolute energy error.

    ``snapshots`` yields ``(step, entropies, abs_errors)`` for one eval batch
    each; undefined correlations are kept as ``None``.
    """
    series = []
    for step, ent, err in snapshots:
        if ent is None:
            raise ValueError("entropy is only defined for hl_gauss runs")
        series.append((int(step), pearson_r(ent, err)))
    return series


def correlation_csv(series: Iterable[tuple]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CORRELATION_HEADER)
    for row in series:
        step, r_eval, *rest = row
        r_train = rest[0] if rest else None
        w.writerow([_fmt(step), _fmt(r_eval), _fmt(r_train)])
    return out.getvalue()


def positive_fraction(metrics: Sequence[MetricRecord], after_step: int) -> float:
    """Share of eval steps after ``after_step`` with a strictly positive correlation.

    Steps with an undefined correlation count as not positive.
    """
    later = [m for m in metrics if m.step > after_step]
    if not later:
        return math.nan
    return sum(1 for m in later if m.pearson_r is not None and m.pearson_r > 0) / len(later)


def _scalings(data: PreparedData):
    train = data.train_idx
    x = data.batch.energy[train]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    e = data.energies[train]
    mask = data.batch.mask[train]
    abs_f = np.abs(data.forces[train]) * mask[..., None]
    force_scale = float(abs_f.sum() / (3.0 * mask.sum()))
    return mean, std, float(e.mean()), float(e.std()) or 1.0, force_scale or 1.0


def build_grid(cfg: RunConfig, train_energies) -> BinGrid:
    g = cfg.grid
    if g.lo is not None or g.hi is not None:
        if g.lo is None or g.hi is None:
            raise ValueError("grid.lo and grid.hi must be given together")
        return BinGrid(g.lo, g.hi, g.bins)
    return grid_for_energies(train_energies, g.bins, g.sigma_mult, g.margin)


def train_run(cfg: RunConfig, data: PreparedData | None = None, out_dir=None) -> RunResult:
    """Train one model and record metrics every ``eval_interval`` steps.

    Metrics are measured on a fixed held-out batch (the first ``eval_batch``
    validation samples) before the first update, at every interval and after
    the last step. With ``out_dir`` set, ``metrics.csv``, ``correlation.csv``,
    ``run_config.echo`` and ``checkpoint.npz`` are written there.

    Raises:
        RunAborted: on non-finite losses/parameters, or when more than 1% of
            training targets keep under half their Gaussian mass on the grid.
    """
    if cfg.mode == "baseline_mae":
        for name in cfg.ignored_settings():
            warnings.warn(f"{name} is ignored in baseline_mae mode", IgnoredSettingWarning, stacklevel=2)
    if data is None:
        data = prepare_data(load_samples(cfg.dataset), max(cfg.dataset.atoms_max, 2) if cfg.dataset.path is None else None)
    train = data.train_idx
    if len(train) == 0:
        raise ValueError("training split is empty")
    opt = cfg.optimizer
    feat_mean, feat_std, e_shift, e_scale, f_scale = _scalings(data)

    grid = None
    target_hist = None
    if cfg.mode == "hl_gauss":
        grid = build_grid(cfg, data.energies[train])
        enc = EncodeConfig.for_grid(grid, cfg.grid.sigma_mult)
        off_grid = np.mean(np.asarray(in_range_mass(data.energies[train], enc.sigma, grid)) < MIN_IN_RANGE_MASS)
        if off_grid > MAX_OFF_GRID_FRACTION:
            raise RunAborted(
                f"{off_grid:.1%} of training targets fall outside the histogram grid "
                f"[{grid.lo:.6g}, {grid.hi:.6g}]; widen the grid range"
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            target_hist = encode_target(data.energies, enc, grid)

    model_cfg = ModelConfig(
        mode=cfg.mode,
        bins=cfg.grid.bins if cfg.mode == "hl_gauss" else 1,
        hidden=cfg.hidden,
        max_atoms=data.max_atoms,
        n_species=DEFAULT_PARAMS.n_species,
        seed=cfg.seed,
    )
    state = init_state(model_cfg, feat_mean, feat_std, e_shift, e_scale, f_scale)
    tau = cfg.loss.temperature
    units = (e_scale, f_scale) if cfg.normalize_losses else (1.0, 1.0)

    eval_idx = data.val_idx[: cfg.eval_batch] if len(data.val_idx) else train[: cfg.eval_batch]
    eval_batch = data.batch.take(eval_idx)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    metrics: list[MetricRecord] = []

    def record(step, next_idx):
        pred = predict(state, eval_batch, grid, tau)
        scored = score_predictions(
            data.energies[eval_idx], pred.energy, data.forces[eval_idx], pred.forces, eval_batch.mask
        )
        errors = np.abs(data.energies[eval_idx] - pred.energy)
        mean_h = r_eval = r_train = None
        if pred.entropy is not None:
            mean_h = float(pred.entropy.mean())
            r_eval = pearson_r(pred.entropy, errors) if len(errors) > 1 else None
            if next_idx is not None and len(next_idx) > 1:
                tp = predict(state, data.batch.take(next_idx), grid, tau)
                r_train = pearson_r(tp.entropy, np.abs(data.energies[next_idx] - tp.energy))
        metrics.append(
            MetricRecord(step, scored.energy_mae, scored.force_mae, mean_h, r_eval, lr_at(min(step, opt.total_steps), opt), r_train)
        )

    for step in range(opt.total_steps):
        if cursor + opt.batch_size > len(order):
            order = np.concatenate([order[cursor:], rng.permutation(train)])
            cursor = 0
        idx = order[cursor : cursor + opt.batch_size]
        cursor += opt.batch_size
        if step % cfg.eval_interval == 0:
            record(step, idx)
        try:
            total, _, _, grads = loss_and_grads(
                state,
                data.batch.take(idx),
                data.energies[idx],
                data.forces[idx],
                cfg.loss,
                None if target_hist is None else target_hist[idx],
                *units,
            )
        except ValueError as exc:
            # shapes were fixed at setup, so this is a numerical breakdown
            raise RunAborted(f"non-finite model output at step {step}: {exc}") from exc
        if not math.isfinite(total):
            raise RunAborted(f"non-finite loss at step {step}")
        try:
            optimizer_step(state, grads, opt)
        except NonFiniteError as exc:
            raise RunAborted(str(exc)) from exc
    record(opt.total_steps, None)

    extra = {
        "mode": cfg.mode,
        "temperature": tau,
        "grid": None if grid is None else {"lo": grid.lo, "hi": grid.hi, "k": grid.k},
        "sigma_mult": cfg.grid.sigma_mult if grid is not None else None,
        "dataset_digest": data.digest,
        "run_config": cfg.to_dict(),
    }
    result = RunResult(cfg, metrics, state, grid, data, None, extra)
    if out_dir is not None:
        result.out_dir = write_run(result, out_dir)
    return result


def write_run(result: RunResult, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(result.metrics_csv())
    if result.config.mode == "hl_gauss":
        (out_dir / "correlation.csv").write_text(correlation_csv(result.correlation_series()))
    from .config import echo_text

    (out_dir / "run_config.echo").write_text(echo_text(result.config, result.grid, result.data.digest, out_dir))
    save_checkpoint(result.state, out_dir / "checkpoint.npz", result.extra)
    return out_dir


# -- ablation ---------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    bins: int | None
    sigma_mult: float | None
    stratum: str
    energy_mae: float | None
    force_mae: float | None


def variant_name(mode: str, bins=None, sigma_mult=None) -> str:
    if mode == "baseline_mae":
        return "baseline_mae"
    return f"hl_gauss_k{bins}_s{sigma_mult:g}"


def ablation_cells(base: RunConfig, bin_counts: Sequence[int], sigma_mults: Sequence[float]) -> list[RunConfig]:
    """Baseline plus one hl_gauss config per distinct (bins, sigma) pair, in order."""
    cells = [base.replace(mode="baseline_mae", grid=GridSpec())]
    seen = set()
    for k in bin_counts:
        for s in sigma_mults:
            key = (int(k), float(s))
            if key in seen:
                continue
            seen.add(key)
            cells.append(base.replace(mode="hl_gauss", grid=dataclasses.replace(base.grid, bins=key[0], sigma_mult=key[1])))
    return cells


def _run_cell(cfg: RunConfig, data: PreparedData | None, out_dir):
    name = variant_name(cfg.mode, cfg.grid.bins, cfg.grid.sigma_mult)
    bins = cfg.grid.bins if cfg.mode == "hl_gauss" else None
    sigma = cfg.grid.sigma_mult if cfg.mode == "hl_gauss" else None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IgnoredSettingWarning)
            result = train_run(cfg, data, None if out_dir is None else Path(out_dir) / name)
        ev = evaluate(result.checkpoint, result.data, "val")
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.warning("ablation cell %s failed: %s", name, exc)
        return [AblationRow(name, bins, sigma, "failed", None, None)], None
    names = DEFAULT_PARAMS.names
    rows = [AblationRow(name, bins, sigma, names[s], e, f) for s, (e, f) in sorted(ev.per_stratum.items())]
    rows.append(AblationRow(name, bins, sigma, "overall", ev.energy_mae, ev.force_mae))
    return rows, result


def ablate(
    base: RunConfig,
    bin_counts: Sequence[int] = (128, 256),
    sigma_mults: Sequence[float] = (0.25, 0.75, 2.0),
    out_dir=None,
    workers: int = 1,
    data: PreparedData | None = None,
) -> list[AblationRow]:
    """Train the baseline and every hl_gauss cell on the same data and trunk seed.

    Rows come back (and are written to ``ablation.csv``) in cell order: the
    baseline first, then bins-major, sigma-minor. Validation MAE is reported
    per stratum (dominant species) and overall; a cell that raises is recorded
    with stratum ``failed`` and the sweep continues.
    """
    cells = ablation_cells(base, bin_counts, sigma_mults)
    workers = max(1, min(int(workers), len(cells)))
    if data is None:
        data = prepare_data(load_samples(base.dataset), base.dataset.atoms_max if base.dataset.path is None else None)
    if workers == 1:
        outputs = [_run_cell(c, data, out_dir) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_cell, cells, [data] * len(cells), [out_dir] * len(cells)))
    rows = [row for cell_rows, _ in outputs for row in cell_rows]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.csv").write_text(ablation_csv(rows))
    return rows


def ablation_csv(rows: Iterable[AblationRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for r in rows:
        w.writerow([r.variant, _fmt(r.bins), _fmt(r.sigma_mult), r.stratum, _fmt(r.energy_mae), _fmt(r.force_mae)])
    return out.getvalue()


def sigma_trend(rows: Iterable[AblationRow], bins: int = 128, best: float = 0.75) -> str:
    """``"pass"`` if the ``best`` sigma cell has the lowest overall energy MAE
    among the sigma cells at ``bins``, else ``"warn"`` (never an error)."""
    overall = {
        r.sigma_mult: r.energy_mae
        for r in rows
        if r.stratum == "overall" and r.bins == bins and r.energy_mae is not None
    }
    if best not in overall or len(overall) < 2:
        return "warn"
    return "pass" if overall[best] <= min(overall.values()) else "warn"
