"""The experimental protocol: stratified splitting, Adam training,
cross-validated grid search, seed selection, robustness sweeps, and the
attention/modality ablation matrix.

Test hygiene is enforced mechanically: experiments read sample features only
through ``GuardedDataset.take``, which records every index it serves, so a
test can assert that no held-out index was touched before final evaluation.

All randomness is derived from config seeds via ``seeding.child_seed``;
repeated runs with the same configs are bit-identical, and parallel workers
cannot change results because every cell's seed is fixed up front.
"""

from __future__ import annotations

import itertools
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError, TrainingDivergedError
from .fusion import AttentionMode, FusionModel, ModelConfig, build, config_hash
from .metrics import ConfusionMatrix, summarize, tally, two_sample_z
from .seeding import rng_for
from .tensor import Tensor, backward, cross_entropy, no_grad

MODALITY_SUBSETS = (
    ("clinical",),
    ("genetic",),
    ("imaging",),
    ("clinical", "genetic"),
    ("genetic", "imaging"),
    ("clinical", "imaging"),
    ("clinical", "genetic", "imaging"),
)


# ---------------------------------------------------------------------------
# Splitting.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """Stratified held-out test set plus a 3-fold partition of the rest.

    ``fold_assignments[i]`` is the fold (0..n_folds-1) of a training index
    and -1 for test indices.
    """

    train_indices: np.ndarray
    test_indices: np.ndarray
    fold_assignments: np.ndarray
    seed: int
    n_folds: int = 3

    def fold_indices(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train-without-fold, validation-fold) index arrays."""
        val = np.flatnonzero(self.fold_assignments == fold)
        mask = (self.fold_assignments >= 0) & (self.fold_assignments != fold)
        return np.flatnonzero(mask), val


def stratified_split(labels_or_dataset, test_frac: float = 0.10, seed: int = 0, n_folds: int = 3) -> SplitPlan:
    """Per-class proportional test allocation and round-robin folds.

    Test counts are ``floor(n_c * test_frac + 0.5)`` per class, so each class
    lands within one sample of the requested fraction.  Deterministic in
    ``seed``; every index appears in exactly one of test or one fold.
    """
    labels = np.asarray(getattr(labels_or_dataset, "labels", labels_or_dataset), dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("need a nonempty 1-D label array")
    fold_assignments = np.full(labels.size, -1, dtype=np.int64)
    test_parts, train_parts = [], []
    for cls in range(3):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            raise DataError(f"class {cls} has no samples; cannot stratify")
        members = members[rng_for(seed, "split", cls).permutation(members.size)]
        n_test = int(np.floor(members.size * test_frac + 0.5))
        test_parts.append(members[:n_test])
        rest = members[n_test:]
        train_parts.append(rest)
        fold_assignments[rest] = np.arange(rest.size) % n_folds
    test_idx = np.sort(np.concatenate(test_parts))
    train_idx = np.sort(np.concatenate(train_parts))
    return SplitPlan(train_idx, test_idx, fold_assignments, seed, n_folds)


class GuardedDataset:
    """Wraps a dataset and records every index served through ``take``."""

    def __init__(self, dataset):
        self._dataset = dataset
        self.read_indices: set[int] = set()

    @property
    def labels(self) -> np.ndarray:
        return self._dataset.labels

    @property
    def n(self) -> int:
        return self._dataset.n

    def take(self, indices, modalities=None):
        idx = np.asarray(indices, dtype=np.int64)
        self.read_indices.update(int(i) for i in idx)
        return self._dataset.take(idx, modalities)

    def reads_intersect(self, indices) -> set[int]:
        return self.read_indices & {int(i) for i in np.asarray(indices).reshape(-1)}


# ---------------------------------------------------------------------------
# Optimizer and single-model training.
# ---------------------------------------------------------------------------


class Adam:
    """Adam with beta1=0.9, beta2=0.999, eps=1e-8 and bias correction."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.values -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def train_one(config: ModelConfig, dataset, indices=None) -> FusionModel:
    """Mini-batch Adam training of a freshly built model.

    Batches are drawn in a seed-deterministic shuffle each epoch; dropout
    noise comes from its own child stream.  Raises
    ``TrainingDivergedError`` naming the epoch if the loss goes non-finite.
    """
    indices = np.arange(dataset.n) if indices is None else np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise DataError("cannot train on an empty index set")
    model = build(config)
    if config.epochs == 0:
        return model
    optimizer = Adam(model.parameters().values(), config.learning_rate)
    drop_rng = rng_for(config.seed, "dropout")
    for epoch in range(config.epochs):
        order = indices[rng_for(config.seed, "shuffle", epoch).permutation(indices.size)]
        for start in range(0, order.size, config.batch_size):
            chunk = order[start : start + config.batch_size]
            batch = dataset.take(chunk, config.modalities)
            logits = model.forward(batch, training=True, rng=drop_rng)
            loss = cross_entropy(logits, batch.labels)
            if not np.isfinite(loss.values):
                raise TrainingDivergedError(epoch)
            optimizer.zero_grad()
            backward(loss)
            optimizer.step()
    return model


def evaluate(model: FusionModel, dataset, indices, batch_size: int = 256) -> ConfusionMatrix:
    """Confusion matrix of the model's predictions on the given indices."""
    indices = np.asarray(indices, dtype=np.int64)
    truths, preds = [], []
    for start in range(0, indices.size, batch_size):
        chunk = indices[start : start + batch_size]
        batch = dataset.take(chunk, model.config.modalities)
        preds.append(model.predict(batch))
        truths.append(batch.labels)
    return tally(np.concatenate(truths), np.concatenate(preds))


def accuracy_on(model: FusionModel, dataset, indices) -> float:
    cm = evaluate(model, dataset, indices)
    return float(np.trace(cm.counts) / cm.total)


def mean_loss_on(model: FusionModel, dataset, indices, batch_size: int = 256) -> float:
    indices = np.asarray(indices, dtype=np.int64)
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, indices.size, batch_size):
            chunk = indices[start : start + batch_size]
            batch = dataset.take(chunk, model.config.modalities)
            logits = model.forward(batch, training=False)
            loss = cross_entropy(Tensor(logits.values), batch.labels)
            total += float(loss.values) * chunk.size
            count += chunk.size
    return total / count


# ---------------------------------------------------------------------------
# Grid search over the hyperparameter grid.
# ---------------------------------------------------------------------------

DEFAULT_GRID = {
    "learning_rate": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
    "dropout": [0.1, 0.2, 0.3, 0.4, 0.5],
    "batch_size": [16, 32, 64, 128],
    "epochs": [10, 20, 50, 80, 100, 150, 200],
}


@dataclass
class TrialResult:
    config: ModelConfig
    fold_accuracies: list[float]
    mean_val_accuracy: float
    seed: int
    wall_time: float

    def __post_init__(self):
        expected = float(np.mean(self.fold_accuracies))
        assert abs(expected - self.mean_val_accuracy) < 1e-12


def _config_from_cell(base: ModelConfig, cell: dict) -> ModelConfig:
    kwargs = dict(cell)
    if "dropout" in kwargs:  # grid shorthand: one rate for all three layers
        rate = kwargs.pop("dropout")
        kwargs["dropout_rates"] = (rate, rate, rate)
    return replace(base, **kwargs)


def expand_grid(grid: dict) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_trial(args):
    base, cell, split, dataset = args
    config = _config_from_cell(base, cell)
    t0 = time.perf_counter()
    fold_acc = []
    for fold in range(split.n_folds):
        fold_train, fold_val = split.fold_indices(fold)
        model = train_one(config, dataset, fold_train)
        fold_acc.append(accuracy_on(model, dataset, fold_val))
    return TrialResult(config, fold_acc, float(np.mean(fold_acc)), config.seed, time.perf_counter() - t0)


def grid_search(
    base_config: ModelConfig,
    grid: dict,
    split: SplitPlan,
    dataset,
    budget: int | None = None,
    workers: int = 1,
) -> tuple[ModelConfig, list[TrialResult]]:
    """Exhaustive (or budget-subsampled) 3-fold cross-validated search.

    The winner maximizes mean validation accuracy; ties break toward the
    lower learning rate, then the smaller parameter count, then the lower
    config hash.  Held-out test indices are never read.
    """
    cells = expand_grid(grid)
    if not cells:
        raise ConfigError("hyperparameter grid is empty")
    if budget is not None and budget < len(cells):
        chosen = rng_for(base_config.seed, "grid-budget").choice(len(cells), size=budget, replace=False)
        cells = [cells[i] for i in sorted(chosen)]

    results = _parallel_map(_run_trial, [(base_config, cell, split, dataset) for cell in cells], workers)

    def sort_key(trial: TrialResult):
        return (
            -trial.mean_val_accuracy,
            trial.config.learning_rate,
            build(trial.config).parameter_count(),
            config_hash(trial.config),
        )

    best = min(results, key=sort_key)
    return best.config, results


def select_initialization(config: ModelConfig, dataset, train_indices, seeds=(0, 1, 2, 3, 4)):
    """Train once per seed; keep the best training-set accuracy.

    Ties break toward the lower training loss, then the lower seed.  Returns
    ``(best_seed, best_model, per-seed accuracies)``.
    """
    best = None
    accuracies = []
    for s in seeds:
        cfg = replace(config, seed=int(s))
        model = train_one(cfg, dataset, train_indices)
        acc = accuracy_on(model, dataset, train_indices)
        loss = mean_loss_on(model, dataset, train_indices)
        accuracies.append(acc)
        key = (-acc, loss, int(s))
        if best is None or key < best[0]:
            best = (key, int(s), model)
    return best[1], best[2], accuracies


# ---------------------------------------------------------------------------
# Robustness sweep and ablation matrix.
# ---------------------------------------------------------------------------


def five_number_summary(values) -> dict[str, float]:
    """Quartile summary with whiskers at Q1 - 1.5 IQR and Q3 + 1.5 IQR.

    Quartiles use linear interpolation between order statistics.
    """
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = (float(np.quantile(v, q, method="linear")) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    return {
        "min": float(v.min()),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(v.max()),
        "lower_whisker": q1 - 1.5 * iqr,
        "upper_whisker": q3 + 1.5 * iqr,
    }


def _run_seed_eval(args):
    config, seed, dataset, train_idx, test_idx = args
    model = train_one(replace(config, seed=int(seed)), dataset, train_idx)
    return evaluate(model, dataset, test_idx)


def robustness_sweep(config: ModelConfig, dataset, split: SplitPlan, seeds, workers: int = 1) -> dict:
    """Per-seed test macro-F1 distribution for one config.

    The held-out test set is identical across seeds; only the parameter
    initialization and batch order vary.
    """
    from .metrics import macro_f1

    jobs = [(config, s, dataset, split.train_indices, split.test_indices) for s in seeds]
    cms = _parallel_map(_run_seed_eval, jobs, workers)
    f1s = [macro_f1(cm) for cm in cms]
    return {"seeds": [int(s) for s in seeds], "f1_scores": f1s, "summary": five_number_summary(f1s)}


@dataclass
class AblationCell:
    mode: AttentionMode
    modalities: tuple[str, ...]
    config: ModelConfig
    seeds: list[int]
    confusions: list[ConfusionMatrix] = field(default_factory=list)
    metric_means: dict[str, float] = field(default_factory=dict)
    metric_stds: dict[str, float] = field(default_factory=dict)
    f1_scores: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    def label(self) -> str:
        return f"{self.mode.value}|{'+'.join(self.modalities)}"


def ablation_matrix(
    dataset,
    split: SplitPlan,
    base_config: ModelConfig,
    modes=None,
    subsets=None,
    seeds=(0, 1, 2, 3, 4),
    retune: bool = False,
    grid: dict | None = None,
    budget: int | None = None,
    workers: int = 1,
) -> list[AblationCell]:
    """Mean +- std test metrics for each (mode, modality subset) cell.

    Every cell reuses the same split.  With ``retune=True`` each cell first
    runs its own grid search on the training folds, so each architecture
    variant competes with its own best hyperparameters.
    """
    modes = [AttentionMode(m) for m in (modes if modes is not None else list(AttentionMode))]
    subsets = [tuple(s) for s in (subsets if subsets is not None else [base_config.modalities])]
    cells: list[AblationCell] = []
    for mode in modes:
        for subset in subsets:
            t0 = time.perf_counter()
            config = replace(base_config, mode=mode, modalities=subset)
            if retune:
                config, _ = grid_search(config, grid or DEFAULT_GRID, split, dataset, budget=budget, workers=workers)
            jobs = [(config, s, dataset, split.train_indices, split.test_indices) for s in seeds]
            cms = _parallel_map(_run_seed_eval, jobs, workers)
            per_seed = [summarize(cm) for cm in cms]
            cell = AblationCell(mode, config.modalities, config, [int(s) for s in seeds], cms)
            for key in ("accuracy", "precision", "recall", "f1"):
                values = np.array([m[key] for m in per_seed])
                cell.metric_means[key] = float(values.mean())
                cell.metric_stds[key] = float(values.std())
            cell.f1_scores = [m["f1"] for m in per_seed]
            cell.wall_time = time.perf_counter() - t0
            cells.append(cell)
    return cells


def attention_z_tests(cells: list[AblationCell]) -> dict[str, tuple[float, float]]:
    """Two-sample Z-test of each mode's per-seed F1 sample against no-attention.

    The baseline row compares to itself, which is (0, 1) by definition;
    degenerate samples (zero pooled variance) report NaN.
    """
    baseline = next(c for c in cells if c.mode == AttentionMode.NO_ATTENTION)
    out = {}
    for cell in cells:
        if cell is baseline:
            out[cell.mode.value] = (0.0, 1.0)
            continue
        try:
            out[cell.mode.value] = two_sample_z(cell.f1_scores, baseline.f1_scores)
        except DegenerateInputError:
            out[cell.mode.value] = (float("nan"), float("nan"))
    return out


# ---------------------------------------------------------------------------
# Optional process-level parallelism (XMF_WORKERS / --workers).
# ---------------------------------------------------------------------------


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get("XMF_WORKERS")
    return max(1, int(env)) if env else 1


def _parallel_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(min(workers, len(jobs))) as pool:
        return pool.map(fn, jobs)
