"""Training orchestration: batching, Adam loop, early stopping on the
validation loss, cross-validation driver, and run logging."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model, nn
from .dataio import SplitPlan, Trial, select_trials
from .util import derive_rng

log = logging.getLogger(__name__)

HISTORY_COLUMNS = [
    "epoch", "train_recon", "train_kl", "train_cla", "train_total",
    "val_recon", "val_kl", "val_cla", "val_total", "val_accuracy", "elapsed_s",
]


@dataclass
class TrainConfig:
    """Optimization schedule; beta/lam of None fall back to the model config."""

    batch_size: int = 50
    max_epochs: int = 2000
    learning_rate: float = 1e-3
    early_stop_patience: int = 50
    min_delta: float = 1e-5
    seed: int = 0
    beta: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train: dict
    val: dict
    val_accuracy: float
    elapsed_s: float

    def row(self) -> list:
        return [
            self.epoch,
            self.train["recon"], self.train["kl"], self.train["cla"], self.train["total"],
            self.val["recon"], self.val["kl"], self.val["cla"], self.val["total"],
            self.val_accuracy, self.elapsed_s,
        ]


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_total: float = float("inf")

    @property
    def n_epochs(self) -> int:
        return len(self.records)

    def loss_matrix(self) -> np.ndarray:
        """All logged loss columns (everything but the wall-clock column)."""
        return np.array([r.row()[:-1] for r in self.records], dtype=np.float64)


class EarlyStopper:
    """Stop after `patience` epochs without improving by more than `min_delta`."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def _trial_arrays(trials: list[Trial], config) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.stack([t.x for t in trials]).astype(np.float32)
    if x.shape[1:] != (config.C, config.T):
        raise ValueError(f"trials have shape {x.shape[1:]}, model expects "
                         f"({config.C}, {config.T})")
    y = np.array([t.y for t in trials], dtype=int)
    p = np.array([t.p for t in trials], dtype=int)
    return x, y, p


def evaluate_loss(trials, params, model_config, train_config=None, rng=None,
                  batch_size: int = 128) -> dict:
    """Eval-mode loss components over a trial list (chunk-averaged)."""
    beta = lam = None
    if train_config is not None:
        beta, lam = train_config.beta, train_config.lam
    rng = rng or derive_rng(0, "eval-loss")
    x, y, p = _trial_arrays(trials, model_config)
    totals = {"recon": 0.0, "kl": 0.0, "cla": 0.0, "total": 0.0}
    for start in range(0, len(trials), batch_size):
        sl = slice(start, start + batch_size)
        _, comps = model.loss_total(x[sl], y[sl], p[sl], params, model_config, rng,
                                    mode="eval", beta=beta, lam=lam)
        w = len(y[sl]) / len(trials)
        for k in totals:
            totals[k] += w * comps[k]
    return totals


def predict_trials(trials, params, model_config, batch_size: int = 128) -> np.ndarray:
    """Deterministic class predictions (classifier applied to posterior means)."""
    x, _, _ = _trial_arrays(trials, model_config)
    preds = []
    for start in range(0, len(trials), batch_size):
        preds.append(model.predict(x[start:start + batch_size], params, model_config))
    return np.concatenate(preds)


def train_fold(train_set: list[Trial], val_set: list[Trial], model_config,
               train_config: TrainConfig) -> tuple[nn.ParamStore, RunHistory]:
    """Train one model; returns parameters from the best validation epoch.

    The training set is reshuffled every epoch from a seed-derived stream
    and consumed in batches of `batch_size` (final partial batch
    included), one Adam step per batch. After each epoch the full
    validation loss (with the configured beta/lam weights) decides early
    stopping.
    """
    train_ids = {t.trial_id for t in train_set}
    overlap = train_ids & {t.trial_id for t in val_set}
    if overlap:
        raise ValueError(f"train and validation sets overlap: {sorted(overlap)[:5]}")
    cfg, tc = model_config, train_config
    x, y, p = _trial_arrays(train_set, cfg)
    params = model.init_model_params(cfg, derive_rng(tc.seed, "init"))
    adam = nn.init_adam(params, lr=tc.learning_rate)
    stopper = EarlyStopper(tc.early_stop_patience, tc.min_delta)
    history = RunHistory()
    best_params = params.copy()
    t0 = time.time()
    n = len(train_set)
    for epoch in range(1, tc.max_epochs + 1):
        perm = derive_rng(tc.seed, "shuffle", epoch).permutation(n)
        train_totals = {"recon": 0.0, "kl": 0.0, "cla": 0.0, "total": 0.0}
        for bi, start in enumerate(range(0, n, tc.batch_size)):
            idx = perm[start:start + tc.batch_size]
            params.zero_grads()
            comps = model.loss_and_grads(
                x[idx], y[idx], p[idx], params, cfg,
                derive_rng(tc.seed, "batch", epoch, bi), beta=tc.beta, lam=tc.lam,
            )
            if not np.isfinite(comps["total"]):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {bi}: {comps}"
                )
            nn.adam_step(params, params.grads, adam)
            for k in train_totals:
                train_totals[k] += comps[k] * len(idx) / n
        val = evaluate_loss(val_set, params, cfg, tc, derive_rng(tc.seed, "val", epoch))
        if not np.isfinite(val["total"]):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}: {val}")
        preds = predict_trials(val_set, params, cfg)
        val_acc = float(np.mean(preds == np.array([t.y for t in val_set])))
        history.records.append(EpochRecord(
            epoch=epoch, train=train_totals, val=val, val_accuracy=val_acc,
            elapsed_s=time.time() - t0,
        ))
        if stopper.update(epoch, val["total"]):
            best_params = params.copy()
        log.info("epoch=%d train_total=%.5f val_total=%.5f val_acc=%.3f best_epoch=%d",
                 epoch, train_totals["total"], val["total"], val_acc, stopper.best_epoch)
        if stopper.should_stop:
            break
    history.best_epoch = stopper.best_epoch
    history.best_val_total = stopper.best
    return best_params, history


def write_history_csv(history: RunHistory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history.records:
            row = rec.row()
            writer.writerow([row[0]] + [f"{v:.8f}" for v in row[1:]])
    return path


@dataclass
class FoldResult:
    fold_index: int
    params: nn.ParamStore
    history: RunHistory
    holdout_report: object  # evaluate.EvalReport


@dataclass
class CrossValResult:
    folds: list[FoldResult]
    holdout_accuracy_mean: float
    holdout_accuracy_std: float


def run_cross_validation(trials: list[Trial], plan: SplitPlan, model_config,
                         train_config: TrainConfig) -> CrossValResult:
    """Train one model per fold; evaluate each on the fixed holdout set."""
    from . import evaluate  # deferred: evaluate imports this module

    holdout = select_trials(trials, plan.test_ids)
    test_ids = set(plan.test_ids)
    labels = np.array([t.y for t in holdout])
    folds = []
    accs = []
    for fi, (train_ids, val_ids) in enumerate(plan.folds):
        if test_ids & (set(train_ids) | set(val_ids)):
            raise ValueError(f"fold {fi} intersects the holdout set")
        params, history = train_fold(
            select_trials(trials, train_ids), select_trials(trials, val_ids),
            model_config, train_config,
        )
        preds = predict_trials(holdout, params, model_config)
        report = evaluate.classification_report(preds, labels, n_classes=model_config.L)
        log.info("fold %d: holdout accuracy %.3f (best epoch %d)",
                 fi, report.accuracy, history.best_epoch)
        folds.append(FoldResult(fold_index=fi, params=params, history=history,
                                holdout_report=report))
        accs.append(report.accuracy)
    return CrossValResult(
        folds=folds,
        holdout_accuracy_mean=float(np.mean(accs)),
        holdout_accuracy_std=float(np.std(accs)),
    )
