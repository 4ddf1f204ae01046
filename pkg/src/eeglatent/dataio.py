"""Dataset representation, on-disk format, splitting, and label encoding.

On-disk format (``format_version`` 1): a JSON manifest holding dataset
metadata plus one entry per trial, and one raw binary payload file per
trial. Payloads are little-endian float32, row-major, channels x samples,
so a C x T trial occupies exactly C*T*4 bytes. The format round-trips
byte-exactly and is trivially parseable from any language.

Manifest layout::

    {
      "format_version": 1,
      "meta": {"C": 62, "T": 400, "L": 3, "P": 15, "fs": 200.0,
               "channel_names": ["FP1", ...]},
      "trials": [
        {"trial_id": "s01-e000", "y": 0, "p": 0,
         "payload": "t00000.f32", "synthetic": false},
        ...
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .util import DataError, derive_rng

FORMAT_VERSION = 1


@dataclass
class DatasetMeta:
    """Dataset-level constants shared by every trial."""

    C: int
    T: int
    L: int
    P: int
    fs: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.channel_names:
            self.channel_names = [f"ch{i:02d}" for i in range(self.C)]
        if len(self.channel_names) != self.C:
            raise DataError(
                f"channel_names has {len(self.channel_names)} entries, expected C={self.C}"
            )
        if min(self.C, self.T, self.L, self.P) < 1 or self.fs <= 0:
            raise DataError("C, T, L, P must be >= 1 and fs > 0")


@dataclass
class Trial:
    """One recording segment: signal matrix, emotion label, participant ID."""

    x: np.ndarray  # (C, T) float32
    y: int
    p: int
    fs: float
    trial_id: str
    synthetic: bool = False

    def validate(self, meta: DatasetMeta) -> None:
        if self.x.ndim != 2 or self.x.shape != (meta.C, meta.T):
            raise DataError(
                f"trial {self.trial_id}: shape {self.x.shape} != ({meta.C}, {meta.T})"
            )
        if not 0 <= self.y < meta.L:
            raise DataError(f"trial {self.trial_id}: label y={self.y} out of range [0, {meta.L})")
        if not 0 <= self.p < meta.P:
            raise DataError(
                f"trial {self.trial_id}: participant p={self.p} out of range [0, {meta.P})"
            )


@dataclass
class SplitPlan:
    """Holdout test set plus k (train, val) folds, all by trial id."""

    test_ids: list[str]
    folds: list[tuple[list[str], list[str]]]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_ids": list(self.test_ids),
            "folds": [{"train_ids": list(tr), "val_ids": list(va)} for tr, va in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        folds = [(list(f["train_ids"]), list(f["val_ids"])) for f in d["folds"]]
        return cls(test_ids=list(d["test_ids"]), folds=folds, seed=int(d["seed"]))


def one_hot(index: int, cardinality: int) -> np.ndarray:
    """Length-``cardinality`` vector with 1.0 at ``index``, 0.0 elsewhere."""
    if not 0 <= index < cardinality:
        raise DataError(f"one_hot index {index} out of range [0, {cardinality})")
    v = np.zeros(cardinality, dtype=np.float64)
    v[index] = 1.0
    return v


def _payload_name(i: int) -> str:
    return f"t{i:05d}.f32"


def save_dataset(manifest_path: str | Path, meta: DatasetMeta, trials: list[Trial]) -> Path:
    """Write manifest plus per-trial float32 payloads next to it."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(trials):
        t.validate(meta)
        name = _payload_name(i)
        (manifest_path.parent / name).write_bytes(
            np.ascontiguousarray(t.x, dtype="<f4").tobytes()
        )
        entry = {"trial_id": t.trial_id, "y": int(t.y), "p": int(t.p), "payload": name}
        if t.synthetic:
            entry["synthetic"] = True
        entries.append(entry)
    doc = {
        "format_version": FORMAT_VERSION,
        "meta": {
            "C": meta.C,
            "T": meta.T,
            "L": meta.L,
            "P": meta.P,
            "fs": meta.fs,
            "channel_names": meta.channel_names,
        },
        "trials": entries,
    }
    manifest_path.write_text(json.dumps(doc, indent=1))
    return manifest_path


def load_dataset(manifest_path: str | Path) -> tuple[DatasetMeta, list[Trial]]:
    """Load a dataset; trial order equals manifest order.

    Missing payloads, byte-count mismatches and out-of-range labels are
    reported with the offending trial_id.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {e}") from e
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported format_version {doc.get('format_version')!r}")
    m = doc["meta"]
    meta = DatasetMeta(
        C=int(m["C"]), T=int(m["T"]), L=int(m["L"]), P=int(m["P"]),
        fs=float(m["fs"]), channel_names=list(m["channel_names"]),
    )
    expected_bytes = meta.C * meta.T * 4
    trials = []
    for entry in doc["trials"]:
        tid = entry["trial_id"]
        path = manifest_path.parent / entry["payload"]
        if not path.exists():
            raise DataError(f"trial {tid}: payload file missing: {path}")
        raw = path.read_bytes()
        if len(raw) != expected_bytes:
            raise DataError(
                f"trial {tid}: payload has {len(raw)} bytes, expected "
                f"{meta.C}*{meta.T}*4 = {expected_bytes}"
            )
        x = np.frombuffer(raw, dtype="<f4").reshape(meta.C, meta.T)
        trial = Trial(
            x=x, y=int(entry["y"]), p=int(entry["p"]), fs=meta.fs,
            trial_id=tid, synthetic=bool(entry.get("synthetic", False)),
        )
        trial.validate(meta)
        trials.append(trial)
    return meta, trials


def make_split_plan(trials: list[Trial], test_fraction: float, k: int, seed: int) -> SplitPlan:
    """Deterministic stratified split: fixed holdout plus k-fold CV pool.

    Trials are grouped by (class, participant); each cell is shuffled with
    a seed-derived stream, the holdout takes round(test_fraction * cell)
    trials per cell, and the remainder is dealt round-robin into k
    validation folds (rotating the dealing start per cell so no fold is
    systematically larger). Each fold's training set is the pool minus its
    validation set. The plan depends only on the id set and the seed, not
    on manifest order.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    cells: dict[tuple[int, int], list[str]] = {}
    for t in trials:
        cells.setdefault((t.y, t.p), []).append(t.trial_id)
    for (y, p), ids in sorted(cells.items()):
        if len(ids) < k + 1:
            raise DataError(
                f"cell (y={y}, p={p}) has {len(ids)} trials, need >= {k + 1} for k={k}"
            )
    test_ids: list[str] = []
    fold_val: list[list[str]] = [[] for _ in range(k)]
    for ci, ((y, p), ids) in enumerate(sorted(cells.items())):
        order = sorted(ids)
        derive_rng(seed, "split", y, p).shuffle(order)
        n_test = int(round(test_fraction * len(order)))
        test_ids.extend(order[:n_test])
        for j, tid in enumerate(order[n_test:]):
            fold_val[(ci + j) % k].append(tid)
    pool = sorted(tid for vals in fold_val for tid in vals)
    folds = []
    for vals in fold_val:
        val_set = set(vals)
        folds.append((sorted(tid for tid in pool if tid not in val_set), sorted(vals)))
    return SplitPlan(test_ids=sorted(test_ids), folds=folds, seed=seed)


def save_split_plan(path: str | Path, plan: SplitPlan) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plan.to_dict(), indent=1))
    return path


def load_split_plan(path: str | Path) -> SplitPlan:
    path = Path(path)
    if not path.exists():
        raise DataError(f"split plan not found: {path}")
    return SplitPlan.from_dict(json.loads(path.read_text()))


def trials_by_id(trials: list[Trial]) -> dict[str, Trial]:
    index = {}
    for t in trials:
        if t.trial_id in index:
            raise DataError(f"duplicate trial_id: {t.trial_id}")
        index[t.trial_id] = t
    return index


def select_trials(trials: list[Trial], ids: list[str]) -> list[Trial]:
    index = trials_by_id(trials)
    missing = [tid for tid in ids if tid not in index]
    if missing:
        raise DataError(f"ids not present in dataset: {missing[:5]}")
    return [index[tid] for tid in ids]
