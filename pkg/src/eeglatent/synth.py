"""Condition-specific synthetic signal generation and augmentation sets.

Two generation routes are exposed: sampling codes from the latent prior
N(0, I) (the natural bulk source for augmentation), and encoding a real
reference trial then decoding its sampled code under swapped condition
labels (label swap / participant swap). Generated trials carry a
`synthetic` provenance flag that survives dataset save/load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .dataio import Trial
from .util import derive_rng


@dataclass(frozen=True)
class GenerationRequest:
    mode: str  # "from-prior" | "from-reference"
    y_target: int
    p_target: int
    count: int = 1
    seed: int = 0
    reference_ids: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("from-prior", "from-reference"):
            raise ValueError(f"unknown generation mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if (self.mode == "from-reference") != (self.reference_ids is not None):
            raise ValueError("reference_ids required exactly when mode is from-reference")


def _check_labels(config, y_target: int, p_target: int) -> None:
    if not 0 <= y_target < config.L:
        raise ValueError(f"y_target {y_target} out of range [0, {config.L})")
    if not 0 <= p_target < config.P:
        raise ValueError(f"p_target {p_target} out of range [0, {config.P})")


def generate_from_prior(request: GenerationRequest, params, config) -> list[Trial]:
    """Decode prior samples z ~ N(0, I) under the requested condition labels."""
    _check_labels(config, request.y_target, request.p_target)
    rng = derive_rng(request.seed, "prior", request.y_target, request.p_target)
    z = rng.standard_normal((request.count, config.d_z))
    y1h = np.tile(model.one_hot_matrix(request.y_target, config.L), (request.count, 1))
    p1h = np.tile(model.one_hot_matrix(request.p_target, config.P), (request.count, 1))
    out = model.decode(z, y1h, p1h, params, config)
    trials = []
    for i in range(request.count):
        trials.append(Trial(
            x=out[i].astype(np.float32),
            y=request.y_target,
            p=request.p_target,
            fs=config.fs,
            trial_id=f"synth-y{request.y_target}-p{request.p_target}"
                     f"-s{request.seed}-{i:05d}",
            synthetic=True,
        ))
    return trials


def generate_from_reference(reference: Trial, y_target: int, p_target: int, params,
                            config, rng: np.random.Generator) -> Trial:
    """Encode a reference trial, sample its posterior, decode under new labels.

    With the reference's own labels this is a stochastic reconstruction;
    swapping y or p keeps the code and changes only the conditioning.
    """
    _check_labels(config, y_target, p_target)
    posterior = model.encode(reference.x, params, config)
    sampled = model.reparameterize(posterior, rng)
    out = model.decode(sampled.z, model.one_hot_matrix(y_target, config.L)[0],
                       model.one_hot_matrix(p_target, config.P)[0], params, config)
    return Trial(
        x=out.astype(np.float32),
        y=y_target,
        p=p_target,
        fs=config.fs,
        trial_id=f"synth-from-{reference.trial_id}-y{y_target}-p{p_target}",
        synthetic=True,
    )


def _apportion(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of `total` over `weights` proportions."""
    if total == 0:
        return np.zeros(len(weights), dtype=int)
    quotas = weights / weights.sum() * total
    counts = np.floor(quotas).astype(int)
    remainder = total - counts.sum()
    if remainder > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def build_augmented_set(real_train: list[Trial], synth_fraction: float, params, config,
                        seed: int) -> list[Trial]:
    """Union of the real set and prior-sampled synthetic trials, shuffled.

    Generates round(synth_fraction * |real_train|) synthetic trials whose
    class and participant proportions mirror the real set (largest
    remainder per class, then per participant within class).
    """
    if synth_fraction < 0:
        raise ValueError("synth_fraction must be >= 0")
    n_synth = int(round(synth_fraction * len(real_train)))
    y_all = np.array([t.y for t in real_train])
    p_all = np.array([t.p for t in real_train])
    class_counts = np.array([(y_all == y).sum() for y in range(config.L)], dtype=float)
    per_class = _apportion(class_counts, n_synth)
    synthetic = []
    for y in range(config.L):
        if per_class[y] == 0:
            continue
        part_counts = np.array(
            [((y_all == y) & (p_all == p)).sum() for p in range(config.P)], dtype=float
        )
        if part_counts.sum() == 0:
            part_counts = np.ones(config.P)
        for p, count in enumerate(_apportion(part_counts, int(per_class[y]))):
            if count == 0:
                continue
            request = GenerationRequest(mode="from-prior", y_target=y, p_target=p,
                                        count=int(count), seed=seed)
            synthetic.extend(generate_from_prior(request, params, config))
    combined = list(real_train) + synthetic
    order = derive_rng(seed, "augment-shuffle").permutation(len(combined))
    return [combined[i] for i in order]
